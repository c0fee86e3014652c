#pragma once

// Hadamard memory framework core: the write rule M_t = M_{t-1} (*) C_t + U_t
// (entrywise product), the associated read h_t = M_t q, and three
// interchangeable ways of evaluating a whole sequence of writes:
//
//   - sequential recurrence (write_step iterated)
//   - closed-form unroll     M_t = M_0 prod C_i + sum_i U_i (*) prod_{j>i} C_j
//   - parallel prefix scan   (log-depth combine tree over the timeline)
//
// The three must agree to tight tolerance; the sequential path is the oracle
// for the other two.

#include <cstdint>
#include <span>
#include <vector>

#include "shm/matrix.hpp"

namespace shm {

struct MemoryState {
    Matrix m;                // H x H
    std::int64_t step = 0;   // number of writes applied so far

    MemoryState() = default;
    explicit MemoryState(int h) : m(h, h) {}
    MemoryState(Matrix mat, std::int64_t s) : m(std::move(mat)), step(s) {}
};

struct CalMatrix {
    Matrix c;  // H x H, entries in [eps, 2-eps] for SHM calibration; unconstrained for ablations
};

struct UpdMatrix {
    Matrix u;  // H x H, rank <= 1 by construction
};

struct ContextInput {
    Vec x;  // length D
};

// tanh output clamp; keeps SHM calibration entries in [kTanhClampEps, 2 - kTanhClampEps]
// so the scan's division by running products is always well defined.
inline constexpr real kTanhClampEps = real(1e-6);

// |C| entries below this make the scan fall back to sequential evaluation
// over the offending span.
inline constexpr real kScanDivEps = real(1e-12);

// M_t = M_{t-1} (*) C_t + U_t. Value semantics: the input state is untouched.
MemoryState write_step(const MemoryState& state, const CalMatrix& c, const UpdMatrix& u);

// h = M q
Vec read(const MemoryState& state, const Vec& query);

// Evaluates every prefix M_1..M_T directly from the closed form, using
// right-to-left suffix products per step (O(T^2) — verification grade, not
// the fast path). Shares no code with write_step.
std::vector<MemoryState> unroll_closed_form(const MemoryState& m0, std::span<const CalMatrix> cs,
                                            std::span<const UpdMatrix> us);

struct ScanStats {
    int combine_levels = 0;   // depth of the longest prefix pass (instrumented, not computed)
    int fallback_spans = 0;   // contiguous spans evaluated sequentially due to tiny |C| entries
};

// Log-depth evaluation of all prefixes via parallel prefix product/sum over
// the timeline. Deterministic regardless of worker count: the combine tree
// is fixed, threads only split index ranges within a level.
std::vector<MemoryState> parallel_scan(const MemoryState& m0, std::span<const CalMatrix> cs,
                                       std::span<const UpdMatrix> us, ScanStats* stats = nullptr,
                                       int threads = 1);

// Analytic combine depth of the scan for a clean (no-fallback) run of T steps.
// The longest pass scans the T+1-long [M_0 | C_1..C_T] concatenation.
inline int scan_combine_depth(std::int64_t t) {
    if (t <= 0) return 0;
    int d = 0;
    std::int64_t n = t + 1;
    while ((std::int64_t(1) << d) < n) ++d;
    return d;
}

// Per-vector standardization to mean 0, variance 1 (population variance).
// Zero-variance inputs map to the zero vector. No learnable affine.
ContextInput layer_normalize(const ContextInput& x);

}  // namespace shm
