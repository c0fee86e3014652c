#include "shm/memory.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <thread>

namespace shm {

namespace {

// Running products with any entry below this magnitude make the scan's
// divide-and-remultiply trick lose too much range; the span is bisected
// until products stay representable.
constexpr real kProductFloor = real(1e-280);
constexpr real kProductCeil = real(1e280);

void check_square(const Matrix& m, const char* what) {
    if (m.rows() != m.cols()) throw DimError(std::string(what) + ": memory matrices must be square");
}

}  // namespace

MemoryState write_step(const MemoryState& state, const CalMatrix& c, const UpdMatrix& u) {
    check_square(state.m, "write_step");
    require_same_shape(state.m, c.c, "write_step(C)");
    require_same_shape(state.m, u.u, "write_step(U)");

    MemoryState out;
    out.step = state.step + 1;
    out.m = Matrix(state.m.rows(), state.m.cols());
    for (std::size_t i = 0; i < state.m.size(); ++i) {
        out.m.raw()[i] = state.m.raw()[i] * c.c.raw()[i] + u.u.raw()[i];
    }
    if (!all_finite(out.m)) {
        throw NumericError("write_step: non-finite memory entry produced at step " +
                           std::to_string(out.step));
    }
    return out;
}

Vec read(const MemoryState& state, const Vec& query) {
    return matvec(state.m, query);
}

std::vector<MemoryState> unroll_closed_form(const MemoryState& m0, std::span<const CalMatrix> cs,
                                            std::span<const UpdMatrix> us) {
    if (cs.size() != us.size()) throw DimError("unroll_closed_form: len(cs) != len(us)");
    const std::size_t t_max = cs.size();
    std::vector<MemoryState> out;
    out.reserve(t_max);
    if (t_max == 0) return out;

    const int h = m0.m.rows();
    const std::size_t n = m0.m.size();
    for (std::size_t t = 1; t <= t_max; ++t) {
        // suffix products: walk i = t .. 1 accumulating prod_{j=i+1..t} C_j
        Matrix suffix = Matrix::ones(h, h);
        Matrix acc(h, h);
        for (std::size_t i = t; i >= 1; --i) {
            const Matrix& u = us[i - 1].u;
            for (std::size_t k = 0; k < n; ++k) acc.raw()[k] += u.raw()[k] * suffix.raw()[k];
            const Matrix& c = cs[i - 1].c;
            for (std::size_t k = 0; k < n; ++k) suffix.raw()[k] *= c.raw()[k];
        }
        // suffix now holds prod_{i=1..t} C_i
        Matrix m(h, h);
        for (std::size_t k = 0; k < n; ++k)
            m.raw()[k] = m0.m.raw()[k] * suffix.raw()[k] + acc.raw()[k];
        out.push_back(MemoryState(std::move(m), m0.step + static_cast<std::int64_t>(t)));
    }
    return out;
}

namespace {

// Splits [0, n) across `threads` workers and joins. threads <= 1 runs inline.
void run_rows(std::size_t n, int threads, const std::function<void(std::size_t, std::size_t)>& body) {
    if (threads <= 1 || n < 2) {
        body(0, n);
        return;
    }
    std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
    std::vector<std::thread> pool;
    pool.reserve(w);
    std::size_t chunk = (n + w - 1) / w;
    for (std::size_t k = 0; k < w; ++k) {
        std::size_t lo = k * chunk;
        std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&, lo, hi] { body(lo, hi); });
    }
    for (auto& th : pool) th.join();
}

// Hillis-Steele inclusive scan over a vector of equally shaped matrices,
// combining entrywise with either * or +. The combine tree depends only on
// the element count, so results are identical for any worker count.
enum class Combine { Product, Sum };

int inclusive_scan(std::vector<Matrix>& a, Combine op, int threads) {
    const std::size_t n = a.size();
    int levels = 0;
    if (n < 2) return levels;
    std::vector<Matrix> tmp(a);
    for (std::size_t stride = 1; stride < n; stride *= 2) {
        ++levels;
        run_rows(n, threads, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t i = lo; i < hi; ++i) {
                if (i < stride) {
                    tmp[i] = a[i];
                    continue;
                }
                const Matrix& left = a[i - stride];
                const Matrix& right = a[i];
                Matrix& dst = tmp[i];
                dst = right;
                if (op == Combine::Product) {
                    for (std::size_t k = 0; k < dst.size(); ++k) dst.raw()[k] *= left.raw()[k];
                } else {
                    for (std::size_t k = 0; k < dst.size(); ++k) dst.raw()[k] += left.raw()[k];
                }
            }
        });
        std::swap(a, tmp);
    }
    return levels;
}

bool has_tiny_entry(const Matrix& c, real eps) {
    for (real v : c.raw())
        if (std::abs(v) < eps) return true;
    return false;
}

bool products_out_of_range(const std::vector<Matrix>& prefix) {
    for (const Matrix& p : prefix)
        for (real v : p.raw()) {
            real a = std::abs(v);
            if (a < kProductFloor || a > kProductCeil) return true;
        }
    return false;
}

// Scan of one clean span (no tiny C entries). Bisects when running products
// leave the representable range. Returns the memories for the span.
void scan_span(const MemoryState& m0, std::span<const CalMatrix> cs, std::span<const UpdMatrix> us,
               std::vector<MemoryState>& out, ScanStats& stats, int threads) {
    const std::size_t n = cs.size();
    if (n == 0) return;

    const int h = m0.m.rows();
    const std::size_t sz = m0.m.size();

    // prefix products of C along the span
    std::vector<Matrix> c_prefix(n);
    for (std::size_t t = 0; t < n; ++t) c_prefix[t] = cs[t].c;
    int lv_c = inclusive_scan(c_prefix, Combine::Product, threads);

    if (products_out_of_range(c_prefix)) {
        if (n == 1) {  // single pathological step: evaluate directly
            out.push_back(write_step(m0, cs[0], us[0]));
            return;
        }
        std::size_t half = n / 2;
        scan_span(m0, cs.subspan(0, half), us.subspan(0, half), out, stats, threads);
        MemoryState mid = out.back();  // copy: out may reallocate below
        scan_span(mid, cs.subspan(half), us.subspan(half), out, stats, threads);
        return;
    }

    // prefix products of the [M_0 | C_1..C_n] concatenation; element t+1 is
    // the M_0 prod_{i<=t} C_i carry term.
    std::vector<Matrix> d_prefix(n + 1);
    d_prefix[0] = m0.m;
    for (std::size_t t = 0; t < n; ++t) d_prefix[t + 1] = cs[t].c;
    int lv_d = inclusive_scan(d_prefix, Combine::Product, threads);

    // E_t = U_t / c_prefix_t, prefix-summed, then re-scaled by c_prefix_t.
    std::vector<Matrix> e(n);
    run_rows(n, threads, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t t = lo; t < hi; ++t) {
            e[t] = Matrix(h, h);
            for (std::size_t k = 0; k < sz; ++k) e[t].raw()[k] = us[t].u.raw()[k] / c_prefix[t].raw()[k];
        }
    });
    int lv_e = inclusive_scan(e, Combine::Sum, threads);

    // Passes over C, D and E run level-by-level in parallel in the abstract
    // machine; the instrumented depth is the deepest of the three (the D
    // pass, over n+1 elements).
    stats.combine_levels = std::max(stats.combine_levels, std::max(lv_d, std::max(lv_c, lv_e)));

    for (std::size_t t = 0; t < n; ++t) {
        Matrix m(h, h);
        for (std::size_t k = 0; k < sz; ++k)
            m.raw()[k] = d_prefix[t + 1].raw()[k] + e[t].raw()[k] * c_prefix[t].raw()[k];
        if (!all_finite(m)) {
            throw NumericError("parallel_scan: non-finite memory entry at step " +
                               std::to_string(m0.step + static_cast<std::int64_t>(t) + 1));
        }
        out.push_back(MemoryState(std::move(m), m0.step + static_cast<std::int64_t>(t) + 1));
    }
}

}  // namespace

std::vector<MemoryState> parallel_scan(const MemoryState& m0, std::span<const CalMatrix> cs,
                                       std::span<const UpdMatrix> us, ScanStats* stats,
                                       int threads) {
    if (cs.size() != us.size()) throw DimError("parallel_scan: len(cs) != len(us)");
    check_square(m0.m, "parallel_scan");
    ScanStats local;
    std::vector<MemoryState> out;
    out.reserve(cs.size());

    // Partition the timeline into clean spans (scanned) and spans whose C has
    // entries too small to divide by (evaluated sequentially, counted).
    std::size_t i = 0;
    const std::size_t n = cs.size();
    MemoryState carry = m0;
    while (i < n) {
        if (has_tiny_entry(cs[i].c, kScanDivEps)) {
            local.fallback_spans += 1;
            while (i < n && has_tiny_entry(cs[i].c, kScanDivEps)) {
                carry = write_step(carry, cs[i], us[i]);
                out.push_back(carry);
                ++i;
            }
            continue;
        }
        std::size_t j = i;
        while (j < n && !has_tiny_entry(cs[j].c, kScanDivEps)) ++j;
        scan_span(carry, cs.subspan(i, j - i), us.subspan(i, j - i), out, local, threads);
        carry = out.back();
        i = j;
    }
    if (stats) *stats = local;
    return out;
}

ContextInput layer_normalize(const ContextInput& x) {
    const std::size_t d = x.x.size();
    if (d < 2) throw DimError("layer_normalize: needs dimension >= 2");
    real mean = 0;
    for (real v : x.x) mean += v;
    mean /= static_cast<real>(d);
    real var = 0;
    for (real v : x.x) var += (v - mean) * (v - mean);
    var /= static_cast<real>(d);
    ContextInput out;
    out.x.resize(d);
    // zero-variance convention; threshold absorbs summation rounding noise
    if (var <= real(1e-24) * (real(1) + mean * mean)) {
        return out;
    }
    real inv = real(1) / std::sqrt(var);
    for (std::size_t i = 0; i < d; ++i) out.x[i] = (x.x[i] - mean) * inv;
    return out;
}

}  // namespace shm
