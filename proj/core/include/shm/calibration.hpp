#pragma once

// Calibration and update matrix production. The stable variant computes
// C = 1 + tanh(theta_row (x) v_c(x)) with theta_row drawn uniformly from a
// bank of L trainable rows; the other variants are the ablation designs
// (no calibration, per-step random, fixed learnable matrix, fixed theta,
// feedforward theta).

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "shm/matrix.hpp"
#include "shm/memory.hpp"
#include "shm/rng.hpp"

namespace shm {

enum class CalibrationVariant : std::int32_t {
    ShmRandomTheta = 0,
    AllOnes = 1,
    RandomC = 2,
    FixedC = 3,
    FixedTheta = 4,
    NeuralTheta = 5,
};

const char* variant_name(CalibrationVariant v);
CalibrationVariant variant_from_name(const std::string& name);  // ConfigError on unknown

struct AffineMap {
    Matrix w;  // out x in
    Vec b;     // out

    Vec apply(const Vec& x) const;
};

// out = l2(tanh(l1(x)))
struct FeedForward {
    AffineMap l1;
    AffineMap l2;

    Vec apply(const Vec& x) const;
};

struct Dims {
    int d = 0;  // context dimension
    int h = 0;  // memory dimension (H x H matrix)
    int l = 0;  // theta bank rows
};

struct ShmParams {
    Dims dims;
    CalibrationVariant variant = CalibrationVariant::ShmRandomTheta;

    Matrix theta;           // L x H calibration rows
    AffineMap w_vc;         // D -> H
    AffineMap w_k;          // D -> H
    AffineMap w_v;          // D -> H
    AffineMap w_q;          // D -> H
    AffineMap eta;          // D -> 1, followed by sigmoid

    // variant extras (allocated only for the active variant)
    Matrix fixed_c;            // H x H    (FixedC)
    Vec fixed_theta;           // H        (FixedTheta)
    FeedForward neural_theta;  // D -> H -> H (NeuralTheta)
};

struct ThetaDraw {
    int row = -1;                    // 0-based index into theta
    std::uint64_t draw_index = 0;    // RNG counter after the draw, for replay bookkeeping
};

// Named view into one parameter tensor; the order returned by param_tensors
// is the canonical flat layout used by checkpoints, gradient reports, the
// optimizer and the finite-difference oracle.
struct TensorRef {
    std::string name;
    real* data;
    std::size_t size;
};

std::vector<TensorRef> param_tensors(ShmParams& p);
std::size_t param_count(const ShmParams& p);

real sigmoid(real x);
real tanh_clamped(real x);  // tanh clamped to [-1 + eps, 1 - eps]

ThetaDraw sample_theta_row(const ShmParams& p, Rng& rng);

// C = 1 + tanh(theta[row] (x) v_c(x)); rows indexed by theta, columns by v_c.
CalMatrix shm_calibration(const ShmParams& p, const ContextInput& x, const ThetaDraw& draw);

// Dispatch over the configured variant. Consumes the RNG only for variants
// that need it (theta draws, per-step random C); draw_out reports the theta
// row used, or -1.
CalMatrix variant_calibration(const ShmParams& p, const ContextInput& x, std::int64_t step,
                              Rng& rng, ThetaDraw* draw_out = nullptr);

// U = eta(x) * (v(x) (x) k(x)); value indexes rows, key indexes columns.
UpdMatrix update_matrix(const ShmParams& p, const ContextInput& x);

// Weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero,
// theta rows uniform in [-1/sqrt(H), 1/sqrt(H)]. Deterministic given seed.
ShmParams init_params(const Dims& dims, CalibrationVariant variant, std::uint64_t seed);

// Same init rule as the maps inside init_params; used for heads too.
AffineMap init_affine_map(int out, int in, Rng& rng);

}  // namespace shm
