#pragma once

// Stability diagnostics: cumulative-product statistics of the calibration
// matrices (vanishing curves), Monte-Carlo verification of the expected-
// product and correlation-ratio properties, the fixed-calibration gradient
// regime witness, and heatmap CSV export of recorded episodes.

#include <cstdint>
#include <string>
#include <vector>

#include "shm/calibration.hpp"
#include "shm/episode.hpp"

namespace shm {

struct CumProductStats {
    CalibrationVariant variant = CalibrationVariant::ShmRandomTheta;
    // Indexed by step j = 1..T (position j-1). mean_below_one reports 1.0
    // when no entry of the cumulative product is below one at that step.
    std::vector<real> mean_below_one;
    std::vector<real> max_entry;
    std::vector<real> frac_ge_1;
    // per-episode below-one means, for bootstrap comparisons: [episode][step]
    std::vector<std::vector<real>> episode_below_one;
    int overflow_episodes = 0;  // episodes where the product saturated (recorded, not fatal)
};

// Params used by the stability studies: init_params(seed), except FixedC,
// whose matrix is set to all 0.5 (the canonical decaying fixture).
ShmParams diagnostics_params(CalibrationVariant variant, const Dims& dims, std::uint64_t seed);

// Synthetic contexts for the stability studies: AR(1) Gaussian vectors
// (coefficient `ar1`), layer-normalized. AR(1) keeps consecutive contexts
// dependent the way environment observations are; with independent contexts
// the fixed-theta and random-theta designs are indistinguishable.
std::vector<ContextInput> synthetic_contexts(int steps, int dim, real ar1, Rng& rng);

CumProductStats cumulative_product_curve(const ShmParams& params, int episodes, int steps,
                                         std::uint64_t seed, real ar1 = real(0.9));

struct Prop4Result {
    Matrix mean;     // per-entry sample mean of prod_{t<=T} C_t
    Matrix se;       // per-entry standard error
    int samples = 0;
    real max_dev_over_se = 0;  // max over entries of |mean - 1| / se
};

// Monte-Carlo check of E[prod C] = 1 under i.i.d. Gaussian contexts and a
// zero-bias linear v_c. Contexts are drawn fresh every step.
Prop4Result prop4_expected_product(int l, int h, int t, int samples, std::uint64_t seed);

struct CorrelationReport {
    real rho_v = 0;       // corr(v_t, v_t')
    real rho_uv = 0;      // corr(u_t v_t, u_t' v_t')
    real se_v = 0;
    real se_uv = 0;
    real ratio = 0;       // |rho_uv| / |rho_v|, defined only when |rho_v| > 1e-6
    bool ratio_defined = false;
    int samples = 0;

    real combined_se() const;  // se of the correlation difference
};

// v-pairs come from an AR(1) with the given coefficient (corr(v_t, v_t') =
// ar1); u values are theta entries, either drawn uniformly from an L-row
// bank per sample (random theta) or held to one fixed entry (fixed theta).
CorrelationReport prop5_correlation_ratio(int l, int samples, real ar1, std::uint64_t seed,
                                          bool fixed_theta);

enum class GradientRegime { Vanishing, Marginal, Exploding };

struct Prop3Witness {
    std::vector<GradientRegime> regime;  // row-major, per entry of theta
    Matrix direct_product;               // |theta|^T evaluated by repeated multiplication
    bool consistent = true;              // classification agrees with the direct product
};

// Fixed-calibration regime classification: |theta| > 1 explodes, < 1
// vanishes, == 1 marginal; cross-checked against the directly evaluated
// T-fold product.
Prop3Witness prop3_witness(const Matrix& theta, int t);

// Paths of the files written (M then C for each requested step).
std::vector<std::string> export_heatmaps(const EpisodeTrace& trace, const std::vector<int>& steps,
                                         const std::string& dir, int episode_id = 0);

// Bootstrap estimate of P(mean(a) < mean(b)) over `resamples` resamples.
real bootstrap_less_confidence(const std::vector<real>& a, const std::vector<real>& b,
                               int resamples, std::uint64_t seed);

}  // namespace shm
