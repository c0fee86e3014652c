#include "shm/diagnostics.hpp"

#include <algorithm>
#include <cmath>

#include "shm/io.hpp"

namespace shm {

ShmParams diagnostics_params(CalibrationVariant variant, const Dims& dims, std::uint64_t seed) {
    ShmParams p = init_params(dims, variant, seed);
    if (variant == CalibrationVariant::FixedC) {
        for (real& v : p.fixed_c.raw()) v = real(0.5);
    }
    return p;
}

std::vector<ContextInput> synthetic_contexts(int steps, int dim, real ar1, Rng& rng) {
    std::vector<ContextInput> xs;
    xs.reserve(static_cast<std::size_t>(steps));
    Vec state(static_cast<std::size_t>(dim), real(0));
    real innov = std::sqrt(std::max(real(0), real(1) - ar1 * ar1));
    for (int t = 0; t < steps; ++t) {
        for (real& v : state) v = ar1 * v + innov * rng.normal();
        ContextInput x;
        x.x = state;
        xs.push_back(layer_normalize(x));
    }
    return xs;
}

CumProductStats cumulative_product_curve(const ShmParams& params, int episodes, int steps,
                                         std::uint64_t seed, real ar1) {
    if (episodes < 1 || steps < 1)
        throw ConfigError("cumulative_product_curve: episodes and steps must be >= 1");

    CumProductStats stats;
    stats.variant = params.variant;
    stats.mean_below_one.assign(static_cast<std::size_t>(steps), real(0));
    stats.max_entry.assign(static_cast<std::size_t>(steps), real(0));
    stats.frac_ge_1.assign(static_cast<std::size_t>(steps), real(0));
    stats.episode_below_one.resize(static_cast<std::size_t>(episodes));

    const int h = params.dims.h;
    const std::size_t n = static_cast<std::size_t>(h) * static_cast<std::size_t>(h);
    Rng ctx_root = Rng::stream(seed, "diag.context");
    Rng cal_root = Rng::stream(seed, "diag.theta");

    for (int e = 0; e < episodes; ++e) {
        Rng ctx = ctx_root.derive(static_cast<std::uint64_t>(e));
        Rng cal = cal_root.derive(static_cast<std::uint64_t>(e));
        auto xs = synthetic_contexts(steps, params.dims.d, ar1, ctx);

        Matrix prod = Matrix::ones(h, h);
        bool overflowed = false;
        auto& per_step = stats.episode_below_one[static_cast<std::size_t>(e)];
        per_step.assign(static_cast<std::size_t>(steps), real(1));
        for (int j = 0; j < steps; ++j) {
            CalMatrix c = variant_calibration(params, xs[static_cast<std::size_t>(j)], j + 1, cal);
            for (std::size_t k = 0; k < n; ++k) prod.raw()[k] *= c.c.raw()[k];
            if (!all_finite(prod)) {
                overflowed = true;  // saturated: freeze remaining steps at the convention value
                for (int jj = j; jj < steps; ++jj) per_step[static_cast<std::size_t>(jj)] = real(1);
                break;
            }
            real below_sum = 0;
            int below_cnt = 0;
            real mx = prod.raw()[0];
            int ge1 = 0;
            for (std::size_t k = 0; k < n; ++k) {
                real v = prod.raw()[k];
                mx = std::max(mx, v);
                if (v >= real(1)) {
                    ++ge1;
                } else {
                    below_sum += v;
                    ++below_cnt;
                }
            }
            per_step[static_cast<std::size_t>(j)] =
                below_cnt ? below_sum / static_cast<real>(below_cnt) : real(1);
            stats.max_entry[static_cast<std::size_t>(j)] =
                std::max(stats.max_entry[static_cast<std::size_t>(j)], mx);
            stats.frac_ge_1[static_cast<std::size_t>(j)] +=
                static_cast<real>(ge1) / static_cast<real>(n);
        }
        if (overflowed) stats.overflow_episodes += 1;
    }

    for (int j = 0; j < steps; ++j) {
        real acc = 0;
        for (int e = 0; e < episodes; ++e)
            acc += stats.episode_below_one[static_cast<std::size_t>(e)][static_cast<std::size_t>(j)];
        stats.mean_below_one[static_cast<std::size_t>(j)] = acc / static_cast<real>(episodes);
        stats.frac_ge_1[static_cast<std::size_t>(j)] /= static_cast<real>(episodes);
    }
    return stats;
}

Prop4Result prop4_expected_product(int l, int h, int t, int samples, std::uint64_t seed) {
    if (l < 1 || h < 1 || t < 0 || samples < 1)
        throw ConfigError("prop4_expected_product: bad dimensions");

    const int d = 8;  // synthetic context width
    ShmParams p = init_params({d, h, l}, CalibrationVariant::ShmRandomTheta, seed);
    // assumption (ii): zero-bias linear v_c (init gives zero bias; keep it explicit)
    for (real& b : p.w_vc.b) b = real(0);

    Rng ctx = Rng::stream(seed, "prop4.context");
    Rng cal = Rng::stream(seed, "prop4.theta");

    const std::size_t n = static_cast<std::size_t>(h) * static_cast<std::size_t>(h);
    std::vector<double> sum(n, 0.0), sumsq(n, 0.0);
    ContextInput x;
    x.x.resize(static_cast<std::size_t>(d));
    for (int s = 0; s < samples; ++s) {
        Matrix prod = Matrix::ones(h, h);
        for (int step = 0; step < t; ++step) {
            for (real& v : x.x) v = ctx.normal();  // fresh i.i.d. context: assumption (iii)
            ThetaDraw draw = sample_theta_row(p, cal);
            Vec vc = p.w_vc.apply(x.x);
            for (int i = 0; i < h; ++i) {
                real u = p.theta(draw.row, i);
                for (int j = 0; j < h; ++j) {
                    prod(i, j) *= real(1) + tanh_clamped(u * vc[static_cast<std::size_t>(j)]);
                }
            }
        }
        for (std::size_t k = 0; k < n; ++k) {
            double v = static_cast<double>(prod.raw()[k]);
            sum[k] += v;
            sumsq[k] += v * v;
        }
    }

    Prop4Result r;
    r.samples = samples;
    r.mean = Matrix(h, h);
    r.se = Matrix(h, h);
    for (std::size_t k = 0; k < n; ++k) {
        double mean = sum[k] / samples;
        double var = std::max(0.0, sumsq[k] / samples - mean * mean);
        double se = std::sqrt(var / samples);
        r.mean.raw()[k] = static_cast<real>(mean);
        r.se.raw()[k] = static_cast<real>(se);
        if (se > 0) {
            r.max_dev_over_se =
                std::max(r.max_dev_over_se, static_cast<real>(std::abs(mean - 1.0) / se));
        } else if (mean != 1.0) {
            r.max_dev_over_se = std::numeric_limits<real>::infinity();
        }
    }
    return r;
}

namespace {

struct Corr {
    double r;
    double se;
};

Corr pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const std::size_t n = a.size();
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa <= 0 || sbb <= 0) throw NumericError("pearson: degenerate variance");
    double r = sab / std::sqrt(saa * sbb);
    double se = (1.0 - r * r) / std::sqrt(static_cast<double>(n));
    return {r, se};
}

}  // namespace

real CorrelationReport::combined_se() const {
    return static_cast<real>(std::sqrt(static_cast<double>(se_v) * se_v +
                                       static_cast<double>(se_uv) * se_uv));
}

CorrelationReport prop5_correlation_ratio(int l, int samples, real ar1, std::uint64_t seed,
                                          bool fixed_theta) {
    if (l < 1 || samples < 8) throw ConfigError("prop5_correlation_ratio: bad configuration");

    Rng rng = Rng::stream(seed, "prop5");
    // theta entries for one (m) coordinate across the L-row bank
    std::vector<real> theta(static_cast<std::size_t>(l));
    for (real& v : theta) v = rng.uniform(real(-0.5), real(0.5));

    std::vector<double> vt(static_cast<std::size_t>(samples)), vt2(static_cast<std::size_t>(samples));
    std::vector<double> uvt(static_cast<std::size_t>(samples)), uvt2(static_cast<std::size_t>(samples));
    real innov = std::sqrt(std::max(real(0), real(1) - ar1 * ar1));
    for (int s = 0; s < samples; ++s) {
        double v1 = rng.normal();
        double v2 = static_cast<double>(ar1) * v1 + static_cast<double>(innov) * rng.normal();
        double u1, u2;
        if (fixed_theta) {
            u1 = u2 = theta[0];
        } else {
            u1 = theta[rng.uniform_int(static_cast<std::uint32_t>(l))];
            u2 = theta[rng.uniform_int(static_cast<std::uint32_t>(l))];
        }
        vt[static_cast<std::size_t>(s)] = v1;
        vt2[static_cast<std::size_t>(s)] = v2;
        uvt[static_cast<std::size_t>(s)] = u1 * v1;
        uvt2[static_cast<std::size_t>(s)] = u2 * v2;
    }

    CorrelationReport rep;
    rep.samples = samples;
    Corr cv = pearson(vt, vt2);
    Corr cuv = pearson(uvt, uvt2);
    rep.rho_v = static_cast<real>(cv.r);
    rep.se_v = static_cast<real>(cv.se);
    rep.rho_uv = static_cast<real>(cuv.r);
    rep.se_uv = static_cast<real>(cuv.se);
    if (std::abs(rep.rho_v) > real(1e-6)) {
        rep.ratio = std::abs(rep.rho_uv) / std::abs(rep.rho_v);
        rep.ratio_defined = true;
    }
    return rep;
}

Prop3Witness prop3_witness(const Matrix& theta, int t) {
    if (t < 1) throw ConfigError("prop3_witness: horizon must be >= 1");
    Prop3Witness w;
    w.regime.resize(theta.size());
    w.direct_product = Matrix(theta.rows(), theta.cols());
    for (std::size_t k = 0; k < theta.size(); ++k) {
        real a = std::abs(theta.raw()[k]);
        GradientRegime r = a > real(1)   ? GradientRegime::Exploding
                           : a < real(1) ? GradientRegime::Vanishing
                                         : GradientRegime::Marginal;
        real prod = 1;
        for (int i = 0; i < t; ++i) prod *= a;
        w.direct_product.raw()[k] = prod;
        w.regime[k] = r;
        bool ok = (r == GradientRegime::Exploding && prod > real(1)) ||
                  (r == GradientRegime::Vanishing && prod < real(1)) ||
                  (r == GradientRegime::Marginal && prod == real(1));
        if (!ok) w.consistent = false;
    }
    return w;
}

std::vector<std::string> export_heatmaps(const EpisodeTrace& trace, const std::vector<int>& steps,
                                         const std::string& dir, int episode_id) {
    std::vector<std::string> paths;
    for (int t : steps) {
        if (t < 1 || static_cast<std::size_t>(t) > trace.steps.size())
            throw RangeError("export_heatmaps: step " + std::to_string(t) +
                             " outside trace of length " + std::to_string(trace.steps.size()));
        const StepRecord& rec = trace.steps[static_cast<std::size_t>(t - 1)];
        std::map<std::string, std::string> hdr{{"step", std::to_string(t)},
                                               {"episode", std::to_string(episode_id)}};
        hdr["matrix"] = "M";
        std::string mp = dir + "/heatmap_M_t" + std::to_string(t) + ".csv";
        write_matrix_csv(mp, rec.m.m, hdr);
        paths.push_back(mp);
        hdr["matrix"] = "C";
        std::string cp = dir + "/heatmap_C_t" + std::to_string(t) + ".csv";
        write_matrix_csv(cp, rec.c.c, hdr);
        paths.push_back(cp);
    }
    return paths;
}

real bootstrap_less_confidence(const std::vector<real>& a, const std::vector<real>& b,
                               int resamples, std::uint64_t seed) {
    if (a.empty() || b.empty() || resamples < 1)
        throw ConfigError("bootstrap_less_confidence: empty inputs");
    Rng rng = Rng::stream(seed, "bootstrap");
    int hits = 0;
    for (int r = 0; r < resamples; ++r) {
        double ma = 0, mb = 0;
        for (std::size_t i = 0; i < a.size(); ++i)
            ma += a[rng.uniform_int(static_cast<std::uint32_t>(a.size()))];
        for (std::size_t i = 0; i < b.size(); ++i)
            mb += b[rng.uniform_int(static_cast<std::uint32_t>(b.size()))];
        ma /= static_cast<double>(a.size());
        mb /= static_cast<double>(b.size());
        if (ma < mb) ++hits;
    }
    return static_cast<real>(hits) / static_cast<real>(resamples);
}

}  // namespace shm
