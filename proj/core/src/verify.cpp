#include "shm/verify.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "shm/diagnostics.hpp"
#include "shm/episode.hpp"
#include "shm/io.hpp"
#include "shm/trainer.hpp"

namespace shm {

namespace {

using Clock = std::chrono::steady_clock;

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

CalibrationVariant pick_variant(int i) {
    switch (i % 6) {
        case 0: return CalibrationVariant::ShmRandomTheta;
        case 1: return CalibrationVariant::FixedTheta;
        case 2: return CalibrationVariant::RandomC;
        case 3: return CalibrationVariant::AllOnes;
        case 4: return CalibrationVariant::NeuralTheta;
        default: return CalibrationVariant::FixedC;
    }
}

// ---- criterion 1: sequential / closed-form / scan equivalence --------------

SuiteResult suite_scan(const VerifyOptions& opts) {
    SuiteResult r{"scan", true, "", 0};
    auto t0 = Clock::now();
    const int configs = opts.quick ? 20 : 100;
    // 64-bit verification tolerance; relaxed under 32-bit storage builds
    const real tol = sizeof(real) == 8 ? real(1e-10) : real(1e-4);
    Rng meta = Rng::stream(opts.seed, "verify.scan");

    real worst_closed = 0, worst_scan = 0;
    for (int cfg = 0; cfg < configs && r.pass; ++cfg) {
        int t_len = 1 + static_cast<int>(meta.uniform_int(opts.quick ? 64 : 256));
        int h = 2 + static_cast<int>(meta.uniform_int(15));
        int d = 2 + static_cast<int>(meta.uniform_int(7));
        int l = 1 + static_cast<int>(meta.uniform_int(16));
        ShmParams params = init_params({d, h, l}, pick_variant(cfg), meta.next_u64());

        Rng ctx = Rng::stream(opts.seed, "verify.scan.ctx").derive(static_cast<std::uint64_t>(cfg));
        auto xs = synthetic_contexts(t_len, d, real(0.5), ctx);

        std::uint64_t ep_seed = meta.next_u64();
        Rng r1(ep_seed), r2(ep_seed), r3(ep_seed);
        RunOptions seq{EvalMode::Sequential, false, 1};
        RunOptions clo{EvalMode::ClosedForm, false, 1};
        RunOptions sca{EvalMode::Scan, false, opts.threads};
        EpisodeTrace a = run_sequence(params, xs, r1, seq);
        EpisodeTrace b = run_sequence(params, xs, r2, clo);
        EpisodeTrace c = run_sequence(params, xs, r3, sca);

        if (opts.inject_fault && cfg == 0 && !c.steps.empty()) {
            c.steps.back().m.m.raw()[0] += real(1e-6);
        }

        for (int t = 0; t < t_len; ++t) {
            auto ts = static_cast<std::size_t>(t);
            worst_closed = std::max(worst_closed, max_rel_diff(a.steps[ts].m.m, b.steps[ts].m.m));
            worst_scan = std::max(worst_scan, max_rel_diff(a.steps[ts].m.m, c.steps[ts].m.m));
        }
        if (worst_closed > tol || worst_scan > tol) {
            r.pass = false;
            r.detail = "config " + std::to_string(cfg) + " (T=" + std::to_string(t_len) +
                       ", H=" + std::to_string(h) + ", variant " + variant_name(params.variant) +
                       "): closed=" + fmt(worst_closed) + " scan=" + fmt(worst_scan) +
                       " exceeds 1e-10";
        }
    }
    r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    if (r.pass && !opts.quick && r.seconds >= 60.0) {
        r.pass = false;
        r.detail = "runtime " + fmt(r.seconds) + "s exceeds 60s budget";
    }
    if (r.pass)
        r.detail = std::to_string(configs) + " configs, max rel diff closed=" + fmt(worst_closed) +
                   " scan=" + fmt(worst_scan);
    return r;
}

// ---- criterion 2: scan combine depth ---------------------------------------

SuiteResult suite_depth(const VerifyOptions& opts) {
    SuiteResult r{"depth", true, "", 0};
    auto t0 = Clock::now();
    std::ostringstream detail;
    for (int t_len : {1, 2, 7, 64, 257, 1024}) {
        ShmParams params = init_params({4, 2, 8}, CalibrationVariant::ShmRandomTheta,
                                       opts.seed + static_cast<std::uint64_t>(t_len));
        Rng ctx = Rng::stream(opts.seed, "verify.depth");
        auto xs = synthetic_contexts(t_len, 4, real(0.3), ctx);
        Rng rng(opts.seed);
        RunOptions sca{EvalMode::Scan, false, opts.threads};
        EpisodeTrace tr = run_sequence(params, xs, rng, sca);
        int expect = scan_combine_depth(t_len);
        detail << "T=" << t_len << ":" << tr.scan_stats.combine_levels << " ";
        if (tr.scan_stats.combine_levels != expect || tr.scan_stats.fallback_spans != 0) {
            r.pass = false;
            r.detail = "T=" + std::to_string(t_len) + ": levels " +
                       std::to_string(tr.scan_stats.combine_levels) + " != ceil(log2(T+1)) = " +
                       std::to_string(expect) + " (fallbacks " +
                       std::to_string(tr.scan_stats.fallback_spans) + ")";
            break;
        }
    }
    r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    if (r.pass) r.detail = "combine levels match ceil(log2(T+1)): " + detail.str();
    return r;
}

// ---- criterion 3: backward vs finite differences ---------------------------

SuiteResult suite_grad(const VerifyOptions& opts) {
    SuiteResult r{"grad", true, "", 0};
    auto t0 = Clock::now();
    const int configs = opts.quick ? 6 : 20;
    const real fd_step = real(1e-5);
    const real tol = real(1e-4);
    Rng meta = Rng::stream(opts.seed, "verify.grad");

    real worst = 0;
    int compared = 0;
    for (int cfg = 0; cfg < configs && r.pass; ++cfg) {
        int t_len = 1 + static_cast<int>(meta.uniform_int(8));
        int h = 2 + static_cast<int>(meta.uniform_int(5));
        int d = 2 + static_cast<int>(meta.uniform_int(3));
        int l = 1 + static_cast<int>(meta.uniform_int(4));
        ShmParams params = init_params({d, h, l}, pick_variant(cfg), meta.next_u64());

        Rng ctx = Rng::stream(opts.seed, "verify.grad.ctx").derive(static_cast<std::uint64_t>(cfg));
        auto xs = synthetic_contexts(t_len, d, real(0.4), ctx);

        // fixed random weights for a quadratic readout loss
        Rng wrng = Rng::stream(opts.seed, "verify.grad.w").derive(static_cast<std::uint64_t>(cfg));
        std::vector<Vec> w(static_cast<std::size_t>(t_len));
        for (auto& wt : w) {
            wt.resize(static_cast<std::size_t>(h));
            for (real& v : wt) v = wrng.uniform(real(-1), real(1));
        }
        auto loss_fn = [&](const EpisodeTrace& tr) {
            real acc = 0;
            for (std::size_t t = 0; t < tr.steps.size(); ++t)
                for (std::size_t i = 0; i < tr.steps[t].h.size(); ++i)
                    acc += real(0.5) * w[t][i] * tr.steps[t].h[i] * tr.steps[t].h[i];
            return acc;
        };

        std::uint64_t ep_seed = meta.next_u64();
        Rng rng(ep_seed);
        RunOptions taped{EvalMode::Sequential, true, 1};
        EpisodeTrace trace = run_sequence(params, xs, rng, taped);
        std::vector<Vec> dh(trace.steps.size());
        for (std::size_t t = 0; t < trace.steps.size(); ++t) {
            dh[t].resize(static_cast<std::size_t>(h));
            for (std::size_t i = 0; i < dh[t].size(); ++i) dh[t][i] = w[t][i] * trace.steps[t].h[i];
        }
        GradReport analytic = backward(trace, dh);
        GradReport fd = finite_difference_oracle(params, xs, ep_seed,
                                                 RunOptions{EvalMode::Sequential, false, 1},
                                                 loss_fn, fd_step);

        for (std::size_t k = 0; k < analytic.grads.size() && r.pass; ++k) {
            for (std::size_t i = 0; i < analytic.grads[k].size(); ++i) {
                real a = analytic.grads[k][i];
                if (std::abs(a) <= real(1e-8)) continue;
                real f = fd.grads[k][i];
                real rel = std::abs(a - f) / std::max(std::abs(a), std::abs(f));
                worst = std::max(worst, rel);
                ++compared;
                if (rel > tol) {
                    r.pass = false;
                    r.detail = "config " + std::to_string(cfg) + " tensor " + analytic.names[k] +
                               "[" + std::to_string(i) + "]: analytic " + fmt(a) + " vs fd " +
                               fmt(f) + " rel err " + fmt(rel);
                    break;
                }
            }
        }
    }
    r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    if (r.pass && !opts.quick && r.seconds >= 300.0) {
        r.pass = false;
        r.detail = "runtime " + fmt(r.seconds) + "s exceeds 5 min budget";
    }
    if (r.pass)
        r.detail = std::to_string(configs) + " configs, " + std::to_string(compared) +
                   " gradients compared, max rel err " + fmt(worst);
    return r;
}

// ---- criterion 4: expected cumulative product ------------------------------

SuiteResult suite_prop4(const VerifyOptions& opts) {
    SuiteResult r{"prop4", true, "", 0};
    auto t0 = Clock::now();
    const int samples = opts.quick ? 20000 : 100000;
    Prop4Result p = prop4_expected_product(128, 4, 50, samples, opts.seed);
    r.pass = p.max_dev_over_se <= real(3);
    r.detail = "T=50 H=4 L=128 N=" + std::to_string(samples) +
               ": max |mean-1|/se = " + fmt(p.max_dev_over_se) + (r.pass ? " <= 3" : " > 3");
    if (!opts.out_dir.empty()) {
        CsvTable t;
        t.columns = {"row", "col", "mean", "se"};
        for (int i = 0; i < p.mean.rows(); ++i)
            for (int j = 0; j < p.mean.cols(); ++j)
                t.add_row({std::to_string(i), std::to_string(j), format_real(p.mean(i, j)),
                           format_real(p.se(i, j))});
        t.save(opts.out_dir + "/prop4.csv");
    }
    r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    return r;
}

// ---- criterion 5: correlation ratio bound ----------------------------------

SuiteResult suite_prop5(const VerifyOptions& opts) {
    SuiteResult r{"prop5", true, "", 0};
    auto t0 = Clock::now();
    const int samples = opts.quick ? 20000 : 100000;

    CorrelationReport random_theta = prop5_correlation_ratio(128, samples, real(0.9), opts.seed, false);
    CorrelationReport fixed_theta = prop5_correlation_ratio(128, samples, real(0.9), opts.seed, true);
    CorrelationReport indep = prop5_correlation_ratio(128, samples, real(0), opts.seed + 1, false);

    bool bound_ok = std::abs(random_theta.rho_uv) <=
                    std::abs(random_theta.rho_v) + real(3) * random_theta.combined_se();
    bool equality_ok = std::abs(fixed_theta.rho_uv - fixed_theta.rho_v) <=
                       real(3) * fixed_theta.combined_se();
    bool indep_ok = std::abs(indep.rho_v) <= real(3) * std::max(indep.se_v, real(1) / std::sqrt(real(samples))) &&
                    std::abs(indep.rho_uv) <= real(3) * std::max(indep.se_uv, real(1) / std::sqrt(real(samples)));
    r.pass = bound_ok && equality_ok && indep_ok;
    r.detail = "random: |rho_uv|=" + fmt(std::abs(random_theta.rho_uv)) + " vs |rho_v|=" +
               fmt(std::abs(random_theta.rho_v)) + "; fixed: |diff|=" +
               fmt(std::abs(fixed_theta.rho_uv - fixed_theta.rho_v)) + "; indep: rho_v=" +
               fmt(indep.rho_v);
    if (!bound_ok) r.detail += " [bound violated]";
    if (!equality_ok) r.detail += " [fixed-theta equality violated]";
    if (!indep_ok) r.detail += " [independent case violated]";
    if (!opts.out_dir.empty()) {
        CsvTable t;
        t.columns = {"case", "rho_v", "rho_uv", "se_v", "se_uv", "ratio"};
        auto row = [&](const char* name, const CorrelationReport& c) {
            t.add_row({name, format_real(c.rho_v), format_real(c.rho_uv), format_real(c.se_v),
                       format_real(c.se_uv), c.ratio_defined ? format_real(c.ratio) : "nan"});
        };
        row("random_theta", random_theta);
        row("fixed_theta", fixed_theta);
        row("independent_v", indep);
        t.save(opts.out_dir + "/prop5.csv");
    }
    r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    return r;
}

// ---- criterion 6: fixed-calibration witness --------------------------------

SuiteResult suite_prop3(const VerifyOptions& opts) {
    SuiteResult r{"prop3", true, "", 0};
    auto t0 = Clock::now();

    // exact geometric decay of the all-0.5 fixed calibration
    ShmParams params = diagnostics_params(CalibrationVariant::FixedC, {8, 3, 4}, opts.seed);
    CumProductStats stats = cumulative_product_curve(params, 3, 20, opts.seed);
    for (int j = 1; j <= 20 && r.pass; ++j) {
        real expect = std::pow(real(0.5), static_cast<real>(j));
        real got = stats.mean_below_one[static_cast<std::size_t>(j - 1)];
        if (std::abs(got - expect) > real(1e-12)) {
            r.pass = false;
            r.detail = "fixed 0.5 cumprod at step " + std::to_string(j) + ": " + fmt(got) +
                       " != 0.5^j (" + fmt(expect) + ")";
        }
    }

    // regime classification vs direct product evaluation
    if (r.pass) {
        Matrix th(1, 1);
        th(0, 0) = real(0.9);
        Prop3Witness w1 = prop3_witness(th, 200);
        th(0, 0) = real(1.0);
        Prop3Witness w2 = prop3_witness(th, 200);
        th(0, 0) = real(1.05);
        Prop3Witness w3 = prop3_witness(th, 1000);
        bool ok = w1.regime[0] == GradientRegime::Vanishing && w1.consistent &&
                  std::abs(w1.direct_product.raw()[0] / real(7.0550791086553219e-10) - real(1)) < real(1e-6) &&
                  w2.regime[0] == GradientRegime::Marginal && w2.direct_product.raw()[0] == real(1) &&
                  w3.regime[0] == GradientRegime::Exploding && w3.direct_product.raw()[0] > real(1e21);
        if (!ok) {
            r.pass = false;
            r.detail = "regime classification disagrees with direct products (0.9^200=" +
                       fmt(w1.direct_product.raw()[0]) + ", 1.05^1000=" +
                       fmt(w3.direct_product.raw()[0]) + ")";
        } else {
            r.detail = "0.5^j exact; 0.9^200=" + fmt(w1.direct_product.raw()[0]) +
                       " vanishing, 1.0 marginal, 1.05^1000=" + fmt(w3.direct_product.raw()[0]) +
                       " exploding";
        }
    }
    r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    return r;
}

// ---- criterion 7: vanishing-curve ordering ---------------------------------

SuiteResult suite_ordering(const VerifyOptions& opts) {
    SuiteResult r{"ordering", true, "", 0};
    auto t0 = Clock::now();
    const int episodes = opts.quick ? 60 : 150;
    const int steps = 100;
    const Dims dims{8, 8, 128};

    auto curve = [&](CalibrationVariant v) {
        ShmParams p = diagnostics_params(v, dims, opts.seed);
        return cumulative_product_curve(p, episodes, steps, opts.seed);
    };
    CumProductStats fixed_c = curve(CalibrationVariant::FixedC);
    CumProductStats neural = curve(CalibrationVariant::NeuralTheta);
    CumProductStats fixed_th = curve(CalibrationVariant::FixedTheta);
    CumProductStats random_th = curve(CalibrationVariant::ShmRandomTheta);

    auto at_100 = [&](const CumProductStats& s) {
        std::vector<real> v;
        for (const auto& ep : s.episode_below_one) v.push_back(ep[steps - 1]);
        return v;
    };
    const int resamples = 1000;
    real c1 = bootstrap_less_confidence(at_100(fixed_c), at_100(neural), resamples, opts.seed);
    real c2 = bootstrap_less_confidence(at_100(neural), at_100(fixed_th), resamples, opts.seed + 1);
    real c3 = bootstrap_less_confidence(at_100(fixed_th), at_100(random_th), resamples, opts.seed + 2);
    real collapse = fixed_c.mean_below_one[9];  // step 10

    r.pass = c1 >= real(0.95) && c2 >= real(0.95) && c3 >= real(0.95) && collapse < real(1e-2);
    r.detail = "bootstrap P(FixedC<Neural)=" + fmt(c1) + " P(Neural<=FixedTheta)=" + fmt(c2) +
               " P(FixedTheta<ShmRandomTheta)=" + fmt(c3) + "; FixedC mean at step 10 = " +
               fmt(collapse);
    if (!opts.out_dir.empty()) {
        CsvTable t;
        t.columns = {"step", "mean_below_one", "max_entry", "frac_ge_1", "variant"};
        auto dump = [&](const CumProductStats& s) {
            for (int j = 0; j < steps; ++j)
                t.add_row({std::to_string(j + 1), format_real(s.mean_below_one[static_cast<std::size_t>(j)]),
                           format_real(s.max_entry[static_cast<std::size_t>(j)]),
                           format_real(s.frac_ge_1[static_cast<std::size_t>(j)]),
                           variant_name(s.variant)});
        };
        dump(fixed_c);
        dump(neural);
        dump(fixed_th);
        dump(random_th);
        ShmParams ones = diagnostics_params(CalibrationVariant::AllOnes, dims, opts.seed);
        ShmParams rc = diagnostics_params(CalibrationVariant::RandomC, dims, opts.seed);
        dump(cumulative_product_curve(ones, episodes, steps, opts.seed));
        dump(cumulative_product_curve(rc, episodes, steps, opts.seed));
        t.save(opts.out_dir + "/cumprod_curve.csv");
    }
    r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    return r;
}

// ---- criterion 8: supervised delayed-recall smoke --------------------------

TrainConfig supervised_smoke_config(bool shm, std::uint64_t seed) {
    TrainConfig cfg;
    cfg.task = "supervised.delayed_recall";
    cfg.seed = seed;
    cfg.variant = shm ? CalibrationVariant::ShmRandomTheta : CalibrationVariant::AllOnes;
    cfg.dims = shm ? Dims{0, 16, 128} : Dims{0, 8, 128};
    cfg.dataset.task = "delayed_recall";
    cfg.dataset.n_codes = 4;
    cfg.dataset.n_sequences = 256;
    cfg.dataset.t1 = 5;
    cfg.dataset.t2 = shm ? 60 : 190;  // T = 70 vs T = 200
    cfg.dataset.t3 = 5;
    cfg.lr = real(1e-3);
    cfg.batch = 16;
    cfg.epochs = 100;
    cfg.eval_every = 10;
    cfg.target_success = real(-1);  // run the full shared budget on both arms
    return cfg;
}

SuiteResult suite_supervised(const VerifyOptions& opts) {
    SuiteResult r{"supervised", true, "", 0};
    auto t0 = Clock::now();

    TrainConfig shm_cfg = supervised_smoke_config(true, opts.seed);
    TrainConfig ones_cfg = supervised_smoke_config(false, opts.seed);
    if (opts.quick) {
        shm_cfg.epochs = ones_cfg.epochs = 4;
        shm_cfg.dataset.n_sequences = ones_cfg.dataset.n_sequences = 64;
    }

    TrainResult shm_run = train_supervised(shm_cfg);
    TrainResult ones_run = train_supervised(ones_cfg);
    real shm_acc = shm_run.report.last("final_eval_acc");
    real ones_acc = ones_run.report.last("final_eval_acc");

    if (opts.quick) {
        r.pass = !shm_run.report.aborted && !ones_run.report.aborted;
        r.detail = "quick run only: shm_acc=" + fmt(shm_acc) + " all_ones_acc=" + fmt(ones_acc);
    } else {
        bool shm_ok = shm_acc >= real(0.95);
        bool gap_ok = ones_acc <= shm_acc - real(0.10);
        r.pass = shm_ok && gap_ok;
        r.detail = "shm(T=70,H=16) acc=" + fmt(shm_acc) + "; all_ones(T=200,H=8) acc=" +
                   fmt(ones_acc) + " (gap " + fmt(shm_acc - ones_acc) + ")";
        if (!shm_ok) r.detail += " [shm below 0.95]";
        if (!gap_ok) r.detail += " [gap below 10 points]";
    }
    if (!opts.out_dir.empty()) {
        shm_run.report.save_csv(opts.out_dir + "/supervised_shm_report.csv");
        ones_run.report.save_csv(opts.out_dir + "/supervised_all_ones_report.csv");
    }
    r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    return r;
}

// ---- criterion 9: actor-critic smoke ---------------------------------------

TrainConfig rl_smoke_config(std::uint64_t seed) {
    TrainConfig cfg;
    cfg.task = "rl.delayed_recall";
    cfg.seed = seed;
    cfg.variant = CalibrationVariant::ShmRandomTheta;
    cfg.dims = Dims{0, 16, 128};
    cfg.recall_env = DelayedRecallConfig{4, 5, 20, 5, real(0.5), real(10)};
    cfg.lr = real(1e-3);
    cfg.batch = 32;
    cfg.max_episodes = 50000;
    cfg.eval_every = 1000;
    cfg.eval_episodes = 200;
    cfg.entropy_coef = real(0.0005);
    cfg.target_success = real(0.9);
    return cfg;
}

SuiteResult suite_rl(const VerifyOptions& opts) {
    SuiteResult r{"rl", true, "", 0};
    auto t0 = Clock::now();

    // random-policy baseline: uniform action distribution
    TrainConfig base = rl_smoke_config(opts.seed);
    ShmParams rand_params = init_params({base.recall_env.n_codes + 4 + base.recall_env.n_codes + 2,
                                         4, 4},
                                        CalibrationVariant::ShmRandomTheta, opts.seed);
    PolicyValueHeads zero_heads = init_heads(4, base.recall_env.n_codes + 2, opts.seed);
    for (real& v : zero_heads.policy.w.raw()) v = real(0);
    for (real& v : zero_heads.policy.b) v = real(0);
    TrainConfig rand_cfg = base;
    rand_cfg.dims = Dims{rand_params.dims.d, 4, 4};
    const int n_base = opts.quick ? 800 : 3000;
    EvalReport rand_ev = evaluate(rand_params, zero_heads, rand_cfg, n_base, opts.seed + 13, false);
    real sigma = std::sqrt(real(0.25) * real(0.75) / static_cast<real>(n_base));
    bool baseline_ok = std::abs(rand_ev.success_rate - real(0.25)) <= real(3) * sigma;

    if (opts.quick) {
        TrainConfig cfg = rl_smoke_config(opts.seed);
        cfg.max_episodes = 64;
        cfg.eval_every = 32;
        cfg.eval_episodes = 16;
        TrainResult tr = train_policy_gradient(cfg);
        r.pass = baseline_ok && !tr.report.aborted;
        r.detail = "quick: baseline=" + fmt(rand_ev.success_rate) + " trained smoke ran " +
                   fmt(tr.report.last("episodes_used")) + " episodes";
        r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
        return r;
    }

    int successes = 0;
    std::ostringstream per_seed;
    for (int s = 0; s < 3; ++s) {
        TrainConfig cfg = rl_smoke_config(opts.seed + static_cast<std::uint64_t>(s) * 101);
        TrainResult tr = train_policy_gradient(cfg);
        real best = 0;
        for (const auto& row : tr.report.rows)
            if (row.metric == "success_rate" || row.metric == "final_success_rate")
                best = std::max(best, row.value);
        per_seed << "seed" << s << "=" << fmt(best) << "@" << fmt(tr.report.last("episodes_used"))
                 << "ep ";
        if (best >= real(0.9)) ++successes;
        if (!opts.out_dir.empty())
            tr.report.save_csv(opts.out_dir + "/rl_report_seed" + std::to_string(s) + ".csv");
    }
    r.pass = successes >= 2 && baseline_ok;
    r.detail = per_seed.str() + "(" + std::to_string(successes) + "/3 seeds >= 0.9); random baseline " +
               fmt(rand_ev.success_rate) + (baseline_ok ? " ~ 0.25" : " NOT ~ 0.25");
    r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    return r;
}

// ---- criterion 10: determinism & round-trips --------------------------------

SuiteResult suite_determinism(const VerifyOptions& opts) {
    SuiteResult r{"determinism", true, "", 0};
    auto t0 = Clock::now();
    std::ostringstream why;

    // bit-identical sequential episodes under a fixed seed
    {
        ShmParams params = init_params({6, 5, 7}, CalibrationVariant::ShmRandomTheta, opts.seed);
        Rng ctx = Rng::stream(opts.seed, "det.ctx");
        auto xs = synthetic_contexts(40, 6, real(0.5), ctx);
        Rng r1(opts.seed), r2(opts.seed);
        EpisodeTrace a = run_sequence(params, xs, r1, {});
        EpisodeTrace b = run_sequence(params, xs, r2, {});
        for (std::size_t t = 0; t < a.steps.size(); ++t) {
            if (!(a.steps[t].m.m == b.steps[t].m.m) || a.steps[t].h != b.steps[t].h) {
                r.pass = false;
                why << "[episode replay not bit-identical at step " << t + 1 << "] ";
                break;
            }
        }
    }

    // bit-identical training reports
    if (r.pass) {
        TrainConfig cfg;
        cfg.task = "supervised.repeat_prev";
        cfg.dataset.task = "repeat_prev";
        cfg.dataset.n_sequences = 12;
        cfg.dataset.horizon = 6;
        cfg.dataset.lag = 0;
        cfg.dims = Dims{0, 6, 8};
        cfg.epochs = 3;
        cfg.eval_every = 1;
        cfg.seed = opts.seed;
        TrainResult a = train_supervised(cfg);
        TrainResult b = train_supervised(cfg);
        std::ostringstream sa, sb;
        for (const auto& row : a.report.to_csv().rows)
            for (const auto& cell : row) sa << cell << ",";
        for (const auto& row : b.report.to_csv().rows)
            for (const auto& cell : row) sb << cell << ",";
        if (sa.str() != sb.str()) {
            r.pass = false;
            why << "[training reports differ across identical runs] ";
        }

        // checkpoint round-trip
        if (r.pass) {
            std::string path = (opts.out_dir.empty() ? std::string("/tmp") : opts.out_dir) +
                               "/det_checkpoint.bin";
            checkpoint_save(path, a.params, a.heads);
            Checkpoint ck = checkpoint_load(path);
            auto ta = param_tensors(a.params);
            auto tb = param_tensors(ck.params);
            for (std::size_t k = 0; k < ta.size() && r.pass; ++k)
                for (std::size_t i = 0; i < ta[k].size; ++i)
                    if (ta[k].data[i] != tb[k].data[i]) {
                        r.pass = false;
                        why << "[checkpoint round-trip not bit-exact] ";
                        break;
                    }
        }
    }

    // heatmap CSV round-trip at 17 significant digits
    if (r.pass) {
        ShmParams params = init_params({5, 4, 3}, CalibrationVariant::ShmRandomTheta, opts.seed + 7);
        Rng ctx = Rng::stream(opts.seed, "det.heatmap");
        auto xs = synthetic_contexts(5, 5, real(0.2), ctx);
        Rng rng(opts.seed);
        EpisodeTrace tr = run_sequence(params, xs, rng, {});
        std::string dir = opts.out_dir.empty() ? std::string("/tmp") : opts.out_dir;
        auto paths = export_heatmaps(tr, {3}, dir);
        Matrix m = read_matrix_csv(paths[0]);
        Matrix c = read_matrix_csv(paths[1]);
        if (!(m == tr.steps[2].m.m) || !(c == tr.steps[2].c.c)) {
            r.pass = false;
            why << "[heatmap csv round-trip not exact] ";
        }
    }

    r.detail = r.pass ? "episode replay, training report, checkpoint and heatmap CSV all bit-exact"
                      : why.str();
    r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    return r;
}

// ---- extra (non-criterion) smoke: repeat-previous policy gradient ----------

SuiteResult suite_rl_repeat_prev(const VerifyOptions& opts) {
    SuiteResult r{"rl_repeat_prev", true, "", 0};
    auto t0 = Clock::now();
    TrainConfig cfg;
    cfg.task = "rl.repeat_prev";
    cfg.seed = opts.seed;
    cfg.variant = CalibrationVariant::ShmRandomTheta;
    cfg.dims = Dims{0, 16, 128};
    cfg.repeat_env = RepeatPrevConfig{4, 1, 32};
    cfg.lr = real(1e-3);
    cfg.batch = 32;
    cfg.entropy_coef = real(3e-3);
    cfg.gamma = real(0.3);  // rewards are immediate in this task
    cfg.max_episodes = opts.quick ? 2000 : 500000;
    cfg.eval_every = opts.quick ? 1000 : 10000;
    cfg.eval_episodes = 100;
    cfg.target_return = real(0.8);
    TrainResult tr = train_policy_gradient(cfg);
    real ret = tr.report.last("final_mean_return");
    r.pass = opts.quick ? !tr.report.aborted : ret >= real(0.8);
    r.detail = "lag-1 K=4 T=32: mean return " + fmt(ret) + " after " +
               fmt(tr.report.last("episodes_used")) + " episodes (optimal 0.96875)";
    r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    return r;
}

}  // namespace

const std::vector<std::string>& verify_suite_names() {
    static const std::vector<std::string> names = {
        "scan", "depth", "grad", "prop4", "prop5",
        "prop3", "ordering", "supervised", "rl", "determinism",
    };
    return names;
}

const std::vector<std::string>& extra_verify_suite_names() {
    static const std::vector<std::string> names = {"rl_repeat_prev"};
    return names;
}

SuiteResult run_verify_suite(const std::string& name, const VerifyOptions& opts) {
    if (name == "scan") return suite_scan(opts);
    if (name == "depth") return suite_depth(opts);
    if (name == "grad") return suite_grad(opts);
    if (name == "prop4") return suite_prop4(opts);
    if (name == "prop5") return suite_prop5(opts);
    if (name == "prop3") return suite_prop3(opts);
    if (name == "ordering") return suite_ordering(opts);
    if (name == "supervised") return suite_supervised(opts);
    if (name == "rl") return suite_rl(opts);
    if (name == "determinism") return suite_determinism(opts);
    if (name == "rl_repeat_prev") return suite_rl_repeat_prev(opts);
    throw ConfigError("unknown verify suite: " + name);
}

std::vector<SuiteResult> run_all_verify_suites(const VerifyOptions& opts) {
    std::vector<SuiteResult> out;
    for (const auto& name : verify_suite_names()) out.push_back(run_verify_suite(name, opts));
    return out;
}

}  // namespace shm
