// shm: command-line surface for the Hadamard memory library. Subcommands:
//   verify  - run verification suites (oracle equivalence, gradients, ...)
//   diag    - stability diagnostics: vanishing curves, prop checks, heatmaps
//   train   - supervised or actor-critic training runs
//   eval    - evaluate a checkpoint in an environment
//   bench   - sequential vs scan wall-clock sweep
//   export  - collate run artifacts into figure-ready CSVs
//
// Exit codes: 0 success, 1 verification failure, 2 usage error, 3 numeric abort.

#include <chrono>
#include <cstdlib>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "shm/diagnostics.hpp"
#include "shm/episode.hpp"
#include "shm/io.hpp"
#include "shm/trainer.hpp"
#include "shm/verify.hpp"

namespace fs = std::filesystem;
using namespace shm;

namespace {

constexpr const char* kVersion = "0.1.0";

struct GlobalOpts {
    std::string out_dir = "out";
    int threads = 1;
    std::string config_path;
    std::vector<std::string> overrides;  // key=value
};

KeyValueFile load_config(const GlobalOpts& g) {
    KeyValueFile kv;
    if (!g.config_path.empty()) kv = KeyValueFile::load(g.config_path);
    for (const auto& ov : g.overrides) {
        auto eq = ov.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got: " + ov);
        kv.set(ov.substr(0, eq), ov.substr(eq + 1));
    }
    return kv;
}

void write_manifest(const GlobalOpts& g, const std::string& command, std::uint64_t config_hash,
                    std::uint64_t seed) {
    KeyValueFile m;
    m.set("command", command);
    m.set("version", kVersion);
    m.set_int("config_hash", static_cast<std::int64_t>(config_hash));
    m.set_int("seed", static_cast<std::int64_t>(seed));
    m.set_int("threads", g.threads);
    auto now = std::chrono::system_clock::now().time_since_epoch();
    m.set_int("timestamp_us",
              std::chrono::duration_cast<std::chrono::microseconds>(now).count());
    m.save(g.out_dir + "/manifest.txt");
}

int cmd_verify(const GlobalOpts& g, const std::vector<std::string>& suites, bool all,
               bool inject_fault, bool quick) {
    VerifyOptions opts;
    opts.threads = g.threads;
    opts.inject_fault = inject_fault;
    opts.quick = quick;
    opts.out_dir = g.out_dir;
    fs::create_directories(g.out_dir);

    std::vector<std::string> to_run = suites;
    if (all || to_run.empty()) to_run = verify_suite_names();
    for (const auto& s : to_run) {
        const auto& known = verify_suite_names();
        const auto& extra = extra_verify_suite_names();
        if (std::find(known.begin(), known.end(), s) == known.end() &&
            std::find(extra.begin(), extra.end(), s) == extra.end())
            throw ConfigError("unknown verify suite: " + s);
    }

    bool ok = true;
    KeyValueFile summary;
    for (const auto& name : to_run) {
        SuiteResult r = run_verify_suite(name, opts);
        ok = ok && r.pass;
        std::printf("[%s] %-12s %7.2fs  %s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(), r.seconds,
                    r.detail.c_str());
        summary.set(name + ".pass", r.pass ? "1" : "0");
        summary.set(name + ".detail", r.detail);
    }
    summary.save(g.out_dir + "/verify_summary.txt");
    write_manifest(g, "verify", summary.hash(), opts.seed);
    return ok ? 0 : 1;
}

int cmd_diag(const GlobalOpts& g, int episodes, int steps, std::uint64_t seed) {
    fs::create_directories(g.out_dir);
    const Dims dims{8, 8, 128};

    CsvTable curve;
    curve.columns = {"step", "mean_below_one", "max_entry", "frac_ge_1", "variant"};
    for (auto v : {CalibrationVariant::ShmRandomTheta, CalibrationVariant::AllOnes,
                   CalibrationVariant::RandomC, CalibrationVariant::FixedC,
                   CalibrationVariant::FixedTheta, CalibrationVariant::NeuralTheta}) {
        ShmParams p = diagnostics_params(v, dims, seed);
        CumProductStats s = cumulative_product_curve(p, episodes, steps, seed);
        for (int j = 0; j < steps; ++j)
            curve.add_row({std::to_string(j + 1),
                           format_real(s.mean_below_one[static_cast<std::size_t>(j)]),
                           format_real(s.max_entry[static_cast<std::size_t>(j)]),
                           format_real(s.frac_ge_1[static_cast<std::size_t>(j)]),
                           variant_name(v)});
        std::printf("cumprod %-18s mean_below_one[%d] = %s\n", variant_name(v), steps,
                    format_real(s.mean_below_one.back()).c_str());
    }
    curve.save(g.out_dir + "/cumprod_curve.csv");

    VerifyOptions vo;
    vo.out_dir = g.out_dir;
    vo.seed = seed;
    SuiteResult p4 = run_verify_suite("prop4", vo);
    SuiteResult p5 = run_verify_suite("prop5", vo);
    std::printf("[%s] prop4: %s\n", p4.pass ? "PASS" : "FAIL", p4.detail.c_str());
    std::printf("[%s] prop5: %s\n", p5.pass ? "PASS" : "FAIL", p5.detail.c_str());

    // sample heatmaps from one synthetic episode
    ShmParams p = diagnostics_params(CalibrationVariant::ShmRandomTheta, dims, seed);
    Rng ctx = Rng::stream(seed, "diag.heatmap");
    auto xs = synthetic_contexts(12, dims.d, real(0.9), ctx);
    Rng rng(seed);
    EpisodeTrace tr = run_sequence(p, xs, rng, {});
    export_heatmaps(tr, {3, 8, 12}, g.out_dir);

    KeyValueFile kv;
    kv.set_int("episodes", episodes);
    kv.set_int("steps", steps);
    write_manifest(g, "diag", kv.hash(), seed);
    return (p4.pass && p5.pass) ? 0 : 1;
}

int cmd_train(const GlobalOpts& g, int seeds, bool dump_dataset) {
    KeyValueFile kv = load_config(g);
    TrainConfig base = TrainConfig::from_kv(kv);
    fs::create_directories(g.out_dir);

    if (dump_dataset) {
        if (base.task.rfind("supervised.", 0) != 0)
            throw ConfigError("--dump-dataset only applies to supervised tasks");
        DatasetConfig dcfg = base.dataset;
        dcfg.task = base.task.substr(std::string("supervised.").size());
        Dataset ds = make_supervised_dataset(dcfg, Rng::stream(base.seed, "dataset").next_u64());
        save_dataset_csv(ds, g.out_dir + "/dataset.csv");
    }

    CsvTable timing;
    timing.columns = {"seed", "wall_seconds"};
    for (int s = 0; s < seeds; ++s) {
        TrainConfig cfg = base;
        cfg.seed = base.seed + static_cast<std::uint64_t>(s);
        bool rl = cfg.task.rfind("rl.", 0) == 0;
        TrainResult res = rl ? train_policy_gradient(cfg) : train_supervised(cfg);
        std::string tag = std::to_string(cfg.seed);
        res.report.save_csv(g.out_dir + "/report_seed" + tag + ".csv");
        checkpoint_save(g.out_dir + "/checkpoint_seed" + tag + ".bin", res.params, res.heads);
        timing.add_row({tag, format_real(static_cast<real>(res.report.wall_seconds))});
        std::string metric = rl ? "final_success_rate" : "final_eval_acc";
        std::printf("seed %s: %s = %s%s\n", tag.c_str(), metric.c_str(),
                    format_real(res.report.last(metric)).c_str(),
                    res.report.aborted ? (" [ABORTED: " + res.report.abort_reason + "]").c_str()
                                       : "");
        if (res.report.aborted) {
            write_manifest(g, "train", base.hash(), base.seed);
            return 3;
        }
    }
    timing.save(g.out_dir + "/timing.csv");
    write_manifest(g, "train", base.hash(), base.seed);
    return 0;
}

int cmd_eval(const GlobalOpts& g, const std::string& checkpoint, int episodes, bool greedy) {
    KeyValueFile kv = load_config(g);
    TrainConfig cfg = TrainConfig::from_kv(kv);
    fs::create_directories(g.out_dir);

    bool recall = cfg.task.find("repeat_prev") == std::string::npos;
    DelayedRecallEnv renv(cfg.recall_env);
    RepeatPrevEnv penv(cfg.repeat_env);
    Dims dims = cfg.dims;
    dims.d = recall ? renv.obs_dim() + renv.n_actions() : penv.obs_dim() + penv.n_actions();
    Checkpoint ck = checkpoint_load_expect(checkpoint, dims, cfg.variant);
    int n_actions = recall ? renv.n_actions() : penv.n_actions();
    if (ck.heads.n_out() != n_actions)
        throw ConfigError("checkpoint policy head has " + std::to_string(ck.heads.n_out()) +
                          " outputs, environment needs " + std::to_string(n_actions));

    EvalReport ev = evaluate(ck.params, ck.heads, cfg, episodes, cfg.seed, greedy);
    std::printf("episodes=%d success_rate=%s mean_return=%s std_return=%s\n", ev.episodes,
                format_real(ev.success_rate).c_str(), format_real(ev.mean_return).c_str(),
                format_real(ev.std_return).c_str());
    KeyValueFile out;
    out.set_int("episodes", ev.episodes);
    out.set_real("success_rate", ev.success_rate);
    out.set_real("mean_return", ev.mean_return);
    out.set_real("std_return", ev.std_return);
    out.save(g.out_dir + "/eval.txt");
    write_manifest(g, "eval", cfg.hash(), cfg.seed);
    return 0;
}

int cmd_bench(const GlobalOpts& g, std::vector<int> t_list, std::vector<int> h_list,
              std::uint64_t seed, double mem_budget_gb) {
#ifndef NDEBUG
    std::fprintf(stderr, "warning: bench on a non-release build; timings will understate\n");
#endif
    fs::create_directories(g.out_dir);
    if (t_list.empty()) t_list = {64, 128, 256, 512, 1024, 2048, 4096};
    if (h_list.empty()) h_list = {24, 72, 128, 156};

    CsvTable out;
    out.columns = {"t", "h", "mode", "seconds", "speedup", "combine_levels"};
    for (int h : h_list) {
        for (int t_len : t_list) {
            // ~7 live T x H x H arrays during the scan
            double bytes = 7.0 * t_len * static_cast<double>(h) * h * sizeof(real);
            if (bytes > mem_budget_gb * 1e9) {
                std::printf("skip T=%d H=%d (exceeds %.1f GB budget)\n", t_len, h, mem_budget_gb);
                continue;
            }
            ShmParams params = init_params({8, h, 128}, CalibrationVariant::ShmRandomTheta,
                                           seed + static_cast<std::uint64_t>(h * 131 + t_len));
            Rng ctx = Rng::stream(seed, "bench.ctx");
            auto xs = synthetic_contexts(t_len, 8, real(0.5), ctx);
            Rng crng(seed);
            std::vector<CalMatrix> cs(static_cast<std::size_t>(t_len));
            std::vector<UpdMatrix> us(static_cast<std::size_t>(t_len));
            for (int i = 0; i < t_len; ++i) {
                cs[static_cast<std::size_t>(i)] =
                    variant_calibration(params, xs[static_cast<std::size_t>(i)], i + 1, crng);
                us[static_cast<std::size_t>(i)] = update_matrix(params, xs[static_cast<std::size_t>(i)]);
            }
            MemoryState m0(h);

            auto t0 = std::chrono::steady_clock::now();
            MemoryState cur = m0;
            for (int i = 0; i < t_len; ++i)
                cur = write_step(cur, cs[static_cast<std::size_t>(i)], us[static_cast<std::size_t>(i)]);
            double seq_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

            ScanStats stats;
            t0 = std::chrono::steady_clock::now();
            auto ms = parallel_scan(m0, cs, us, &stats, g.threads);
            double scan_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

            if (max_rel_diff(cur.m, ms.back().m) > real(1e-8))
                throw NumericError("bench: scan/sequential mismatch");

            out.add_row({std::to_string(t_len), std::to_string(h), "sequential",
                         format_real(static_cast<real>(seq_s)), "1", "0"});
            out.add_row({std::to_string(t_len), std::to_string(h), "scan",
                         format_real(static_cast<real>(scan_s)),
                         format_real(static_cast<real>(seq_s / scan_s)),
                         std::to_string(stats.combine_levels)});
            std::printf("T=%4d H=%3d sequential %.4fs scan %.4fs depth %d\n", t_len, h, seq_s,
                        scan_s, stats.combine_levels);
        }
    }
    out.save(g.out_dir + "/bench.csv");
    write_manifest(g, "bench", 0, seed);
    return 0;
}

int cmd_export(const GlobalOpts& g, const std::string& run_dir) {
    if (!fs::is_directory(run_dir)) throw ConfigError("export: run directory not found: " + run_dir);

    std::vector<std::string> reports;
    std::vector<std::string> extras;
    for (const auto& e : fs::directory_iterator(run_dir)) {
        std::string name = e.path().filename().string();
        if (name.rfind("report_seed", 0) == 0 && name.find(".csv") != std::string::npos)
            reports.push_back(e.path().string());
        else if (name == "cumprod_curve.csv" || name == "prop4.csv" || name == "prop5.csv" ||
                 name.rfind("heatmap_", 0) == 0)
            extras.push_back(name);
    }
    if (reports.empty() && extras.empty())
        throw ConfigError("export: no run artifacts in " + run_dir +
                          " (expected report_seed*.csv, cumprod_curve.csv, prop4.csv, prop5.csv "
                          "or heatmap_*.csv)");

    fs::create_directories(g.out_dir);
    std::sort(reports.begin(), reports.end());

    if (!reports.empty()) {
        // mean +/- std across seeds per (metric, step)
        std::map<std::pair<std::string, std::int64_t>, std::vector<double>> series;
        for (const auto& path : reports) {
            CsvTable t = CsvTable::load(path);
            for (const auto& row : t.rows)
                series[{row[1], std::stoll(row[0])}].push_back(static_cast<double>(parse_real(row[2])));
        }
        CsvTable curve;
        curve.columns = {"metric", "step", "mean", "std", "n_seeds"};
        for (const auto& [key, vals] : series) {
            double mean = 0;
            for (double v : vals) mean += v;
            mean /= static_cast<double>(vals.size());
            double var = 0;
            for (double v : vals) var += (v - mean) * (v - mean);
            var /= static_cast<double>(vals.size());
            curve.add_row({key.first, std::to_string(key.second),
                           format_real(static_cast<real>(mean)),
                           format_real(static_cast<real>(std::sqrt(var))),
                           std::to_string(vals.size())});
        }
        curve.save(g.out_dir + "/learning_curve.csv");
        std::printf("aggregated %zu report(s) -> %s/learning_curve.csv\n", reports.size(),
                    g.out_dir.c_str());
    }
    for (const auto& name : extras) {
        fs::copy_file(run_dir + "/" + name, g.out_dir + "/" + name,
                      fs::copy_options::overwrite_existing);
    }
    KeyValueFile kv;
    kv.set_int("reports", static_cast<std::int64_t>(reports.size()));
    kv.set_int("extras", static_cast<std::int64_t>(extras.size()));
    write_manifest(g, "export", kv.hash(), 0);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hadamard memory framework: verification, diagnostics, training, benchmarks"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand
    app.set_version_flag("--app-version", kVersion);

    GlobalOpts g;
    if (const char* env_out = std::getenv("SHM_OUT_DIR")) g.out_dir = env_out;
    app.add_option("--out", g.out_dir, "output directory (or SHM_OUT_DIR)")->capture_default_str();
    app.add_option("--threads", g.threads, "worker cap; 1 guarantees bit-determinism")
        ->capture_default_str();

    auto* verify = app.add_subcommand("verify", "run verification suites");
    std::vector<std::string> suites;
    bool all = false, inject = false, quick = false;
    verify->add_option("--suite", suites, "suite name (repeatable); default all");
    verify->add_flag("--all", all, "run every suite");
    verify->add_flag("--inject-fault", inject, "testing aid: perturb one scan output");
    verify->add_flag("--quick", quick, "reduced budgets (not the acceptance gate)");

    auto* diag = app.add_subcommand("diag", "stability diagnostics and CSV export");
    int diag_episodes = 150, diag_steps = 100;
    std::uint64_t diag_seed = 20240917;
    diag->add_option("--episodes", diag_episodes)->capture_default_str();
    diag->add_option("--steps", diag_steps)->capture_default_str();
    diag->add_option("--seed", diag_seed)->capture_default_str();

    auto* train = app.add_subcommand("train", "train per config file");
    int train_seeds = 1;
    bool dump_dataset = false;
    train->add_option("--config", g.config_path, "key-value config file");
    train->add_option("--set", g.overrides, "override config entries (key=value, repeatable)");
    train->add_option("--seeds", train_seeds, "number of consecutive seeds")->capture_default_str();
    train->add_flag("--dump-dataset", dump_dataset, "also write the supervised dataset as CSV");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string eval_checkpoint;
    int eval_episodes = 200;
    bool eval_sampled = false;
    eval->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();
    eval->add_option("--config", g.config_path, "key-value config file");
    eval->add_option("--set", g.overrides, "override config entries");
    eval->add_option("--episodes", eval_episodes)->capture_default_str();
    eval->add_flag("--sampled", eval_sampled, "sample the policy instead of argmax");

    auto* bench = app.add_subcommand("bench", "sequential vs scan wall-clock sweep");
    std::vector<int> bench_t, bench_h;
    std::uint64_t bench_seed = 7;
    double bench_mem = 1.5;
    bench->add_option("--t-list", bench_t, "sequence lengths (default 64..4096 doubling)");
    bench->add_option("--h-list", bench_h, "memory sizes (default 24 72 128 156)");
    bench->add_option("--seed", bench_seed)->capture_default_str();
    bench->add_option("--mem-budget-gb", bench_mem)->capture_default_str();

    auto* exp = app.add_subcommand("export", "collate run artifacts");
    std::string export_run;
    exp->add_option("--run", export_run, "run directory to collate")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (app.got_subcommand(verify)) return cmd_verify(g, suites, all, inject, quick);
        if (app.got_subcommand(diag)) return cmd_diag(g, diag_episodes, diag_steps, diag_seed);
        if (app.got_subcommand(train)) return cmd_train(g, train_seeds, dump_dataset);
        if (app.got_subcommand(eval))
            return cmd_eval(g, eval_checkpoint, eval_episodes, !eval_sampled);
        if (app.got_subcommand(bench)) return cmd_bench(g, bench_t, bench_h, bench_seed, bench_mem);
        if (app.got_subcommand(exp)) return cmd_export(g, export_run);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric abort: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
