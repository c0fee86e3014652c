#include "shm/trainer.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>

namespace shm {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

PolicyValueHeads init_heads(int h, int n_out, std::uint64_t seed) {
    if (h < 1 || n_out < 1) throw ConfigError("init_heads: bad dimensions");
    Rng rng = Rng::stream(seed, "init.heads");
    PolicyValueHeads heads;
    heads.policy = init_affine_map(n_out, h, rng);
    heads.value = init_affine_map(1, h, rng);
    return heads;
}

std::vector<TensorRef> head_tensors(PolicyValueHeads& heads) {
    return {
        {"policy.w", heads.policy.w.data(), heads.policy.w.size()},
        {"policy.b", heads.policy.b.data(), heads.policy.b.size()},
        {"value.w", heads.value.w.data(), heads.value.w.size()},
        {"value.b", heads.value.b.data(), heads.value.b.size()},
    };
}

Vec softmax(const Vec& logits) {
    real mx = logits[0];
    for (real v : logits) mx = std::max(mx, v);
    Vec p(logits.size());
    real sum = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        sum += p[i];
    }
    for (real& v : p) v /= sum;
    return p;
}

// ---------------------------------------------------------------------------
// config <-> key-value

KeyValueFile TrainConfig::to_kv() const {
    KeyValueFile kv;
    kv.set("task", task);
    kv.set_int("dims.d", dims.d);
    kv.set_int("dims.h", dims.h);
    kv.set_int("dims.l", dims.l);
    kv.set("variant", variant_name(variant));
    kv.set_int("seed", static_cast<std::int64_t>(seed));
    kv.set_real("lr", lr);
    kv.set_real("clip_max_norm", clip_max_norm);
    kv.set_real("gamma", gamma);
    kv.set_real("entropy_coef", entropy_coef);
    kv.set_real("value_coef", value_coef);
    kv.set_int("advantage_norm", advantage_norm ? 1 : 0);
    kv.set_int("batch", batch);
    kv.set_int("epochs", epochs);
    kv.set_int("max_episodes", max_episodes);
    kv.set_int("eval_every", eval_every);
    kv.set_int("eval_episodes", eval_episodes);
    kv.set_real("target_success", target_success);
    kv.set_real("target_return", target_return);
    kv.set_int("normalize_context", normalize_context ? 1 : 0);
    kv.set_real("holdout_fraction", holdout_fraction);
    kv.set("dataset.task", dataset.task);
    kv.set_int("dataset.n_sequences", dataset.n_sequences);
    kv.set_int("dataset.n_codes", dataset.n_codes);
    kv.set_int("dataset.t1", dataset.t1);
    kv.set_int("dataset.t2", dataset.t2);
    kv.set_int("dataset.t3", dataset.t3);
    kv.set_real("dataset.distractor_scale", dataset.distractor_scale);
    kv.set_int("dataset.alphabet", dataset.alphabet);
    kv.set_int("dataset.lag", dataset.lag);
    kv.set_int("dataset.horizon", dataset.horizon);
    kv.set_int("env.recall.n_codes", recall_env.n_codes);
    kv.set_int("env.recall.t1", recall_env.t1);
    kv.set_int("env.recall.t2", recall_env.t2);
    kv.set_int("env.recall.t3", recall_env.t3);
    kv.set_real("env.recall.apple_prob", recall_env.apple_prob);
    kv.set_real("env.recall.bonus", recall_env.bonus);
    kv.set_int("env.repeat.alphabet", repeat_env.alphabet);
    kv.set_int("env.repeat.lag", repeat_env.lag);
    kv.set_int("env.repeat.horizon", repeat_env.horizon);
    return kv;
}

TrainConfig TrainConfig::from_kv(const KeyValueFile& kv) {
    TrainConfig c;
    c.task = kv.get_or("task", c.task);
    c.dims.d = static_cast<int>(kv.get_int("dims.d", c.dims.d));
    c.dims.h = static_cast<int>(kv.get_int("dims.h", c.dims.h));
    c.dims.l = static_cast<int>(kv.get_int("dims.l", c.dims.l));
    c.variant = variant_from_name(kv.get_or("variant", variant_name(c.variant)));
    c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<std::int64_t>(c.seed)));
    c.lr = kv.get_real("lr", c.lr);
    c.clip_max_norm = kv.get_real("clip_max_norm", c.clip_max_norm);
    c.gamma = kv.get_real("gamma", c.gamma);
    c.entropy_coef = kv.get_real("entropy_coef", c.entropy_coef);
    c.value_coef = kv.get_real("value_coef", c.value_coef);
    c.advantage_norm = kv.get_int("advantage_norm", 1) != 0;
    c.batch = static_cast<int>(kv.get_int("batch", c.batch));
    c.epochs = static_cast<int>(kv.get_int("epochs", c.epochs));
    c.max_episodes = kv.get_int("max_episodes", c.max_episodes);
    c.eval_every = static_cast<int>(kv.get_int("eval_every", c.eval_every));
    c.eval_episodes = static_cast<int>(kv.get_int("eval_episodes", c.eval_episodes));
    c.target_success = kv.get_real("target_success", c.target_success);
    c.target_return = kv.get_real("target_return", c.target_return);
    c.normalize_context = kv.get_int("normalize_context", 1) != 0;
    c.holdout_fraction = kv.get_real("holdout_fraction", c.holdout_fraction);
    c.dataset.task = kv.get_or("dataset.task", c.dataset.task);
    c.dataset.n_sequences = static_cast<int>(kv.get_int("dataset.n_sequences", c.dataset.n_sequences));
    c.dataset.n_codes = static_cast<int>(kv.get_int("dataset.n_codes", c.dataset.n_codes));
    c.dataset.t1 = static_cast<int>(kv.get_int("dataset.t1", c.dataset.t1));
    c.dataset.t2 = static_cast<int>(kv.get_int("dataset.t2", c.dataset.t2));
    c.dataset.t3 = static_cast<int>(kv.get_int("dataset.t3", c.dataset.t3));
    c.dataset.distractor_scale = kv.get_real("dataset.distractor_scale", c.dataset.distractor_scale);
    c.dataset.alphabet = static_cast<int>(kv.get_int("dataset.alphabet", c.dataset.alphabet));
    c.dataset.lag = static_cast<int>(kv.get_int("dataset.lag", c.dataset.lag));
    c.dataset.horizon = static_cast<int>(kv.get_int("dataset.horizon", c.dataset.horizon));
    c.recall_env.n_codes = static_cast<int>(kv.get_int("env.recall.n_codes", c.recall_env.n_codes));
    c.recall_env.t1 = static_cast<int>(kv.get_int("env.recall.t1", c.recall_env.t1));
    c.recall_env.t2 = static_cast<int>(kv.get_int("env.recall.t2", c.recall_env.t2));
    c.recall_env.t3 = static_cast<int>(kv.get_int("env.recall.t3", c.recall_env.t3));
    c.recall_env.apple_prob = kv.get_real("env.recall.apple_prob", c.recall_env.apple_prob);
    c.recall_env.bonus = kv.get_real("env.recall.bonus", c.recall_env.bonus);
    c.repeat_env.alphabet = static_cast<int>(kv.get_int("env.repeat.alphabet", c.repeat_env.alphabet));
    c.repeat_env.lag = static_cast<int>(kv.get_int("env.repeat.lag", c.repeat_env.lag));
    c.repeat_env.horizon = static_cast<int>(kv.get_int("env.repeat.horizon", c.repeat_env.horizon));
    return c;
}

// ---------------------------------------------------------------------------
// run report

void RunReport::add(std::int64_t step, const std::string& metric, real value) {
    rows.push_back({step, metric, value});
}

real RunReport::last(const std::string& metric) const {
    for (auto it = rows.rbegin(); it != rows.rend(); ++it)
        if (it->metric == metric) return it->value;
    throw RangeError("RunReport: no rows for metric '" + metric + "'");
}

CsvTable RunReport::to_csv() const {
    CsvTable t;
    t.columns = {"step", "metric", "value", "seed", "variant", "config_hash"};
    for (const Row& r : rows) {
        t.add_row({std::to_string(r.step), r.metric, format_real(r.value), std::to_string(seed),
                   variant_name(variant), std::to_string(config_hash)});
    }
    return t;
}

void RunReport::save_csv(const std::string& path) const { to_csv().save(path); }

// ---------------------------------------------------------------------------
// optimizer

AdamOptimizer::AdamOptimizer(real lr, real beta1, real beta2, real eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void AdamOptimizer::step(const std::vector<TensorRef>& tensors, const GradReport& grads) {
    if (tensors.size() != grads.grads.size())
        throw DimError("AdamOptimizer: tensor/gradient arity mismatch");
    if (m_.empty()) {
        for (const auto& t : tensors) {
            m_.emplace_back(t.size, real(0));
            v_.emplace_back(t.size, real(0));
        }
    }
    t_ += 1;
    real bc1 = real(1) - std::pow(beta1_, static_cast<real>(t_));
    real bc2 = real(1) - std::pow(beta2_, static_cast<real>(t_));
    for (std::size_t k = 0; k < tensors.size(); ++k) {
        if (tensors[k].size != grads.grads[k].size())
            throw DimError("AdamOptimizer: size mismatch for tensor " + tensors[k].name);
        auto& m = m_[k];
        auto& v = v_[k];
        real* w = tensors[k].data;
        const auto& g = grads.grads[k];
        for (std::size_t i = 0; i < g.size(); ++i) {
            m[i] = beta1_ * m[i] + (real(1) - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (real(1) - beta2_) * g[i] * g[i];
            real mhat = m[i] / bc1;
            real vhat = v[i] / bc2;
            w[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

// ---------------------------------------------------------------------------
// shared helpers

namespace {

GradReport zero_like(const std::vector<TensorRef>& tensors) {
    GradReport g;
    for (const auto& t : tensors) g.add(t.name, t.size);
    return g;
}

std::vector<TensorRef> all_tensors(ShmParams& params, PolicyValueHeads& heads) {
    auto t = param_tensors(params);
    for (auto& ht : head_tensors(heads)) t.push_back(ht);
    return t;
}

// Incremental untaped rollout for evaluation: same RNG consumption as the
// taped builder.
struct PlainRollout {
    const ShmParams& params;
    Rng& rng;
    MemoryState m;

    PlainRollout(const ShmParams& p, Rng& r) : params(p), rng(r), m(p.dims.h) {}

    Vec step(const ContextInput& x) {
        CalMatrix c = variant_calibration(params, x, m.step + 1, rng);
        UpdMatrix u = update_matrix(params, x);
        m = write_step(m, c, u);
        return read(m, params.w_q.apply(x.x));
    }
};

ContextInput make_context(const Vec& obs, int prev_action, int n_actions, bool normalize) {
    ContextInput x;
    x.x.reserve(obs.size() + static_cast<std::size_t>(n_actions));
    x.x.insert(x.x.end(), obs.begin(), obs.end());
    for (int a = 0; a < n_actions; ++a)
        x.x.push_back(a == prev_action ? real(1) : real(0));
    return normalize ? layer_normalize(x) : x;
}

real log_sum_exp(const Vec& logits) {
    real mx = logits[0];
    for (real v : logits) mx = std::max(mx, v);
    real s = 0;
    for (real v : logits) s += std::exp(v - mx);
    return mx + std::log(s);
}

struct Snapshot {
    ShmParams params;
    PolicyValueHeads heads;
};

}  // namespace

A2cStepGrad a2c_step_grad(const Vec& logits, int action, real advantage, real value_pred,
                          real target_return, real entropy_coef) {
    Vec p = softmax(logits);
    real entropy = 0;
    for (real v : p)
        if (v > real(0)) entropy -= v * std::log(v);
    A2cStepGrad g;
    g.dlogits.resize(logits.size());
    for (std::size_t j = 0; j < logits.size(); ++j) {
        real ce = (p[j] - (static_cast<int>(j) == action ? real(1) : real(0))) * advantage;
        real ent = p[j] > real(0) ? entropy_coef * p[j] * (std::log(p[j]) + entropy) : real(0);
        g.dlogits[j] = ce + ent;
    }
    g.dvalue = value_pred - target_return;
    return g;
}

// ---------------------------------------------------------------------------
// supervised

TrainResult train_supervised(const TrainConfig& cfg) {
    auto t_start = std::chrono::steady_clock::now();
    DatasetConfig dcfg = cfg.dataset;
    if (cfg.task == "supervised.delayed_recall") dcfg.task = "delayed_recall";
    else if (cfg.task == "supervised.repeat_prev") dcfg.task = "repeat_prev";
    else throw ConfigError("train_supervised: unsupported task " + cfg.task);

    Dataset ds = make_supervised_dataset(dcfg, Rng::stream(cfg.seed, "dataset").next_u64());
    Dims dims = cfg.dims;
    dims.d = ds.input_dim;

    TrainResult res;
    res.params = init_params(dims, cfg.variant, cfg.seed);
    res.heads = init_heads(dims.h, ds.n_classes, cfg.seed);
    res.report.seed = cfg.seed;
    res.report.variant = cfg.variant;
    res.report.config_hash = cfg.hash();

    const int n_total = static_cast<int>(ds.items.size());
    const int n_eval = std::max(1, static_cast<int>(static_cast<real>(n_total) * cfg.holdout_fraction));
    const int n_train = std::max(1, n_total - n_eval);

    auto tensors = all_tensors(res.params, res.heads);
    AdamOptimizer adam(cfg.lr);
    Rng theta_root = Rng::stream(cfg.seed, "theta");
    Rng eval_theta_root = Rng::stream(cfg.seed, "eval.theta");
    std::uint64_t seq_counter = 0;

    auto eval_accuracy = [&]() {
        std::int64_t correct = 0, scored = 0;
        for (int i = n_train; i < n_total; ++i) {
            const auto& ex = ds.items[static_cast<std::size_t>(i)];
            Rng rng = eval_theta_root.derive(static_cast<std::uint64_t>(i));
            PlainRollout roll(res.params, rng);
            for (std::size_t t = 0; t < ex.xs.size(); ++t) {
                Vec h = roll.step(ex.xs[t]);
                if (ex.targets[t] < 0) continue;
                Vec logits = res.heads.policy.apply(h);
                int arg = 0;
                for (std::size_t j = 1; j < logits.size(); ++j)
                    if (logits[j] > logits[static_cast<std::size_t>(arg)]) arg = static_cast<int>(j);
                scored += 1;
                if (arg == ex.targets[t]) correct += 1;
            }
        }
        return scored ? static_cast<real>(correct) / static_cast<real>(scored) : real(0);
    };

    Snapshot good{res.params, res.heads};
    bool stop = false;
    for (int epoch = 1; epoch <= cfg.epochs && !stop; ++epoch) {
        double epoch_loss = 0;
        std::int64_t epoch_scored = 0, epoch_correct = 0;
        int cursor = 0;
        while (cursor < n_train) {
            int bsz = std::min(cfg.batch, n_train - cursor);
            GradReport batch_grads = zero_like(tensors);
            std::int64_t batch_scored = 0;

            struct PerSeq {
                EpisodeTrace trace;
                std::vector<Vec> dlogits;  // per scored step
                std::vector<std::size_t> scored_steps;
            };
            std::vector<PerSeq> seqs;
            seqs.reserve(static_cast<std::size_t>(bsz));

            for (int b = 0; b < bsz; ++b) {
                const auto& ex = ds.items[static_cast<std::size_t>(cursor + b)];
                Rng rng = theta_root.derive(seq_counter++);
                RunOptions opts;
                opts.record_tape = true;
                EpisodeTrace trace = run_sequence(res.params, ex.xs, rng, opts);

                PerSeq ps;
                for (std::size_t t = 0; t < ex.xs.size(); ++t) {
                    int target = ex.targets[t];
                    if (target < 0) continue;
                    Vec logits = res.heads.policy.apply(trace.steps[t].h);
                    real lse = log_sum_exp(logits);
                    epoch_loss += static_cast<double>(lse - logits[static_cast<std::size_t>(target)]);
                    int arg = 0;
                    for (std::size_t j = 1; j < logits.size(); ++j)
                        if (logits[j] > logits[static_cast<std::size_t>(arg)]) arg = static_cast<int>(j);
                    if (arg == target) epoch_correct += 1;
                    epoch_scored += 1;
                    batch_scored += 1;

                    Vec dl(logits.size());
                    for (std::size_t j = 0; j < logits.size(); ++j) {
                        real pj = std::exp(logits[j] - lse);
                        dl[j] = pj - (static_cast<int>(j) == target ? real(1) : real(0));
                    }
                    ps.dlogits.push_back(std::move(dl));
                    ps.scored_steps.push_back(t);
                }
                ps.trace = std::move(trace);
                seqs.push_back(std::move(ps));
            }

            if (batch_scored == 0) {
                cursor += bsz;
                continue;
            }
            real inv = real(1) / static_cast<real>(batch_scored);
            const std::size_t n_param_tensors = batch_grads.grads.size() - 4;
            for (auto& ps : seqs) {
                std::vector<Vec> dh(ps.trace.steps.size(),
                                    Vec(static_cast<std::size_t>(dims.h), real(0)));
                for (std::size_t s = 0; s < ps.scored_steps.size(); ++s) {
                    std::size_t t = ps.scored_steps[s];
                    const Vec& dl = ps.dlogits[s];
                    const Vec& h = ps.trace.steps[t].h;
                    // head grads, and the gradient entering the memory read
                    auto& gpw = batch_grads.grads[n_param_tensors + 0];
                    auto& gpb = batch_grads.grads[n_param_tensors + 1];
                    for (std::size_t j = 0; j < dl.size(); ++j) {
                        gpb[j] += inv * dl[j];
                        for (std::size_t i = 0; i < h.size(); ++i)
                            gpw[j * h.size() + i] += inv * dl[j] * h[i];
                    }
                    Vec back = matvec_transposed(res.heads.policy.w, dl);
                    for (std::size_t i = 0; i < back.size(); ++i) dh[t][i] += inv * back[i];
                }
                GradReport mem = backward(ps.trace, dh);
                for (std::size_t k = 0; k < mem.grads.size(); ++k)
                    for (std::size_t i = 0; i < mem.grads[k].size(); ++i)
                        batch_grads.grads[k][i] += mem.grads[k][i];
            }

            batch_grads = clip_gradients(std::move(batch_grads), cfg.clip_max_norm);
            res.report.clip_events += batch_grads.clip_events;
            adam.step(tensors, batch_grads);
            cursor += bsz;
        }

        real train_loss = epoch_scored ? static_cast<real>(epoch_loss / static_cast<double>(epoch_scored))
                                       : real(0);
        if (!std::isfinite(train_loss)) {
            res.params = good.params;
            res.heads = good.heads;
            res.report.aborted = true;
            res.report.abort_reason = "non-finite loss at epoch " + std::to_string(epoch);
            break;
        }
        res.report.add(epoch, "train_loss", train_loss);
        res.report.add(epoch, "train_acc",
                       epoch_scored ? static_cast<real>(epoch_correct) / static_cast<real>(epoch_scored)
                                    : real(0));
        if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
            real acc = eval_accuracy();
            res.report.add(epoch, "eval_acc", acc);
            good = {res.params, res.heads};
            if (cfg.target_success > real(0) && acc >= cfg.target_success) stop = true;
        }
    }
    res.report.add(cfg.epochs, "final_eval_acc", eval_accuracy());
    res.report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return res;
}

// ---------------------------------------------------------------------------
// policy gradient

namespace {

struct RolloutStep {
    Vec logits;
    int action = 0;
    real value_pred = 0;
    real reward = 0;
};

}  // namespace

TrainResult train_policy_gradient(const TrainConfig& cfg) {
    auto t_start = std::chrono::steady_clock::now();
    const bool recall = cfg.task == "rl.delayed_recall";
    if (!recall && cfg.task != "rl.repeat_prev")
        throw ConfigError("train_policy_gradient: unsupported task " + cfg.task);
    if (cfg.gamma < real(0) || cfg.gamma >= real(1))
        throw ConfigError("train_policy_gradient: gamma must be in [0, 1)");

    DelayedRecallEnv recall_env(cfg.recall_env);
    RepeatPrevEnv repeat_env(cfg.repeat_env);
    const int obs_dim = recall ? recall_env.obs_dim() : repeat_env.obs_dim();
    const int n_actions = recall ? recall_env.n_actions() : repeat_env.n_actions();

    Dims dims = cfg.dims;
    dims.d = obs_dim + n_actions;

    TrainResult res;
    res.params = init_params(dims, cfg.variant, cfg.seed);
    res.heads = init_heads(dims.h, n_actions, cfg.seed);
    res.report.seed = cfg.seed;
    res.report.variant = cfg.variant;
    res.report.config_hash = cfg.hash();

    auto tensors = all_tensors(res.params, res.heads);
    AdamOptimizer adam(cfg.lr);
    Rng theta_root = Rng::stream(cfg.seed, "theta");
    Rng env_root = Rng::stream(cfg.seed, "env");
    Rng action_root = Rng::stream(cfg.seed, "action");

    Snapshot good{res.params, res.heads};
    std::int64_t episode = 0;
    bool stop = false;
    while (episode < cfg.max_episodes && !stop) {
        GradReport batch_grads = zero_like(tensors);
        const std::size_t n_param_tensors = batch_grads.grads.size() - 4;
        int bsz = static_cast<int>(std::min<std::int64_t>(cfg.batch, cfg.max_episodes - episode));
        double batch_return = 0;

        struct Rollout {
            EpisodeTrace trace;
            std::vector<RolloutStep> steps;
            std::vector<real> returns;
        };
        std::vector<Rollout> rollouts;
        rollouts.reserve(static_cast<std::size_t>(bsz));

        for (int b = 0; b < bsz; ++b, ++episode) {
            Rng theta_rng = theta_root.derive(static_cast<std::uint64_t>(episode));
            Rng action_rng = action_root.derive(static_cast<std::uint64_t>(episode));
            std::uint64_t env_seed = env_root.derive(static_cast<std::uint64_t>(episode)).next_u64();

            EpisodeBuilder builder(res.params, theta_rng);
            std::vector<RolloutStep> steps;
            Vec obs;
            if (recall) obs = recall_env.reset(env_seed).observation;
            else obs = repeat_env.reset(env_seed).observation;
            int prev_action = -1;
            bool done = false;
            while (!done) {
                ContextInput x = make_context(obs, prev_action, n_actions, cfg.normalize_context);
                const Vec& h = builder.step(x);
                RolloutStep rs;
                rs.logits = res.heads.policy.apply(h);
                rs.value_pred = res.heads.value.apply(h)[0];
                Vec p = softmax(rs.logits);
                real u = action_rng.uniform();
                real csum = 0;
                rs.action = static_cast<int>(p.size()) - 1;
                for (std::size_t j = 0; j < p.size(); ++j) {
                    csum += p[j];
                    if (u < csum) {
                        rs.action = static_cast<int>(j);
                        break;
                    }
                }
                Transition tr = recall ? recall_env.step(rs.action) : repeat_env.step(rs.action);
                rs.reward = tr.reward;
                steps.push_back(std::move(rs));
                prev_action = steps.back().action;
                obs = tr.observation;
                done = tr.done;
            }

            const std::size_t t_len = steps.size();
            std::vector<real> returns(t_len);
            real g = 0;
            for (std::size_t t = t_len; t-- > 0;) {
                g = steps[t].reward + cfg.gamma * g;
                returns[t] = g;
                batch_return += static_cast<double>(steps[t].reward);
            }
            rollouts.push_back({builder.finish(), std::move(steps), std::move(returns)});
        }

        // advantages, standardized across the batch when configured
        real adv_mean = 0, adv_std = real(1);
        if (cfg.advantage_norm) {
            double sum = 0, sumsq = 0;
            std::size_t n = 0;
            for (const auto& ro : rollouts)
                for (std::size_t t = 0; t < ro.steps.size(); ++t) {
                    double a = static_cast<double>(ro.returns[t] - ro.steps[t].value_pred);
                    sum += a;
                    sumsq += a * a;
                    ++n;
                }
            double mean = n ? sum / static_cast<double>(n) : 0.0;
            double var = n ? std::max(0.0, sumsq / static_cast<double>(n) - mean * mean) : 0.0;
            adv_mean = static_cast<real>(mean);
            if (var > 1e-16) adv_std = static_cast<real>(std::sqrt(var));
        }

        for (auto& ro : rollouts) {
            const std::size_t t_len = ro.steps.size();
            std::vector<Vec> dh(t_len, Vec(static_cast<std::size_t>(dims.h), real(0)));
            real inv = real(1) / static_cast<real>(bsz);
            auto& gpw = batch_grads.grads[n_param_tensors + 0];
            auto& gpb = batch_grads.grads[n_param_tensors + 1];
            auto& gvw = batch_grads.grads[n_param_tensors + 2];
            auto& gvb = batch_grads.grads[n_param_tensors + 3];
            for (std::size_t t = 0; t < t_len; ++t) {
                const RolloutStep& rs = ro.steps[t];
                real adv = ro.returns[t] - rs.value_pred;
                if (cfg.advantage_norm) adv = (adv - adv_mean) / adv_std;
                A2cStepGrad sg = a2c_step_grad(rs.logits, rs.action, adv, rs.value_pred,
                                               ro.returns[t], cfg.entropy_coef);
                sg.dvalue *= cfg.value_coef;
                const Vec& h = ro.trace.steps[t].h;
                for (std::size_t j = 0; j < sg.dlogits.size(); ++j) {
                    gpb[j] += inv * sg.dlogits[j];
                    for (std::size_t i = 0; i < h.size(); ++i)
                        gpw[j * h.size() + i] += inv * sg.dlogits[j] * h[i];
                }
                gvb[0] += inv * sg.dvalue;
                for (std::size_t i = 0; i < h.size(); ++i) gvw[i] += inv * sg.dvalue * h[i];

                Vec back = matvec_transposed(res.heads.policy.w, sg.dlogits);
                for (std::size_t i = 0; i < back.size(); ++i)
                    dh[t][i] += inv * (back[i] + sg.dvalue * res.heads.value.w(0, static_cast<int>(i)));
            }
            GradReport mem = backward(ro.trace, dh);
            for (std::size_t k = 0; k < mem.grads.size(); ++k)
                for (std::size_t i = 0; i < mem.grads[k].size(); ++i)
                    batch_grads.grads[k][i] += mem.grads[k][i];
        }

        if (!batch_grads.all_finite()) {
            res.params = good.params;
            res.heads = good.heads;
            res.report.aborted = true;
            res.report.abort_reason = "non-finite gradients at episode " + std::to_string(episode);
            res.report.add(episode, "abort_grad_norm", batch_grads.compute_global_norm());
            break;
        }
        batch_grads = clip_gradients(std::move(batch_grads), cfg.clip_max_norm);
        res.report.clip_events += batch_grads.clip_events;
        adam.step(tensors, batch_grads);
        res.report.add(episode, "batch_mean_return", static_cast<real>(batch_return / bsz));

        if (episode % cfg.eval_every < cfg.batch) {
            EvalReport ev = evaluate(res.params, res.heads, cfg, cfg.eval_episodes,
                                     cfg.seed + static_cast<std::uint64_t>(episode), true);
            res.report.add(episode, "success_rate", ev.success_rate);
            res.report.add(episode, "mean_return", ev.mean_return);
            good = {res.params, res.heads};
            if (cfg.target_success > real(0) && ev.success_rate >= cfg.target_success) stop = true;
            if (cfg.target_return > real(-1e29) && ev.mean_return >= cfg.target_return) stop = true;
        }
    }

    EvalReport final_ev =
        evaluate(res.params, res.heads, cfg, cfg.eval_episodes, cfg.seed + 977, true);
    res.report.add(episode, "final_success_rate", final_ev.success_rate);
    res.report.add(episode, "final_mean_return", final_ev.mean_return);
    res.report.add(episode, "episodes_used", static_cast<real>(episode));
    res.report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return res;
}

EvalReport evaluate(const ShmParams& params, const PolicyValueHeads& heads, const TrainConfig& cfg,
                    int episodes, std::uint64_t seed, bool greedy) {
    EvalReport rep;
    if (episodes == 0) return rep;
    if (episodes < 0) throw ConfigError("evaluate: negative episode count");
    const bool recall = cfg.task == "rl.delayed_recall" || cfg.task.empty() ||
                        cfg.task.find("delayed_recall") != std::string::npos;

    DelayedRecallEnv recall_env(cfg.recall_env);
    RepeatPrevEnv repeat_env(cfg.repeat_env);
    const int n_actions = recall ? recall_env.n_actions() : repeat_env.n_actions();

    Rng eval_root = Rng::stream(seed, "eval");
    double sum = 0, sumsq = 0;
    int successes = 0;
    for (int e = 0; e < episodes; ++e) {
        Rng theta_rng = eval_root.derive(static_cast<std::uint64_t>(e) * 3 + 0);
        Rng action_rng = eval_root.derive(static_cast<std::uint64_t>(e) * 3 + 1);
        std::uint64_t env_seed = eval_root.derive(static_cast<std::uint64_t>(e) * 3 + 2).next_u64();

        PlainRollout roll(params, theta_rng);
        Vec obs = recall ? recall_env.reset(env_seed).observation
                         : repeat_env.reset(env_seed).observation;
        int prev_action = -1;
        bool done = false;
        double ep_return = 0;
        while (!done) {
            ContextInput x = make_context(obs, prev_action, n_actions, cfg.normalize_context);
            Vec h = roll.step(x);
            Vec logits = heads.policy.apply(h);
            int action = 0;
            if (greedy) {
                for (std::size_t j = 1; j < logits.size(); ++j)
                    if (logits[j] > logits[static_cast<std::size_t>(action)]) action = static_cast<int>(j);
            } else {
                Vec p = softmax(logits);
                real u = action_rng.uniform();
                real csum = 0;
                action = static_cast<int>(p.size()) - 1;
                for (std::size_t j = 0; j < p.size(); ++j) {
                    csum += p[j];
                    if (u < csum) {
                        action = static_cast<int>(j);
                        break;
                    }
                }
            }
            Transition tr = recall ? recall_env.step(action) : repeat_env.step(action);
            ep_return += static_cast<double>(tr.reward);
            obs = tr.observation;
            prev_action = action;
            done = tr.done;
        }
        if (recall && recall_env.bonus_earned()) successes += 1;
        sum += ep_return;
        sumsq += ep_return * ep_return;
    }
    rep.episodes = episodes;
    rep.success_rate = static_cast<real>(successes) / static_cast<real>(episodes);
    double mean = sum / episodes;
    rep.mean_return = static_cast<real>(mean);
    rep.std_return = static_cast<real>(std::sqrt(std::max(0.0, sumsq / episodes - mean * mean)));
    return rep;
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {

constexpr char kMagic[8] = {'S', 'H', 'M', 'C', 'K', 'P', 'T', '1'};

void put_i32(std::string& out, std::int32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    out.append(b, 4);
}

}  // namespace

void checkpoint_save(const std::string& path, const ShmParams& params,
                     const PolicyValueHeads& heads) {
    std::string out;
    out.append(kMagic, 8);
    put_i32(out, params.dims.d);
    put_i32(out, params.dims.h);
    put_i32(out, params.dims.l);
    put_i32(out, static_cast<std::int32_t>(params.variant));
    put_i32(out, heads.policy.w.rows());
    put_i32(out, heads.value.w.rows());

    ShmParams& p = const_cast<ShmParams&>(params);
    PolicyValueHeads& h = const_cast<PolicyValueHeads&>(heads);
    for (const auto& t : all_tensors(p, h)) {
        for (std::size_t i = 0; i < t.size; ++i) {
            double v = static_cast<double>(t.data[i]);
            char b[8];
            std::memcpy(b, &v, 8);
            out.append(b, 8);
        }
    }
    write_text_file(path, out);
}

Checkpoint checkpoint_load(const std::string& path) {
    std::string in = read_text_file(path);
    std::size_t pos = 0;
    auto need = [&](std::size_t n) {
        if (pos + n > in.size()) throw IoError("truncated checkpoint: " + path);
    };
    need(8);
    if (std::memcmp(in.data(), kMagic, 8) != 0)
        throw IoError("not a checkpoint (bad magic): " + path);
    pos = 8;
    auto get_i32 = [&]() {
        need(4);
        std::int32_t v;
        std::memcpy(&v, in.data() + pos, 4);
        pos += 4;
        return v;
    };
    Dims dims;
    dims.d = get_i32();
    dims.h = get_i32();
    dims.l = get_i32();
    std::int32_t vtag = get_i32();
    if (vtag < 0 || vtag > 5) throw IoError("checkpoint has unknown variant tag");
    auto variant = static_cast<CalibrationVariant>(vtag);
    std::int32_t policy_out = get_i32();
    std::int32_t value_out = get_i32();
    if (value_out != 1) throw IoError("checkpoint has unsupported value head size");

    Checkpoint ck{init_params(dims, variant, 0), init_heads(dims.h, policy_out, 0)};
    for (const auto& t : all_tensors(ck.params, ck.heads)) {
        need(8 * t.size);
        for (std::size_t i = 0; i < t.size; ++i) {
            double v;
            std::memcpy(&v, in.data() + pos, 8);
            pos += 8;
            t.data[i] = static_cast<real>(v);
        }
    }
    if (pos != in.size()) throw IoError("checkpoint has trailing bytes: " + path);
    return ck;
}

Checkpoint checkpoint_load_expect(const std::string& path, const Dims& dims,
                                  CalibrationVariant variant) {
    Checkpoint ck = checkpoint_load(path);
    if (ck.params.dims.d != dims.d || ck.params.dims.h != dims.h || ck.params.dims.l != dims.l)
        throw ConfigError("checkpoint dimension mismatch: file has (" +
                          std::to_string(ck.params.dims.d) + "," + std::to_string(ck.params.dims.h) +
                          "," + std::to_string(ck.params.dims.l) + "), expected (" +
                          std::to_string(dims.d) + "," + std::to_string(dims.h) + "," +
                          std::to_string(dims.l) + ")");
    if (ck.params.variant != variant)
        throw ConfigError("checkpoint variant mismatch: file has " +
                          std::string(variant_name(ck.params.variant)) + ", expected " +
                          variant_name(variant));
    return ck;
}

}  // namespace shm
