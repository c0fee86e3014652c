#include "shm/envs.hpp"

#include <algorithm>
#include <sstream>

#include "shm/io.hpp"

namespace shm {

DelayedRecallEnv::DelayedRecallEnv(const DelayedRecallConfig& cfg) : cfg_(cfg) {
    if (cfg.n_codes < 2 || cfg.t1 < 1 || cfg.t2 < 0 || cfg.t3 < 1)
        throw ConfigError("DelayedRecallEnv: need n_codes >= 2, t1 >= 1, t2 >= 0, t3 >= 1");
}

int DelayedRecallEnv::phase_of(int t) const {
    if (t <= cfg_.t1) return 1;
    if (t <= cfg_.t1 + cfg_.t2) return 2;
    return 3;
}

Vec DelayedRecallEnv::observation_at(int t) const {
    Vec obs(static_cast<std::size_t>(obs_dim()), real(0));
    int phase = phase_of(t);
    if (phase == 1) {
        obs[static_cast<std::size_t>(code_)] = real(1);
    } else if (phase == 2) {
        int i = t - cfg_.t1 - 1;
        if (apples_[static_cast<std::size_t>(i)]) obs[static_cast<std::size_t>(cfg_.n_codes)] = real(1);
    }
    obs[static_cast<std::size_t>(cfg_.n_codes + phase)] = real(1);  // phase one-hot
    return obs;
}

Transition DelayedRecallEnv::reset(std::uint64_t seed) {
    Rng rng = Rng::stream(seed, "env.delayed_recall");
    code_ = static_cast<int>(rng.uniform_int(static_cast<std::uint32_t>(cfg_.n_codes)));
    apples_.assign(static_cast<std::size_t>(cfg_.t2), false);
    for (auto&& a : apples_) a = rng.uniform() < cfg_.apple_prob;
    t_ = 1;
    done_ = false;
    bonus_earned_ = false;
    Transition tr;
    tr.observation = observation_at(t_);
    tr.info = "phase1";
    return tr;
}

Transition DelayedRecallEnv::step(int action) {
    if (done_) throw ProtocolError("DelayedRecallEnv: step() after episode end");
    if (action < 0 || action >= n_actions())
        throw ConfigError("DelayedRecallEnv: action out of range");

    Transition tr;
    int phase = phase_of(t_);
    if (phase == 2 && action == kActionPick) {
        int i = t_ - cfg_.t1 - 1;
        if (apples_[static_cast<std::size_t>(i)]) tr.reward = real(1);
    } else if (phase == 3 && action >= 2) {
        int chosen = action - 2;
        if (chosen == code_) {
            tr.reward = cfg_.bonus;
            bonus_earned_ = true;
        }
        done_ = true;
    }

    if (!done_) {
        t_ += 1;
        if (t_ > cfg_.t1 + cfg_.t2 + cfg_.t3) done_ = true;
    }
    tr.done = done_;
    if (done_) {
        tr.observation.assign(static_cast<std::size_t>(obs_dim()), real(0));
        tr.info = "terminal";
    } else {
        tr.observation = observation_at(t_);
        tr.info = "phase" + std::to_string(phase_of(t_));
    }
    return tr;
}

real DelayedRecallEnv::optimal_return() const {
    real apples = 0;
    for (bool a : apples_) apples += a ? real(1) : real(0);
    return cfg_.bonus + apples;
}

RepeatPrevEnv::RepeatPrevEnv(const RepeatPrevConfig& cfg) : cfg_(cfg) {
    if (cfg.alphabet < 2 || cfg.lag < 0 || cfg.horizon < 1)
        throw ConfigError("RepeatPrevEnv: need alphabet >= 2, lag >= 0, horizon >= 1");
}

Transition RepeatPrevEnv::reset(std::uint64_t seed) {
    Rng rng = Rng::stream(seed, "env.repeat_prev");
    symbols_.resize(static_cast<std::size_t>(cfg_.horizon));
    for (int& s : symbols_) s = static_cast<int>(rng.uniform_int(static_cast<std::uint32_t>(cfg_.alphabet)));
    t_ = 1;
    done_ = false;
    Transition tr;
    tr.observation.assign(static_cast<std::size_t>(cfg_.alphabet), real(0));
    tr.observation[static_cast<std::size_t>(symbols_[0])] = real(1);
    tr.info = "t1";
    return tr;
}

Transition RepeatPrevEnv::step(int action) {
    if (done_) throw ProtocolError("RepeatPrevEnv: step() after episode end");
    if (action < 0 || action >= cfg_.alphabet)
        throw ConfigError("RepeatPrevEnv: action out of range");

    Transition tr;
    if (t_ > cfg_.lag) {
        int expected = symbols_[static_cast<std::size_t>(t_ - cfg_.lag - 1)];
        real unit = real(1) / static_cast<real>(cfg_.horizon);
        tr.reward = (action == expected) ? unit : -unit;
    }
    t_ += 1;
    done_ = t_ > cfg_.horizon;
    tr.done = done_;
    tr.observation.assign(static_cast<std::size_t>(cfg_.alphabet), real(0));
    if (!done_) {
        tr.observation[static_cast<std::size_t>(symbols_[static_cast<std::size_t>(t_ - 1)])] = real(1);
        tr.info = "t" + std::to_string(t_);
    } else {
        tr.info = "terminal";
    }
    return tr;
}

real RepeatPrevEnv::optimal_return() const {
    return static_cast<real>(cfg_.horizon - cfg_.lag) / static_cast<real>(cfg_.horizon);
}

namespace {

// The code and the distractors share the same channels and there is no phase
// marker, so a linear update gate cannot cleanly separate write-worthy steps:
// the memory has to manage a long stretch of dense random writes (far more
// than the matrix has dimensions) and still answer from the oldest content.
Dataset make_delayed_recall_dataset(const DatasetConfig& cfg, std::uint64_t seed) {
    Dataset ds;
    const int k = cfg.n_codes;
    ds.input_dim = k;
    ds.n_classes = k;
    const int t_total = cfg.t1 + cfg.t2 + cfg.t3;

    Rng rng = Rng::stream(seed, "dataset.delayed_recall");
    // exact class balance, order shuffled
    std::vector<int> codes(static_cast<std::size_t>(cfg.n_sequences));
    for (std::size_t i = 0; i < codes.size(); ++i) codes[i] = static_cast<int>(i) % k;
    for (std::size_t i = codes.size(); i > 1; --i)
        std::swap(codes[i - 1], codes[rng.uniform_int(static_cast<std::uint32_t>(i))]);

    for (int s = 0; s < cfg.n_sequences; ++s) {
        SequenceExample ex;
        int code = codes[static_cast<std::size_t>(s)];
        for (int t = 1; t <= t_total; ++t) {
            ContextInput x;
            x.x.assign(static_cast<std::size_t>(k), real(0));
            int phase = t <= cfg.t1 ? 1 : (t <= cfg.t1 + cfg.t2 ? 2 : 3);
            if (phase == 1) {
                x.x[static_cast<std::size_t>(code)] = real(1);
            } else if (phase == 2) {
                for (int j = 0; j < k; ++j)
                    x.x[static_cast<std::size_t>(j)] = cfg.distractor_scale * rng.normal();
            }
            // phase 3 observations are all-zero: an unmarked recall query
            ex.xs.push_back(std::move(x));
            ex.targets.push_back(t == t_total ? code : -1);
        }
        ds.items.push_back(std::move(ex));
    }
    return ds;
}

Dataset make_repeat_prev_dataset(const DatasetConfig& cfg, std::uint64_t seed) {
    Dataset ds;
    ds.input_dim = cfg.alphabet;
    ds.n_classes = cfg.alphabet;
    Rng rng = Rng::stream(seed, "dataset.repeat_prev");
    for (int s = 0; s < cfg.n_sequences; ++s) {
        SequenceExample ex;
        std::vector<int> symbols(static_cast<std::size_t>(cfg.horizon));
        for (int& sym : symbols)
            sym = static_cast<int>(rng.uniform_int(static_cast<std::uint32_t>(cfg.alphabet)));
        for (int t = 1; t <= cfg.horizon; ++t) {
            ContextInput x;
            x.x.assign(static_cast<std::size_t>(cfg.alphabet), real(0));
            x.x[static_cast<std::size_t>(symbols[static_cast<std::size_t>(t - 1)])] = real(1);
            ex.xs.push_back(std::move(x));
            ex.targets.push_back(t > cfg.lag ? symbols[static_cast<std::size_t>(t - cfg.lag - 1)] : -1);
        }
        ds.items.push_back(std::move(ex));
    }
    return ds;
}

}  // namespace

Dataset make_supervised_dataset(const DatasetConfig& cfg, std::uint64_t seed) {
    if (cfg.n_sequences < 1) throw ConfigError("make_supervised_dataset: need n_sequences >= 1");
    if (cfg.task == "delayed_recall") return make_delayed_recall_dataset(cfg, seed);
    if (cfg.task == "repeat_prev") return make_repeat_prev_dataset(cfg, seed);
    throw ConfigError("make_supervised_dataset: unknown task '" + cfg.task + "'");
}

void save_dataset_csv(const Dataset& ds, const std::string& path) {
    std::ostringstream out;
    out << "sequence,step,target";
    for (int i = 0; i < ds.input_dim; ++i) out << ",x" << i;
    out << "\n";
    for (std::size_t s = 0; s < ds.items.size(); ++s) {
        const auto& ex = ds.items[s];
        for (std::size_t t = 0; t < ex.xs.size(); ++t) {
            out << s << "," << (t + 1) << "," << ex.targets[t];
            for (real v : ex.xs[t].x) out << "," << format_real(v);
            out << "\n";
        }
    }
    write_text_file(path, out.str());
}

}  // namespace shm
