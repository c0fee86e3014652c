#pragma once

// Desk-scale training loops: supervised sequence classification through the
// memory, and an advantage actor-critic policy-gradient loop for the toy
// environments. Also owns the optimizer, the policy/value heads, run
// reports and the checkpoint format.

#include <cstdint>
#include <string>
#include <vector>

#include "shm/autograd.hpp"
#include "shm/calibration.hpp"
#include "shm/envs.hpp"
#include "shm/episode.hpp"
#include "shm/io.hpp"

namespace shm {

struct PolicyValueHeads {
    AffineMap policy;  // H -> n_out, softmax on top
    AffineMap value;   // H -> 1

    int n_out() const { return policy.w.rows(); }
};

PolicyValueHeads init_heads(int h, int n_out, std::uint64_t seed);
std::vector<TensorRef> head_tensors(PolicyValueHeads& heads);
Vec softmax(const Vec& logits);

struct TrainConfig {
    std::string task = "supervised.delayed_recall";
    // supervised.delayed_recall | supervised.repeat_prev | rl.delayed_recall | rl.repeat_prev
    Dims dims{8, 16, 128};
    CalibrationVariant variant = CalibrationVariant::ShmRandomTheta;
    std::uint64_t seed = 1;

    real lr = real(3e-4);
    real clip_max_norm = real(1);
    real gamma = real(0.99);
    real entropy_coef = real(0.01);
    real value_coef = real(0.5);       // scales the value-regression gradient
    bool advantage_norm = true;        // per-batch advantage standardization
    int batch = 8;

    int epochs = 100;                   // supervised budget
    std::int64_t max_episodes = 50000;  // rl budget
    int eval_every = 10;                // epochs (supervised) or episodes (rl)
    int eval_episodes = 200;
    real target_success = real(-1);     // rl early stop when eval success >= target
    real target_return = real(-1e30);   // rl early stop when eval mean return >= target

    bool normalize_context = true;
    real holdout_fraction = real(0.25);  // supervised eval split

    DatasetConfig dataset;
    DelayedRecallConfig recall_env;
    RepeatPrevConfig repeat_env;

    KeyValueFile to_kv() const;
    static TrainConfig from_kv(const KeyValueFile& kv);
    std::uint64_t hash() const { return to_kv().hash(); }
};

struct RunReport {
    struct Row {
        std::int64_t step;
        std::string metric;
        real value;
    };
    std::vector<Row> rows;
    std::uint64_t seed = 0;
    CalibrationVariant variant = CalibrationVariant::ShmRandomTheta;
    std::uint64_t config_hash = 0;
    int clip_events = 0;
    bool aborted = false;
    std::string abort_reason;
    double wall_seconds = 0;  // reported separately; never serialized into the CSV

    void add(std::int64_t step, const std::string& metric, real value);
    real last(const std::string& metric) const;  // RangeError if absent
    CsvTable to_csv() const;                     // step,metric,value,seed,variant,config_hash
    void save_csv(const std::string& path) const;
};

class AdamOptimizer {
  public:
    explicit AdamOptimizer(real lr, real beta1 = real(0.9), real beta2 = real(0.999),
                           real eps = real(1e-8));
    void step(const std::vector<TensorRef>& tensors, const GradReport& grads);

  private:
    real lr_, beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
    std::vector<std::vector<real>> m_, v_;
};

struct TrainResult {
    RunReport report;
    ShmParams params;
    PolicyValueHeads heads;
};

TrainResult train_supervised(const TrainConfig& cfg);
TrainResult train_policy_gradient(const TrainConfig& cfg);

struct EvalReport {
    int episodes = 0;
    real success_rate = 0;
    real mean_return = 0;
    real std_return = 0;
};

// N fresh-seeded episodes under the greedy (argmax) or sampled policy.
// Success means the terminal bonus was earned. N = 0 yields an empty report.
EvalReport evaluate(const ShmParams& params, const PolicyValueHeads& heads,
                    const TrainConfig& cfg, int episodes, std::uint64_t seed, bool greedy = true);

// Per-step gradient pieces of the actor-critic objective for one step:
// policy CE weighted by the advantage, entropy bonus, value regression.
// Exposed so the zero-advantage invariant can be checked directly.
struct A2cStepGrad {
    Vec dlogits;
    real dvalue = 0;
};
A2cStepGrad a2c_step_grad(const Vec& logits, int action, real advantage, real value_pred,
                          real target_return, real entropy_coef);

// Versioned flat binary checkpoint: 8-byte magic "SHMCKPT1", little-endian
// int32 dims/variant/head sizes, then every parameter array as little-endian
// float64 in the canonical tensor order (memory params, then policy.w,
// policy.b, value.w, value.b).
void checkpoint_save(const std::string& path, const ShmParams& params,
                     const PolicyValueHeads& heads);

struct Checkpoint {
    ShmParams params;
    PolicyValueHeads heads;
};
Checkpoint checkpoint_load(const std::string& path);

// Load with shape expectations (e.g. from a run config); mismatches refuse
// with a diagnostic instead of returning partial state.
Checkpoint checkpoint_load_expect(const std::string& path, const Dims& dims,
                                  CalibrationVariant variant);

}  // namespace shm
