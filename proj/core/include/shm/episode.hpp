#pragma once

// Whole-episode evaluation: composes calibration, update and write over a
// context sequence, in any of the three evaluation modes, and records the
// per-step trace (x_t, theta row, C_t, U_t, M_t, h_t). Sequential mode can
// additionally record an autograd tape; backward() turns a taped trace plus
// per-step loss gradients at h into a parameter gradient report, and
// finite_difference_oracle() provides the independent check.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "shm/autograd.hpp"
#include "shm/calibration.hpp"
#include "shm/memory.hpp"

namespace shm {

enum class EvalMode { Sequential, ClosedForm, Scan };

struct StepRecord {
    ContextInput x;
    int theta_row = -1;  // -1 when the variant does not draw theta rows
    CalMatrix c;
    UpdMatrix u;
    MemoryState m;
    Vec h;
};

// Tape plus the node bookkeeping needed to seed/backprop an episode.
struct TapedEpisode {
    Tape tape;
    std::vector<std::string> tensor_names;  // canonical param_tensors order
    std::vector<int> leaves;                // tape leaf ids, parallel to tensor_names
    std::vector<int> h_ids;                 // per step
    std::vector<int> m_ids;
    std::vector<int> c_ids;
    std::vector<int> u_ids;
};

struct EpisodeTrace {
    MemoryState m0;
    CalibrationVariant variant = CalibrationVariant::ShmRandomTheta;
    std::vector<StepRecord> steps;
    ScanStats scan_stats;                 // populated in scan mode
    std::shared_ptr<TapedEpisode> taped;  // populated in sequential mode with record_tape
};

struct RunOptions {
    EvalMode mode = EvalMode::Sequential;
    bool record_tape = false;  // only honored in sequential mode
    int scan_threads = 1;
};

// Runs an episode from M_0 = 0. The RNG drives theta-row draws (and per-step
// random calibrations); all three modes consume it identically, so traces
// agree across modes under a fixed stream.
EpisodeTrace run_sequence(const ShmParams& params, std::span<const ContextInput> xs, Rng& rng,
                          const RunOptions& opts = {});

// Incremental taped episode: feed one context at a time and get h_t back
// before choosing the next action. Used by the policy-gradient rollout,
// where x_{t+1} depends on a_t. finish() yields the same kind of trace as
// run_sequence in taped sequential mode.
class EpisodeBuilder {
  public:
    EpisodeBuilder(const ShmParams& params, Rng& rng);
    ~EpisodeBuilder();
    EpisodeBuilder(const EpisodeBuilder&) = delete;
    EpisodeBuilder& operator=(const EpisodeBuilder&) = delete;

    const Vec& step(const ContextInput& x);  // h_t of the step just written
    std::size_t steps() const;
    EpisodeTrace finish();

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Gradients of sum_t <loss_grad_at_h[t], h_t> w.r.t. all parameters.
// Requires a taped trace. Theta-row draws are treated as constants: gradient
// flows only into the rows that were actually drawn.
GradReport backward(const EpisodeTrace& trace, std::span<const Vec> loss_grad_at_h);

using EpisodeLossFn = std::function<real(const EpisodeTrace&)>;

// Central finite differences of loss_fn over every scalar parameter, with
// the theta-draw stream reconstructed from the same seed on both sides of
// each perturbation. Verification-grade; cost is two episodes per scalar.
GradReport finite_difference_oracle(const ShmParams& params, std::span<const ContextInput> xs,
                                    std::uint64_t rng_seed, const RunOptions& opts,
                                    const EpisodeLossFn& loss_fn, real step);

}  // namespace shm
