#pragma once

// Toy partially observable environments for long-term memorization, plus a
// supervised sequence-dataset generator.
//
// DelayedRecallEnv: three phases — a color code is shown (phase 1), a long
// distractor stretch where picking present apples pays 1 each (phase 2),
// then a door query where choosing the door matching the code pays the
// terminal bonus (phase 3). The code is observable only in phase 1.
//
// RepeatPrevEnv: at each step the agent sees a symbol and must answer the
// symbol from `lag` steps earlier, +1/T for a match, -1/T otherwise.

#include <cstdint>
#include <string>
#include <vector>

#include "shm/matrix.hpp"
#include "shm/memory.hpp"
#include "shm/rng.hpp"

namespace shm {

struct Transition {
    Vec observation;
    real reward = 0;
    bool done = false;
    std::string info;  // phase tag
};

struct DelayedRecallConfig {
    int n_codes = 4;
    int t1 = 5;
    int t2 = 60;
    int t3 = 5;
    real apple_prob = real(0.5);
    real bonus = real(10);
};

class DelayedRecallEnv {
  public:
    static constexpr int kActionMove = 0;
    static constexpr int kActionPick = 1;
    static int door_action(int code) { return 2 + code; }

    explicit DelayedRecallEnv(const DelayedRecallConfig& cfg);

    Transition reset(std::uint64_t seed);
    Transition step(int action);

    int obs_dim() const { return cfg_.n_codes + 4; }  // code one-hot | apple flag | phase one-hot
    int n_actions() const { return cfg_.n_codes + 2; }
    bool done() const { return done_; }
    bool bonus_earned() const { return bonus_earned_; }
    int hidden_code() const { return code_; }
    const DelayedRecallConfig& config() const { return cfg_; }

    // Return of the clairvoyant policy for the current episode: the bonus
    // plus one per scheduled apple.
    real optimal_return() const;

  private:
    int phase_of(int t) const;
    Vec observation_at(int t) const;

    DelayedRecallConfig cfg_;
    int t_ = 0;  // 1-based index of the observation the agent currently sees
    int code_ = -1;
    std::vector<bool> apples_;  // schedule over phase-2 steps
    bool done_ = true;
    bool bonus_earned_ = false;
};

struct RepeatPrevConfig {
    int alphabet = 4;
    int lag = 4;
    int horizon = 32;
};

class RepeatPrevEnv {
  public:
    explicit RepeatPrevEnv(const RepeatPrevConfig& cfg);

    Transition reset(std::uint64_t seed);
    Transition step(int action);

    int obs_dim() const { return cfg_.alphabet; }
    int n_actions() const { return cfg_.alphabet; }
    bool done() const { return done_; }
    const RepeatPrevConfig& config() const { return cfg_; }
    const std::vector<int>& symbols() const { return symbols_; }

    // (T - lag)/T: every scoreable step answered correctly.
    real optimal_return() const;

  private:
    RepeatPrevConfig cfg_;
    int t_ = 0;
    std::vector<int> symbols_;
    bool done_ = true;
};

// Supervised datasets.
struct SequenceExample {
    std::vector<ContextInput> xs;
    std::vector<int> targets;  // -1 marks unscored steps
};

struct DatasetConfig {
    std::string task = "delayed_recall";  // or "repeat_prev"
    int n_sequences = 256;
    // delayed_recall
    int n_codes = 4;
    int t1 = 5;
    int t2 = 60;
    int t3 = 5;
    real distractor_scale = real(0.35);
    // repeat_prev
    int alphabet = 4;
    int lag = 4;
    int horizon = 32;
};

struct Dataset {
    std::vector<SequenceExample> items;
    int input_dim = 0;
    int n_classes = 0;
};

// Deterministic given seed. Delayed-recall sequences carry the target only
// at the final step and are exactly class-balanced (round-robin codes).
Dataset make_supervised_dataset(const DatasetConfig& cfg, std::uint64_t seed);

void save_dataset_csv(const Dataset& ds, const std::string& path);

}  // namespace shm
