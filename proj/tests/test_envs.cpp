#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "shm/envs.hpp"
#include "shm/io.hpp"

using namespace shm;

TEST_SUITE("envs") {

TEST_CASE("delayed recall: reset determinism and code uniformity") {
    DelayedRecallEnv env(DelayedRecallConfig{4, 3, 6, 2, real(0.5), real(10)});
    env.reset(42);
    int code = env.hidden_code();
    env.reset(42);
    CHECK(env.hidden_code() == code);

    std::vector<int> counts(4, 0);
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        env.reset(static_cast<std::uint64_t>(i));
        counts[static_cast<std::size_t>(env.hidden_code())] += 1;
    }
    double sigma = std::sqrt(n * 0.25 * 0.75);
    for (int c : counts) CHECK(std::abs(c - n / 4.0) <= 3 * sigma);

    Transition first = env.reset(7);
    CHECK(static_cast<int>(first.observation.size()) == env.obs_dim());
    CHECK(first.observation[static_cast<std::size_t>(env.hidden_code())] == real(1));
}

TEST_CASE("delayed recall: phase rewards and door mechanics") {
    DelayedRecallConfig cfg{4, 2, 5, 3, real(0.5), real(10)};
    DelayedRecallEnv env(cfg);
    env.reset(123);
    int code = env.hidden_code();
    real apples_expected = env.optimal_return() - cfg.bonus;

    // phase 1: moves; phase 2: pick everywhere; collect all scheduled apples
    real apples = 0;
    env.step(DelayedRecallEnv::kActionMove);
    env.step(DelayedRecallEnv::kActionMove);
    for (int i = 0; i < 5; ++i) apples += env.step(DelayedRecallEnv::kActionPick).reward;
    CHECK(apples == apples_expected);

    // correct door pays the bonus and terminates
    Transition done = env.step(DelayedRecallEnv::door_action(code));
    CHECK(done.reward == real(10));
    CHECK(done.done);
    CHECK(env.bonus_earned());
    CHECK_THROWS_AS(env.step(0), ProtocolError);

    // wrong door terminates without the bonus
    env.reset(123);
    env.step(0);
    env.step(0);
    for (int i = 0; i < 5; ++i) env.step(0);
    Transition wrong = env.step(DelayedRecallEnv::door_action((code + 1) % 4));
    CHECK(wrong.reward == real(0));
    CHECK(wrong.done);
    CHECK_FALSE(env.bonus_earned());

    // never choosing: episode ends after t3 steps, no bonus
    env.reset(123);
    for (int i = 0; i < 2 + 5 + 3 - 1; ++i) CHECK_FALSE(env.step(0).done);
    CHECK(env.step(0).done);
    CHECK_FALSE(env.bonus_earned());
}

TEST_CASE("delayed recall: action range checked, T2=0 config") {
    DelayedRecallEnv env(DelayedRecallConfig{4, 1, 0, 1, real(0.5), real(10)});
    env.reset(5);
    CHECK(env.optimal_return() == real(10));
    CHECK_THROWS_AS(env.step(99), ConfigError);
}

TEST_CASE("delayed recall: no phase-2/3 observation reveals the code") {
    DelayedRecallConfig cfg{4, 2, 4, 2, real(0.5), real(10)};
    DelayedRecallEnv env(cfg);
    std::map<std::vector<int>, std::set<int>> seen;  // quantized obs -> codes
    for (int seed = 0; seed < 200; ++seed) {
        Transition tr = env.reset(static_cast<std::uint64_t>(seed));
        int code = env.hidden_code();
        int t = 1;
        while (!tr.done) {
            tr = env.step(DelayedRecallEnv::kActionMove);
            ++t;
            if (tr.done) break;
            if (t > cfg.t1) {
                std::vector<int> key;
                for (real v : tr.observation) key.push_back(static_cast<int>(v));
                seen[key].insert(code);
            }
        }
    }
    for (const auto& [obs, codes] : seen) CHECK(codes.size() == 4);  // every code compatible
}

TEST_CASE("repeat previous: scoring, bounds, optimal return") {
    RepeatPrevConfig cfg{4, 2, 10};
    RepeatPrevEnv env(cfg);
    Transition tr = env.reset(9);
    const auto& syms = env.symbols();
    REQUIRE(static_cast<int>(syms.size()) == cfg.horizon);
    CHECK(tr.observation[static_cast<std::size_t>(syms[0])] == real(1));

    // clairvoyant play: answer symbol from `lag` steps back when scoreable
    real ret = 0;
    for (int t = 1; t <= cfg.horizon; ++t) {
        int guess = t > cfg.lag ? syms[static_cast<std::size_t>(t - cfg.lag - 1)] : 0;
        Transition step = env.step(guess);
        ret += step.reward;
        if (t <= cfg.lag) CHECK(step.reward == real(0));
    }
    CHECK(env.done());
    CHECK(ret == doctest::Approx(env.optimal_return()).epsilon(1e-12));
    CHECK(env.optimal_return() == doctest::Approx((10.0 - 2.0) / 10.0).epsilon(1e-15));

    // adversarial wrong play stays within the return bounds
    env.reset(10);
    real worst = 0;
    for (int t = 1; t <= cfg.horizon; ++t) {
        int wrong = t > cfg.lag ? (env.symbols()[static_cast<std::size_t>(t - cfg.lag - 1)] + 1) % 4 : 0;
        worst += env.step(wrong).reward;
    }
    CHECK(worst >= real(-1));
    CHECK(worst <= real(1));
    CHECK_THROWS_AS(env.step(0), ProtocolError);
}

TEST_CASE("trajectories are functions of seed and action sequence") {
    DelayedRecallEnv a(DelayedRecallConfig{}), b(DelayedRecallConfig{});
    Transition ta = a.reset(77), tb = b.reset(77);
    CHECK(ta.observation == tb.observation);
    Rng actions(3);
    while (!ta.done) {
        int act = static_cast<int>(actions.uniform_int(static_cast<std::uint32_t>(a.n_actions())));
        ta = a.step(act);
        tb = b.step(act);
        CHECK(ta.observation == tb.observation);
        CHECK(ta.reward == tb.reward);
        CHECK(ta.done == tb.done);
    }
}

TEST_CASE("supervised datasets: determinism, balance, identity task, final-step targets") {
    DatasetConfig cfg;
    cfg.task = "delayed_recall";
    cfg.n_sequences = 64;
    Dataset a = make_supervised_dataset(cfg, 5);
    Dataset b = make_supervised_dataset(cfg, 5);
    REQUIRE(a.items.size() == 64);
    CHECK(a.input_dim == cfg.n_codes);
    for (std::size_t i = 0; i < a.items.size(); ++i) {
        CHECK(a.items[i].xs.size() == static_cast<std::size_t>(cfg.t1 + cfg.t2 + cfg.t3));
        for (std::size_t t = 0; t + 1 < a.items[i].targets.size(); ++t)
            CHECK(a.items[i].targets[t] == -1);
        CHECK(a.items[i].targets.back() >= 0);
        CHECK(a.items[i].xs[0].x == b.items[i].xs[0].x);
    }
    std::vector<int> label_counts(4, 0);
    for (const auto& ex : a.items) label_counts[static_cast<std::size_t>(ex.targets.back())] += 1;
    for (int c : label_counts) CHECK(c == 16);  // exact balance by construction

    DatasetConfig rp;
    rp.task = "repeat_prev";
    rp.horizon = 1;
    rp.lag = 0;
    rp.n_sequences = 32;
    Dataset identity = make_supervised_dataset(rp, 6);
    for (const auto& ex : identity.items) {
        int sym = 0;
        for (int i = 0; i < identity.input_dim; ++i)
            if (ex.xs[0].x[static_cast<std::size_t>(i)] == real(1)) sym = i;
        CHECK(ex.targets[0] == sym);
    }

    CHECK_THROWS_AS(make_supervised_dataset(DatasetConfig{"nope"}, 1), ConfigError);

    save_dataset_csv(identity, "/tmp/shm_dataset.csv");
    CHECK(read_text_file("/tmp/shm_dataset.csv").find("sequence,step,target") == 0);
}

}  // TEST_SUITE
