#include <doctest.h>

#include <cmath>

#include "shm/diagnostics.hpp"
#include "shm/episode.hpp"
#include "shm/verify.hpp"

using namespace shm;

namespace {

std::vector<Vec> zero_grads(const EpisodeTrace& tr, int h) {
    return std::vector<Vec>(tr.steps.size(), Vec(static_cast<std::size_t>(h), real(0)));
}

}  // namespace

TEST_SUITE("autograd") {

TEST_CASE("zero loss gradient yields a zero report") {
    ShmParams p = init_params({3, 4, 6}, CalibrationVariant::ShmRandomTheta, 1);
    Rng ctx = Rng::stream(1, "ctx");
    auto xs = synthetic_contexts(5, 3, real(0.4), ctx);
    Rng rng(2);
    EpisodeTrace tr = run_sequence(p, xs, rng, {EvalMode::Sequential, true, 1});
    GradReport g = backward(tr, zero_grads(tr, 4));
    CHECK(g.global_norm == real(0));
    for (const auto& arr : g.grads)
        for (real v : arr) CHECK(v == real(0));
}

TEST_CASE("all-ones variant never touches theta") {
    ShmParams p = init_params({3, 4, 6}, CalibrationVariant::AllOnes, 3);
    Rng ctx = Rng::stream(3, "ctx");
    auto xs = synthetic_contexts(6, 3, real(0.4), ctx);
    Rng rng(4);
    EpisodeTrace tr = run_sequence(p, xs, rng, {EvalMode::Sequential, true, 1});
    auto dh = zero_grads(tr, 4);
    for (auto& v : dh)
        for (real& z : v) z = real(1);
    GradReport g = backward(tr, dh);
    REQUIRE(g.names[0] == "theta");
    for (real v : g.grads[0]) CHECK(v == real(0));
    CHECK(g.global_norm > real(0));
}

TEST_CASE("backward matches central finite differences on a small episode") {
    ShmParams p = init_params({2, 3, 3}, CalibrationVariant::ShmRandomTheta, 5);
    Rng ctx = Rng::stream(5, "ctx");
    auto xs = synthetic_contexts(4, 2, real(0.4), ctx);
    const std::uint64_t ep_seed = 17;

    auto loss_fn = [](const EpisodeTrace& tr) {
        real acc = 0;
        for (const auto& s : tr.steps)
            for (real v : s.h) acc += real(0.5) * v * v;
        return acc;
    };
    Rng rng(ep_seed);
    EpisodeTrace tr = run_sequence(p, xs, rng, {EvalMode::Sequential, true, 1});
    std::vector<Vec> dh;
    for (const auto& s : tr.steps) dh.push_back(s.h);
    GradReport analytic = backward(tr, dh);
    GradReport fd = finite_difference_oracle(p, xs, ep_seed, {}, loss_fn, real(1e-5));

    for (std::size_t k = 0; k < analytic.grads.size(); ++k)
        for (std::size_t i = 0; i < analytic.grads[k].size(); ++i) {
            real a = analytic.grads[k][i];
            if (std::abs(a) <= real(1e-8)) continue;
            real f = fd.grads[k][i];
            CHECK(std::abs(a - f) / std::max(std::abs(a), std::abs(f)) <= real(1e-4));
        }
}

TEST_CASE("finite differences are exact on a quadratic in one affine map") {
    // single step, AllOnes: h = M q = U q, quadratic loss in h
    ShmParams p = init_params({2, 2, 1}, CalibrationVariant::AllOnes, 6);
    std::vector<ContextInput> xs{{Vec{real(0.7), real(-0.3)}}};
    auto loss_fn = [](const EpisodeTrace& tr) {
        real acc = 0;
        for (real v : tr.steps[0].h) acc += v;
        return acc;  // linear in h -> quadratic in any single parameter
    };
    GradReport fd = finite_difference_oracle(p, xs, 1, {}, loss_fn, real(1e-5));
    Rng rng(1);
    EpisodeTrace tr = run_sequence(p, xs, rng, {EvalMode::Sequential, true, 1});
    std::vector<Vec> dh{Vec{1, 1}};
    GradReport an = backward(tr, dh);
    for (std::size_t k = 0; k < an.grads.size(); ++k)
        for (std::size_t i = 0; i < an.grads[k].size(); ++i)
            CHECK(std::abs(an.grads[k][i] - fd.grads[k][i]) <= real(1e-8));
}

TEST_CASE("un-drawn theta rows receive no gradient") {
    ShmParams p = init_params({2, 2, 8}, CalibrationVariant::ShmRandomTheta, 7);
    Rng ctx = Rng::stream(7, "ctx");
    auto xs = synthetic_contexts(3, 2, real(0.4), ctx);
    Rng rng(33);
    EpisodeTrace tr = run_sequence(p, xs, rng, {EvalMode::Sequential, true, 1});
    std::vector<bool> drawn(8, false);
    for (const auto& s : tr.steps) drawn[static_cast<std::size_t>(s.theta_row)] = true;
    std::vector<Vec> dh;
    for (const auto& s : tr.steps) dh.push_back(s.h);
    GradReport g = backward(tr, dh);
    REQUIRE(g.names[0] == "theta");
    for (int r = 0; r < 8; ++r) {
        if (drawn[static_cast<std::size_t>(r)]) continue;
        for (int c = 0; c < 2; ++c) CHECK(g.grads[0][static_cast<std::size_t>(r * 2 + c)] == real(0));
    }
}

TEST_CASE("clip_gradients scaling behavior") {
    GradReport g;
    g.add("a", 2);
    g.grads[0] = {3, 4};  // norm 5
    GradReport same = clip_gradients(g, real(10));
    CHECK(same.clip_events == 0);
    CHECK(same.grads[0] == Vec{3, 4});

    GradReport g2;
    g2.add("a", 2);
    g2.grads[0] = {3, 4};
    GradReport halved = clip_gradients(g2, real(2.5));  // norm = 2 * max
    CHECK(halved.clip_events == 1);
    CHECK(halved.grads[0][0] == doctest::Approx(1.5).epsilon(1e-15));
    CHECK(halved.grads[0][1] == doctest::Approx(2.0).epsilon(1e-15));

    Rng rng(8);
    GradReport g3;
    g3.add("x", 100);
    for (real& v : g3.grads[0]) v = rng.uniform(-5, 5);
    GradReport clipped = clip_gradients(g3, real(1));
    CHECK(clipped.compute_global_norm() <= real(1) + real(1e-9));

    CHECK_THROWS_AS(clip_gradients(GradReport{}, real(0)), ConfigError);
}

TEST_CASE("critical gradients for a fixed scalar calibration") {
    auto [g1a, g2a] = critical_gradients_fixed_c(real(0.5), 3);
    CHECK(g1a == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(g2a == doctest::Approx(0.125).epsilon(1e-15));

    auto [g1b, g2b] = critical_gradients_fixed_c(real(1), 17);
    CHECK(g1b == real(17));
    CHECK(g2b == real(1));

    auto [g1c, g2c] = critical_gradients_fixed_c(real(1.1), 200);
    CHECK(g2c > real(1e8));
    CHECK(g1c > g2c);
}

TEST_CASE("taped update gradients carry the fixed-calibration product factor") {
    // H = 1, FixedC: dL/d(w_v[d]) must equal q_T * sum_i eta_i k_i x_i[d] * c^(T-i)
    const int t_len = 6;
    ShmParams p = init_params({2, 1, 1}, CalibrationVariant::FixedC, 11);
    p.fixed_c(0, 0) = real(0.8);
    Rng ctx = Rng::stream(11, "ctx");
    auto xs = synthetic_contexts(t_len, 2, real(0.3), ctx);

    Rng rng(3);
    EpisodeTrace tr = run_sequence(p, xs, rng, {EvalMode::Sequential, true, 1});
    std::vector<Vec> dh(t_len, Vec{0});
    dh.back() = Vec{1};  // loss = h_T
    GradReport g = backward(tr, dh);

    real q_last = p.w_q.apply(xs.back().x)[0];
    for (int d = 0; d < 2; ++d) {
        real expect = 0;
        for (int i = 1; i <= t_len; ++i) {
            real eta_i = sigmoid(p.eta.apply(xs[static_cast<std::size_t>(i - 1)].x)[0]);
            real k_i = p.w_k.apply(xs[static_cast<std::size_t>(i - 1)].x)[0];
            auto [g1, g2] = i < t_len ? critical_gradients_fixed_c(p.fixed_c(0, 0), t_len - i)
                                      : std::pair<real, real>{real(0), real(1)};
            expect += eta_i * k_i * xs[static_cast<std::size_t>(i - 1)].x[static_cast<std::size_t>(d)] *
                      g2 * q_last;
        }
        std::size_t k = 0;
        while (g.names[k] != "w_v.w") ++k;
        CHECK(std::abs(g.grads[k][static_cast<std::size_t>(d)] - expect) <= real(1e-10));
    }
}

TEST_CASE("tape replay reproduces forward values bit-identically") {
    ShmParams p = init_params({3, 4, 5}, CalibrationVariant::NeuralTheta, 12);
    Rng ctx = Rng::stream(12, "ctx");
    auto xs = synthetic_contexts(8, 3, real(0.5), ctx);
    Rng rng(9);
    EpisodeTrace tr = run_sequence(p, xs, rng, {EvalMode::Sequential, true, 1});
    REQUIRE(tr.taped != nullptr);
    CHECK(tr.taped->tape.replay_matches());
}

TEST_CASE("gradient-check property suite (reduced budget)") {
    VerifyOptions opts;
    opts.quick = true;
    SuiteResult r = run_verify_suite("grad", opts);
    CHECK(r.pass);
}

}  // TEST_SUITE
