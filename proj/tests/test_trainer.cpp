#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "shm/trainer.hpp"

using namespace shm;

TEST_SUITE("trainer") {

TEST_CASE("softmax normalizes to one") {
    Rng rng(1);
    for (int i = 0; i < 100; ++i) {
        Vec logits = rng.normal_vec(6);
        for (real& v : logits) v *= 10;
        Vec p = softmax(logits);
        real sum = 0;
        for (real v : p) {
            CHECK(v >= real(0));
            sum += v;
        }
        CHECK(std::abs(sum - 1) <= real(1e-9));
    }
}

TEST_CASE("train config round-trips through the key-value format") {
    TrainConfig cfg;
    cfg.task = "rl.repeat_prev";
    cfg.lr = real(0.00123);
    cfg.dims = {5, 9, 33};
    cfg.variant = CalibrationVariant::FixedTheta;
    cfg.dataset.t2 = 123;
    TrainConfig back = TrainConfig::from_kv(cfg.to_kv());
    CHECK(back.to_kv().serialize() == cfg.to_kv().serialize());
    CHECK(back.hash() == cfg.hash());
    CHECK(back.dims.l == 33);
    CHECK(back.variant == CalibrationVariant::FixedTheta);
}

TEST_CASE("checkpoints: bit-exact round-trip, truncation, dimension mismatch") {
    ShmParams p = init_params({6, 5, 7}, CalibrationVariant::NeuralTheta, 3);
    PolicyValueHeads heads = init_heads(5, 4, 3);
    std::string path = "/tmp/shm_test_ckpt.bin";
    checkpoint_save(path, p, heads);

    Checkpoint ck = checkpoint_load(path);
    CHECK(ck.params.variant == CalibrationVariant::NeuralTheta);
    auto ta = param_tensors(p);
    auto tb = param_tensors(ck.params);
    REQUIRE(ta.size() == tb.size());
    for (std::size_t k = 0; k < ta.size(); ++k)
        for (std::size_t i = 0; i < ta[k].size; ++i) CHECK(ta[k].data[i] == tb[k].data[i]);
    CHECK(ck.heads.policy.w == heads.policy.w);
    CHECK(ck.heads.value.b == heads.value.b);

    // truncated file: clean refusal, no partial state
    std::string blob = read_text_file(path);
    write_text_file(path + ".trunc", blob.substr(0, blob.size() / 2));
    CHECK_THROWS_AS(checkpoint_load(path + ".trunc"), IoError);
    write_text_file(path + ".bad", "NOTACKPT" + blob.substr(8));
    CHECK_THROWS_AS(checkpoint_load(path + ".bad"), IoError);

    CHECK_THROWS_AS(checkpoint_load_expect(path, Dims{6, 16, 7}, CalibrationVariant::NeuralTheta),
                    ConfigError);
    CHECK_THROWS_AS(checkpoint_load_expect(path, Dims{6, 5, 7}, CalibrationVariant::AllOnes),
                    ConfigError);
    CHECK_NOTHROW(checkpoint_load_expect(path, Dims{6, 5, 7}, CalibrationVariant::NeuralTheta));
}

TEST_CASE("zero advantage with no entropy leaves the policy gradient at zero") {
    Rng rng(2);
    Vec logits = rng.normal_vec(5);
    A2cStepGrad g = a2c_step_grad(logits, 2, real(0), real(0.7), real(0.7), real(0));
    for (real v : g.dlogits) CHECK(v == real(0));
    CHECK(g.dvalue == real(0));

    // with a target mismatch only the value side moves
    A2cStepGrad g2 = a2c_step_grad(logits, 2, real(0), real(0.7), real(1.7), real(0));
    for (real v : g2.dlogits) CHECK(v == real(0));
    CHECK(g2.dvalue == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("adam descends a convex problem monotonically at small learning rate") {
    // least squares on a fixed random design, value head only
    Rng rng(3);
    const int n = 32, d = 6;
    std::vector<Vec> xs;
    Vec ys;
    Vec w_true = rng.normal_vec(d);
    for (int i = 0; i < n; ++i) {
        Vec x = rng.normal_vec(d);
        real y = 0;
        for (int j = 0; j < d; ++j) y += w_true[static_cast<std::size_t>(j)] * x[static_cast<std::size_t>(j)];
        xs.push_back(std::move(x));
        ys.push_back(y);
    }
    PolicyValueHeads heads = init_heads(d, 2, 4);
    auto tensors = head_tensors(heads);
    AdamOptimizer adam(real(1e-3));
    real prev = std::numeric_limits<real>::max();
    for (int epoch = 0; epoch < 2500; ++epoch) {
        GradReport g;
        for (const auto& t : tensors) g.add(t.name, t.size);
        real loss = 0;
        for (int i = 0; i < n; ++i) {
            real pred = heads.value.apply(xs[static_cast<std::size_t>(i)])[0];
            real err = pred - ys[static_cast<std::size_t>(i)];
            loss += real(0.5) * err * err / n;
            for (int j = 0; j < d; ++j)
                g.grads[2][static_cast<std::size_t>(j)] +=
                    err * xs[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] / n;
            g.grads[3][0] += err / n;
        }
        CHECK(loss <= prev + real(1e-9));
        prev = loss;
        adam.step(tensors, g);
    }
    CHECK(prev < real(0.05));
}

TEST_CASE("supervised identity task reaches near-perfect accuracy quickly") {
    TrainConfig cfg;
    cfg.task = "supervised.repeat_prev";
    cfg.dataset.task = "repeat_prev";
    cfg.dataset.n_sequences = 64;
    cfg.dataset.horizon = 4;
    cfg.dataset.lag = 0;
    cfg.dims = Dims{0, 8, 16};
    cfg.epochs = 200;
    cfg.eval_every = 5;
    cfg.lr = real(3e-3);
    cfg.target_success = real(0.995);
    cfg.seed = 11;
    TrainResult res = train_supervised(cfg);
    CHECK_FALSE(res.report.aborted);
    CHECK(res.report.last("final_eval_acc") >= real(0.99));
}

TEST_CASE("identical seeded runs produce identical reports") {
    TrainConfig cfg;
    cfg.task = "supervised.repeat_prev";
    cfg.dataset.task = "repeat_prev";
    cfg.dataset.n_sequences = 10;
    cfg.dataset.horizon = 5;
    cfg.dataset.lag = 1;
    cfg.dims = Dims{0, 5, 6};
    cfg.epochs = 4;
    cfg.eval_every = 2;
    cfg.seed = 123;
    TrainResult a = train_supervised(cfg);
    TrainResult b = train_supervised(cfg);
    REQUIRE(a.report.rows.size() == b.report.rows.size());
    for (std::size_t i = 0; i < a.report.rows.size(); ++i) {
        CHECK(a.report.rows[i].metric == b.report.rows[i].metric);
        CHECK(a.report.rows[i].value == b.report.rows[i].value);
    }
    auto ta = param_tensors(a.params);
    auto tb = param_tensors(b.params);
    for (std::size_t k = 0; k < ta.size(); ++k)
        for (std::size_t i = 0; i < ta[k].size; ++i) CHECK(ta[k].data[i] == tb[k].data[i]);
}

TEST_CASE("fixed calibration above one stays finite under clipping at T = 200") {
    ShmParams p = init_params({3, 4, 2}, CalibrationVariant::FixedC, 13);
    for (real& v : p.fixed_c.raw()) v = real(1.3);
    Rng ctx = Rng::stream(13, "ctx");
    std::vector<ContextInput> xs;
    for (int t = 0; t < 200; ++t) {
        ContextInput x{ctx.normal_vec(3)};
        xs.push_back(std::move(x));
    }
    Rng rng(1);
    EpisodeTrace tr = run_sequence(p, xs, rng, {EvalMode::Sequential, true, 1});
    std::vector<Vec> dh;
    for (const auto& s : tr.steps) dh.push_back(s.h);
    GradReport g = backward(tr, dh);
    CHECK(g.global_norm > real(1));  // exploding regime produced a big gradient
    GradReport clipped = clip_gradients(std::move(g), real(1));
    CHECK(clipped.all_finite());
    CHECK(clipped.compute_global_norm() <= real(1) + real(1e-9));
    CHECK(clipped.clip_events == 1);
}

TEST_CASE("evaluate: empty request, chance-level random policy, estimator vs enumeration") {
    TrainConfig cfg;
    cfg.task = "rl.delayed_recall";
    cfg.recall_env = DelayedRecallConfig{2, 1, 1, 2, real(0.5), real(10)};
    DelayedRecallEnv env(cfg.recall_env);
    int d = env.obs_dim() + env.n_actions();
    ShmParams params = init_params({d, 4, 4}, CalibrationVariant::ShmRandomTheta, 5);
    PolicyValueHeads heads = init_heads(4, env.n_actions(), 5);
    for (real& v : heads.policy.w.raw()) v = real(0);  // uniform policy when sampled
    for (real& v : heads.policy.b) v = real(0);

    EvalReport empty = evaluate(params, heads, cfg, 0, 1);
    CHECK(empty.episodes == 0);

    // exhaustive enumeration over reward rules: uniform policy success =
    // sum_k (P(no door)^(k-1) * P(correct door)) over the t3 door steps
    const double p_door_step = 1.0 / 4;  // one of 4 actions is the matching door (2 doors: 1/4 each)
    const double p_no_door = 2.0 / 4;
    double exact = 0, stay = 1;
    for (int k = 0; k < cfg.recall_env.t3; ++k) {
        exact += stay * p_door_step;
        stay *= p_no_door;
    }
    const int n = 20000;
    EvalReport ev = evaluate(params, heads, cfg, n, 9, /*greedy=*/false);
    double sigma = std::sqrt(exact * (1 - exact) / n);
    CHECK(std::abs(ev.success_rate - exact) <= 3 * sigma);
    CHECK(ev.mean_return > real(0));
}

TEST_CASE("policy gradient smoke: a few batches run and report") {
    TrainConfig cfg;
    cfg.task = "rl.repeat_prev";
    cfg.repeat_env = RepeatPrevConfig{3, 1, 8};
    cfg.dims = Dims{0, 6, 8};
    cfg.max_episodes = 64;
    cfg.batch = 16;
    cfg.eval_every = 32;
    cfg.eval_episodes = 20;
    cfg.seed = 4;
    TrainResult res = train_policy_gradient(cfg);
    CHECK_FALSE(res.report.aborted);
    CHECK(res.report.last("episodes_used") == real(64));
    CHECK(std::isfinite(res.report.last("final_mean_return")));
}

TEST_CASE("policy gradient improves clearly over chance on lag-4 recall") {
    // chance return for alphabet 4 is (24/32) * (0.25 - 0.75) = -0.4375
    TrainConfig cfg;
    cfg.task = "rl.repeat_prev";
    cfg.repeat_env = RepeatPrevConfig{4, 4, 32};
    cfg.dims = Dims{0, 16, 128};
    cfg.lr = real(1e-3);
    cfg.batch = 32;
    cfg.entropy_coef = real(3e-3);
    cfg.gamma = real(0.3);
    cfg.max_episodes = 24000;
    cfg.eval_every = 8000;
    cfg.eval_episodes = 100;
    cfg.seed = 5;
    TrainResult res = train_policy_gradient(cfg);
    CHECK_FALSE(res.report.aborted);
    CHECK(res.report.last("final_mean_return") >= real(-0.4375) + real(0.1));
}

}  // TEST_SUITE
