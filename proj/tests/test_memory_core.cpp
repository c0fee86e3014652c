#include <doctest.h>

#include "shm/diagnostics.hpp"
#include "shm/episode.hpp"
#include "shm/verify.hpp"

using namespace shm;

namespace {

Matrix random_matrix(int r, int c, Rng& rng, real lo = -1, real hi = 1) {
    Matrix m(r, c);
    for (real& v : m.raw()) v = rng.uniform(lo, hi);
    return m;
}

// independent scalar-loop oracle for one write
Matrix write_oracle(const Matrix& m, const Matrix& c, const Matrix& u) {
    Matrix out(m.rows(), m.cols());
    for (int i = 0; i < m.rows(); ++i)
        for (int j = 0; j < m.cols(); ++j) out(i, j) = m(i, j) * c(i, j) + u(i, j);
    return out;
}

}  // namespace

TEST_SUITE("memory_core") {

TEST_CASE("write_step identity case leaves memory unchanged") {
    Rng rng(1);
    MemoryState s{random_matrix(4, 4, rng), 3};
    CalMatrix c{Matrix::ones(4, 4)};
    UpdMatrix u{Matrix(4, 4)};
    MemoryState out = write_step(s, c, u);
    CHECK(out.m == s.m);
    CHECK(out.step == 4);
    CHECK(s.step == 3);  // input untouched
}

TEST_CASE("write_step from zero memory returns the update matrix") {
    Rng rng(2);
    MemoryState s(3);
    CalMatrix c{random_matrix(3, 3, rng)};
    UpdMatrix u{random_matrix(3, 3, rng)};
    MemoryState out = write_step(s, c, u);
    CHECK(out.m == u.u);
}

TEST_CASE("write_step matches entrywise scalar oracle") {
    Rng rng(3);
    MemoryState s{random_matrix(3, 3, rng), 0};
    CalMatrix c{random_matrix(3, 3, rng)};
    UpdMatrix u{random_matrix(3, 3, rng)};
    MemoryState out = write_step(s, c, u);
    CHECK(max_abs_diff(out.m, write_oracle(s.m, c.c, u.u)) == real(0));
}

TEST_CASE("write_step rejects shape mismatches and non-finite results") {
    MemoryState s(3);
    CHECK_THROWS_AS(write_step(s, CalMatrix{Matrix::ones(2, 2)}, UpdMatrix{Matrix(3, 3)}), DimError);

    Rng rng(4);
    MemoryState big{random_matrix(2, 2, rng), 0};
    big.m(0, 0) = std::numeric_limits<real>::max();
    CalMatrix c{Matrix(2, 2, real(3))};
    UpdMatrix u{Matrix(2, 2)};
    CHECK_THROWS_AS(write_step(big, c, u), NumericError);
    try {
        write_step(big, c, u);
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("step 1") != std::string::npos);
    }
}

TEST_CASE("read behaves as matrix-vector product") {
    Matrix id(3, 3);
    for (int i = 0; i < 3; ++i) id(i, i) = 1;
    Vec e1 = {0, 1, 0};
    CHECK(read(MemoryState{id, 0}, e1) == e1);
    CHECK(read(MemoryState(3), e1) == Vec{0, 0, 0});

    Rng rng(5);
    Matrix m = random_matrix(4, 4, rng);
    Vec q = {real(0.3), real(-1.2), real(0.5), real(2)};
    Vec h = read(MemoryState{m, 0}, q);
    for (int i = 0; i < 4; ++i) {
        real acc = 0;
        for (int j = 0; j < 4; ++j) acc += m(i, j) * q[static_cast<std::size_t>(j)];
        CHECK(h[static_cast<std::size_t>(i)] == doctest::Approx(acc).epsilon(1e-15));
    }
    CHECK_THROWS_AS(read(MemoryState{m, 0}, Vec{1, 2}), DimError);
}

TEST_CASE("closed form: empty sequence, base case, degenerate all-ones") {
    MemoryState m0(2);
    CHECK(unroll_closed_form(m0, {}, {}).empty());

    Rng rng(6);
    std::vector<CalMatrix> cs{{random_matrix(2, 2, rng)}};
    std::vector<UpdMatrix> us{{random_matrix(2, 2, rng)}};
    MemoryState m0r{random_matrix(2, 2, rng), 0};
    auto out = unroll_closed_form(m0r, cs, us);
    REQUIRE(out.size() == 1);
    CHECK(max_abs_diff(out[0].m, write_oracle(m0r.m, cs[0].c, us[0].u)) == real(0));

    // all C = 1: pure additive accumulation
    const int t_len = 7;
    std::vector<CalMatrix> ones(t_len, CalMatrix{Matrix::ones(2, 2)});
    std::vector<UpdMatrix> adds;
    for (int i = 0; i < t_len; ++i) adds.push_back({random_matrix(2, 2, rng)});
    auto accum = unroll_closed_form(m0r, ones, adds);
    Matrix expect = m0r.m;
    for (int i = 0; i < t_len; ++i) {
        expect = add(expect, adds[static_cast<std::size_t>(i)].u);
        CHECK(max_rel_diff(accum[static_cast<std::size_t>(i)].m, expect) < real(1e-12));
    }
}

TEST_CASE("closed form agrees with iterated write_step") {
    Rng rng(7);
    MemoryState m0{random_matrix(3, 3, rng), 0};
    std::vector<CalMatrix> cs;
    std::vector<UpdMatrix> us;
    for (int i = 0; i < 5; ++i) {
        cs.push_back({random_matrix(3, 3, rng, real(0.2), real(1.8))});
        us.push_back({random_matrix(3, 3, rng)});
    }
    auto closed = unroll_closed_form(m0, cs, us);
    MemoryState cur = m0;
    for (int i = 0; i < 5; ++i) {
        cur = write_step(cur, cs[static_cast<std::size_t>(i)], us[static_cast<std::size_t>(i)]);
        CHECK(max_rel_diff(closed[static_cast<std::size_t>(i)].m, cur.m) < real(1e-12));
    }
}

TEST_CASE("parallel scan matches the sequential oracle") {
    Rng rng(8);
    const int t_len = 257, h = 8;
    MemoryState m0(h);
    std::vector<CalMatrix> cs;
    std::vector<UpdMatrix> us;
    for (int i = 0; i < t_len; ++i) {
        cs.push_back({random_matrix(h, h, rng, real(0.4), real(1.6))});
        us.push_back({random_matrix(h, h, rng)});
    }
    ScanStats stats;
    auto scanned = parallel_scan(m0, cs, us, &stats);
    MemoryState cur = m0;
    real worst = 0;
    for (int i = 0; i < t_len; ++i) {
        cur = write_step(cur, cs[static_cast<std::size_t>(i)], us[static_cast<std::size_t>(i)]);
        worst = std::max(worst, max_rel_diff(scanned[static_cast<std::size_t>(i)].m, cur.m));
    }
    CHECK(worst <= real(1e-10));
    CHECK(stats.combine_levels == scan_combine_depth(t_len));
    CHECK(stats.fallback_spans == 0);
}

TEST_CASE("scan instrumented depth follows ceil(log2(T+1))") {
    CHECK(scan_combine_depth(0) == 0);
    CHECK(scan_combine_depth(1) == 1);
    CHECK(scan_combine_depth(2) == 2);
    CHECK(scan_combine_depth(7) == 3);
    CHECK(scan_combine_depth(64) == 7);
    CHECK(scan_combine_depth(257) == 9);
    CHECK(scan_combine_depth(1024) == 11);

    Rng rng(9);
    MemoryState m0(2);
    std::vector<CalMatrix> cs{{random_matrix(2, 2, rng, real(0.5), real(1.5))}};
    std::vector<UpdMatrix> us{{random_matrix(2, 2, rng)}};
    ScanStats stats;
    auto out = parallel_scan(m0, cs, us, &stats);
    CHECK(max_rel_diff(out[0].m, write_step(m0, cs[0], us[0]).m) <= real(1e-12));
    CHECK(stats.combine_levels == 1);
}

TEST_CASE("scan falls back to sequential spans on near-zero calibration entries") {
    Rng rng(10);
    const int t_len = 20, h = 3;
    MemoryState m0(h);
    std::vector<CalMatrix> cs;
    std::vector<UpdMatrix> us;
    for (int i = 0; i < t_len; ++i) {
        cs.push_back({random_matrix(h, h, rng, real(0.3), real(1.7))});
        us.push_back({random_matrix(h, h, rng)});
    }
    cs[7].c(1, 2) = 0;  // exact zero: division hazard
    cs[8].c(0, 0) = real(1e-15);
    ScanStats stats;
    auto scanned = parallel_scan(m0, cs, us, &stats);
    CHECK(stats.fallback_spans == 1);  // one contiguous bad span
    MemoryState cur = m0;
    for (int i = 0; i < t_len; ++i) {
        cur = write_step(cur, cs[static_cast<std::size_t>(i)], us[static_cast<std::size_t>(i)]);
        CHECK(max_rel_diff(scanned[static_cast<std::size_t>(i)].m, cur.m) <= real(1e-10));
    }
}

TEST_CASE("scan bisects long spans whose running products leave double range") {
    // entries of 0.02: product underflows past 1e-280 within ~165 steps
    const int t_len = 400, h = 2;
    MemoryState m0(h);
    Rng rng(14);
    std::vector<CalMatrix> cs(t_len, CalMatrix{Matrix(h, h, real(0.02))});
    std::vector<UpdMatrix> us;
    for (int i = 0; i < t_len; ++i) us.push_back({random_matrix(h, h, rng)});
    ScanStats stats;
    auto scanned = parallel_scan(m0, cs, us, &stats);
    CHECK(stats.fallback_spans == 0);  // bisection is not the epsilon fallback
    CHECK(stats.combine_levels <= scan_combine_depth(t_len));
    MemoryState cur = m0;
    for (int i = 0; i < t_len; ++i) {
        cur = write_step(cur, cs[static_cast<std::size_t>(i)], us[static_cast<std::size_t>(i)]);
        CHECK(max_rel_diff(scanned[static_cast<std::size_t>(i)].m, cur.m) <= real(1e-10));
    }

    // one-step span with an extreme entry is evaluated directly
    std::vector<CalMatrix> big{CalMatrix{Matrix(h, h, real(1e300))}};
    std::vector<UpdMatrix> one{UpdMatrix{random_matrix(h, h, rng)}};
    auto direct = parallel_scan(m0, big, one, nullptr);
    CHECK(direct[0].m == write_step(m0, big[0], one[0]).m);
}

TEST_CASE("scan results do not depend on worker count") {
    Rng rng(11);
    const int t_len = 100, h = 4;
    MemoryState m0(h);
    std::vector<CalMatrix> cs;
    std::vector<UpdMatrix> us;
    for (int i = 0; i < t_len; ++i) {
        cs.push_back({random_matrix(h, h, rng, real(0.5), real(1.5))});
        us.push_back({random_matrix(h, h, rng)});
    }
    auto a = parallel_scan(m0, cs, us, nullptr, 1);
    auto b = parallel_scan(m0, cs, us, nullptr, 4);
    for (int i = 0; i < t_len; ++i)
        CHECK(a[static_cast<std::size_t>(i)].m == b[static_cast<std::size_t>(i)].m);
}

TEST_CASE("layer_normalize conventions") {
    ContextInput constant{Vec(8, real(3.7))};
    CHECK(layer_normalize(constant).x == Vec(8, real(0)));

    Rng rng(12);
    ContextInput x{rng.normal_vec(8)};
    ContextInput n = layer_normalize(x);
    real mean = 0, var = 0;
    for (real v : n.x) mean += v;
    mean /= 8;
    for (real v : n.x) var += (v - mean) * (v - mean);
    var /= 8;
    CHECK(std::abs(mean) < real(1e-6));
    CHECK(std::abs(var - 1) < real(1e-6));

    ContextInput again = layer_normalize(n);
    for (std::size_t i = 0; i < 8; ++i) CHECK(std::abs(again.x[i] - n.x[i]) < real(1e-6));

    CHECK_THROWS_AS(layer_normalize(ContextInput{Vec{1}}), DimError);
}

TEST_CASE("run_sequence: empty input, cross-mode agreement, gated-off updates") {
    ShmParams params = init_params({4, 3, 5}, CalibrationVariant::ShmRandomTheta, 77);
    Rng rng(13);
    EpisodeTrace empty = run_sequence(params, {}, rng, {});
    CHECK(empty.steps.empty());
    CHECK(empty.m0.m.rows() == 3);

    Rng ctx = Rng::stream(13, "ctx");
    auto xs = synthetic_contexts(3, 4, real(0.5), ctx);
    Rng r1(99), r2(99), r3(99);
    EpisodeTrace a = run_sequence(params, xs, r1, {EvalMode::Sequential, false, 1});
    EpisodeTrace b = run_sequence(params, xs, r2, {EvalMode::ClosedForm, false, 1});
    EpisodeTrace c = run_sequence(params, xs, r3, {EvalMode::Scan, false, 1});
    for (std::size_t t = 0; t < 3; ++t) {
        CHECK(max_rel_diff(a.steps[t].m.m, b.steps[t].m.m) <= real(1e-10));
        CHECK(max_rel_diff(a.steps[t].m.m, c.steps[t].m.m) <= real(1e-10));
        CHECK(a.steps[t].theta_row == b.steps[t].theta_row);
        CHECK(a.steps[t].theta_row == c.steps[t].theta_row);
    }

    // gate forced to zero: no content is ever written
    ShmParams gated = params;
    gated.eta.b[0] = real(-1000);
    Rng r4(99);
    EpisodeTrace g = run_sequence(gated, xs, r4, {});
    for (const auto& step : g.steps) {
        for (real v : step.u.u.raw()) CHECK(v == real(0));
        for (real v : step.m.m.raw()) CHECK(v == real(0));  // M_0 = 0 times products
    }
}

TEST_CASE("oracle equivalence property over random configurations") {
    VerifyOptions opts;
    opts.quick = true;
    SuiteResult r = run_verify_suite("scan", opts);
    CHECK(r.pass);
}

TEST_CASE("fault injection turns the scan suite red") {
    VerifyOptions opts;
    opts.quick = true;
    opts.inject_fault = true;
    SuiteResult r = run_verify_suite("scan", opts);
    CHECK_FALSE(r.pass);
    CHECK(r.detail.find("config") != std::string::npos);  // names the failing case
}

}  // TEST_SUITE
