#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "shm/diagnostics.hpp"
#include "shm/io.hpp"

using namespace shm;

TEST_SUITE("diagnostics") {

TEST_CASE("fixed 0.5 calibration decays geometrically; all-ones reports the empty convention") {
    ShmParams fixed = diagnostics_params(CalibrationVariant::FixedC, {8, 3, 4}, 1);
    CumProductStats s = cumulative_product_curve(fixed, 2, 12, 1);
    for (int j = 1; j <= 12; ++j)
        CHECK(std::abs(s.mean_below_one[static_cast<std::size_t>(j - 1)] -
                       std::pow(real(0.5), static_cast<real>(j))) <= real(1e-12));
    CHECK(s.mean_below_one[9] == doctest::Approx(9.765625e-4).epsilon(1e-12));

    ShmParams ones = diagnostics_params(CalibrationVariant::AllOnes, {8, 3, 4}, 1);
    CumProductStats so = cumulative_product_curve(ones, 2, 12, 1);
    for (real v : so.mean_below_one) CHECK(v == real(1));
    for (real v : so.frac_ge_1) CHECK(v == real(1));
}

TEST_CASE("random theta stays above fixed theta at step 100") {
    const Dims dims{8, 8, 128};
    ShmParams rt = diagnostics_params(CalibrationVariant::ShmRandomTheta, dims, 3);
    ShmParams ft = diagnostics_params(CalibrationVariant::FixedTheta, dims, 3);
    CumProductStats a = cumulative_product_curve(rt, 40, 100, 3);
    CumProductStats b = cumulative_product_curve(ft, 40, 100, 3);
    CHECK(a.mean_below_one[99] > b.mean_below_one[99]);
}

TEST_CASE("expected product: empty horizon exact, short horizon within 3 SE") {
    Prop4Result empty = prop4_expected_product(16, 3, 0, 100, 5);
    for (real v : empty.mean.raw()) CHECK(v == real(1));
    for (real v : empty.se.raw()) CHECK(v == real(0));

    Prop4Result t1 = prop4_expected_product(128, 4, 1, 20000, 5);
    CHECK(t1.max_dev_over_se <= real(3));
}

TEST_CASE("correlation ratio: fixed theta hits equality, independent v decorrelates") {
    CorrelationReport fixed = prop5_correlation_ratio(128, 20000, real(0.9), 6, true);
    REQUIRE(fixed.ratio_defined);
    CHECK(std::abs(fixed.rho_uv - fixed.rho_v) <= real(3) * fixed.combined_se());
    CHECK(fixed.ratio == doctest::Approx(1.0).epsilon(1e-9));

    CorrelationReport indep = prop5_correlation_ratio(128, 20000, real(0), 7, false);
    CHECK(std::abs(indep.rho_v) <= real(3) / std::sqrt(real(20000)));
    CHECK(std::abs(indep.rho_uv) <= real(3) / std::sqrt(real(20000)));

    CorrelationReport rnd = prop5_correlation_ratio(128, 20000, real(0.9), 8, false);
    CHECK(std::abs(rnd.rho_uv) <= std::abs(rnd.rho_v) + real(3) * rnd.combined_se());

    CHECK_THROWS_AS(prop5_correlation_ratio(0, 20000, real(0.9), 6, false), ConfigError);
}

TEST_CASE("gradient regime witness classifications") {
    Matrix th(2, 2);
    th(0, 0) = real(0.9);
    th(0, 1) = real(1.0);
    th(1, 0) = real(-1.05);
    th(1, 1) = real(0.0);
    Prop3Witness w = prop3_witness(th, 200);
    CHECK(w.regime[0] == GradientRegime::Vanishing);
    CHECK(w.regime[1] == GradientRegime::Marginal);
    CHECK(w.regime[2] == GradientRegime::Exploding);
    CHECK(w.regime[3] == GradientRegime::Vanishing);
    CHECK(w.consistent);
    CHECK(w.direct_product(0, 0) == doctest::Approx(7.0550791086553219e-10).epsilon(1e-9));
    CHECK(w.direct_product(0, 1) == real(1));

    Prop3Witness explode = prop3_witness([] {
        Matrix m(1, 1);
        m(0, 0) = real(1.05);
        return m;
    }(), 1000);
    CHECK(explode.direct_product(0, 0) > real(1e21));
}

TEST_CASE("heatmap export: structure, range errors, zero-update episodes") {
    ShmParams p = init_params({5, 4, 3}, CalibrationVariant::ShmRandomTheta, 9);
    Rng ctx = Rng::stream(9, "ctx");
    auto xs = synthetic_contexts(3, 5, real(0.2), ctx);
    Rng rng(1);
    EpisodeTrace tr = run_sequence(p, xs, rng, {});

    std::string dir = "/tmp/shm_heatmaps";
    std::filesystem::create_directories(dir);
    auto paths = export_heatmaps(tr, {2}, dir, 4);
    REQUIRE(paths.size() == 2);
    std::map<std::string, std::string> hdr;
    Matrix m = read_matrix_csv(paths[0], &hdr);
    CHECK(m.rows() == 4);
    CHECK(hdr.at("step") == "2");
    CHECK(hdr.at("episode") == "4");
    CHECK(m == tr.steps[1].m.m);
    Matrix c = read_matrix_csv(paths[1]);
    CHECK(c == tr.steps[1].c.c);

    CHECK_THROWS_AS(export_heatmaps(tr, {7}, dir), RangeError);

    // gate forced off: every exported memory is the zero matrix
    ShmParams off = p;
    off.eta.b[0] = real(-1000);
    Rng rng2(1);
    EpisodeTrace tz = run_sequence(off, xs, rng2, {});
    auto pz = export_heatmaps(tz, {1, 3}, dir);
    for (std::size_t i = 0; i < pz.size(); i += 2) {
        Matrix mz = read_matrix_csv(pz[i]);
        for (real v : mz.raw()) CHECK(v == real(0));
    }
}

TEST_CASE("bootstrap confidence separates disjoint samples") {
    std::vector<real> lo(50), hi(50);
    for (int i = 0; i < 50; ++i) {
        lo[static_cast<std::size_t>(i)] = real(0.1) + real(0.001) * i;
        hi[static_cast<std::size_t>(i)] = real(0.9) + real(0.001) * i;
    }
    CHECK(bootstrap_less_confidence(lo, hi, 500, 1) == real(1));
    CHECK(bootstrap_less_confidence(hi, lo, 500, 1) == real(0));
}

TEST_CASE("synthetic contexts are layer-normalized and autocorrelated") {
    Rng rng(10);
    auto xs = synthetic_contexts(200, 8, real(0.9), rng);
    double corr_acc = 0;
    for (std::size_t t = 1; t < xs.size(); ++t) {
        double dot = 0;
        for (std::size_t i = 0; i < 8; ++i) dot += xs[t].x[i] * xs[t - 1].x[i];
        corr_acc += dot / 8.0;
        real mean = 0;
        for (real v : xs[t].x) mean += v;
        CHECK(std::abs(mean / 8) < real(1e-6));
    }
    CHECK(corr_acc / 199.0 > 0.5);  // strong temporal dependence by construction
}

}  // TEST_SUITE
