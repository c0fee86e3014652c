#include <benchmark/benchmark.h>

#include "shm/diagnostics.hpp"
#include "shm/episode.hpp"

namespace {

struct Fixture {
    shm::ShmParams params;
    std::vector<shm::CalMatrix> cs;
    std::vector<shm::UpdMatrix> us;
    shm::MemoryState m0;

    Fixture(int t_len, int h)
        : params(shm::init_params({8, h, 128}, shm::CalibrationVariant::ShmRandomTheta, 7)),
          m0(h) {
        shm::Rng ctx = shm::Rng::stream(7, "bench.ctx");
        auto xs = shm::synthetic_contexts(t_len, 8, 0.5, ctx);
        shm::Rng rng(7);
        cs.resize(static_cast<std::size_t>(t_len));
        us.resize(static_cast<std::size_t>(t_len));
        for (int i = 0; i < t_len; ++i) {
            cs[static_cast<std::size_t>(i)] =
                shm::variant_calibration(params, xs[static_cast<std::size_t>(i)], i + 1, rng);
            us[static_cast<std::size_t>(i)] = shm::update_matrix(params, xs[static_cast<std::size_t>(i)]);
        }
    }
};

void BM_SequentialWrite(benchmark::State& state) {
    Fixture f(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
    for (auto _ : state) {
        shm::MemoryState cur = f.m0;
        for (std::size_t i = 0; i < f.cs.size(); ++i) cur = shm::write_step(cur, f.cs[i], f.us[i]);
        benchmark::DoNotOptimize(cur.m.data());
    }
    state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_SequentialWrite)->Args({64, 24})->Args({256, 24})->Args({1024, 24})->Args({256, 72})->Complexity();

void BM_ParallelScan(benchmark::State& state) {
    Fixture f(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
    for (auto _ : state) {
        shm::ScanStats stats;
        auto ms = shm::parallel_scan(f.m0, f.cs, f.us, &stats, 1);
        benchmark::DoNotOptimize(ms.back().m.data());
    }
    state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_ParallelScan)->Args({64, 24})->Args({256, 24})->Args({1024, 24})->Args({256, 72})->Complexity();

}  // namespace

BENCHMARK_MAIN();
