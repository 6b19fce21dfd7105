#include <benchmark/benchmark.h>

#include "cardiopinn/kinetics.hpp"

using namespace cardiopinn;

static void BM_StepCell(benchmark::State& state) {
  const auto p = APParameters::cellular_example();
  CellState s{1.0, 0.0};
  for (auto _ : state) {
    s = step_cell(p, s, 0.01, 0.0);
    if (s.phi < 0.02) s = {1.0, 0.0};
    benchmark::DoNotOptimize(s);
  }
}
BENCHMARK(BM_StepCell);

// One full trajectory at the default step, tau in [0, 100].
static void BM_IntegrateCell(benchmark::State& state) {
  const auto p = APParameters::cellular_example();
  for (auto _ : state)
    benchmark::DoNotOptimize(integrate_cell(p, NormalizationScalars::aliev_panfilov(), {1, 0}, {}, 0.01, 10000));
}
BENCHMARK(BM_IntegrateCell)->Unit(benchmark::kMillisecond);
