#include <benchmark/benchmark.h>

#include "cardiopinn/mlp.hpp"
#include "cardiopinn/pinn.hpp"
#include "cardiopinn/sampling.hpp"
#include "cardiopinn/tape.hpp"
#include "cardiopinn/trainer.hpp"

using namespace cardiopinn;

namespace {

ProblemSpec cellular_spec() {
  ProblemSpec s;
  s.family = ResidualFamily::cellular;
  s.scaler = {{InputRole::t, InputRole::c}, {0, 4}, {100, 8}, 0, 1};
  return s;
}

ProblemSpec cube_spec() {
  ProblemSpec s;
  s.family = ResidualFamily::three_d;
  s.params = APParameters::cube_example();
  s.scaler = {{InputRole::x, InputRole::y, InputRole::z, InputRole::t}, {0, 0, 0, 0}, {100, 100, 100, 2000}, -1, 1};
  return s;
}

Eigen::MatrixXd random_inputs(int n0, int batch) {
  return Eigen::MatrixXd::Random(n0, batch);
}

}  // namespace

static void BM_Forward(benchmark::State& state) {
  const MlpConfig cfg{{4, 40, 40, 40, 2}};
  const auto params = init_params(cfg, 1);
  const auto X = random_inputs(4, static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(forward_batch(params, X));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(256)->Arg(1024);

// Output plus the first and second input derivatives the 3-D residual needs,
// then the weight gradient of their sum of squares.
static void BM_DerivativesAndGradient(benchmark::State& state) {
  const MlpConfig cfg{{4, 40, 40, 40, 2}};
  const auto params = init_params(cfg, 1);
  const auto request = residual_request(cube_spec());
  const auto X = random_inputs(4, static_cast<int>(state.range(0)));
  for (auto _ : state) {
    Tape tape;
    const auto net = bind(tape, params);
    const auto ev = evaluate(tape, net, X, request);
    NodeId total = tape.sum_squares(ev.d2(0, 0));
    for (int j = 1; j < 3; ++j) total = tape.add(total, tape.sum_squares(ev.d2(j, j)));
    benchmark::DoNotOptimize(grad_weights(tape, total, net));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_DerivativesAndGradient)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);

static void BM_LossEvaluation(benchmark::State& state, ProblemSpec spec, std::vector<int> widths) {
  const int n = static_cast<int>(state.range(0));
  const auto points = sample_points(spec.scaler, {{"interior", static_cast<std::size_t>(n)}}, 7);
  const auto params = init_params(MlpConfig{widths}, 1);
  const LossEvaluator loss(spec, points, 1024, 1);
  const LossWeights weights;
  for (auto _ : state) benchmark::DoNotOptimize(loss(params, weights));
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK_CAPTURE(BM_LossEvaluation, cellular, cellular_spec(), {2, 50, 50, 50, 2})
    ->Arg(2000)
    ->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_LossEvaluation, cube, cube_spec(), {4, 40, 40, 40, 2})->Arg(2000)->Unit(benchmark::kMillisecond);
