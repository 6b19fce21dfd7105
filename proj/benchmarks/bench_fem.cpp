#include <benchmark/benchmark.h>

#include "cardiopinn/fem.hpp"
#include "cardiopinn/mesh.hpp"

using namespace cardiopinn;

static void BM_ElementEvaluation(benchmark::State& state) {
  const auto mesh = make_box_mesh({1, 1, 1}, {1, 1, 1});
  std::array<Vec3, 8> coords;
  for (int a = 0; a < 8; ++a) coords[a] = mesh.nodes[mesh.elements[0][a]];
  const auto geom = element_geometry(coords);
  Eigen::Matrix<double, 8, 1> Phi, Phi_n;
  Phi.setLinSpaced(-80, 0);
  Phi_n.setConstant(-80);
  const std::array<double, 8> r{};
  const FemConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_element(geom, Phi, Phi_n, r, cfg, 1.0));
}
BENCHMARK(BM_ElementEvaluation);

static void BM_GlobalAssembly(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  FemConfig cfg;
  cfg.dt = 2.0;
  const MonodomainSolver solver(make_box_mesh({100, 100, 100}, {n, n, n}), cfg);
  const auto s0 = solver.initial_state();
  for (auto _ : state) benchmark::DoNotOptimize(solver.assemble(s0, s0.Phi, cfg.dt));
  state.counters["nodes"] = static_cast<double>(solver.mesh().num_nodes());
}
BENCHMARK(BM_GlobalAssembly)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

// One Newton-solved step on the front of a planar wave.
static void BM_TimeStep(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  FemConfig cfg;
  cfg.dt = 2.0;
  const MonodomainSolver solver(make_box_mesh({100, 100, 100}, {n, n, n}), cfg);
  const auto s0 = solver.initial_state();
  for (auto _ : state) benchmark::DoNotOptimize(solver.step(s0));
  state.counters["nodes"] = static_cast<double>(solver.mesh().num_nodes());
}
BENCHMARK(BM_TimeStep)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);
