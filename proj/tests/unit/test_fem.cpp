#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>
#include <doctest.h>

#include "cardiopinn/error.hpp"
#include "cardiopinn/fem.hpp"

using namespace cardiopinn;
using Vec8 = Eigen::Matrix<double, 8, 1>;

namespace {

std::array<Vec3, 8> cube_coords(double h = 1.0, Vec3 origin = Vec3::Zero()) {
  std::array<Vec3, 8> c;
  const auto& ref = reference_corners();
  for (int i = 0; i < 8; ++i) c[i] = origin + 0.5 * h * (ref[i] + Vec3::Ones());
  return c;
}

FemConfig quiet_config() {
  FemConfig cfg;
  cfg.dt = 0.5;
  cfg.t_end = 10;
  cfg.initial = InitialCondition::uniform(-80);
  return cfg;
}

// Residual without kinetics by order-4 quadrature, written from scratch.
Vec8 dense_residual(const std::array<Vec3, 8>& x, const Vec8& Phi, const Vec8& Phi_n, const FemConfig& cfg) {
  const auto rule = gauss_hex(4);
  const Eigen::Matrix3d D = cfg.conductivity.matrix();
  Vec8 R = Vec8::Zero();
  for (std::size_t q = 0; q < rule.points.size(); ++q) {
    const auto s = shape_functions(rule.points[q]);
    Eigen::Matrix3d J = Eigen::Matrix3d::Zero();
    for (int a = 0; a < 8; ++a) J += x[a] * s.dN_dxi.row(a);
    const Eigen::Matrix<double, 8, 3> B = s.dN_dxi * J.inverse();
    const double w = rule.weights[q] * J.determinant();
    const Eigen::Vector3d grad = B.transpose() * Phi;
    R += w * (s.N * (s.N.dot(Phi - Phi_n) / cfg.dt) + B * (D * grad));
  }
  return R;
}

double crossing_time(const std::vector<double>& times, const std::vector<double>& values, double level) {
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i - 1] < level && values[i] >= level) {
      const double s = (level - values[i - 1]) / (values[i] - values[i - 1]);
      return times[i - 1] + s * (times[i] - times[i - 1]);
    }
  return -1;
}

}  // namespace

TEST_CASE("conductivity tensor") {
  CHECK(build_conductivity(1.2, 0, Vec3(0.3, 0.4, 0.1)).isApprox(1.2 * Eigen::Matrix3d::Identity()));
  CHECK(build_conductivity(0, 2, Vec3::UnitX()).isApprox(Eigen::Vector3d(2, 0, 0).asDiagonal().toDenseMatrix()));
  CHECK(build_conductivity(1, 1, Vec3::UnitZ()).isApprox(Eigen::Vector3d(1, 1, 2).asDiagonal().toDenseMatrix()));
  CHECK_THROWS_AS(build_conductivity(1, 1, Vec3(1, 1, 0)), InvalidArgument);
  CHECK_THROWS_AS(build_conductivity(-1, 0, Vec3::UnitX()), InvalidArgument);
  const Eigen::Matrix3d D = build_conductivity(0.5, 1.5, Vec3(1, 2, 2) / 3.0);
  CHECK((D - D.transpose()).norm() == 0.0);
  CHECK(Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(D).eigenvalues().minCoeff() >= 0.0);
}

TEST_CASE("element residual at rest is zero") {
  auto cfg = quiet_config();
  const Vec8 rest = Vec8::Constant(-80);
  const auto R = element_residual(cube_coords(), rest, rest, {}, cfg, 1.0);
  CHECK(R.cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("uniform state gives a uniform source residual") {
  auto cfg = quiet_config();
  const double h = 2.0;
  const Vec8 u = Vec8::Constant(-40);
  const auto R = element_residual(cube_coords(h), u, u, {}, cfg, 1.0);
  const double dtau = normalize_time(cfg.dt, cfg.scalars);
  const double phi = normalize_potential(-40, cfg.scalars);
  const double r = local_newton_r(phi, 0.0, dtau, cfg.params).r;
  const double F = source_term_physical({phi, r}, cfg.params, 0.0, cfg.scalars);
  REQUIRE(F > 0);
  for (int i = 0; i < 8; ++i) CHECK(R[i] == doctest::Approx(-F * h * h * h / 8).epsilon(1e-12));
}

TEST_CASE("element residual matches an order-4 quadrature oracle") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-85, 25);
  auto cfg = quiet_config();
  cfg.kinetics_enabled = false;
  for (int n = 0; n < 20; ++n) {
    cfg.conductivity = {0.3 + (n % 4) * 0.4, 0.7, Vec3(1, 2, 2) / 3.0};
    Vec8 Phi, Phi_n;
    for (int i = 0; i < 8; ++i) {
      Phi[i] = u(rng);
      Phi_n[i] = u(rng);
    }
    const auto x = cube_coords();
    const Vec8 R = element_residual(x, Phi, Phi_n, {}, cfg, 0.0);
    const Vec8 ref = dense_residual(x, Phi, Phi_n, cfg);
    REQUIRE((R - ref).norm() <= 1e-8 * ref.norm());
  }
}

TEST_CASE("tangent of the mass term") {
  auto cfg = quiet_config();
  cfg.kinetics_enabled = false;
  cfg.conductivity = {0, 0, Vec3::UnitX()};
  const double h = 1.5;
  const Vec8 u = Vec8::Constant(-80);
  const auto K = element_tangent(cube_coords(h), u, u, {}, cfg, 0.0);
  for (int i = 0; i < 8; ++i) CHECK(K.row(i).sum() == doctest::Approx(h * h * h / (8 * cfg.dt)).epsilon(1e-13));
}

TEST_CASE("tangent equals the finite-difference Jacobian of the residual") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> uPhi(-85, 25), ur(0, 2);
  auto cfg = quiet_config();
  cfg.conductivity = {1.2, 0.5, Vec3(0, 0.6, 0.8)};
  auto coords = cube_coords(1.0);
  coords[6] += Vec3(0.1, 0.05, -0.05);  // mild distortion
  double worst = 0;
  for (int n = 0; n < 50; ++n) {
    Vec8 Phi, Phi_n;
    std::array<double, 8> rn;
    for (int i = 0; i < 8; ++i) {
      Phi[i] = uPhi(rng);
      Phi_n[i] = uPhi(rng);
      rn[i] = ur(rng);
    }
    const auto K = element_tangent(coords, Phi, Phi_n, rn, cfg, 1.0);
    CHECK((K - K.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * K.cwiseAbs().maxCoeff());
    const double h = 1e-6 * Phi.cwiseAbs().maxCoeff();
    Eigen::Matrix<double, 8, 8> fd;
    for (int j = 0; j < 8; ++j) {
      Vec8 a = Phi, b = Phi;
      a[j] += h;
      b[j] -= h;
      fd.col(j) = (element_residual(coords, a, Phi_n, rn, cfg, 1.0) -
                   element_residual(coords, b, Phi_n, rn, cfg, 1.0)) /
                  (2 * h);
    }
    worst = std::max(worst, (K - fd).norm() / K.norm());
  }
  MESSAGE("worst relative tangent error " << worst);
  CHECK(worst < 1e-5);
}

TEST_CASE("assembly of one element equals the element tangent") {
  auto cfg = quiet_config();
  const auto mesh = make_box_mesh({1, 1, 1}, {1, 1, 1});
  MonodomainSolver solver(mesh, cfg);
  auto state = solver.initial_state();
  Eigen::VectorXd Phi(8);
  Phi << -80, -70, -60, -20, 0, 10, -45, -79;
  const auto A = solver.assemble(state, Phi, cfg.dt);
  std::array<Vec3, 8> coords;
  Vec8 p, pn;
  for (int a = 0; a < 8; ++a) {
    coords[a] = mesh.nodes[mesh.elements[0][a]];
    p[a] = Phi[mesh.elements[0][a]];
    pn[a] = state.Phi[mesh.elements[0][a]];
  }
  std::array<double, 8> rn{};
  const auto K = element_tangent(coords, p, pn, rn, cfg, cfg.dt);
  const Eigen::MatrixXd dense = A.tangent;
  for (int a = 0; a < 8; ++a)
    for (int b = 0; b < 8; ++b)
      REQUIRE(dense(mesh.elements[0][a], mesh.elements[0][b]) == doctest::Approx(K(a, b)).epsilon(1e-14));

  const auto rest = solver.assemble(state, state.Phi, cfg.dt);
  CHECK(rest.residual.cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("disjoint elements give a block-diagonal tangent") {
  HexMesh mesh;
  for (int e = 0; e < 2; ++e) {
    const auto c = cube_coords(1.0, Vec3(3.0 * e, 0, 0));
    std::array<int, 8> conn;
    for (int a = 0; a < 8; ++a) {
      conn[a] = static_cast<int>(mesh.nodes.size());
      mesh.nodes.push_back(c[a]);
    }
    mesh.elements.push_back(conn);
  }
  MonodomainSolver solver(mesh, quiet_config());
  auto s = solver.initial_state();
  Eigen::VectorXd Phi = s.Phi;
  Phi[3] = -30;
  Phi[12] = 0;
  const Eigen::MatrixXd K = solver.assemble(s, Phi, 0.5).tangent;
  CHECK(K.block(0, 8, 8, 8).cwiseAbs().maxCoeff() == 0.0);
  CHECK(K.block(8, 0, 8, 8).cwiseAbs().maxCoeff() == 0.0);
  CHECK(K.block(0, 0, 8, 8).cwiseAbs().minCoeff() > 0.0);
}

TEST_CASE("resting state does not move") {
  auto cfg = quiet_config();
  MonodomainSolver solver(make_box_mesh({4, 4, 4}, {2, 2, 2}), cfg);
  auto s = solver.initial_state();
  for (int n = 0; n < 5; ++n) s = solver.step(s);
  CHECK((s.Phi.array() + 80).abs().maxCoeff() < 1e-10);
}

TEST_CASE("uniform problems reproduce the cell integrator") {
  auto cfg = quiet_config();
  cfg.dt = 1.0;
  cfg.t_end = 60;
  cfg.initial = InitialCondition::uniform(-50);
  cfg.threads = 2;
  const auto mesh = make_box_mesh({10, 10, 10}, {4, 4, 4});
  const auto sol = run_simulation(mesh, cfg);
  const double dtau = normalize_time(cfg.dt, cfg.scalars);
  CellState cell{normalize_potential(-50, cfg.scalars), 0.0};
  double worst = 0;
  for (std::size_t k = 1; k < sol.times.size(); ++k) {
    cell = step_cell(cfg.params, cell, dtau, 0.0);
    const Eigen::ArrayXd phi = (sol.Phi[k].array() + cfg.scalars.delta_phi) / cfg.scalars.beta_phi;
    worst = std::max(worst, (phi - cell.phi).abs().maxCoeff());
    worst = std::max(worst, (sol.r[k].array() - cell.r).abs().maxCoeff());
  }
  MESSAGE("max deviation from the cell integrator " << worst);
  CHECK(worst < 1e-8);
}

TEST_CASE("zero-flux diffusion conserves the integral") {
  auto cfg = quiet_config();
  cfg.kinetics_enabled = false;
  cfg.dt = 0.5;
  cfg.t_end = 20;
  cfg.initial.excited = Box{{0, 0, 0}, {3, 10, 10}};
  cfg.initial.Phi_excited = 0;
  const auto mesh = make_box_mesh({10, 5, 5}, {10, 2, 2});
  MonodomainSolver solver(mesh, cfg);
  const auto sol = solver.run();
  const auto& M = solver.lumped_mass();
  for (std::size_t k = 1; k < sol.times.size(); ++k) {
    const double prev = M.dot(sol.Phi[k - 1]), cur = M.dot(sol.Phi[k]);
    REQUIRE(std::abs(cur - prev) <= 1e-8 * std::abs(prev));
  }
  CHECK(sol.Phi.back().maxCoeff() - sol.Phi.back().minCoeff() < sol.Phi.front().maxCoeff() - sol.Phi.front().minCoeff());
}

TEST_CASE("prescribed flux adds charge at the boundary rate") {
  auto cfg = quiet_config();
  cfg.kinetics_enabled = false;
  cfg.t_end = 2;
  cfg.fluxes = {{1, 0.25}};
  const auto mesh = make_box_mesh({4, 2, 3}, {4, 2, 3});
  MonodomainSolver solver(mesh, cfg);
  const auto sol = solver.run();
  const auto& M = solver.lumped_mass();
  const double gain = M.dot(sol.Phi.back()) - M.dot(sol.Phi.front());
  CHECK(gain == doctest::Approx(0.25 * 2 * 3 * cfg.t_end).epsilon(1e-9));
}

TEST_CASE("Dirichlet nodes keep their value") {
  auto cfg = quiet_config();
  cfg.t_end = 5;
  cfg.dirichlet = {{0, -10.0}};
  const auto sol = run_simulation(make_box_mesh({3, 3, 3}, {3, 3, 3}), cfg);
  for (const auto& p : sol.Phi) REQUIRE(p[0] == -10.0);
  CHECK(sol.Phi.back()[1] > -80.0);
}

TEST_CASE("CG path agrees with the direct solver") {
  auto cfg = quiet_config();
  cfg.t_end = 20;
  cfg.initial = InitialCondition::planar_front();
  const auto mesh = make_box_mesh({10, 2, 2}, {10, 1, 1});
  const auto direct = run_simulation(mesh, cfg);
  cfg.linear_solver = LinearSolverKind::conjugate_gradient;
  const auto cg = run_simulation(mesh, cfg);
  CHECK((direct.Phi.back() - cg.Phi.back()).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("run bookkeeping") {
  auto cfg = quiet_config();
  cfg.dt = 2;
  cfg.t_end = 10;
  cfg.snapshot_stride = 2;
  const auto sol = run_simulation(make_box_mesh({1, 1, 1}, {1, 1, 1}), cfg);
  REQUIRE(sol.times.size() == 3);
  CHECK(sol.times[0] == 0.0);
  CHECK(sol.times[1] == 4.0);
  CHECK(sol.times[2] == 8.0);
  CHECK(sol.Phi[0].size() == 8);
  cfg.dt = 0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
}

TEST_CASE("planar front crosses the bar") {
  auto cfg = quiet_config();
  cfg.dt = 1.0;
  cfg.t_end = 400;
  cfg.initial = InitialCondition::planar_front();
  const auto mesh = make_box_mesh({100, 10, 10}, {50, 1, 1});
  std::vector<double> times, far;
  MonodomainSolver solver(mesh, cfg);
  solver.run([&](double t, const Eigen::VectorXd& Phi, const Eigen::VectorXd&) {
    times.push_back(t);
    far.push_back(Phi[50]);  // x = 100 mm, y = z = 0
  }, false);
  const double arrival = crossing_time(times, far, -20);
  MESSAGE("front reaches x = 100 mm at t = " << arrival << " ms");
  CHECK(arrival > 0);
}

TEST_CASE("deterministic across runs and thread counts") {
  auto cfg = quiet_config();
  cfg.t_end = 30;
  cfg.initial = InitialCondition::planar_front();
  const auto mesh = make_box_mesh({10, 10, 4}, {6, 6, 2});
  cfg.threads = 3;
  const auto a = run_simulation(mesh, cfg);
  const auto b = run_simulation(mesh, cfg);
  cfg.threads = 1;
  const auto c = run_simulation(mesh, cfg);
  for (std::size_t k = 0; k < a.times.size(); ++k) {
    REQUIRE(a.Phi[k] == b.Phi[k]);
    REQUIRE(a.r[k] == b.r[k]);
    REQUIRE(a.Phi[k] == c.Phi[k]);
  }
}
