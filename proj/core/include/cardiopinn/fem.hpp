#pragma once

// Galerkin FE solver for the monodomain equation with Aliev-Panfilov kinetics:
// trilinear hexahedra, backward Euler in time, global Newton on Phi and a local
// Newton for the recovery variable stored at quadrature points.

#include <array>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "cardiopinn/kinetics.hpp"
#include "cardiopinn/mesh.hpp"

namespace cardiopinn {

struct ConductivityTensor {
  double d_iso = 1.2;  // mm^2/ms
  double d_ani = 0.0;  // mm^2/ms
  Vec3 f0 = Vec3::UnitX();

  Eigen::Matrix3d matrix() const;
};

// D = d_iso I + d_ani f0 (x) f0. Throws if d_ani > 0 and |f0| != 1.
Eigen::Matrix3d build_conductivity(double d_iso, double d_ani, const Vec3& f0);

// Resting field with an optionally excited box of nodes (initial front).
struct InitialCondition {
  double Phi_rest = -80.0;  // mV
  double r0 = 0.0;
  std::optional<Box> excited;
  double Phi_excited = -40.0;  // mV

  // -40 mV on the x = 0 face, -80 mV elsewhere.
  static InitialCondition planar_front();
  static InitialCondition uniform(double Phi_mV, double r = 0.0);
};

// Prescribed normal flux q.n on one side of the box (0:-x ... 5:+z), mV mm/ms.
struct FluxCondition {
  int side = 0;
  double value = 0.0;
};

struct DirichletCondition {
  int node = 0;
  double Phi = 0.0;  // mV
};

enum class LinearSolverKind { direct, conjugate_gradient };

struct FemConfig {
  double dt = 2.0;       // ms
  double t_end = 2000.0;  // ms
  InitialCondition initial;
  StimulusProtocol stimulus;  // unit must be milliseconds when amplitude > 0
  ConductivityTensor conductivity;
  APParameters params = APParameters::cube_example();
  NormalizationScalars scalars = NormalizationScalars::aliev_panfilov();
  LocalNewtonConfig local;
  double newton_tol = 1e-8;  // mV, residual scaled by lumped mass / dt
  int newton_max_iter = 20;
  LinearSolverKind linear_solver = LinearSolverKind::direct;
  std::vector<FluxCondition> fluxes;
  std::vector<DirichletCondition> dirichlet;
  int snapshot_stride = 1;
  int threads = 1;
  // Test hook: F^Phi = 0 and r frozen.
  bool kinetics_enabled = true;

  void validate() const;
};

// Geometry of one element at the 2x2x2 Gauss points.
struct ElementGeometry {
  std::array<Eigen::Matrix<double, 8, 1>, 8> N;
  std::array<Eigen::Matrix<double, 8, 3>, 8> dN_dx;
  std::array<double, 8> weight{};  // Gauss weight * det J, mm^3
  std::array<Vec3, 8> x;           // physical quadrature point coordinates
};

ElementGeometry element_geometry(const std::array<Vec3, 8>& coords);

struct ElementEvaluation {
  Eigen::Matrix<double, 8, 1> residual = Eigen::Matrix<double, 8, 1>::Zero();
  Eigen::Matrix<double, 8, 8> tangent = Eigen::Matrix<double, 8, 8>::Zero();
  std::array<double, 8> r{};  // updated quadrature-point recovery values
  double max_source_slope = 0.0;  // max dF/dPhi over quadrature points, 1/ms
};

// Residual and consistent tangent of one element. `t` is the end-of-step time (ms).
ElementEvaluation evaluate_element(const ElementGeometry& geom,
                                   const Eigen::Matrix<double, 8, 1>& Phi,
                                   const Eigen::Matrix<double, 8, 1>& Phi_n,
                                   const std::array<double, 8>& r_n, const FemConfig& cfg,
                                   double t, bool with_tangent = true);

Eigen::Matrix<double, 8, 1> element_residual(const std::array<Vec3, 8>& coords,
                                             const Eigen::Matrix<double, 8, 1>& Phi,
                                             const Eigen::Matrix<double, 8, 1>& Phi_n,
                                             const std::array<double, 8>& r_n,
                                             const FemConfig& cfg, double t);

Eigen::Matrix<double, 8, 8> element_tangent(const std::array<Vec3, 8>& coords,
                                            const Eigen::Matrix<double, 8, 1>& Phi,
                                            const Eigen::Matrix<double, 8, 1>& Phi_n,
                                            const std::array<double, 8>& r_n,
                                            const FemConfig& cfg, double t);

struct FemState {
  double t = 0.0;                 // ms
  Eigen::VectorXd Phi;            // nodal, mV
  std::vector<double> r_qp;       // 8 per element
};

struct Assembly {
  Eigen::VectorXd residual;
  Eigen::SparseMatrix<double> tangent;
  std::vector<double> r_qp;
  double max_source_slope = 0.0;
};

struct FemSolution {
  std::vector<double> times;           // ms
  std::vector<Eigen::VectorXd> Phi;    // mV, per snapshot
  std::vector<Eigen::VectorXd> r;      // nodal projection, per snapshot
};

struct StepInfo {
  int newton_iterations = 0;
  double residual_norm = 0.0;  // mV
  bool used_direct_solver = true;
};

class MonodomainSolver {
 public:
  MonodomainSolver(HexMesh mesh, FemConfig cfg);
  ~MonodomainSolver();
  MonodomainSolver(MonodomainSolver&&) noexcept;
  MonodomainSolver& operator=(MonodomainSolver&&) noexcept;

  const HexMesh& mesh() const { return mesh_; }
  const FemConfig& config() const { return cfg_; }

  FemState initial_state() const;

  // Global residual/tangent at candidate Phi for the step from `previous` to t.
  Assembly assemble(const FemState& previous, const Eigen::VectorXd& Phi, double t) const;

  // One backward-Euler step with global Newton. Quadrature-point r is committed
  // only on convergence.
  FemState step(const FemState& previous, StepInfo* info = nullptr) const;

  // Volume-weighted projection of quadrature-point r onto nodes.
  Eigen::VectorXd project_recovery(const std::vector<double>& r_qp) const;

  // Lumped nodal volumes (row sums of the consistent mass matrix), mm^3.
  const Eigen::VectorXd& lumped_mass() const { return lumped_mass_; }

  // Observer receives every stored snapshot as it is produced.
  using SnapshotObserver = std::function<void(double t, const Eigen::VectorXd& Phi,
                                              const Eigen::VectorXd& r)>;

  FemSolution run(const SnapshotObserver& observer = {}, bool keep_snapshots = true) const;

 private:
  struct Impl;

  HexMesh mesh_;
  FemConfig cfg_;
  std::vector<ElementGeometry> geometry_;
  Eigen::VectorXd lumped_mass_;
  std::unique_ptr<Impl> impl_;
};

FemSolution run_simulation(const HexMesh& mesh, const FemConfig& cfg);

}  // namespace cardiopinn
