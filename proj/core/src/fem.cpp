#include "cardiopinn/fem.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <Eigen/Dense>
#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include "cardiopinn/error.hpp"
#include "cardiopinn/thread_pool.hpp"

namespace cardiopinn {

namespace {

constexpr std::size_t kElementBlock = 256;

// Node indices of each local face, in the element node order.
constexpr std::array<std::array<int, 4>, 6> kFaceNodes = {{
    {0, 3, 7, 4},  // -x
    {1, 2, 6, 5},  // +x
    {0, 1, 5, 4},  // -y
    {3, 2, 6, 7},  // +y
    {0, 1, 2, 3},  // -z
    {4, 5, 6, 7},  // +z
}};

std::array<Vec3, 8> element_coords(const HexMesh& mesh, std::size_t e) {
  std::array<Vec3, 8> x;
  for (int a = 0; a < 8; ++a) x[a] = mesh.nodes[mesh.elements[e][a]];
  return x;
}

}  // namespace

Eigen::Matrix3d build_conductivity(double d_iso, double d_ani, const Vec3& f0) {
  if (d_iso < 0.0 || d_ani < 0.0) throw InvalidArgument("conductivity must be non-negative");
  if (d_ani > 0.0 && std::abs(f0.norm() - 1.0) > 1e-10)
    throw InvalidArgument("conductivity: fiber direction must be a unit vector");
  Eigen::Matrix3d D = d_iso * Eigen::Matrix3d::Identity();
  if (d_ani > 0.0) D += d_ani * f0 * f0.transpose();
  return D;
}

Eigen::Matrix3d ConductivityTensor::matrix() const { return build_conductivity(d_iso, d_ani, f0); }

InitialCondition InitialCondition::planar_front() {
  constexpr double big = 1e300;
  InitialCondition ic;
  ic.excited = Box{{0.0, -big, -big}, {0.0, big, big}};
  return ic;
}

InitialCondition InitialCondition::uniform(double Phi_mV, double r) {
  InitialCondition ic;
  ic.Phi_rest = Phi_mV;
  ic.r0 = r;
  return ic;
}

void FemConfig::validate() const {
  if (!(dt > 0.0)) throw InvalidArgument("FemConfig: dt must be positive");
  if (!(t_end >= dt)) throw InvalidArgument("FemConfig: t_end must be >= dt");
  if (newton_max_iter < 1) throw InvalidArgument("FemConfig: newton_max_iter must be >= 1");
  if (!(newton_tol > 0.0)) throw InvalidArgument("FemConfig: newton_tol must be positive");
  if (snapshot_stride < 1) throw InvalidArgument("FemConfig: snapshot_stride must be >= 1");
  params.validate();
  scalars.validate();
  local.validate();
  stimulus.validate();
  if (stimulus.amplitude > 0.0 && stimulus.unit != TimeUnit::milliseconds)
    throw InvalidArgument("FemConfig: the stimulus time unit must be milliseconds");
  (void)conductivity.matrix();
  for (const auto& f : fluxes)
    if (f.side < 0 || f.side > 5) throw InvalidArgument("FemConfig: flux side must be in 0..5");
}

ElementGeometry element_geometry(const std::array<Vec3, 8>& coords) {
  static const GaussRule rule = gauss_hex(2);
  Eigen::Matrix<double, 8, 3> X;
  for (int a = 0; a < 8; ++a) X.row(a) = coords[a].transpose();
  ElementGeometry g;
  for (int q = 0; q < 8; ++q) {
    const ShapeValues sv = shape_functions(rule.points[q]);
    const Eigen::Matrix3d J = X.transpose() * sv.dN_dxi;
    const double det = J.determinant();
    if (!(det > 0.0)) throw NumericalError("element_geometry: singular or inverted element");
    g.N[q] = sv.N;
    g.dN_dx[q] = sv.dN_dxi * J.inverse();
    g.weight[q] = rule.weights[q] * det;
    g.x[q] = X.transpose() * sv.N;
  }
  return g;
}

ElementEvaluation evaluate_element(const ElementGeometry& geom,
                                   const Eigen::Matrix<double, 8, 1>& Phi,
                                   const Eigen::Matrix<double, 8, 1>& Phi_n,
                                   const std::array<double, 8>& r_n, const FemConfig& cfg,
                                   double t, bool with_tangent) {
  const Eigen::Matrix3d D = cfg.conductivity.matrix();
  const double dtau = normalize_time(cfg.dt, cfg.scalars);
  const double stim_time = cfg.stimulus.value(t);

  ElementEvaluation out;
  out.max_source_slope = -std::numeric_limits<double>::infinity();
  for (int q = 0; q < 8; ++q) {
    const auto& N = geom.N[q];
    const auto& B = geom.dN_dx[q];
    const double w = geom.weight[q];
    const double Phi_q = N.dot(Phi);
    const double Phi_n_q = N.dot(Phi_n);
    const Vec3 flux = D * (B.transpose() * Phi);

    double F = 0.0;
    double dF = 0.0;
    if (cfg.kinetics_enabled) {
      const std::array<double, 3> xq{geom.x[q][0], geom.x[q][1], geom.x[q][2]};
      const double I = cfg.stimulus.active_at(xq) ? stim_time : 0.0;
      const double phi = normalize_potential(Phi_q, cfg.scalars);
      const RecoveryUpdate rec = local_newton_r(phi, r_n[q], dtau, cfg.params, I, cfg.local);
      out.r[q] = rec.r;
      F = cfg.scalars.beta_phi / cfg.scalars.beta_t * rec.f_phi;
      // dF/dPhi = (beta_phi / beta_t) (df/dphi) (1 / beta_phi)
      dF = rec.df_phi_dphi_total(phi) / cfg.scalars.beta_t;
    } else {
      out.r[q] = r_n[q];
    }
    out.max_source_slope = std::max(out.max_source_slope, dF);

    out.residual += w * (N * ((Phi_q - Phi_n_q) / cfg.dt - F) + B * flux);
    if (with_tangent) {
      out.tangent.noalias() += w * ((1.0 / cfg.dt - dF) * (N * N.transpose()) + B * D * B.transpose());
    }
  }
  return out;
}

Eigen::Matrix<double, 8, 1> element_residual(const std::array<Vec3, 8>& coords,
                                             const Eigen::Matrix<double, 8, 1>& Phi,
                                             const Eigen::Matrix<double, 8, 1>& Phi_n,
                                             const std::array<double, 8>& r_n,
                                             const FemConfig& cfg, double t) {
  return evaluate_element(element_geometry(coords), Phi, Phi_n, r_n, cfg, t, false).residual;
}

Eigen::Matrix<double, 8, 8> element_tangent(const std::array<Vec3, 8>& coords,
                                            const Eigen::Matrix<double, 8, 1>& Phi,
                                            const Eigen::Matrix<double, 8, 1>& Phi_n,
                                            const std::array<double, 8>& r_n,
                                            const FemConfig& cfg, double t) {
  return evaluate_element(element_geometry(coords), Phi, Phi_n, r_n, cfg, t, true).tangent;
}

struct MonodomainSolver::Impl {
  Eigen::SparseMatrix<double> pattern;
  std::vector<std::array<int, 64>> slots;  // element entry -> index into value array
  Eigen::VectorXd flux_load;               // boundary integral of N_i q
  std::vector<char> is_dirichlet;
  std::unique_ptr<ThreadPool> pool;
  mutable Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
  mutable bool ldlt_analyzed = false;
};

MonodomainSolver::MonodomainSolver(HexMesh mesh, FemConfig cfg)
    : mesh_(std::move(mesh)), cfg_(std::move(cfg)), impl_(std::make_unique<Impl>()) {
  cfg_.validate();
  mesh_.validate();
  const std::size_t n_el = mesh_.num_elements();
  const Eigen::Index n = static_cast<Eigen::Index>(mesh_.num_nodes());

  geometry_.reserve(n_el);
  for (std::size_t e = 0; e < n_el; ++e) geometry_.push_back(element_geometry(element_coords(mesh_, e)));

  lumped_mass_ = Eigen::VectorXd::Zero(n);
  for (std::size_t e = 0; e < n_el; ++e)
    for (int q = 0; q < 8; ++q)
      for (int a = 0; a < 8; ++a) lumped_mass_[mesh_.elements[e][a]] += geometry_[e].weight[q] * geometry_[e].N[q][a];

  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(n_el * 64);
  for (const auto& el : mesh_.elements)
    for (int a = 0; a < 8; ++a)
      for (int b = 0; b < 8; ++b) trip.emplace_back(el[a], el[b], 0.0);
  impl_->pattern.resize(n, n);
  impl_->pattern.setFromTriplets(trip.begin(), trip.end());
  impl_->pattern.makeCompressed();
  impl_->slots.resize(n_el);
  for (std::size_t e = 0; e < n_el; ++e) {
    const auto& el = mesh_.elements[e];
    for (int b = 0; b < 8; ++b) {
      const int col = el[b];
      const int start = impl_->pattern.outerIndexPtr()[col];
      const int end = impl_->pattern.outerIndexPtr()[col + 1];
      const int* rows = impl_->pattern.innerIndexPtr();
      for (int a = 0; a < 8; ++a) {
        const int* hit = std::lower_bound(rows + start, rows + end, el[a]);
        impl_->slots[e][a * 8 + b] = static_cast<int>(hit - rows);
      }
    }
  }

  // Boundary load: int_face N_i q dA with 2x2 Gauss on each face.
  impl_->flux_load = Eigen::VectorXd::Zero(n);
  if (!cfg_.fluxes.empty()) {
    const double g = 1.0 / std::sqrt(3.0);
    for (const BoundaryFace& f : mesh_.boundary) {
      double q_value = 0.0;
      bool any = false;
      for (const auto& fc : cfg_.fluxes)
        if (fc.side == f.local_face) {
          q_value += fc.value;
          any = true;
        }
      if (!any) continue;
      const auto coords = element_coords(mesh_, f.element);
      const int axis = f.local_face / 2;
      const double fixed = (f.local_face % 2 == 0) ? -1.0 : 1.0;
      const int u = (axis + 1) % 3;
      const int v = (axis + 2) % 3;
      for (double su : {-g, g})
        for (double sv : {-g, g}) {
          Vec3 xi;
          xi[axis] = fixed;
          xi[u] = su;
          xi[v] = sv;
          const ShapeValues s = shape_functions(xi);
          Vec3 tu = Vec3::Zero();
          Vec3 tv = Vec3::Zero();
          for (int a = 0; a < 8; ++a) {
            tu += coords[a] * s.dN_dxi(a, u);
            tv += coords[a] * s.dN_dxi(a, v);
          }
          const double dA = tu.cross(tv).norm();
          for (int a : kFaceNodes[f.local_face])
            impl_->flux_load[mesh_.elements[f.element][a]] += s.N[a] * q_value * dA;
        }
    }
  }

  impl_->is_dirichlet.assign(static_cast<std::size_t>(n), 0);
  for (const auto& d : cfg_.dirichlet) {
    if (d.node < 0 || d.node >= n) throw InvalidArgument("Dirichlet node out of range");
    impl_->is_dirichlet[d.node] = 1;
  }
  impl_->pool = std::make_unique<ThreadPool>(std::max(1, cfg_.threads));
}

MonodomainSolver::~MonodomainSolver() = default;
MonodomainSolver::MonodomainSolver(MonodomainSolver&&) noexcept = default;
MonodomainSolver& MonodomainSolver::operator=(MonodomainSolver&&) noexcept = default;

FemState MonodomainSolver::initial_state() const {
  FemState s;
  s.t = 0.0;
  s.Phi.resize(static_cast<Eigen::Index>(mesh_.num_nodes()));
  for (std::size_t i = 0; i < mesh_.num_nodes(); ++i) {
    const Vec3& x = mesh_.nodes[i];
    const bool excited = cfg_.initial.excited && cfg_.initial.excited->contains({x[0], x[1], x[2]});
    s.Phi[static_cast<Eigen::Index>(i)] = excited ? cfg_.initial.Phi_excited : cfg_.initial.Phi_rest;
  }
  for (const auto& d : cfg_.dirichlet) s.Phi[d.node] = d.Phi;
  s.r_qp.assign(mesh_.num_elements() * 8, cfg_.initial.r0);
  return s;
}

Assembly MonodomainSolver::assemble(const FemState& previous, const Eigen::VectorXd& Phi,
                                    double t) const {
  const std::size_t n_el = mesh_.num_elements();
  if (Phi.size() != static_cast<Eigen::Index>(mesh_.num_nodes()) ||
      previous.Phi.size() != Phi.size() || previous.r_qp.size() != n_el * 8)
    throw InvalidArgument("assemble: state size does not match the mesh");

  std::vector<ElementEvaluation> evals(n_el);
  const std::size_t blocks = (n_el + kElementBlock - 1) / kElementBlock;
  impl_->pool->parallel_for(blocks, [&](std::size_t blk) {
    const std::size_t end = std::min(n_el, (blk + 1) * kElementBlock);
    for (std::size_t e = blk * kElementBlock; e < end; ++e) {
      const auto& el = mesh_.elements[e];
      Eigen::Matrix<double, 8, 1> pe, pne;
      std::array<double, 8> rn;
      for (int a = 0; a < 8; ++a) {
        pe[a] = Phi[el[a]];
        pne[a] = previous.Phi[el[a]];
        rn[a] = previous.r_qp[e * 8 + a];
      }
      evals[e] = evaluate_element(geometry_[e], pe, pne, rn, cfg_, t, true);
    }
  });

  Assembly out;
  out.residual = -impl_->flux_load;
  out.tangent = impl_->pattern;
  out.r_qp.resize(n_el * 8);
  out.max_source_slope = -std::numeric_limits<double>::infinity();
  double* values = out.tangent.valuePtr();
  for (std::size_t e = 0; e < n_el; ++e) {
    const auto& el = mesh_.elements[e];
    const auto& ev = evals[e];
    const auto& slot = impl_->slots[e];
    for (int a = 0; a < 8; ++a) {
      out.residual[el[a]] += ev.residual[a];
      out.r_qp[e * 8 + a] = ev.r[a];
      for (int b = 0; b < 8; ++b) values[slot[a * 8 + b]] += ev.tangent(a, b);
    }
    out.max_source_slope = std::max(out.max_source_slope, ev.max_source_slope);
  }

  if (!cfg_.dirichlet.empty()) {
    const auto& mask = impl_->is_dirichlet;
    for (Eigen::Index col = 0; col < out.tangent.outerSize(); ++col)
      for (Eigen::SparseMatrix<double>::InnerIterator it(out.tangent, col); it; ++it)
        if (mask[it.row()] || mask[col]) it.valueRef() = (it.row() == col) ? 1.0 : 0.0;
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask[i]) out.residual[static_cast<Eigen::Index>(i)] = 0.0;
  }
  return out;
}

Eigen::VectorXd MonodomainSolver::project_recovery(const std::vector<double>& r_qp) const {
  Eigen::VectorXd num = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(mesh_.num_nodes()));
  for (std::size_t e = 0; e < mesh_.num_elements(); ++e)
    for (int q = 0; q < 8; ++q)
      for (int a = 0; a < 8; ++a)
        num[mesh_.elements[e][a]] += geometry_[e].weight[q] * geometry_[e].N[q][a] * r_qp[e * 8 + q];
  return num.cwiseQuotient(lumped_mass_);
}

FemState MonodomainSolver::step(const FemState& previous, StepInfo* info) const {
  const double t = previous.t + cfg_.dt;
  Eigen::VectorXd Phi = previous.Phi;
  StepInfo local_info;
  for (int it = 0;; ++it) {
    Assembly A = assemble(previous, Phi, t);
    if (!A.residual.allFinite()) {
      std::ostringstream msg;
      msg << "step: non-finite residual at t = " << t << " ms";
      throw NumericalError(msg.str());
    }
    const double norm = (A.residual.cwiseAbs().cwiseQuotient(lumped_mass_)).maxCoeff() * cfg_.dt;
    local_info.newton_iterations = it;
    local_info.residual_norm = norm;
    if (norm < cfg_.newton_tol) {
      if (info) *info = local_info;
      return FemState{t, std::move(Phi), std::move(A.r_qp)};
    }
    if (it >= cfg_.newton_max_iter) {
      std::ostringstream msg;
      msg << "step: global Newton did not converge at t = " << t << " ms (residual " << norm
          << " mV after " << it << " iterations)";
      throw NumericalError(msg.str());
    }

    Eigen::VectorXd delta;
    bool solved = false;
    const bool spd = A.max_source_slope < 1.0 / cfg_.dt;
    if (cfg_.linear_solver == LinearSolverKind::conjugate_gradient && spd) {
      Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper,
                               Eigen::DiagonalPreconditioner<double>>
          cg;
      cg.setTolerance(1e-13);
      cg.setMaxIterations(std::max<Eigen::Index>(200, 4 * Phi.size()));
      cg.compute(A.tangent);
      delta = cg.solve(-A.residual);
      solved = cg.info() == Eigen::Success && delta.allFinite();
      local_info.used_direct_solver = !solved;
    }
    if (!solved) {
      auto& ldlt = impl_->ldlt;
      if (!impl_->ldlt_analyzed) {
        ldlt.analyzePattern(A.tangent);
        impl_->ldlt_analyzed = true;
      }
      ldlt.factorize(A.tangent);
      if (ldlt.info() == Eigen::Success) {
        delta = ldlt.solve(-A.residual);
        solved = ldlt.info() == Eigen::Success && delta.allFinite();
      }
      if (!solved) {
        Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
        lu.compute(A.tangent);
        if (lu.info() != Eigen::Success) {
          std::ostringstream msg;
          msg << "step: linear solver breakdown at t = " << t << " ms";
          throw NumericalError(msg.str());
        }
        delta = lu.solve(-A.residual);
      }
    }
    Phi += delta;
  }
}

FemSolution MonodomainSolver::run(const SnapshotObserver& observer, bool keep_snapshots) const {
  FemSolution sol;
  FemState state = initial_state();
  const auto emit = [&](const FemState& s) {
    Eigen::VectorXd r = project_recovery(s.r_qp);
    if (observer) observer(s.t, s.Phi, r);
    if (keep_snapshots) {
      sol.times.push_back(s.t);
      sol.Phi.push_back(s.Phi);
      sol.r.push_back(std::move(r));
    }
  };
  emit(state);
  const int n_steps = static_cast<int>(std::llround(cfg_.t_end / cfg_.dt));
  for (int n = 1; n <= n_steps; ++n) {
    state = step(state);
    state.t = n * cfg_.dt;  // no drift from repeated addition
    if (n % cfg_.snapshot_stride == 0) emit(state);
  }
  return sol;
}

FemSolution run_simulation(const HexMesh& mesh, const FemConfig& cfg) {
  return MonodomainSolver(mesh, cfg).run();
}

}  // namespace cardiopinn
