#include "cardiopinn/pinn.hpp"

#include <cmath>
#include <sstream>

#include "cardiopinn/error.hpp"

namespace cardiopinn {

namespace {

constexpr std::array<InputRole, 3> kSpatial{InputRole::x, InputRole::y, InputRole::z};

// Kinetics written once for doubles and tape variables.
template <class T>
T ap_f_phi(const T& phi, const T& r, const T& c, const T& I, const APParameters& p) {
  return c * phi * (phi - p.alpha) * (1.0 - phi) - r * phi + I;
}

template <class T>
T ap_f_r(const T& phi, const T& r, const T& c, const APParameters& p) {
  return (p.gamma + p.mu1 * r / (phi + p.mu2)) * (-r - c * phi * (phi - (p.b + 1.0)));
}

void require_family(const ProblemSpec& spec, ResidualFamily family) {
  if (spec.family != family) throw InvalidArgument("residual: input roles do not match the residual family");
}

std::array<double, 3> spatial_position(const ProblemSpec& spec, const Eigen::VectorXd& x_bar) {
  std::array<double, 3> pos{0.0, 0.0, 0.0};
  for (int d = 0; d < 3; ++d) {
    const int i = spec.scaler.index_of(kSpatial[d]);
    if (i >= 0) pos[d] = spec.scaler.unscale(i, x_bar[i]);
  }
  return pos;
}

}  // namespace

std::string to_string(InputRole role) {
  switch (role) {
    case InputRole::x: return "x";
    case InputRole::y: return "y";
    case InputRole::z: return "z";
    case InputRole::t: return "t";
    case InputRole::c: return "c";
    case InputRole::t_stim: return "t_stim";
  }
  return "?";
}

InputRole input_role_from_string(const std::string& name) {
  for (InputRole r : {InputRole::x, InputRole::y, InputRole::z, InputRole::t, InputRole::c,
                      InputRole::t_stim})
    if (to_string(r) == name) return r;
  throw InvalidArgument("unknown input role '" + name + "'");
}

void InputScaler::validate() const {
  if (roles.empty()) throw InvalidArgument("InputScaler: no inputs");
  if (lo.size() != roles.size() || hi.size() != roles.size())
    throw InvalidArgument("InputScaler: bounds do not match the number of inputs");
  if (!(b > a)) throw InvalidArgument("InputScaler: need b* > a*");
  for (std::size_t i = 0; i < roles.size(); ++i) {
    if (!(hi[i] > lo[i]))
      throw InvalidArgument("InputScaler: need q* > p* for input '" + to_string(roles[i]) + "'");
    for (std::size_t j = 0; j < i; ++j)
      if (roles[i] == roles[j]) throw InvalidArgument("InputScaler: duplicate role '" + to_string(roles[i]) + "'");
  }
}

int InputScaler::index_of(InputRole role) const {
  for (std::size_t i = 0; i < roles.size(); ++i)
    if (roles[i] == role) return static_cast<int>(i);
  return -1;
}

Eigen::VectorXd InputScaler::scale_point(const Eigen::VectorXd& x) const {
  if (x.size() != size()) throw InvalidArgument("scale_point: dimension mismatch");
  Eigen::VectorXd out(x.size());
  for (int i = 0; i < size(); ++i) {
    const double tol = 1e-9 * std::max(1.0, range(i));
    if (!(x[i] >= lo[i] - tol && x[i] <= hi[i] + tol)) {
      std::ostringstream msg;
      msg << "scale_point: " << to_string(roles[i]) << " = " << x[i] << " outside [" << lo[i]
          << ", " << hi[i] << "]";
      throw InvalidArgument(msg.str());
    }
    out[i] = scale(i, x[i]);
  }
  return out;
}

Eigen::VectorXd InputScaler::unscale_point(const Eigen::VectorXd& x_bar) const {
  if (x_bar.size() != size()) throw InvalidArgument("unscale_point: dimension mismatch");
  Eigen::VectorXd out(x_bar.size());
  for (int i = 0; i < size(); ++i) out[i] = unscale(i, x_bar[i]);
  return out;
}

Eigen::MatrixXd InputScaler::scale_points(const Eigen::MatrixXd& X) const {
  Eigen::MatrixXd out(X.rows(), X.cols());
  for (Eigen::Index j = 0; j < X.cols(); ++j) out.col(j) = scale_point(X.col(j));
  return out;
}

Eigen::MatrixXd InputScaler::unscale_points(const Eigen::MatrixXd& X_bar) const {
  Eigen::MatrixXd out(X_bar.rows(), X_bar.cols());
  for (Eigen::Index j = 0; j < X_bar.cols(); ++j) out.col(j) = unscale_point(X_bar.col(j));
  return out;
}

bool InputScaler::operator==(const InputScaler& other) const {
  return roles == other.roles && lo == other.lo && hi == other.hi && a == other.a && b == other.b;
}

void ProblemSpec::validate() const {
  params.validate();
  scalars.validate();
  scaler.validate();
  if (!(output.r_scale > 0.0)) throw InvalidArgument("OutputScaling: scale must be positive");
  if (!scaler.has(InputRole::t)) throw InvalidArgument("ProblemSpec: time must be an input");
  bool spatial = false;
  for (InputRole r : kSpatial) spatial = spatial || scaler.has(r);
  if (family == ResidualFamily::cellular) {
    if (spatial) throw InvalidArgument("ProblemSpec: the cellular family takes no spatial inputs");
    if (stimulus.amplitude > 0.0 && stimulus.unit != TimeUnit::normalized)
      throw InvalidArgument("ProblemSpec: cellular stimulus time must be normalized");
  } else {
    if (!spatial) throw InvalidArgument("ProblemSpec: the 3-D family needs spatial inputs");
    if (stimulus.amplitude > 0.0 && stimulus.unit != TimeUnit::milliseconds)
      throw InvalidArgument("ProblemSpec: 3-D stimulus time must be in ms");
    build_conductivity(conductivity.d_iso, conductivity.d_ani, conductivity.f0);
  }
  if (stimulus.amplitude > 0.0) stimulus.validate();
}

StimulusShape ProblemSpec::residual_shape() const {
  if (residual_stimulus) return *residual_stimulus;
  return scaler.has(InputRole::t_stim) ? StimulusShape::exponential : stimulus.shape;
}

CellularCoefficients cellular_coefficients(const ProblemSpec& spec) {
  const InputScaler& s = spec.scaler;
  const int it = s.index_of(InputRole::t);
  if (it < 0) throw InvalidArgument("cellular_coefficients: time is not an input");
  CellularCoefficients k;
  // d/dtau = (b* - a*) / (q_t - p_t) d/dt_bar
  k.dphi_dtbar = (s.b - s.a) / s.range(it);
  k.r_from_rhat = 1.0 / spec.output.r_scale;
  k.dr_dtbar = k.dphi_dtbar * k.r_from_rhat;
  return k;
}

ThreeDCoefficients three_d_coefficients(const ProblemSpec& spec) {
  const InputScaler& s = spec.scaler;
  const int it = s.index_of(InputRole::t);
  if (it < 0) throw InvalidArgument("three_d_coefficients: time is not an input");
  const double ab = s.b - s.a;
  const double T = s.range(it);
  ThreeDCoefficients k;
  k.diffusion = ab * T;
  k.source = T / (ab * spec.scalars.beta_t);
  k.recovery = spec.output.r_scale * k.source;
  const Eigen::Matrix3d D = spec.conductivity.matrix();
  for (int d = 0; d < 3; ++d) k.spatial_index[d] = s.index_of(kSpatial[d]);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (k.spatial_index[i] >= 0 && k.spatial_index[j] >= 0)
        k.conductivity_bar(i, j) = D(i, j) / (s.range(k.spatial_index[i]) * s.range(k.spatial_index[j]));
  return k;
}

double stimulus_at(const ProblemSpec& spec, const Eigen::VectorXd& x_bar) {
  const StimulusProtocol& p = spec.stimulus;
  if (p.amplitude == 0.0) return 0.0;
  const InputScaler& s = spec.scaler;
  const double t = s.unscale(s.index_of(InputRole::t), x_bar[s.index_of(InputRole::t)]);
  const int is = s.index_of(InputRole::t_stim);
  const double t_stim = is >= 0 ? s.unscale(is, x_bar[is]) : p.t_stim;
  if (spec.family == ResidualFamily::three_d && !p.active_at(spatial_position(spec, x_bar))) return 0.0;
  return p.value(t, t_stim, spec.residual_shape());
}

double excitability_at(const ProblemSpec& spec, const Eigen::VectorXd& x_bar) {
  const int ic = spec.scaler.index_of(InputRole::c);
  return ic >= 0 ? spec.scaler.unscale(ic, x_bar[ic]) : spec.params.c;
}

ResidualPair residual_cellular(const PointDerivatives& d, const Eigen::VectorXd& x_bar,
                               const ProblemSpec& spec) {
  require_family(spec, ResidualFamily::cellular);
  const CellularCoefficients k = cellular_coefficients(spec);
  const double c = excitability_at(spec, x_bar);
  const double I = stimulus_at(spec, x_bar);
  const double r = k.r_from_rhat * d.r_hat;
  ResidualPair out;
  out.R1 = k.dphi_dtbar * d.dphi_dt - ap_f_phi(d.phi_hat, r, c, I, spec.params);
  out.R2 = k.dr_dtbar * d.dr_dt - ap_f_r(d.phi_hat, r, c, spec.params);
  return out;
}

ResidualPair residual_3d(const PointDerivatives& d, const Eigen::VectorXd& x_bar,
                         const ProblemSpec& spec) {
  require_family(spec, ResidualFamily::three_d);
  const ThreeDCoefficients k = three_d_coefficients(spec);
  const double c = excitability_at(spec, x_bar);
  const double I = stimulus_at(spec, x_bar);
  const double r = d.r_hat / spec.output.r_scale;
  const double C_bar = k.conductivity_bar.cwiseProduct(d.phi_xx).sum();
  ResidualPair out;
  out.R1 = d.dphi_dt - k.diffusion * C_bar - k.source * ap_f_phi(d.phi_hat, r, c, I, spec.params);
  out.R2 = d.dr_dt - k.recovery * ap_f_r(d.phi_hat, r, c, spec.params);
  return out;
}

ResidualPair residual(const PointDerivatives& d, const Eigen::VectorXd& x_bar, const ProblemSpec& spec) {
  return spec.family == ResidualFamily::cellular ? residual_cellular(d, x_bar, spec)
                                                 : residual_3d(d, x_bar, spec);
}

DerivativeRequest residual_request(const ProblemSpec& spec) {
  DerivativeRequest req;
  req.first.push_back(spec.scaler.index_of(InputRole::t));
  if (spec.family == ResidualFamily::three_d) {
    const ThreeDCoefficients k = three_d_coefficients(spec);
    for (int i = 0; i < 3; ++i)
      for (int j = i; j < 3; ++j)
        if (k.conductivity_bar(i, j) != 0.0 || k.conductivity_bar(j, i) != 0.0)
          req.second.push_back({k.spatial_index[i], k.spatial_index[j]});
  }
  return req;
}

ResidualNodes residual_batch(Tape& tape, const NetworkEval& ev, const Eigen::MatrixXd& X_bar,
                             const ProblemSpec& spec) {
  const Eigen::Index n = X_bar.cols();
  if (tape.value(ev.output).rows() != 2 || tape.value(ev.output).cols() != n)
    throw InvalidArgument("residual_batch: network must have outputs (phi_hat, r_hat) per point");
  const int it = spec.scaler.index_of(InputRole::t);

  Eigen::MatrixXd c_row(1, n), I_row(1, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const Eigen::VectorXd x = X_bar.col(j);
    c_row(0, j) = excitability_at(spec, x);
    I_row(0, j) = stimulus_at(spec, x);
  }
  const Var c(tape, tape.constant(std::move(c_row)));
  const Var I(tape, tape.constant(std::move(I_row)));
  const Var phi(tape, tape.row(ev.output, 0));
  const Var r_hat(tape, tape.row(ev.output, 1));
  const NodeId d_t = ev.d1(it);
  const Var dphi(tape, tape.row(d_t, 0));
  const Var dr(tape, tape.row(d_t, 1));
  const Var r = r_hat * (1.0 / spec.output.r_scale);

  if (spec.family == ResidualFamily::cellular) {
    const CellularCoefficients k = cellular_coefficients(spec);
    const Var R1 = k.dphi_dtbar * dphi - ap_f_phi(phi, r, c, I, spec.params);
    const Var R2 = k.dr_dtbar * dr - ap_f_r(phi, r, c, spec.params);
    return {R1.id(), R2.id()};
  }

  const ThreeDCoefficients k = three_d_coefficients(spec);
  std::optional<Var> C_bar;
  for (int i = 0; i < 3; ++i)
    for (int j = i; j < 3; ++j) {
      const double w = i == j ? k.conductivity_bar(i, i) : k.conductivity_bar(i, j) + k.conductivity_bar(j, i);
      if (w == 0.0) continue;
      const Var term = Var(tape, tape.row(ev.d2(k.spatial_index[i], k.spatial_index[j]), 0)) * w;
      C_bar = C_bar ? *C_bar + term : term;
    }
  Var R1 = dphi - k.source * ap_f_phi(phi, r, c, I, spec.params);
  if (C_bar) R1 = R1 - k.diffusion * *C_bar;
  const Var R2 = dr - k.recovery * ap_f_r(phi, r, c, spec.params);
  return {R1.id(), R2.id()};
}

std::string to_string(PointRole role) {
  switch (role) {
    case PointRole::collocation: return "collocation";
    case PointRole::ground_truth: return "gt";
    case PointRole::bc1: return "bc1";
    case PointRole::bc2: return "bc2";
    case PointRole::neumann: return "neumann";
  }
  return "?";
}

PointRole point_role_from_string(const std::string& name) {
  for (PointRole r : {PointRole::collocation, PointRole::ground_truth, PointRole::bc1, PointRole::bc2,
                      PointRole::neumann})
    if (to_string(r) == name) return r;
  throw InvalidArgument("unknown point role '" + name + "'");
}

double bc_residual(PointRole role, const Eigen::VectorXd& x_bar, double phi_hat,
                   const Eigen::VectorXd& dphi_dxbar, double phi_target, const ProblemSpec& spec) {
  switch (role) {
    case PointRole::ground_truth:
      if (!std::isfinite(phi_target)) throw InvalidArgument("bc_residual: ground-truth point without target");
      return phi_hat - phi_target;
    case PointRole::bc1:
      return phi_hat - 1.0;
    case PointRole::bc2:
      return phi_hat;
    case PointRole::neumann: {
      const InputScaler& s = spec.scaler;
      for (InputRole axis : kSpatial) {
        const int i = s.index_of(axis);
        if (i < 0) continue;
        if (std::abs(x_bar[i] - s.a) < 1e-12) return -dphi_dxbar[i];
        if (std::abs(x_bar[i] - s.b) < 1e-12) return dphi_dxbar[i];
      }
      throw InvalidArgument("bc_residual: Neumann point is not on a spatial boundary");
    }
    case PointRole::collocation:
      break;
  }
  throw InvalidArgument("bc_residual: point carries no boundary role");
}

std::string to_string(LossTerm term) {
  switch (term) {
    case LossTerm::r1: return "R1";
    case LossTerm::r2: return "R2";
    case LossTerm::gt: return "GT";
    case LossTerm::bc1: return "BC1";
    case LossTerm::bc2: return "BC2";
    case LossTerm::neumann: return "Neumann";
  }
  return "?";
}

void LossWeights::validate() const {
  for (int t = 0; t < kLossTerms; ++t) {
    const double w = (*this)[static_cast<LossTerm>(t)];
    if (!(w >= 0.0) || !std::isfinite(w))
      throw InvalidArgument("LossWeights: weight of " + to_string(static_cast<LossTerm>(t)) + " must be finite and >= 0");
  }
}

double LossWeights::operator[](LossTerm t) const {
  return const_cast<LossWeights&>(*this)[t];
}

double& LossWeights::operator[](LossTerm t) {
  switch (t) {
    case LossTerm::r1: return r1;
    case LossTerm::r2: return r2;
    case LossTerm::gt: return gt;
    case LossTerm::bc1: return bc1;
    case LossTerm::bc2: return bc2;
    case LossTerm::neumann: return neumann;
  }
  throw InvalidArgument("LossWeights: bad term");
}

LossBreakdown assemble_loss(const LossInputs& inputs, const LossWeights& weights) {
  weights.validate();
  LossBreakdown out;
  for (int t = 0; t < kLossTerms; ++t) {
    const auto& v = inputs.values[t];
    if (!v) continue;
    if (v->empty())
      throw InvalidArgument("assemble_loss: active term " + to_string(static_cast<LossTerm>(t)) + " has no samples");
    double s = 0.0;
    for (double x : *v) s += x * x;
    out.counts[t] = v->size();
    out.unweighted[t] = s / static_cast<double>(v->size());
    out.weighted[t] = weights[static_cast<LossTerm>(t)] * out.unweighted[t];
    out.total += out.weighted[t];
  }
  return out;
}

}  // namespace cardiopinn
