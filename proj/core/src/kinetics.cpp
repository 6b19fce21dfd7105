#include "cardiopinn/kinetics.hpp"

#include <cmath>
#include <sstream>

#include "cardiopinn/error.hpp"

namespace cardiopinn {

namespace {

constexpr double kSingularDenominator = 1e-12;
constexpr double kSingularJacobian = 1e-14;
// Scale of the exponential bump: exp(-(k (t - t_stim))^2) with k = 4.1 / (2 eps).
constexpr double kBumpSharpness = 4.1;

double recovery_gate(CellState s, const APParameters& p) {
  const double den = p.mu2 + s.phi;
  if (std::abs(den) < kSingularDenominator) {
    std::ostringstream msg;
    msg << "f_r: singular denominator mu2 + phi = " << den;
    throw NumericalError(msg.str());
  }
  return p.gamma + p.mu1 * s.r / den;
}

}  // namespace

void APParameters::validate() const {
  if (!(mu2 > 0.0)) throw InvalidArgument("APParameters: mu2 must be positive");
  if (!(c > 0.0)) throw InvalidArgument("APParameters: c must be positive");
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("APParameters: alpha must lie in (0, 1)");
}

APParameters APParameters::cellular_example() { return {0.05, 0.15, 8.0, 0.002, 0.2, 0.3}; }
APParameters APParameters::cube_example() { return {0.01, 0.15, 8.0, 0.002, 0.2, 0.3}; }
APParameters APParameters::cube_param_example() { return {0.05, 0.15, 8.0, 0.002, 0.2, 0.3}; }

void NormalizationScalars::validate() const {
  if (!(beta_phi > 0.0)) throw InvalidArgument("NormalizationScalars: beta_phi must be positive");
  if (!(beta_t > 0.0)) throw InvalidArgument("NormalizationScalars: beta_t must be positive");
}

bool Box::contains(const std::array<double, 3>& x, double tol) const {
  for (int i = 0; i < 3; ++i) {
    if (x[i] < lo[i] - tol || x[i] > hi[i] + tol) return false;
  }
  return true;
}

void StimulusProtocol::validate() const {
  if (!(half_width > 0.0)) throw InvalidArgument("StimulusProtocol: half_width must be positive");
  if (!(amplitude >= 0.0)) throw InvalidArgument("StimulusProtocol: amplitude must be non-negative");
}

double StimulusProtocol::value(double t) const { return value(t, t_stim, shape); }

double StimulusProtocol::value(double t, double t_stim_override) const {
  return value(t, t_stim_override, shape);
}

double StimulusProtocol::value(double t, double t_stim_override, StimulusShape shape_override) const {
  if (amplitude == 0.0) return 0.0;
  const double d = t - t_stim_override;
  if (shape_override == StimulusShape::square) {
    return std::abs(d) <= half_width ? amplitude : 0.0;
  }
  const double k = kBumpSharpness / (2.0 * half_width);
  return amplitude * std::exp(-(k * d) * (k * d));
}

bool StimulusProtocol::active_at(const std::array<double, 3>& x) const {
  return !support || support->contains(x);
}

void LocalNewtonConfig::validate() const {
  if (!(tol > 0.0)) throw InvalidArgument("LocalNewtonConfig: tol must be positive");
  if (max_iter < 1) throw InvalidArgument("LocalNewtonConfig: max_iter must be >= 1");
}

double f_phi(CellState s, const APParameters& p, double stimulus) {
  return p.c * s.phi * (s.phi - p.alpha) * (1.0 - s.phi) - s.r * s.phi + stimulus;
}

double f_r(CellState s, const APParameters& p) {
  return recovery_gate(s, p) * (-s.r - p.c * s.phi * (s.phi - p.b - 1.0));
}

double df_phi_dphi(CellState s, const APParameters& p) {
  const double phi = s.phi;
  return p.c * ((phi - p.alpha) * (1.0 - phi) + phi * (1.0 - phi) - phi * (phi - p.alpha)) - s.r;
}

double df_r_dphi(CellState s, const APParameters& p) {
  const double den = p.mu2 + s.phi;
  const double gate = recovery_gate(s, p);
  const double drive = -s.r - p.c * s.phi * (s.phi - p.b - 1.0);
  return -p.mu1 * s.r / (den * den) * drive + gate * (-p.c * (2.0 * s.phi - p.b - 1.0));
}

double df_r_dr(CellState s, const APParameters& p) {
  const double den = p.mu2 + s.phi;
  if (std::abs(den) < kSingularDenominator) throw NumericalError("f_r: singular denominator");
  return -(p.gamma + p.mu1 / den * (2.0 * s.r + p.c * s.phi * (s.phi - p.b - 1.0)));
}

double normalize_potential(double Phi_mV, const NormalizationScalars& s) {
  return (Phi_mV + s.delta_phi) / s.beta_phi;
}

double denormalize_potential(double phi, const NormalizationScalars& s) {
  return phi * s.beta_phi - s.delta_phi;
}

double normalize_time(double t_ms, const NormalizationScalars& s) { return t_ms / s.beta_t; }

double denormalize_time(double tau, const NormalizationScalars& s) { return tau * s.beta_t; }

double source_term_physical(CellState s, const APParameters& p, double stimulus,
                            const NormalizationScalars& scalars) {
  return scalars.beta_phi / scalars.beta_t * f_phi(s, p, stimulus);
}

RecoveryUpdate local_newton_r(double phi, double r_n, double dtau, const APParameters& p,
                              double stimulus, const LocalNewtonConfig& cfg) {
  if (dtau < 0.0) throw InvalidArgument("local_newton_r: dtau must be non-negative");
  RecoveryUpdate out;
  double r = r_n;
  double dres = 1.0;
  for (int it = 0;; ++it) {
    const CellState s{phi, r};
    const double res = r - r_n - f_r(s, p) * dtau;
    // d R / d r = 1 + [gamma + mu1/(mu2+phi) (2 r + c phi (phi - b - 1))] dtau
    dres = 1.0 - df_r_dr(s, p) * dtau;
    if (std::abs(res) < cfg.tol) {
      out.iterations = it;
      break;
    }
    if (it >= cfg.max_iter) {
      std::ostringstream msg;
      msg << "local_newton_r: no convergence after " << cfg.max_iter << " iterations (|R| = "
          << std::abs(res) << ", phi = " << phi << ", r_n = " << r_n << ")";
      throw NumericalError(msg.str());
    }
    if (std::abs(dres) < kSingularJacobian) throw NumericalError("local_newton_r: singular Jacobian");
    r -= res / dres;
  }
  const CellState s{phi, r};
  out.r = r;
  out.f_phi = f_phi(s, p, stimulus);
  out.df_phi_dphi = df_phi_dphi(s, p);
  // Implicit function theorem on R(r, phi) = 0.
  out.dr_dphi = dtau * df_r_dphi(s, p) / dres;
  return out;
}

CellState step_cell(const APParameters& p, CellState previous, double dtau, double stimulus,
                    const CellIntegratorConfig& cfg) {
  double phi = previous.phi;
  for (int it = 0;; ++it) {
    const RecoveryUpdate rec = local_newton_r(phi, previous.r, dtau, p, stimulus, cfg.local);
    const double g = phi - previous.phi - dtau * rec.f_phi;
    const double dg = 1.0 - dtau * rec.df_phi_dphi_total(phi);
    if (std::abs(g) < cfg.outer_tol) return {phi, rec.r};
    if (it >= cfg.outer_max_iter) {
      std::ostringstream msg;
      msg << "step_cell: outer Newton did not converge (|g| = " << std::abs(g) << ")";
      throw NumericalError(msg.str());
    }
    if (std::abs(dg) < kSingularJacobian) throw NumericalError("step_cell: singular Jacobian");
    phi -= g / dg;
  }
}

Trajectory integrate_cell(const APParameters& p, const NormalizationScalars& scalars,
                          CellState initial, const StimulusProtocol& stimulus, double dtau,
                          int n_steps, const CellIntegratorConfig& cfg) {
  if (!(dtau > 0.0)) throw InvalidArgument("integrate_cell: dtau must be positive");
  if (n_steps < 0) throw InvalidArgument("integrate_cell: n_steps must be non-negative");
  Trajectory traj;
  traj.reserve(static_cast<std::size_t>(n_steps) + 1);
  traj.push_back({0.0, initial});
  CellState s = initial;
  for (int n = 1; n <= n_steps; ++n) {
    const double tau = n * dtau;
    const double t = stimulus.unit == TimeUnit::normalized ? tau : denormalize_time(tau, scalars);
    s = step_cell(p, s, dtau, stimulus.value(t), cfg);
    traj.push_back({tau, s});
  }
  return traj;
}

}  // namespace cardiopinn
