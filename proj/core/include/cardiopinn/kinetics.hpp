#pragma once

// Aliev-Panfilov point kinetics in normalized units, unit conversion and the
// implicit 0-D integrator.

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace cardiopinn {

struct APParameters {
  double alpha = 0.05;  // excitation threshold
  double b = 0.15;
  double c = 8.0;  // excitability
  double gamma = 0.002;
  double mu1 = 0.2;
  double mu2 = 0.3;

  // Throws InvalidArgument unless mu2 > 0, c > 0 and 0 < alpha < 1.
  void validate() const;

  // Material columns of the example table (c fixed to 8 for the cellular case).
  static APParameters cellular_example();
  static APParameters cube_example();
  static APParameters cube_param_example();
};

struct NormalizationScalars {
  double beta_phi = 100.0;   // mV
  double delta_phi = 80.0;   // mV
  double beta_t = 12.9;      // ms

  void validate() const;

  static NormalizationScalars aliev_panfilov() { return {100.0, 80.0, 12.9}; }
  static NormalizationScalars fitzhugh_nagumo() { return {65.0, 35.0, 220.0}; }
};

struct CellState {
  double phi = 0.0;
  double r = 0.0;
};

enum class StimulusShape { square, exponential };

// Unit in which a stimulus time is expressed. There is no implicit conversion.
enum class TimeUnit { normalized, milliseconds };

struct Box {
  std::array<double, 3> lo{};
  std::array<double, 3> hi{};

  bool contains(const std::array<double, 3>& x, double tol = 1e-9) const;
};

struct StimulusProtocol {
  double amplitude = 0.0;
  double t_stim = 0.0;
  double half_width = 1e-6;
  StimulusShape shape = StimulusShape::square;
  TimeUnit unit = TimeUnit::normalized;
  std::optional<Box> support;  // 3-D only, mm

  void validate() const;

  // I at time t (same unit as t_stim); ignores the spatial support.
  double value(double t) const;
  // Same, with t_stim overridden (parameterized stimulus timing).
  double value(double t, double t_stim_override) const;
  double value(double t, double t_stim_override, StimulusShape shape_override) const;

  bool active_at(const std::array<double, 3>& x) const;

  static StimulusProtocol none() { return {}; }
};

struct LocalNewtonConfig {
  double tol = 1e-10;
  int max_iter = 50;

  void validate() const;
};

// Right-hand sides of the kinetics in normalized time.
double f_phi(CellState s, const APParameters& p, double stimulus);
double f_r(CellState s, const APParameters& p);

// Partial derivatives used by the implicit schemes.
double df_phi_dphi(CellState s, const APParameters& p);
double df_r_dphi(CellState s, const APParameters& p);
double df_r_dr(CellState s, const APParameters& p);

double normalize_potential(double Phi_mV, const NormalizationScalars& s);
double denormalize_potential(double phi, const NormalizationScalars& s);
double normalize_time(double t_ms, const NormalizationScalars& s);
double denormalize_time(double tau, const NormalizationScalars& s);

// F^Phi in mV/ms.
double source_term_physical(CellState s, const APParameters& p, double stimulus,
                            const NormalizationScalars& scalars);

struct RecoveryUpdate {
  double r = 0.0;
  double f_phi = 0.0;
  double df_phi_dphi = 0.0;  // partial, r held at its converged value
  double dr_dphi = 0.0;      // sensitivity of the converged r to phi
  int iterations = 0;

  // Total derivative d f_phi / d phi including the r(phi) dependence.
  double df_phi_dphi_total(double phi) const { return df_phi_dphi - phi * dr_dphi; }
};

// Backward-Euler update of the recovery variable at fixed phi:
// R(r) = r - r_n - f_r(phi, r) * dtau = 0, solved by Newton from r = r_n.
RecoveryUpdate local_newton_r(double phi, double r_n, double dtau, const APParameters& p,
                              double stimulus = 0.0, const LocalNewtonConfig& cfg = {});

struct TrajectoryPoint {
  double tau = 0.0;
  CellState state;
};

using Trajectory = std::vector<TrajectoryPoint>;

struct CellIntegratorConfig {
  LocalNewtonConfig local;
  double outer_tol = 1e-10;
  int outer_max_iter = 50;
};

// Backward-Euler integration of the cell model. The stimulus is evaluated at
// the end of each step; a millisecond protocol is converted with `scalars`.
// Returns n_steps + 1 points including the initial state.
Trajectory integrate_cell(const APParameters& p, const NormalizationScalars& scalars,
                          CellState initial, const StimulusProtocol& stimulus, double dtau,
                          int n_steps, const CellIntegratorConfig& cfg = {});

// Single implicit step; exposed for the FE homogeneity checks.
CellState step_cell(const APParameters& p, CellState previous, double dtau, double stimulus,
                    const CellIntegratorConfig& cfg = {});

}  // namespace cardiopinn
