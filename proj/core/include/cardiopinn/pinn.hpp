#pragma once

// Scaled governing equations evaluated on network outputs. Inputs are mapped
// affinely from physical bounds [p, q] onto a common [a, b]; the network
// outputs are (phi_hat, r_hat) with r_hat = 0.4 r.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "cardiopinn/fem.hpp"
#include "cardiopinn/kinetics.hpp"
#include "cardiopinn/mlp.hpp"
#include "cardiopinn/tape.hpp"

namespace cardiopinn {

// Physical units: x, y, z in mm; t in TU (cellular) or ms (3-D); c
// dimensionless; t_stim in the unit of t.
enum class InputRole { x, y, z, t, c, t_stim };

std::string to_string(InputRole role);
InputRole input_role_from_string(const std::string& name);

struct InputScaler {
  std::vector<InputRole> roles;
  std::vector<double> lo;  // p*
  std::vector<double> hi;  // q*
  double a = 0.0;
  double b = 1.0;

  void validate() const;
  int size() const { return static_cast<int>(roles.size()); }
  // -1 when absent.
  int index_of(InputRole role) const;
  bool has(InputRole role) const { return index_of(role) >= 0; }
  double range(int i) const { return hi[i] - lo[i]; }

  double scale(int i, double x) const { return a + (b - a) * (x - lo[i]) / (hi[i] - lo[i]); }
  double unscale(int i, double x_bar) const { return lo[i] + (hi[i] - lo[i]) * (x_bar - a) / (b - a); }

  // Throws InvalidArgument if a coordinate lies outside its bounds by more
  // than 1e-9 (relative to the range).
  Eigen::VectorXd scale_point(const Eigen::VectorXd& x) const;
  Eigen::VectorXd unscale_point(const Eigen::VectorXd& x_bar) const;
  // Columns are points.
  Eigen::MatrixXd scale_points(const Eigen::MatrixXd& X) const;
  Eigen::MatrixXd unscale_points(const Eigen::MatrixXd& X_bar) const;

  bool operator==(const InputScaler& other) const;
};

struct OutputScaling {
  double r_scale = 0.4;  // r_hat = r_scale * r
};

enum class ResidualFamily { cellular, three_d };

struct ProblemSpec {
  ResidualFamily family = ResidualFamily::cellular;
  APParameters params = APParameters::cellular_example();
  NormalizationScalars scalars = NormalizationScalars::aliev_panfilov();
  ConductivityTensor conductivity;
  StimulusProtocol stimulus;
  InputScaler scaler;
  OutputScaling output;
  // Stimulus shape inside the residual. Defaults to exponential when t_stim is
  // a network input and to the protocol's own shape otherwise.
  std::optional<StimulusShape> residual_stimulus;

  void validate() const;
  StimulusShape residual_shape() const;
};

// Multipliers of the cellular residual in terms of network quantities.
struct CellularCoefficients {
  double dphi_dtbar = 0.0;  // on d phi_hat / d t_bar in R1
  double dr_dtbar = 0.0;    // on d r_hat / d t_bar in R2
  double r_from_rhat = 0.0; // r = r_from_rhat * r_hat
};

CellularCoefficients cellular_coefficients(const ProblemSpec& spec);

// Multipliers of the 3-D residual: R1 = dphi - diffusion * C_bar - source * f_phi,
// R2 = dr - recovery * f_r.
struct ThreeDCoefficients {
  double diffusion = 0.0;
  double source = 0.0;
  double recovery = 0.0;
  // D_ij / (L_i L_j) over the spatial inputs present, in input order x, y, z.
  Eigen::Matrix3d conductivity_bar = Eigen::Matrix3d::Zero();
  std::array<int, 3> spatial_index{-1, -1, -1};
};

ThreeDCoefficients three_d_coefficients(const ProblemSpec& spec);

// Network output and input derivatives at one point (normalized inputs).
struct PointDerivatives {
  double phi_hat = 0.0;
  double r_hat = 0.0;
  double dphi_dt = 0.0;
  double dr_dt = 0.0;
  Eigen::Matrix3d phi_xx = Eigen::Matrix3d::Zero();  // spatial, x_bar order x, y, z
};

struct ResidualPair {
  double R1 = 0.0;
  double R2 = 0.0;
};

// Stimulus I at a normalized input point.
double stimulus_at(const ProblemSpec& spec, const Eigen::VectorXd& x_bar);
// Excitability c at a normalized input point.
double excitability_at(const ProblemSpec& spec, const Eigen::VectorXd& x_bar);

ResidualPair residual_cellular(const PointDerivatives& d, const Eigen::VectorXd& x_bar,
                               const ProblemSpec& spec);
ResidualPair residual_3d(const PointDerivatives& d, const Eigen::VectorXd& x_bar,
                         const ProblemSpec& spec);
ResidualPair residual(const PointDerivatives& d, const Eigen::VectorXd& x_bar,
                      const ProblemSpec& spec);

// Input derivatives the residual family needs.
DerivativeRequest residual_request(const ProblemSpec& spec);

// Batched residuals on a tape, rows 1 x N.
struct ResidualNodes {
  NodeId R1;
  NodeId R2;
};

ResidualNodes residual_batch(Tape& tape, const NetworkEval& ev, const Eigen::MatrixXd& X_bar,
                             const ProblemSpec& spec);

// Point tags. Collocation points carry no target.
enum class PointRole { collocation, ground_truth, bc1, bc2, neumann };

std::string to_string(PointRole role);
PointRole point_role_from_string(const std::string& name);

// BC_GT: phi_hat - phi_GT; BC_1: phi_hat - 1; BC_2: phi_hat; Neumann: normal
// derivative of phi_hat in normalized coordinates on the first spatial input
// found at a bound.
double bc_residual(PointRole role, const Eigen::VectorXd& x_bar, double phi_hat,
                   const Eigen::VectorXd& dphi_dxbar, double phi_target, const ProblemSpec& spec);

enum class LossTerm { r1, r2, gt, bc1, bc2, neumann };
constexpr int kLossTerms = 6;
std::string to_string(LossTerm term);

struct LossWeights {
  double r1 = 1.0;
  double r2 = 1.0;
  double gt = 1.0;
  double bc1 = 1.0;
  double bc2 = 0.0;  // listed in the BC catalog, unused by the examples
  double neumann = 0.0;  // Neumann terms are off unless requested

  void validate() const;
  double operator[](LossTerm t) const;
  double& operator[](LossTerm t);
};

struct LossBreakdown {
  double total = 0.0;
  std::array<double, kLossTerms> weighted{};
  std::array<double, kLossTerms> unweighted{};  // mean of squares
  std::array<std::size_t, kLossTerms> counts{};

  double weighted_of(LossTerm t) const { return weighted[static_cast<int>(t)]; }
  double unweighted_of(LossTerm t) const { return unweighted[static_cast<int>(t)]; }
};

// Residual samples per term; absent terms do not contribute. A present but
// empty term is an error.
struct LossInputs {
  std::array<std::optional<std::vector<double>>, kLossTerms> values;

  void set(LossTerm t, std::vector<double> v) { values[static_cast<int>(t)] = std::move(v); }
};

LossBreakdown assemble_loss(const LossInputs& inputs, const LossWeights& weights);

}  // namespace cardiopinn
