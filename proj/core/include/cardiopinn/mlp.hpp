#pragma once

// Fully connected tanh network with affine output layer, plus layerwise
// recursions for first and second input derivatives recorded on a Tape so
// that any scalar built from them can be differentiated w.r.t. the weights.

#include <array>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "cardiopinn/tape.hpp"

namespace cardiopinn {

struct MlpConfig {
  std::vector<int> widths;  // n_0 (inputs) ... n_L (outputs)

  void validate() const;
  int inputs() const { return widths.front(); }
  int outputs() const { return widths.back(); }
  int layers() const { return static_cast<int>(widths.size()) - 1; }
};

// Layer l (0-based) maps n_l -> n_{l+1}: W[l] is n_{l+1} x n_l.
struct MlpParams {
  std::vector<Eigen::MatrixXd> W;
  std::vector<Eigen::VectorXd> b;

  static MlpParams zeros(const MlpConfig& cfg);
  MlpConfig config() const;
  std::size_t size() const;  // number of scalars

  double squared_norm() const;
  bool all_finite() const;
  bool same_shape(const MlpParams& other) const;
  // this += a * other
  void axpy(double a, const MlpParams& other);
  void scale(double a);

  // Flat view in checkpoint order: per layer W row-major, then b.
  std::vector<double> flatten() const;
  void unflatten(const std::vector<double>& flat);
};

using MlpGradient = MlpParams;

// Glorot-uniform weights, zero biases; reproducible from the seed.
MlpParams init_params(const MlpConfig& cfg, std::uint64_t seed);

// Plain evaluation of one point (no tape).
Eigen::VectorXd forward(const MlpParams& params, const Eigen::VectorXd& x_bar);
// Columns are points.
Eigen::MatrixXd forward_batch(const MlpParams& params, const Eigen::MatrixXd& X);

struct BoundMlp {
  std::vector<NodeId> W;
  std::vector<NodeId> b;
};

BoundMlp bind(Tape& tape, const MlpParams& params);

struct DerivativeRequest {
  std::vector<int> first;                   // input indices j
  std::vector<std::array<int, 2>> second;   // input pairs (j, k)
};

// Tape nodes of the network output and its input derivatives; each is
// n_L x batch. Second derivatives are stored for j <= k.
struct NetworkEval {
  NodeId output;
  std::vector<NodeId> first;   // indexed by input, invalid when not requested
  std::vector<std::vector<NodeId>> second;

  NodeId d1(int j) const;
  NodeId d2(int j, int k) const;
};

NetworkEval evaluate(Tape& tape, const BoundMlp& net, const Eigen::MatrixXd& X,
                     const DerivativeRequest& request = {});

// d output / d input, n_L x n_0.
Eigen::MatrixXd input_jacobian(const MlpParams& params, const Eigen::VectorXd& x_bar);
double input_hessian_entry(const MlpParams& params, const Eigen::VectorXd& x_bar, int out,
                           int j, int k);

// Weight gradient after tape.backward(target).
MlpGradient grad_weights(const Tape& tape, const BoundMlp& net);
// Runs the reverse sweep from `scalar` first.
MlpGradient grad_weights(Tape& tape, NodeId scalar, const BoundMlp& net);

}  // namespace cardiopinn
