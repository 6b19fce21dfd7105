#pragma once

// Append-only record of matrix-valued primitive operations with a reverse
// sweep. Values are dense matrices whose columns are independent points, so
// a whole batch shares one tape. Nodes only reference earlier nodes, which
// makes the index order a topological order.

#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace cardiopinn {

using Matrix = Eigen::MatrixXd;

struct NodeId {
  std::int32_t index = -1;

  bool valid() const { return index >= 0; }
  friend bool operator==(NodeId a, NodeId b) { return a.index == b.index; }
};

enum class TapeOp : std::uint8_t {
  leaf,
  constant,
  affine,            // W X + b 1^T
  matmul,            // W X
  tanh,
  one_minus_square,  // 1 - X^2
  add,
  sub,
  mul,               // elementwise
  div,               // elementwise
  scale,             // s X
  shift,             // X + s
  scalar_div,        // s / X
  row,               // X.row(i)
  sum_squares,       // s * sum(X^2), 1x1
};

class Tape {
 public:
  Tape() = default;

  // Parameters (requires_grad) or fixed inputs.
  NodeId leaf(Matrix value, bool requires_grad = true);
  NodeId constant(Matrix value);

  NodeId affine(NodeId W, NodeId X, NodeId b);
  NodeId matmul(NodeId W, NodeId X);
  NodeId tanh(NodeId X);
  NodeId one_minus_square(NodeId X);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId div(NodeId a, NodeId b);
  NodeId scale(NodeId a, double s);
  NodeId shift(NodeId a, double s);
  NodeId scalar_div(double s, NodeId a);
  NodeId row(NodeId a, int i);
  NodeId sum_squares(NodeId a, double s = 1.0);

  const Matrix& value(NodeId id) const { return nodes_[id.index].value; }
  // Gradient of a leaf with respect to the last backward() target; zero if
  // unreached. Intermediate gradients are released during the sweep.
  Matrix grad(NodeId id) const;
  bool requires_grad(NodeId id) const { return nodes_[id.index].requires_grad; }
  TapeOp op(NodeId id) const { return nodes_[id.index].op; }
  std::vector<NodeId> parents(NodeId id) const;

  std::size_t size() const { return nodes_.size(); }
  bool owns(NodeId id) const { return id.index >= 0 && id.index < static_cast<std::int32_t>(nodes_.size()); }

  // Reverse sweep from a 1x1 node. Gradients of earlier sweeps are cleared.
  void backward(NodeId scalar);

  // Nodes processed by the last backward().
  std::size_t last_visits() const { return visits_; }

  // Contributions of a single node's local derivative to each parent for an
  // upstream gradient `seed` (vector-Jacobian product). Does not touch the
  // accumulated gradients.
  std::vector<std::pair<NodeId, Matrix>> local_vjp(NodeId id, const Matrix& seed) const;

 private:
  struct Node {
    TapeOp op = TapeOp::constant;
    std::int32_t a = -1;
    std::int32_t b = -1;
    std::int32_t c = -1;
    double s = 0.0;
    bool requires_grad = false;
    Matrix value;
    Matrix grad;
  };

  NodeId push(Node node);
  void check(NodeId id) const;
  template <class Fn>
  void for_each_contribution(const Node& n, const Matrix& g, Fn&& fn) const;

  std::vector<Node> nodes_;
  std::size_t visits_ = 0;
};

// Arithmetic wrapper so that formulas can be written once for double and for
// tape nodes. All operations are elementwise.
class Var {
 public:
  Var(Tape& tape, NodeId id) : tape_(&tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  NodeId id() const { return id_; }
  const Matrix& value() const { return tape_->value(id_); }

  friend Var operator+(const Var& a, const Var& b) { return {*a.tape_, a.tape_->add(a.id_, b.id_)}; }
  friend Var operator-(const Var& a, const Var& b) { return {*a.tape_, a.tape_->sub(a.id_, b.id_)}; }
  friend Var operator*(const Var& a, const Var& b) { return {*a.tape_, a.tape_->mul(a.id_, b.id_)}; }
  friend Var operator/(const Var& a, const Var& b) { return {*a.tape_, a.tape_->div(a.id_, b.id_)}; }
  friend Var operator+(const Var& a, double s) { return {*a.tape_, a.tape_->shift(a.id_, s)}; }
  friend Var operator+(double s, const Var& a) { return a + s; }
  friend Var operator-(const Var& a, double s) { return a + (-s); }
  friend Var operator-(double s, const Var& a) { return {*a.tape_, a.tape_->shift(a.tape_->scale(a.id_, -1.0), s)}; }
  friend Var operator*(const Var& a, double s) { return {*a.tape_, a.tape_->scale(a.id_, s)}; }
  friend Var operator*(double s, const Var& a) { return a * s; }
  friend Var operator/(const Var& a, double s) { return a * (1.0 / s); }
  friend Var operator/(double s, const Var& a) { return {*a.tape_, a.tape_->scalar_div(s, a.id_)}; }
  friend Var operator-(const Var& a) { return a * -1.0; }

 private:
  Tape* tape_;
  NodeId id_;
};

}  // namespace cardiopinn
