#include "cardiopinn/tape.hpp"

#include <sstream>

#include "cardiopinn/error.hpp"

namespace cardiopinn {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    std::ostringstream msg;
    msg << "Tape::" << op << ": shape mismatch " << a.rows() << "x" << a.cols() << " vs "
        << b.rows() << "x" << b.cols();
    throw InvalidArgument(msg.str());
  }
}

}  // namespace

void Tape::check(NodeId id) const {
  if (!owns(id)) throw InvalidArgument("Tape: node does not belong to this tape");
}

NodeId Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return NodeId{static_cast<std::int32_t>(nodes_.size() - 1)};
}

NodeId Tape::leaf(Matrix value, bool requires_grad) {
  Node n;
  n.op = requires_grad ? TapeOp::leaf : TapeOp::constant;
  n.requires_grad = requires_grad;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Tape::constant(Matrix value) { return leaf(std::move(value), false); }

NodeId Tape::affine(NodeId W, NodeId X, NodeId b) {
  check(W);
  check(X);
  check(b);
  const Matrix& w = value(W);
  const Matrix& x = value(X);
  const Matrix& bias = value(b);
  if (w.cols() != x.rows() || bias.rows() != w.rows() || bias.cols() != 1)
    throw InvalidArgument("Tape::affine: shape mismatch");
  Node n;
  n.op = TapeOp::affine;
  n.a = W.index;
  n.b = X.index;
  n.c = b.index;
  n.requires_grad = requires_grad(W) || requires_grad(X) || requires_grad(b);
  n.value.resize(w.rows(), x.cols());
  n.value.noalias() = w * x;
  n.value.colwise() += bias.col(0);
  return push(std::move(n));
}

NodeId Tape::matmul(NodeId W, NodeId X) {
  check(W);
  check(X);
  const Matrix& w = value(W);
  const Matrix& x = value(X);
  if (w.cols() != x.rows()) throw InvalidArgument("Tape::matmul: shape mismatch");
  Node n;
  n.op = TapeOp::matmul;
  n.a = W.index;
  n.b = X.index;
  n.requires_grad = requires_grad(W) || requires_grad(X);
  n.value.resize(w.rows(), x.cols());
  n.value.noalias() = w * x;
  return push(std::move(n));
}

NodeId Tape::tanh(NodeId X) {
  check(X);
  Node n;
  n.op = TapeOp::tanh;
  n.a = X.index;
  n.requires_grad = requires_grad(X);
  n.value = value(X).array().tanh().matrix();
  return push(std::move(n));
}

NodeId Tape::one_minus_square(NodeId X) {
  check(X);
  Node n;
  n.op = TapeOp::one_minus_square;
  n.a = X.index;
  n.requires_grad = requires_grad(X);
  n.value = (1.0 - value(X).array().square()).matrix();
  return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
  check(a);
  check(b);
  require_same_shape(value(a), value(b), "add");
  Node n;
  n.op = TapeOp::add;
  n.a = a.index;
  n.b = b.index;
  n.requires_grad = requires_grad(a) || requires_grad(b);
  n.value = value(a) + value(b);
  return push(std::move(n));
}

NodeId Tape::sub(NodeId a, NodeId b) {
  check(a);
  check(b);
  require_same_shape(value(a), value(b), "sub");
  Node n;
  n.op = TapeOp::sub;
  n.a = a.index;
  n.b = b.index;
  n.requires_grad = requires_grad(a) || requires_grad(b);
  n.value = value(a) - value(b);
  return push(std::move(n));
}

NodeId Tape::mul(NodeId a, NodeId b) {
  check(a);
  check(b);
  require_same_shape(value(a), value(b), "mul");
  Node n;
  n.op = TapeOp::mul;
  n.a = a.index;
  n.b = b.index;
  n.requires_grad = requires_grad(a) || requires_grad(b);
  n.value = value(a).cwiseProduct(value(b));
  return push(std::move(n));
}

NodeId Tape::div(NodeId a, NodeId b) {
  check(a);
  check(b);
  require_same_shape(value(a), value(b), "div");
  Node n;
  n.op = TapeOp::div;
  n.a = a.index;
  n.b = b.index;
  n.requires_grad = requires_grad(a) || requires_grad(b);
  n.value = value(a).cwiseQuotient(value(b));
  return push(std::move(n));
}

NodeId Tape::scale(NodeId a, double s) {
  check(a);
  Node n;
  n.op = TapeOp::scale;
  n.a = a.index;
  n.s = s;
  n.requires_grad = requires_grad(a);
  n.value = s * value(a);
  return push(std::move(n));
}

NodeId Tape::shift(NodeId a, double s) {
  check(a);
  Node n;
  n.op = TapeOp::shift;
  n.a = a.index;
  n.s = s;
  n.requires_grad = requires_grad(a);
  n.value = (value(a).array() + s).matrix();
  return push(std::move(n));
}

NodeId Tape::scalar_div(double s, NodeId a) {
  check(a);
  Node n;
  n.op = TapeOp::scalar_div;
  n.a = a.index;
  n.s = s;
  n.requires_grad = requires_grad(a);
  n.value = (s / value(a).array()).matrix();
  return push(std::move(n));
}

NodeId Tape::row(NodeId a, int i) {
  check(a);
  if (i < 0 || i >= value(a).rows()) throw InvalidArgument("Tape::row: index out of range");
  Node n;
  n.op = TapeOp::row;
  n.a = a.index;
  n.c = i;
  n.requires_grad = requires_grad(a);
  n.value = value(a).row(i);
  return push(std::move(n));
}

NodeId Tape::sum_squares(NodeId a, double s) {
  check(a);
  Node n;
  n.op = TapeOp::sum_squares;
  n.a = a.index;
  n.s = s;
  n.requires_grad = requires_grad(a);
  n.value = Matrix::Constant(1, 1, s * value(a).squaredNorm());
  return push(std::move(n));
}

Matrix Tape::grad(NodeId id) const {
  check(id);
  const Node& n = nodes_[id.index];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

std::vector<NodeId> Tape::parents(NodeId id) const {
  check(id);
  const Node& n = nodes_[id.index];
  std::vector<NodeId> out;
  if (n.a >= 0) out.push_back({n.a});
  if (n.b >= 0) out.push_back({n.b});
  if (n.c >= 0 && n.op == TapeOp::affine) out.push_back({n.c});
  return out;
}

template <class Fn>
void Tape::for_each_contribution(const Node& n, const Matrix& g, Fn&& fn) const {
  const auto needs = [&](std::int32_t p) { return p >= 0 && nodes_[p].requires_grad; };
  switch (n.op) {
    case TapeOp::leaf:
    case TapeOp::constant:
      break;
    case TapeOp::affine:
      if (needs(n.a)) fn(n.a, Matrix(g * nodes_[n.b].value.transpose()));
      if (needs(n.b)) fn(n.b, Matrix(nodes_[n.a].value.transpose() * g));
      if (needs(n.c)) fn(n.c, Matrix(g.rowwise().sum()));
      break;
    case TapeOp::matmul:
      if (needs(n.a)) fn(n.a, Matrix(g * nodes_[n.b].value.transpose()));
      if (needs(n.b)) fn(n.b, Matrix(nodes_[n.a].value.transpose() * g));
      break;
    case TapeOp::tanh:
      if (needs(n.a)) fn(n.a, Matrix(g.array() * (1.0 - n.value.array().square())));
      break;
    case TapeOp::one_minus_square:
      if (needs(n.a)) fn(n.a, Matrix(-2.0 * g.array() * nodes_[n.a].value.array()));
      break;
    case TapeOp::add:
      if (needs(n.a)) fn(n.a, g);
      if (needs(n.b)) fn(n.b, g);
      break;
    case TapeOp::sub:
      if (needs(n.a)) fn(n.a, g);
      if (needs(n.b)) fn(n.b, Matrix(-g));
      break;
    case TapeOp::mul:
      if (needs(n.a)) fn(n.a, Matrix(g.cwiseProduct(nodes_[n.b].value)));
      if (needs(n.b)) fn(n.b, Matrix(g.cwiseProduct(nodes_[n.a].value)));
      break;
    case TapeOp::div:
      if (needs(n.a)) fn(n.a, Matrix(g.cwiseQuotient(nodes_[n.b].value)));
      if (needs(n.b))
        fn(n.b, Matrix(-(g.array() * n.value.array() / nodes_[n.b].value.array())));
      break;
    case TapeOp::scale:
      if (needs(n.a)) fn(n.a, Matrix(n.s * g));
      break;
    case TapeOp::shift:
      if (needs(n.a)) fn(n.a, g);
      break;
    case TapeOp::scalar_div:
      if (needs(n.a)) fn(n.a, Matrix(-(g.array() * n.value.array() / nodes_[n.a].value.array())));
      break;
    case TapeOp::row:
      if (needs(n.a)) {
        Matrix full = Matrix::Zero(nodes_[n.a].value.rows(), nodes_[n.a].value.cols());
        full.row(n.c) = g;
        fn(n.a, std::move(full));
      }
      break;
    case TapeOp::sum_squares:
      if (needs(n.a)) fn(n.a, Matrix((2.0 * n.s * g(0, 0)) * nodes_[n.a].value));
      break;
  }
}

void Tape::backward(NodeId scalar) {
  check(scalar);
  if (value(scalar).size() != 1) throw InvalidArgument("Tape::backward: target must be 1x1");
  for (Node& n : nodes_) n.grad.resize(0, 0);
  visits_ = 0;
  nodes_[scalar.index].grad = Matrix::Ones(1, 1);
  for (std::int32_t i = scalar.index; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    ++visits_;
    for_each_contribution(n, n.grad, [&](std::int32_t p, Matrix contribution) {
      Matrix& target = nodes_[p].grad;
      if (target.size() == 0)
        target = std::move(contribution);
      else
        target += contribution;
    });
    // Intermediate gradients are no longer needed once propagated.
    if (n.op != TapeOp::leaf) n.grad.resize(0, 0);
  }
}

std::vector<std::pair<NodeId, Matrix>> Tape::local_vjp(NodeId id, const Matrix& seed) const {
  check(id);
  std::vector<std::pair<NodeId, Matrix>> out;
  for_each_contribution(nodes_[id.index], seed,
                        [&](std::int32_t p, Matrix m) { out.emplace_back(NodeId{p}, std::move(m)); });
  return out;
}

}  // namespace cardiopinn
