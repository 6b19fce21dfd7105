#include <functional>
#include <random>

#include <doctest.h>

#include "cardiopinn/error.hpp"
#include "cardiopinn/tape.hpp"

using namespace cardiopinn;

namespace {

Matrix random_matrix(std::mt19937_64& rng, int r, int c, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (int i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

// Central-difference gradient of f with respect to every entry of x.
Matrix fd_gradient(const std::function<double(const Matrix&)>& f, Matrix x, double h = 1e-6) {
  Matrix g(x.rows(), x.cols());
  for (int i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + h;
    const double a = f(x);
    x.data()[i] = keep - h;
    const double b = f(x);
    x.data()[i] = keep;
    g.data()[i] = (a - b) / (2 * h);
  }
  return g;
}

using Builder = std::function<NodeId(Tape&, NodeId, NodeId)>;

void check_op(const char* name, const Builder& build, double lo = -1, double hi = 1) {
  INFO(name);
  std::mt19937_64 rng(std::hash<std::string>{}(name));
  const Matrix A = random_matrix(rng, 3, 4, lo, hi), B = random_matrix(rng, 3, 4, lo, hi);
  const auto loss = [&](const Matrix& a, const Matrix& b) {
    Tape t;
    return t.value(t.sum_squares(build(t, t.leaf(a), t.leaf(b)), 0.7))(0, 0);
  };
  Tape t;
  const NodeId a = t.leaf(A), b = t.leaf(B);
  t.backward(t.sum_squares(build(t, a, b), 0.7));
  const Matrix ga = fd_gradient([&](const Matrix& x) { return loss(x, B); }, A);
  const Matrix gb = fd_gradient([&](const Matrix& x) { return loss(A, x); }, B);
  CHECK((t.grad(a) - ga).cwiseAbs().maxCoeff() < 1e-7 * std::max(1.0, ga.cwiseAbs().maxCoeff()));
  CHECK((t.grad(b) - gb).cwiseAbs().maxCoeff() < 1e-7 * std::max(1.0, gb.cwiseAbs().maxCoeff()));
}

}  // namespace

TEST_CASE("elementwise operations") {
  check_op("add", [](Tape& t, NodeId a, NodeId b) { return t.add(a, b); });
  check_op("sub", [](Tape& t, NodeId a, NodeId b) { return t.sub(a, b); });
  check_op("mul", [](Tape& t, NodeId a, NodeId b) { return t.mul(a, b); });
  check_op("div", [](Tape& t, NodeId a, NodeId b) { return t.div(a, b); }, 0.5, 2.0);
  check_op("tanh", [](Tape& t, NodeId a, NodeId b) { return t.add(t.tanh(a), b); });
  check_op("one_minus_square", [](Tape& t, NodeId a, NodeId b) { return t.mul(t.one_minus_square(a), b); });
  check_op("scale", [](Tape& t, NodeId a, NodeId b) { return t.add(t.scale(a, -2.5), b); });
  check_op("shift", [](Tape& t, NodeId a, NodeId b) { return t.mul(t.shift(a, 0.3), b); });
  check_op("scalar_div", [](Tape& t, NodeId a, NodeId b) { return t.add(t.scalar_div(1.7, a), b); }, 0.5, 2.0);
  check_op("row", [](Tape& t, NodeId a, NodeId b) { return t.mul(t.row(a, 2), t.row(b, 1)); });
}

TEST_CASE("matrix operations") {
  std::mt19937_64 rng(1);
  const Matrix W = random_matrix(rng, 2, 3), X = random_matrix(rng, 3, 5), b = random_matrix(rng, 2, 1);
  const auto loss = [](const Matrix& w, const Matrix& x, const Matrix& bb) {
    Tape t;
    const NodeId out = t.tanh(t.affine(t.leaf(w), t.leaf(x), t.leaf(bb)));
    return t.value(t.sum_squares(t.add(out, t.matmul(t.leaf(w), t.leaf(x)))))(0, 0);
  };
  Tape t;
  const NodeId w = t.leaf(W), x = t.leaf(X), bn = t.leaf(b);
  const NodeId out = t.tanh(t.affine(w, x, bn));
  t.backward(t.sum_squares(t.add(out, t.matmul(w, x))));
  CHECK((t.grad(w) - fd_gradient([&](const Matrix& m) { return loss(m, X, b); }, W)).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((t.grad(x) - fd_gradient([&](const Matrix& m) { return loss(W, m, b); }, X)).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((t.grad(bn) - fd_gradient([&](const Matrix& m) { return loss(W, X, m); }, b)).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(t.value(t.affine(w, x, bn)).isApprox((W * X).colwise() + b.col(0)));
}

TEST_CASE("errors") {
  Tape t, other;
  const NodeId a = t.leaf(Matrix::Ones(2, 2));
  CHECK_THROWS_AS(t.backward(a), InvalidArgument);
  CHECK_THROWS_AS(t.row(a, 2), InvalidArgument);
  CHECK_THROWS_AS(t.matmul(a, t.leaf(Matrix::Ones(3, 1))), InvalidArgument);
  CHECK_THROWS_AS(t.add(a, t.leaf(Matrix::Ones(3, 1))), InvalidArgument);
  CHECK_THROWS_AS(other.tanh(NodeId{0}), InvalidArgument);
  CHECK_FALSE(other.owns(a));
}

TEST_CASE("constants and fixed inputs receive no gradient") {
  Tape t;
  const NodeId w = t.leaf(Matrix::Constant(1, 1, 2.0));
  const NodeId c = t.constant(Matrix::Constant(1, 1, 3.0));
  const NodeId x = t.leaf(Matrix::Constant(1, 1, 4.0), false);
  CHECK_FALSE(t.requires_grad(c));
  CHECK_FALSE(t.requires_grad(t.mul(c, x)));
  t.backward(t.sum_squares(t.mul(w, t.add(c, x))));
  CHECK(t.grad(w)(0, 0) == doctest::Approx(2 * 2 * 49));
  CHECK(t.grad(x)(0, 0) == 0.0);

  Tape u;
  const NodeId p = u.leaf(Matrix::Ones(2, 2));
  u.backward(u.sum_squares(u.constant(Matrix::Ones(1, 1))));
  CHECK(u.grad(p).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("Var arithmetic") {
  Tape t;
  Var x{t, t.leaf(Matrix::Constant(1, 3, 0.5))};
  const Var y = 2.0 * x * x - x / 4.0 + 1.0 - (3.0 / (x + 1.0)) + (-x) * 0.5;
  const double v = 0.5;
  CHECK(y.value()(0, 1) == doctest::Approx(2 * v * v - v / 4 + 1 - 3 / (v + 1) - 0.5 * v));
  t.backward(t.sum_squares(y.id()));
  const double dy = 4 * v - 0.25 + 3 / ((v + 1) * (v + 1)) - 0.5;
  const double yv = y.value()(0, 0);
  CHECK(t.grad(x.id())(0, 2) == doctest::Approx(2 * yv * dy));
}

TEST_CASE("reverse sweep equals naive per-path accumulation") {
  std::mt19937_64 rng(1234);
  for (int trial = 0; trial < 40; ++trial) {
    Tape t;
    std::vector<NodeId> pool;
    std::vector<NodeId> leaves;
    for (int i = 0; i < 3; ++i) {
      leaves.push_back(t.leaf(random_matrix(rng, 2, 2, 0.5, 1.5)));
      pool.push_back(leaves.back());
    }
    std::uniform_int_distribution<int> pick_op(0, 5);
    while (t.size() < 18) {
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      const NodeId a = pool[pick(rng)], b = pool[pick(rng)];
      NodeId n;
      switch (pick_op(rng)) {
        case 0: n = t.add(a, b); break;
        case 1: n = t.mul(a, b); break;
        case 2: n = t.tanh(a); break;
        case 3: n = t.sub(a, b); break;
        case 4: n = t.scale(a, 0.7); break;
        default: n = t.one_minus_square(t.tanh(a)); break;
      }
      pool.push_back(n);
    }
    const NodeId target = t.sum_squares(pool.back());
    REQUIRE(t.size() <= 20);

    // Sum over every path from the target down to each leaf.
    std::vector<Matrix> naive(leaves.size());
    for (std::size_t i = 0; i < leaves.size(); ++i) naive[i] = Matrix::Zero(2, 2);
    std::function<void(NodeId, const Matrix&)> walk = [&](NodeId id, const Matrix& seed) {
      for (std::size_t i = 0; i < leaves.size(); ++i)
        if (leaves[i] == id) {
          naive[i] += seed;
          return;
        }
      for (auto& [parent, contribution] : t.local_vjp(id, seed))
        if (t.requires_grad(parent)) walk(parent, contribution);
    };
    walk(target, Matrix::Ones(1, 1));

    t.backward(target);
    CHECK(t.last_visits() <= t.size());
    for (std::size_t i = 0; i < leaves.size(); ++i)
      REQUIRE((t.grad(leaves[i]) - naive[i]).cwiseAbs().maxCoeff() <=
              1e-12 * std::max(1.0, naive[i].cwiseAbs().maxCoeff()));
    // A second sweep starts from clean accumulators.
    t.backward(target);
    for (std::size_t i = 0; i < leaves.size(); ++i)
      REQUIRE((t.grad(leaves[i]) - naive[i]).cwiseAbs().maxCoeff() <=
              1e-12 * std::max(1.0, naive[i].cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("parents precede their children") {
  Tape t;
  const NodeId a = t.leaf(Matrix::Ones(1, 1));
  NodeId x = a;
  for (int i = 0; i < 10; ++i) x = t.mul(t.tanh(x), a);
  for (std::size_t i = 0; i < t.size(); ++i)
    for (NodeId p : t.parents(NodeId{static_cast<std::int32_t>(i)})) REQUIRE(p.index < static_cast<std::int32_t>(i));
}
