#include <random>
#include <thread>

#include <doctest.h>

#include "cardiopinn/error.hpp"
#include "cardiopinn/mlp.hpp"
#include "diffcheck.hpp"

using namespace cardiopinn;

TEST_CASE("config validation") {
  CHECK_THROWS_AS(MlpConfig{{3}}.validate(), InvalidArgument);
  CHECK_THROWS_AS((MlpConfig{{3, 0, 1}}.validate()), InvalidArgument);
  const MlpConfig cfg{{2, 5, 3}};
  CHECK(cfg.layers() == 2);
  const auto p = MlpParams::zeros(cfg);
  CHECK(p.size() == 2 * 5 + 5 + 5 * 3 + 3);
  CHECK(p.config().widths == cfg.widths);
}

TEST_CASE("forward examples") {
  const MlpConfig cfg{{3, 7, 2}};
  Eigen::VectorXd x(3);
  x << 0.3, -0.2, 0.9;
  CHECK(forward(MlpParams::zeros(cfg), x).cwiseAbs().maxCoeff() == 0.0);

  MlpParams id = MlpParams::zeros(MlpConfig{{3, 3}});
  id.W[0].setIdentity();
  CHECK(forward(id, x) == x);
  CHECK(input_jacobian(id, x).isIdentity());

  // A second identity layer exposes the hidden activations.
  MlpParams deep = init_params(MlpConfig{{3, 4, 4}}, 5);
  deep.W[0] *= 50.0;
  deep.W[1].setIdentity();
  deep.b[1].setZero();
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-10, 10);
  for (int i = 0; i < 100; ++i) {
    Eigen::VectorXd y(3);
    y << u(rng), u(rng), u(rng);
    REQUIRE(forward(deep, y).cwiseAbs().maxCoeff() <= 1.0);
  }
  CHECK_THROWS_AS(forward(deep, Eigen::VectorXd::Zero(2)), InvalidArgument);
}

TEST_CASE("batch, tape and single-point evaluation agree") {
  const auto p = init_params(MlpConfig{{2, 6, 6, 2}}, 11);
  Eigen::MatrixXd X = Eigen::MatrixXd::Random(2, 9);
  const Eigen::MatrixXd batch = forward_batch(p, X);
  Tape tape;
  const auto ev = evaluate(tape, bind(tape, p), X, DerivativeRequest{{0, 1}, {{1, 0}}});
  for (int i = 0; i < 9; ++i) {
    REQUIRE(batch.col(i) == forward(p, X.col(i)));
    REQUIRE((tape.value(ev.output).col(i) - batch.col(i)).norm() < 1e-15);
    REQUIRE((tape.value(ev.d1(1)).col(i) - input_jacobian(p, X.col(i)).col(1)).norm() < 1e-14);
  }
  CHECK(ev.d2(0, 1) == ev.d2(1, 0));
  CHECK_THROWS_AS(ev.d2(0, 0), InvalidArgument);
}

TEST_CASE("derivatives of a zero network vanish") {
  const auto p = MlpParams::zeros(MlpConfig{{3, 4, 2}});
  const Eigen::Vector3d x(0.1, 0.2, 0.3);
  CHECK(input_jacobian(p, x).cwiseAbs().maxCoeff() == 0.0);
  CHECK(input_hessian_entry(p, x, 1, 0, 2) == 0.0);
  CHECK_THROWS_AS(input_hessian_entry(p, x, 2, 0, 0), InvalidArgument);
  CHECK_THROWS_AS(input_hessian_entry(p, x, 0, 0, 3), InvalidArgument);
}

TEST_CASE("Hessian entries are symmetric") {
  const auto p = init_params(MlpConfig{{4, 8, 8, 3}}, 17);
  const Eigen::Vector4d x(0.3, -0.7, 0.2, 0.9);
  for (int o = 0; o < 3; ++o)
    for (int j = 0; j < 4; ++j)
      for (int k = 0; k < 4; ++k)
        REQUIRE(std::abs(input_hessian_entry(p, x, o, j, k) - input_hessian_entry(p, x, o, k, j)) <= 1e-14);
}

TEST_CASE("weight gradients: trivial cases") {
  const auto p = init_params(MlpConfig{{3, 2}}, 4);
  const Eigen::Vector3d x(0.5, -1.0, 2.0);
  Tape tape;
  const auto net = bind(tape, p);
  const auto ev = evaluate(tape, net, x);
  const auto g = grad_weights(tape, tape.sum_squares(tape.scale(ev.output, 0.0)), net);
  CHECK(g.squared_norm() == 0.0);

  // sum of outputs: d/db = 1, d/dW = 1 x^T. sum = 0.5 * sum((o + 1)^2 - o^2 - 1).
  Tape t2;
  const auto n2 = bind(t2, p);
  const auto e2 = evaluate(t2, n2, x);
  const NodeId o = e2.output;
  const NodeId lin = t2.sub(t2.sum_squares(t2.shift(o, 1.0), 0.5), t2.sum_squares(o, 0.5));
  const auto g2 = grad_weights(t2, lin, n2);
  CHECK(g2.b[0].isOnes());
  CHECK(g2.W[0].isApprox(Eigen::Vector2d::Ones() * x.transpose()));

  Tape foreign;
  CHECK_THROWS_AS(grad_weights(foreign, net), InvalidArgument);
}

TEST_CASE("finite-difference agreement over random networks") {
  const auto r = diffcheck::run(50, 2024);
  MESSAGE("jacobian " << r.jacobian << " hessian " << r.hessian << " grad " << r.grad_mse << " nested "
                      << r.grad_nested);
  CHECK(r.nets == 50);
  CHECK(r.jacobian < 1e-6);
  CHECK(r.hessian < 1e-4);
  CHECK(r.grad_mse < 1e-5);
  CHECK(r.grad_nested < 1e-4);
}

TEST_CASE("Glorot initialization") {
  const MlpConfig cfg{{60, 80, 50, 2}};
  const auto a = init_params(cfg, 99), b = init_params(cfg, 99), c = init_params(cfg, 100);
  CHECK(a.flatten() == b.flatten());
  CHECK(a.flatten() != c.flatten());
  for (int l = 0; l < cfg.layers(); ++l) {
    CHECK(a.b[l].cwiseAbs().maxCoeff() == 0.0);
    const double target = 2.0 / (cfg.widths[l] + cfg.widths[l + 1]);
    const double mean = a.W[l].mean();
    const double var = (a.W[l].array() - mean).square().mean();
    if (cfg.widths[l] >= 50 && cfg.widths[l + 1] >= 50) {
      CHECK(var == doctest::Approx(target).epsilon(0.2));
    }
    const double limit = std::sqrt(6.0 / (cfg.widths[l] + cfg.widths[l + 1]));
    CHECK(a.W[l].cwiseAbs().maxCoeff() <= limit);
  }
}

TEST_CASE("parameter arithmetic") {
  const MlpConfig cfg{{2, 3, 1}};
  auto p = init_params(cfg, 1);
  const auto q = init_params(cfg, 2);
  auto flat = p.flatten();
  CHECK(flat.size() == p.size());
  CHECK(flat[0] == p.W[0](0, 0));
  CHECK(flat[1] == p.W[0](0, 1));  // row-major
  CHECK(flat[6] == p.b[0][0]);
  MlpParams r = MlpParams::zeros(cfg);
  r.unflatten(flat);
  CHECK(r.flatten() == flat);
  CHECK_THROWS_AS(r.unflatten({1.0}), InvalidArgument);

  const double n0 = p.squared_norm();
  p.axpy(2.0, q);
  p.axpy(-2.0, q);
  CHECK(p.squared_norm() == doctest::Approx(n0).epsilon(1e-14));
  p.scale(0.5);
  CHECK(p.squared_norm() == doctest::Approx(0.25 * n0).epsilon(1e-14));
  CHECK(p.all_finite());
  p.b[1][0] = std::nan("");
  CHECK_FALSE(p.all_finite());
  CHECK_THROWS_AS(p.axpy(1.0, MlpParams::zeros(MlpConfig{{2, 1}})), InvalidArgument);
}

TEST_CASE("forward is thread-safe for shared parameters") {
  const auto p = init_params(MlpConfig{{3, 32, 32, 2}}, 8);
  const Eigen::MatrixXd X = Eigen::MatrixXd::Random(3, 200);
  const Eigen::MatrixXd ref = forward_batch(p, X);
  std::vector<Eigen::MatrixXd> out(4);
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t)
    threads.emplace_back([&, t] {
      Tape tape;
      out[t] = tape.value(evaluate(tape, bind(tape, p), X).output);
    });
  for (auto& t : threads) t.join();
  for (const auto& o : out) CHECK(o == ref);
}
