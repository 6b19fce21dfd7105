#include "diffcheck.hpp"

#include <algorithm>
#include <random>

#include "cardiopinn/mlp.hpp"

namespace diffcheck {

using namespace cardiopinn;

namespace {

MlpParams random_net(std::mt19937_64& rng, int& n0) {
  std::uniform_int_distribution<int> layers(1, 5), width(1, 16), inputs(1, 5), outputs(1, 3);
  MlpConfig cfg;
  n0 = inputs(rng);
  cfg.widths.push_back(n0);
  const int L = layers(rng);
  for (int l = 1; l < L; ++l) cfg.widths.push_back(width(rng));
  cfg.widths.push_back(outputs(rng));
  MlpParams p = init_params(cfg, rng());
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& b : p.b)
    for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = u(rng);
  return p;
}

double rel(double err, double scale, double floor) { return err / std::max(scale, floor); }

// Scalar that reaches the weights through outputs, first and second input
// derivatives at a small batch.
struct Nested {
  Eigen::MatrixXd X;
  int j = 0, k = 0;

  double value(const MlpParams& p, MlpGradient* grad) const {
    Tape tape;
    const BoundMlp net = bind(tape, p);
    const NetworkEval ev = evaluate(tape, net, X, DerivativeRequest{{j}, {{j, k}, {k, k}}});
    const Var out{tape, ev.output}, d1{tape, ev.d1(j)}, hjk{tape, ev.d2(j, k)}, hkk{tape, ev.d2(k, k)};
    const Var mix = hjk * hjk + 0.5 * hkk * d1 + 0.1 * out;
    const NodeId s = tape.sum_squares(mix.id(), 1.0 / static_cast<double>(X.cols()));
    if (grad) *grad = grad_weights(tape, s, net);
    return tape.value(s)(0, 0);
  }
};

double mse(const MlpParams& p, const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, MlpGradient* grad) {
  Tape tape;
  const BoundMlp net = bind(tape, p);
  const NetworkEval ev = evaluate(tape, net, X);
  const NodeId diff = tape.sub(ev.output, tape.constant(Y));
  const NodeId s = tape.sum_squares(diff, 1.0 / static_cast<double>(Y.size()));
  if (grad) *grad = grad_weights(tape, s, net);
  return tape.value(s)(0, 0);
}

template <class F>
double weight_fd_error(const MlpParams& p, const MlpGradient& g, F&& f, std::mt19937_64& rng, int samples) {
  std::vector<double> flat = p.flatten();
  const std::vector<double> gflat = g.flatten();
  std::uniform_int_distribution<std::size_t> pick(0, flat.size() - 1);
  double scale = 0.0;
  for (double v : gflat) scale = std::max(scale, std::abs(v));
  double worst = 0.0;
  const double h = 1e-6;
  for (int s = 0; s < samples; ++s) {
    const std::size_t i = pick(rng);
    MlpParams q = p;
    const double keep = flat[i];
    flat[i] = keep + h;
    q.unflatten(flat);
    const double a = f(q);
    flat[i] = keep - h;
    q.unflatten(flat);
    const double b = f(q);
    flat[i] = keep;
    const double fd = (a - b) / (2 * h);
    // Relative to the entry, with the gradient scale as floor for tiny entries.
    worst = std::max(worst, rel(std::abs(fd - gflat[i]), std::abs(gflat[i]), 1e-2 * scale + 1e-8));
  }
  return worst;
}

}  // namespace

Result run(int nets, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  Result r;
  for (int n = 0; n < nets; ++n) {
    int n0 = 0;
    const MlpParams p = random_net(rng, n0);
    const int nL = p.config().outputs();
    Eigen::VectorXd x(n0);
    for (int i = 0; i < n0; ++i) x[i] = u(rng);

    // Jacobian.
    const Eigen::MatrixXd J = input_jacobian(p, x);
    Eigen::MatrixXd Jfd(nL, n0);
    const double h1 = 1e-6;
    for (int j = 0; j < n0; ++j) {
      Eigen::VectorXd a = x, b = x;
      a[j] += h1;
      b[j] -= h1;
      Jfd.col(j) = (forward(p, a) - forward(p, b)) / (2 * h1);
    }
    r.jacobian = std::max(r.jacobian, rel((J - Jfd).norm(), J.norm(), 1e-3));

    // Hessian of every output.
    const double h2 = 1e-4;
    for (int o = 0; o < nL; ++o) {
      Eigen::MatrixXd H(n0, n0), Hfd(n0, n0);
      for (int j = 0; j < n0; ++j)
        for (int k = 0; k < n0; ++k) {
          H(j, k) = input_hessian_entry(p, x, o, j, k);
          const auto at = [&](double sj, double sk) {
            Eigen::VectorXd y = x;
            y[j] += sj * h2;
            y[k] += sk * h2;
            return forward(p, y)[o];
          };
          Hfd(j, k) = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4 * h2 * h2);
        }
      r.hessian = std::max(r.hessian, rel((H - Hfd).norm(), H.norm(), 1e-3));
    }

    // Weight gradients.
    Eigen::MatrixXd X(n0, 6), Y(nL, 6);
    for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = u(rng);
    for (Eigen::Index i = 0; i < Y.size(); ++i) Y.data()[i] = u(rng);
    MlpGradient g;
    mse(p, X, Y, &g);
    r.grad_mse = std::max(r.grad_mse, weight_fd_error(p, g, [&](const MlpParams& q) { return mse(q, X, Y, nullptr); }, rng, 20));

    std::uniform_int_distribution<int> idx(0, n0 - 1);
    Nested nested{X, idx(rng), idx(rng)};
    nested.value(p, &g);
    r.grad_nested = std::max(r.grad_nested, weight_fd_error(p, g, [&](const MlpParams& q) { return nested.value(q, nullptr); }, rng, 20));
    ++r.nets;
  }
  return r;
}

}  // namespace diffcheck
