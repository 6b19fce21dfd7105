#include "cardiopinn/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "cardiopinn/error.hpp"

namespace cardiopinn {

void MlpConfig::validate() const {
  if (widths.size() < 2) throw InvalidArgument("MlpConfig: need at least one layer");
  for (int w : widths)
    if (w < 1) throw InvalidArgument("MlpConfig: widths must be >= 1");
}

MlpParams MlpParams::zeros(const MlpConfig& cfg) {
  cfg.validate();
  MlpParams p;
  for (int l = 0; l < cfg.layers(); ++l) {
    p.W.push_back(Eigen::MatrixXd::Zero(cfg.widths[l + 1], cfg.widths[l]));
    p.b.push_back(Eigen::VectorXd::Zero(cfg.widths[l + 1]));
  }
  return p;
}

MlpConfig MlpParams::config() const {
  MlpConfig cfg;
  if (W.empty()) return cfg;
  cfg.widths.push_back(static_cast<int>(W.front().cols()));
  for (const auto& w : W) cfg.widths.push_back(static_cast<int>(w.rows()));
  return cfg;
}

std::size_t MlpParams::size() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < W.size(); ++l) n += W[l].size() + b[l].size();
  return n;
}

double MlpParams::squared_norm() const {
  double s = 0.0;
  for (std::size_t l = 0; l < W.size(); ++l) s += W[l].squaredNorm() + b[l].squaredNorm();
  return s;
}

bool MlpParams::all_finite() const {
  for (std::size_t l = 0; l < W.size(); ++l)
    if (!W[l].allFinite() || !b[l].allFinite()) return false;
  return true;
}

bool MlpParams::same_shape(const MlpParams& other) const {
  if (W.size() != other.W.size() || b.size() != other.b.size()) return false;
  for (std::size_t l = 0; l < W.size(); ++l) {
    if (W[l].rows() != other.W[l].rows() || W[l].cols() != other.W[l].cols()) return false;
    if (b[l].size() != other.b[l].size()) return false;
  }
  return true;
}

void MlpParams::axpy(double a, const MlpParams& other) {
  if (!same_shape(other)) throw InvalidArgument("MlpParams::axpy: shape mismatch");
  for (std::size_t l = 0; l < W.size(); ++l) {
    W[l] += a * other.W[l];
    b[l] += a * other.b[l];
  }
}

void MlpParams::scale(double a) {
  for (std::size_t l = 0; l < W.size(); ++l) {
    W[l] *= a;
    b[l] *= a;
  }
}

std::vector<double> MlpParams::flatten() const {
  std::vector<double> flat;
  flat.reserve(size());
  for (std::size_t l = 0; l < W.size(); ++l) {
    for (Eigen::Index i = 0; i < W[l].rows(); ++i)
      for (Eigen::Index j = 0; j < W[l].cols(); ++j) flat.push_back(W[l](i, j));
    for (Eigen::Index i = 0; i < b[l].size(); ++i) flat.push_back(b[l][i]);
  }
  return flat;
}

void MlpParams::unflatten(const std::vector<double>& flat) {
  if (flat.size() != size()) throw InvalidArgument("MlpParams::unflatten: size mismatch");
  std::size_t k = 0;
  for (std::size_t l = 0; l < W.size(); ++l) {
    for (Eigen::Index i = 0; i < W[l].rows(); ++i)
      for (Eigen::Index j = 0; j < W[l].cols(); ++j) W[l](i, j) = flat[k++];
    for (Eigen::Index i = 0; i < b[l].size(); ++i) b[l][i] = flat[k++];
  }
}

MlpParams init_params(const MlpConfig& cfg, std::uint64_t seed) {
  MlpParams p = MlpParams::zeros(cfg);
  std::mt19937_64 rng(seed);
  for (int l = 0; l < cfg.layers(); ++l) {
    const double limit = std::sqrt(6.0 / (cfg.widths[l] + cfg.widths[l + 1]));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (Eigen::Index i = 0; i < p.W[l].rows(); ++i)
      for (Eigen::Index j = 0; j < p.W[l].cols(); ++j) p.W[l](i, j) = dist(rng);
  }
  return p;
}

Eigen::MatrixXd forward_batch(const MlpParams& params, const Eigen::MatrixXd& X) {
  if (params.W.empty() || X.rows() != params.W.front().cols())
    throw InvalidArgument("forward: input dimension does not match the network");
  Eigen::MatrixXd v = X;
  const std::size_t L = params.W.size();
  for (std::size_t l = 0; l < L; ++l) {
    Eigen::MatrixXd u = params.W[l] * v;
    u.colwise() += params.b[l];
    if (l + 1 < L)
      v = u.array().tanh().matrix();
    else
      v = std::move(u);
  }
  return v;
}

Eigen::VectorXd forward(const MlpParams& params, const Eigen::VectorXd& x_bar) {
  return forward_batch(params, x_bar);
}

BoundMlp bind(Tape& tape, const MlpParams& params) {
  BoundMlp net;
  for (std::size_t l = 0; l < params.W.size(); ++l) {
    net.W.push_back(tape.leaf(params.W[l]));
    net.b.push_back(tape.leaf(params.b[l]));
  }
  return net;
}

NodeId NetworkEval::d1(int j) const {
  if (j < 0 || j >= static_cast<int>(first.size()) || !first[j].valid())
    throw InvalidArgument("NetworkEval: first derivative was not requested");
  return first[j];
}

NodeId NetworkEval::d2(int j, int k) const {
  if (j > k) std::swap(j, k);
  if (j < 0 || k >= static_cast<int>(second.size()) || !second[j][k].valid())
    throw InvalidArgument("NetworkEval: second derivative was not requested");
  return second[j][k];
}

NetworkEval evaluate(Tape& tape, const BoundMlp& net, const Eigen::MatrixXd& X,
                     const DerivativeRequest& request) {
  const std::size_t L = net.W.size();
  if (L == 0) throw InvalidArgument("evaluate: empty network");
  const int n0 = static_cast<int>(tape.value(net.W.front()).cols());
  if (X.rows() != n0) throw InvalidArgument("evaluate: input dimension does not match the network");
  const Eigen::Index batch = X.cols();

  const auto in_range = [&](int j) {
    if (j < 0 || j >= n0) throw InvalidArgument("evaluate: derivative index out of range");
  };
  std::vector<char> need_first(static_cast<std::size_t>(n0), 0);
  std::vector<std::array<int, 2>> pairs;
  for (int j : request.first) {
    in_range(j);
    need_first[j] = 1;
  }
  for (auto jk : request.second) {
    in_range(jk[0]);
    in_range(jk[1]);
    if (jk[0] > jk[1]) std::swap(jk[0], jk[1]);
    need_first[jk[0]] = need_first[jk[1]] = 1;
    if (std::find(pairs.begin(), pairs.end(), jk) == pairs.end()) pairs.push_back(jk);
  }

  std::vector<NodeId> J(static_cast<std::size_t>(n0));
  for (int j = 0; j < n0; ++j) {
    if (!need_first[j]) continue;
    Eigen::MatrixXd e = Eigen::MatrixXd::Zero(n0, batch);
    e.row(j).setOnes();
    J[j] = tape.constant(std::move(e));
  }
  std::vector<NodeId> H(pairs.size());  // invalid while identically zero

  NodeId v = tape.constant(X);
  for (std::size_t l = 0; l < L; ++l) {
    const NodeId a = tape.affine(net.W[l], v, net.b[l]);
    std::vector<NodeId> z(static_cast<std::size_t>(n0));
    for (int j = 0; j < n0; ++j)
      if (J[j].valid()) z[j] = tape.matmul(net.W[l], J[j]);
    std::vector<NodeId> h(pairs.size());
    for (std::size_t p = 0; p < pairs.size(); ++p)
      if (H[p].valid()) h[p] = tape.matmul(net.W[l], H[p]);

    if (l + 1 == L) {
      v = a;
      J = z;
      H = h;
      break;
    }
    const NodeId s = tape.tanh(a);
    const NodeId ds = tape.one_minus_square(s);
    NodeId d2s;
    if (!pairs.empty()) d2s = tape.scale(tape.mul(s, ds), -2.0);
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      const auto [j, k] = pairs[p];
      NodeId term = tape.mul(d2s, tape.mul(z[j], z[k]));
      if (h[p].valid()) term = tape.add(term, tape.mul(ds, h[p]));
      H[p] = term;
    }
    for (int j = 0; j < n0; ++j)
      if (z[j].valid()) J[j] = tape.mul(ds, z[j]);
    v = s;
  }

  NetworkEval out;
  out.output = v;
  out.first.assign(static_cast<std::size_t>(n0), NodeId{});
  for (int j = 0; j < n0; ++j)
    if (need_first[j]) out.first[j] = J[j];
  out.second.assign(static_cast<std::size_t>(n0), std::vector<NodeId>(static_cast<std::size_t>(n0)));
  const Eigen::Index n_out = tape.value(v).rows();
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto [j, k] = pairs[p];
    out.second[j][k] = H[p].valid() ? H[p] : tape.constant(Eigen::MatrixXd::Zero(n_out, batch));
  }
  return out;
}

Eigen::MatrixXd input_jacobian(const MlpParams& params, const Eigen::VectorXd& x_bar) {
  Tape tape;
  const BoundMlp net = bind(tape, params);
  DerivativeRequest req;
  for (int j = 0; j < x_bar.size(); ++j) req.first.push_back(j);
  const NetworkEval ev = evaluate(tape, net, x_bar, req);
  Eigen::MatrixXd jac(tape.value(ev.output).rows(), x_bar.size());
  for (int j = 0; j < x_bar.size(); ++j) jac.col(j) = tape.value(ev.d1(j)).col(0);
  return jac;
}

double input_hessian_entry(const MlpParams& params, const Eigen::VectorXd& x_bar, int out,
                           int j, int k) {
  Tape tape;
  const BoundMlp net = bind(tape, params);
  const NetworkEval ev = evaluate(tape, net, x_bar, DerivativeRequest{{}, {{j, k}}});
  const Eigen::MatrixXd& h = tape.value(ev.d2(j, k));
  if (out < 0 || out >= h.rows()) throw InvalidArgument("input_hessian_entry: output index out of range");
  return h(out, 0);
}

MlpGradient grad_weights(const Tape& tape, const BoundMlp& net) {
  MlpGradient g;
  for (std::size_t l = 0; l < net.W.size(); ++l) {
    if (!tape.owns(net.W[l]) || !tape.owns(net.b[l]))
      throw InvalidArgument("grad_weights: parameters are not bound to this tape");
    g.W.push_back(tape.grad(net.W[l]));
    g.b.push_back(tape.grad(net.b[l]).col(0));
  }
  return g;
}

MlpGradient grad_weights(Tape& tape, NodeId scalar, const BoundMlp& net) {
  tape.backward(scalar);
  return grad_weights(tape, net);
}

}  // namespace cardiopinn
