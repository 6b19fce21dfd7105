#include "cardiopinn/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <sstream>

#include "cardiopinn/error.hpp"
#include "cardiopinn/thread_pool.hpp"

namespace cardiopinn {

void LrSchedule::validate() const {
  if (steps.empty() || steps.front().first != 0)
    throw InvalidArgument("LrSchedule: the first step must start at epoch 0");
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (!(steps[i].second > 0.0)) throw InvalidArgument("LrSchedule: learning rates must be positive");
    if (i > 0 && steps[i].first <= steps[i - 1].first)
      throw InvalidArgument("LrSchedule: thresholds must be strictly increasing");
  }
}

double LrSchedule::at(long long epoch) const {
  double lr = steps.front().second;
  for (const auto& [from, rate] : steps)
    if (epoch >= from) lr = rate;
  return lr;
}

void LossSchedule::validate() const {
  if (!(alpha0 >= 0.0)) throw InvalidArgument("LossSchedule: alpha0 must be >= 0");
  if (mode == LossScheduleMode::constant) return;
  if (first_stage < 1 || stage < 1) throw InvalidArgument("LossSchedule: stage lengths must be >= 1");
  if (!(beta_l > 0.0)) throw InvalidArgument("LossSchedule: beta_l must be positive");
}

double loss_weight_at(long long epoch, const LossSchedule& s) {
  if (epoch < 0) throw InvalidArgument("loss_weight_at: negative epoch");
  if (s.mode == LossScheduleMode::constant || epoch < s.first_stage) return s.alpha0;
  const long long e_f = std::max(1LL, epoch / s.stage);
  if (s.mode == LossScheduleMode::staged) return s.alpha0 / (s.beta_l * static_cast<double>(e_f));
  return s.alpha0 * std::pow(s.beta_l, static_cast<double>(e_f));
}

void ClipConfig::validate() const {
  if (enabled && !(norm > 0.0)) throw InvalidArgument("ClipConfig: clip norm must be positive");
}

double gradient_norm(const MlpGradient& g) {
  double s = 0.0;
  for (std::size_t l = 0; l < g.W.size(); ++l) {
    if (!g.W[l].allFinite())
      throw NumericalError("non-finite gradient in W[" + std::to_string(l) + "]");
    if (!g.b[l].allFinite())
      throw NumericalError("non-finite gradient in b[" + std::to_string(l) + "]");
    s += g.W[l].squaredNorm() + g.b[l].squaredNorm();
  }
  return std::sqrt(s);
}

ClipResult clip_gradient(MlpGradient& g, const ClipConfig& cfg) {
  cfg.validate();
  ClipResult out;
  out.norm_pre = gradient_norm(g);
  out.norm_post = out.norm_pre;
  if (!cfg.enabled || out.norm_pre == 0.0) return out;
  if (cfg.mode == ClipMode::always_scale || out.norm_pre > cfg.norm) {
    g.scale(cfg.norm / out.norm_pre);
    out.norm_post = gradient_norm(g);
  }
  return out;
}

OptimizerState OptimizerState::zeros(const MlpConfig& cfg) {
  OptimizerState s;
  s.m = MlpParams::zeros(cfg);
  s.v = MlpParams::zeros(cfg);
  return s;
}

void adam_step(MlpParams& params, const MlpGradient& grad, OptimizerState& state, double lr) {
  if (!params.same_shape(grad) || !params.same_shape(state.m) || !params.same_shape(state.v))
    throw InvalidArgument("adam_step: shape mismatch");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  const auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
    p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + state.eps);
  };
  for (std::size_t l = 0; l < params.W.size(); ++l) {
    update(params.W[l], grad.W[l], state.m.W[l], state.v.W[l]);
    update(params.b[l], grad.b[l], state.m.b[l], state.v.b[l]);
  }
}

double rmse(const Eigen::VectorXd& predictions, const Eigen::VectorXd& truths) {
  if (predictions.size() != truths.size()) throw InvalidArgument("rmse: length mismatch");
  if (predictions.size() == 0) throw InvalidArgument("rmse: empty input");
  return std::sqrt((predictions - truths).squaredNorm() / static_cast<double>(predictions.size()));
}

double rmse(const std::vector<double>& predictions, const std::vector<double>& truths) {
  return rmse(Eigen::Map<const Eigen::VectorXd>(predictions.data(), static_cast<Eigen::Index>(predictions.size())),
              Eigen::Map<const Eigen::VectorXd>(truths.data(), static_cast<Eigen::Index>(truths.size())));
}

namespace {

EvalMetrics evaluate_columns(const MlpParams& params, const ProblemSpec& spec, const Eigen::MatrixXd& X,
                             const Eigen::VectorXd& phi, const Eigen::VectorXd* r) {
  if (params.W.empty() || params.W.front().cols() != X.rows())
    throw InvalidArgument("evaluate: network inputs do not match the data");
  if (params.W.back().rows() != 2) throw InvalidArgument("evaluate: network must have two outputs");
  EvalMetrics m;
  m.n = static_cast<std::size_t>(X.cols());
  if (m.n == 0) throw InvalidArgument("evaluate: no ground-truth points");
  m.phi_hat.resize(X.cols());
  m.r_hat.resize(X.cols());
  constexpr Eigen::Index block = 8192;
  for (Eigen::Index j = 0; j < X.cols(); j += block) {
    const Eigen::Index w = std::min(block, X.cols() - j);
    const Eigen::MatrixXd out = forward_batch(params, X.middleCols(j, w));
    m.phi_hat.segment(j, w) = out.row(0).transpose();
    m.r_hat.segment(j, w) = out.row(1).transpose() / spec.output.r_scale;
  }
  m.abs_err_phi = (m.phi_hat - phi).cwiseAbs();
  m.rmse_phi = rmse(m.phi_hat, phi);
  m.rmse_Phi_mV = m.rmse_phi * spec.scalars.beta_phi;
  if (r && r->size() == X.cols() && r->allFinite()) {
    m.abs_err_r = (m.r_hat - *r).cwiseAbs();
    m.rmse_r = rmse(m.r_hat, *r);
  }
  return m;
}

}  // namespace

EvalMetrics evaluate(const MlpParams& params, const ProblemSpec& spec, const PointSet& points) {
  const std::vector<std::size_t> gt = points.indices(PointRole::ground_truth);
  const PointSet sub = points.select(gt);
  const Eigen::VectorXd phi = Eigen::Map<const Eigen::VectorXd>(sub.target_phi.data(),
                                                                static_cast<Eigen::Index>(sub.size()));
  if (!sub.has_r()) return evaluate_columns(params, spec, sub.X, phi, nullptr);
  const Eigen::VectorXd r = Eigen::Map<const Eigen::VectorXd>(sub.target_r.data(),
                                                              static_cast<Eigen::Index>(sub.size()));
  return evaluate_columns(params, spec, sub.X, phi, &r);
}

EvalMetrics evaluate(const MlpParams& params, const ProblemSpec& spec, const GroundTruthTable& table) {
  if (table.roles != spec.scaler.roles) throw InvalidArgument("evaluate: dataset roles do not match the scaler");
  const Eigen::MatrixXd X = spec.scaler.scale_points(table.inputs);
  return evaluate_columns(params, spec, X, table.phi, &table.r);
}

void TrainConfig::validate() const {
  if (epochs < 0) throw InvalidArgument("TrainConfig: epochs must be >= 0");
  weights.validate();
  if (r1_schedule) r1_schedule->validate();
  lr.validate();
  clip.validate();
  if (chunk_size == 0) throw InvalidArgument("TrainConfig: chunk_size must be >= 1");
  if (eval_stride < 1 || log_stride < 1) throw InvalidArgument("TrainConfig: strides must be >= 1");
  if (checkpoint_stride < 0) throw InvalidArgument("TrainConfig: checkpoint_stride must be >= 0");
}

struct LossEvaluator::Impl {
  struct Chunk {
    PointRole role;
    Eigen::MatrixXd X;
    Eigen::MatrixXd target;  // 1 x n (ground truth) or Neumann signs (n_spatial x n)
  };

  ProblemSpec spec;
  const PointSet* points = nullptr;
  std::size_t chunk_size = 1024;
  std::vector<Chunk> fixed_chunks;  // everything but collocation points
  std::vector<Chunk> collocation_chunks;
  std::vector<std::size_t> collocation_index;
  std::array<std::size_t, kLossTerms> counts{};
  std::vector<int> spatial;  // spatial input indices
  mutable ThreadPool pool;

  Impl(const ProblemSpec& s, const PointSet& p, std::size_t chunk, int threads)
      : spec(s), points(&p), chunk_size(chunk), pool(threads) {
    for (InputRole role : {InputRole::x, InputRole::y, InputRole::z})
      if (spec.scaler.has(role)) spatial.push_back(spec.scaler.index_of(role));
    collocation_index = p.indices(PointRole::collocation);
    collocation_chunks = make_chunks(PointRole::collocation, collocation_index);
    for (PointRole role : {PointRole::ground_truth, PointRole::bc1, PointRole::bc2, PointRole::neumann}) {
      const auto idx = p.indices(role);
      auto c = make_chunks(role, idx);
      fixed_chunks.insert(fixed_chunks.end(), std::make_move_iterator(c.begin()),
                          std::make_move_iterator(c.end()));
      counts[static_cast<int>(term_of(role))] = idx.size();
    }
  }

  static LossTerm term_of(PointRole role) {
    switch (role) {
      case PointRole::ground_truth: return LossTerm::gt;
      case PointRole::bc1: return LossTerm::bc1;
      case PointRole::bc2: return LossTerm::bc2;
      case PointRole::neumann: return LossTerm::neumann;
      case PointRole::collocation: break;
    }
    return LossTerm::r1;
  }

  std::vector<Chunk> make_chunks(PointRole role, const std::vector<std::size_t>& idx) const {
    std::vector<Chunk> out;
    for (std::size_t start = 0; start < idx.size(); start += chunk_size) {
      const std::size_t n = std::min(chunk_size, idx.size() - start);
      Chunk c;
      c.role = role;
      c.X.resize(points->X.rows(), static_cast<Eigen::Index>(n));
      if (role == PointRole::ground_truth) c.target.resize(1, static_cast<Eigen::Index>(n));
      if (role == PointRole::neumann)
        c.target = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(spatial.size()), static_cast<Eigen::Index>(n));
      for (std::size_t k = 0; k < n; ++k) {
        const auto j = static_cast<Eigen::Index>(idx[start + k]);
        const auto col = static_cast<Eigen::Index>(k);
        c.X.col(col) = points->X.col(j);
        if (role == PointRole::ground_truth) c.target(0, col) = points->target_phi[idx[start + k]];
        if (role == PointRole::neumann) {
          bool found = false;
          for (std::size_t d = 0; d < spatial.size() && !found; ++d) {
            const double x = c.X(spatial[d], col);
            if (std::abs(x - spec.scaler.a) < 1e-12) c.target(static_cast<Eigen::Index>(d), col) = -1.0;
            else if (std::abs(x - spec.scaler.b) < 1e-12) c.target(static_cast<Eigen::Index>(d), col) = 1.0;
            else continue;
            found = true;
          }
          if (!found) throw InvalidArgument("LossEvaluator: Neumann point is not on a spatial boundary");
        }
      }
      out.push_back(std::move(c));
    }
    return out;
  }

  struct ChunkResult {
    std::array<double, kLossTerms> sumsq{};
    MlpGradient grad;
    bool has_grad = false;
  };

  ChunkResult run_chunk(const Chunk& c, const MlpParams& params, const LossWeights& w,
                        std::size_t n_collocation) const {
    ChunkResult res;
    Tape tape;
    const BoundMlp net = bind(tape, params);
    NodeId total;
    if (c.role == PointRole::collocation) {
      const NetworkEval ev = evaluate(tape, net, c.X, residual_request(spec));
      const ResidualNodes rn = residual_batch(tape, ev, c.X, spec);
      res.sumsq[static_cast<int>(LossTerm::r1)] = tape.value(rn.R1).squaredNorm();
      res.sumsq[static_cast<int>(LossTerm::r2)] = tape.value(rn.R2).squaredNorm();
      const double n = static_cast<double>(n_collocation);
      if (w.r1 > 0.0 || w.r2 > 0.0)
        total = tape.add(tape.sum_squares(rn.R1, w.r1 / n), tape.sum_squares(rn.R2, w.r2 / n));
    } else {
      const LossTerm term = term_of(c.role);
      DerivativeRequest req;
      if (c.role == PointRole::neumann) req.first = spatial;
      const NetworkEval ev = evaluate(tape, net, c.X, req);
      const NodeId phi = tape.row(ev.output, 0);
      NodeId diff;
      switch (c.role) {
        case PointRole::ground_truth: diff = tape.sub(phi, tape.constant(c.target)); break;
        case PointRole::bc1: diff = tape.shift(phi, -1.0); break;
        case PointRole::bc2: diff = phi; break;
        case PointRole::neumann:
          for (std::size_t d = 0; d < spatial.size(); ++d) {
            const NodeId part = tape.mul(tape.row(ev.d1(spatial[d]), 0),
                                         tape.constant(c.target.row(static_cast<Eigen::Index>(d))));
            diff = diff.valid() ? tape.add(diff, part) : part;
          }
          break;
        case PointRole::collocation: break;
      }
      res.sumsq[static_cast<int>(term)] = tape.value(diff).squaredNorm();
      const double weight = w[term];
      if (weight > 0.0) total = tape.sum_squares(diff, weight / static_cast<double>(counts[static_cast<int>(term)]));
    }
    if (total.valid()) {
      res.grad = grad_weights(tape, total, net);
      res.has_grad = true;
    }
    return res;
  }
};

LossEvaluator::LossEvaluator(const ProblemSpec& spec, const PointSet& points, std::size_t chunk_size,
                             int threads)
    : impl_(std::make_unique<Impl>(spec, points, chunk_size, threads)) {}

LossEvaluator::~LossEvaluator() = default;

LossAndGradient LossEvaluator::operator()(const MlpParams& params, const LossWeights& weights,
                                          const std::vector<std::size_t>& subset) const {
  const Impl& im = *impl_;
  std::vector<Impl::Chunk> sub_chunks;
  if (!subset.empty()) {
    std::vector<std::size_t> idx;
    idx.reserve(subset.size());
    for (std::size_t k : subset) idx.push_back(im.collocation_index.at(k));
    sub_chunks = im.make_chunks(PointRole::collocation, idx);
  }
  const std::vector<Impl::Chunk>& colloc = subset.empty() ? im.collocation_chunks : sub_chunks;
  const std::size_t n_colloc = subset.empty() ? im.collocation_index.size() : subset.size();

  std::vector<const Impl::Chunk*> chunks;
  for (const auto& c : colloc) chunks.push_back(&c);
  for (const auto& c : im.fixed_chunks) chunks.push_back(&c);

  std::vector<Impl::ChunkResult> results(chunks.size());
  im.pool.parallel_for(chunks.size(), [&](std::size_t i) {
    results[i] = im.run_chunk(*chunks[i], params, weights, n_colloc);
  });

  LossAndGradient out;
  out.grad = MlpParams::zeros(params.config());
  std::array<double, kLossTerms> sums{};
  for (const auto& r : results) {  // fixed order
    for (int t = 0; t < kLossTerms; ++t) sums[t] += r.sumsq[t];
    if (r.has_grad) out.grad.axpy(1.0, r.grad);
  }
  std::array<std::size_t, kLossTerms> counts = im.counts;
  counts[static_cast<int>(LossTerm::r1)] = n_colloc;
  counts[static_cast<int>(LossTerm::r2)] = n_colloc;
  for (int t = 0; t < kLossTerms; ++t) {
    if (counts[t] == 0) continue;
    out.loss.counts[t] = counts[t];
    out.loss.unweighted[t] = sums[t] / static_cast<double>(counts[t]);
    out.loss.weighted[t] = weights[static_cast<LossTerm>(t)] * out.loss.unweighted[t];
    out.loss.total += out.loss.weighted[t];
  }
  return out;
}

TrainResult train(const ProblemSpec& spec, const PointSet& points, const MlpParams& start,
                  const TrainConfig& cfg, const PointSet* eval_set, const CheckpointCallback& on_checkpoint,
                  std::optional<OptimizerState> state) {
  spec.validate();
  cfg.validate();
  points.validate(spec.scaler);
  if (points.size() == 0) throw InvalidArgument("train: no training points");
  const MlpConfig net_cfg = start.config();
  net_cfg.validate();
  if (net_cfg.inputs() != spec.scaler.size() || net_cfg.outputs() != 2)
    throw InvalidArgument("train: network shape does not match the problem (inputs, 2 outputs)");

  const auto t0 = std::chrono::steady_clock::now();
  TrainResult res;
  res.params = start;
  res.optimizer = state ? std::move(*state) : OptimizerState::zeros(net_cfg);
  if (!res.optimizer.m.same_shape(start)) throw InvalidArgument("train: optimizer state does not match the network");

  LossEvaluator loss_eval(spec, points, cfg.chunk_size, cfg.threads);
  const std::size_t n_colloc = points.count(PointRole::collocation);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> perm(n_colloc);
  for (std::size_t i = 0; i < n_colloc; ++i) perm[i] = i;

  const long long first = res.optimizer.step;
  const long long last = first + cfg.epochs;
  long long last_checkpoint = -1;
  for (long long e = first; e < last; ++e) {
    LossWeights w = cfg.weights;
    if (cfg.r1_schedule) w.r1 = loss_weight_at(e, *cfg.r1_schedule);
    const double lr = cfg.lr.at(e);

    std::vector<std::size_t> subset;
    if (cfg.collocation_batch > 0 && cfg.collocation_batch < n_colloc) {
      for (std::size_t i = 0; i < cfg.collocation_batch; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n_colloc - 1);
        std::swap(perm[i], perm[pick(rng)]);
      }
      subset.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(cfg.collocation_batch));
      std::sort(subset.begin(), subset.end());
    }

    LossAndGradient lg = loss_eval(res.params, w, subset);
    const auto diverge = [&](const std::string& why) {
      res.report.diverged = true;
      res.report.divergence_epoch = e;
      res.report.divergence_reason = why;
    };
    if (!std::isfinite(lg.loss.total)) {
      diverge("non-finite loss");
      break;
    }
    ClipResult clip;
    try {
      clip = clip_gradient(lg.grad, cfg.clip);
    } catch (const NumericalError& err) {
      diverge(err.what());
      break;
    }

    const bool final_epoch = e + 1 == last;
    if ((e - first) % cfg.log_stride == 0 || final_epoch) {
      LogRow row;
      row.epoch = e;
      row.loss = lg.loss;
      row.grad_norm_pre = clip.norm_pre;
      row.grad_norm_post = clip.norm_post;
      row.alpha1 = w.r1;
      row.lr = lr;
      if (eval_set && ((e - first) % cfg.eval_stride == 0 || final_epoch)) {
        const EvalMetrics m = evaluate(res.params, spec, *eval_set);
        row.rmse_phi = m.rmse_phi;
        row.rmse_r = m.rmse_r;
      }
      res.report.rows.push_back(std::move(row));
    }

    MlpParams next = res.params;
    OptimizerState next_state = res.optimizer;
    adam_step(next, lg.grad, next_state, lr);
    if (!next.all_finite()) {
      diverge("non-finite parameters after the update");
      break;
    }
    res.params = std::move(next);
    res.optimizer = std::move(next_state);
    res.report.epochs_completed = e + 1 - first;

    if (on_checkpoint && cfg.checkpoint_stride > 0 && (e + 1 - first) % cfg.checkpoint_stride == 0) {
      on_checkpoint(e + 1, res.params, res.optimizer);
      last_checkpoint = e + 1;
    }
  }

  if (!res.report.diverged) {
    if (on_checkpoint && last_checkpoint != res.optimizer.step) on_checkpoint(res.optimizer.step, res.params, res.optimizer);
    if (eval_set && eval_set->count(PointRole::ground_truth) > 0)
      res.report.final_metrics = evaluate(res.params, spec, *eval_set);
  }
  res.report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

}  // namespace cardiopinn
