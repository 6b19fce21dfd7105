#pragma once

// Adam with step learning rates, gradient clipping and a staged weight for the
// R1 loss term. Gradients are accumulated over fixed chunks of points in
// chunk order, so results do not depend on the number of threads.

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "cardiopinn/mlp.hpp"
#include "cardiopinn/pinn.hpp"
#include "cardiopinn/sampling.hpp"

namespace cardiopinn {

struct LrSchedule {
  // (first epoch, learning rate), thresholds strictly increasing from 0.
  std::vector<std::pair<long long, double>> steps{{0, 5e-3}};

  void validate() const;
  double at(long long epoch) const;
  static LrSchedule constant(double lr) { return LrSchedule{{{0, lr}}}; }
};

enum class LossScheduleMode {
  constant,   // alpha0 throughout
  staged,     // alpha0 / (beta_l * max(1, floor(e / E_s))) once e >= E_1
  geometric,  // alpha0 * beta_l^floor(e / E_s) once e >= E_1, strictly decreasing
};

struct LossSchedule {
  LossScheduleMode mode = LossScheduleMode::constant;
  double alpha0 = 1.0;
  double beta_l = 1e-5;
  long long first_stage = 10000;  // E_1
  long long stage = 20000;        // E_s

  void validate() const;
};

double loss_weight_at(long long epoch, const LossSchedule& schedule);

enum class ClipMode { scale_if_exceeds, always_scale };

struct ClipConfig {
  bool enabled = true;
  double norm = 1.0;  // l_c
  ClipMode mode = ClipMode::scale_if_exceeds;

  void validate() const;
};

struct ClipResult {
  double norm_pre = 0.0;
  double norm_post = 0.0;
};

// Euclidean norm over all entries. Throws NumericalError naming the first
// non-finite weight or bias block.
double gradient_norm(const MlpGradient& g);
ClipResult clip_gradient(MlpGradient& g, const ClipConfig& cfg);

struct OptimizerState {
  MlpParams m;
  MlpParams v;
  long long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static OptimizerState zeros(const MlpConfig& cfg);
};

void adam_step(MlpParams& params, const MlpGradient& grad, OptimizerState& state, double lr);

double rmse(const std::vector<double>& predictions, const std::vector<double>& truths);
double rmse(const Eigen::VectorXd& predictions, const Eigen::VectorXd& truths);

struct EvalMetrics {
  std::size_t n = 0;
  double rmse_phi = 0.0;
  double rmse_r = std::numeric_limits<double>::quiet_NaN();  // NaN without r targets
  double rmse_Phi_mV = 0.0;
  Eigen::VectorXd abs_err_phi;  // |phi_hat - phi| per point
  Eigen::VectorXd abs_err_r;
  Eigen::VectorXd phi_hat;
  Eigen::VectorXd r_hat;        // already divided by the output scale
};

// Uses the ground-truth points of `points` only.
EvalMetrics evaluate(const MlpParams& params, const ProblemSpec& spec, const PointSet& points);
EvalMetrics evaluate(const MlpParams& params, const ProblemSpec& spec, const GroundTruthTable& table);

struct TrainConfig {
  long long epochs = 1000;
  LossWeights weights;
  // Overrides weights.r1 when set.
  std::optional<LossSchedule> r1_schedule;
  LrSchedule lr;
  ClipConfig clip;
  std::size_t chunk_size = 1024;
  // 0 is full batch; otherwise each epoch draws this many collocation points.
  std::size_t collocation_batch = 0;
  int threads = 1;
  long long eval_stride = 1000;
  long long checkpoint_stride = 10000;
  long long log_stride = 1;
  std::uint64_t seed = 0;  // mini-batch draws only

  void validate() const;
};

struct LogRow {
  long long epoch = 0;
  LossBreakdown loss;
  double grad_norm_pre = 0.0;
  double grad_norm_post = 0.0;
  double alpha1 = 0.0;
  double lr = 0.0;
  double rmse_phi = std::numeric_limits<double>::quiet_NaN();
  double rmse_r = std::numeric_limits<double>::quiet_NaN();
};

struct TrainReport {
  std::vector<LogRow> rows;
  long long epochs_completed = 0;
  bool diverged = false;
  long long divergence_epoch = -1;
  std::string divergence_reason;
  std::optional<EvalMetrics> final_metrics;
  double wall_seconds = 0.0;
};

struct TrainResult {
  MlpParams params;  // last finite parameters
  OptimizerState optimizer;
  TrainReport report;
};

using CheckpointCallback =
    std::function<void(long long epoch, const MlpParams& params, const OptimizerState& state)>;

// Loss and weight gradient of the full training set at fixed weights.
struct LossAndGradient {
  LossBreakdown loss;
  MlpGradient grad;
};

class LossEvaluator {
 public:
  LossEvaluator(const ProblemSpec& spec, const PointSet& points, std::size_t chunk_size, int threads);
  ~LossEvaluator();
  LossEvaluator(const LossEvaluator&) = delete;
  LossEvaluator& operator=(const LossEvaluator&) = delete;

  // `collocation_subset` selects collocation points for mini-batching; empty
  // means all of them.
  LossAndGradient operator()(const MlpParams& params, const LossWeights& weights,
                             const std::vector<std::size_t>& collocation_subset = {}) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// `start` and `state` continue an earlier run when given. `on_checkpoint`
// fires every checkpoint_stride epochs and after the last epoch; it is not
// called after divergence.
TrainResult train(const ProblemSpec& spec, const PointSet& points, const MlpParams& start,
                  const TrainConfig& cfg, const PointSet* eval_set = nullptr,
                  const CheckpointCallback& on_checkpoint = {},
                  std::optional<OptimizerState> state = std::nullopt);

}  // namespace cardiopinn
