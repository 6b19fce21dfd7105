#pragma once

// File formats. Every writer goes through a temporary file in the target
// directory and renames it into place, so readers never see partial files.
// Numbers are printed with 17 significant digits (exact round trip).

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "cardiopinn/fem.hpp"
#include "cardiopinn/kinetics.hpp"
#include "cardiopinn/mesh.hpp"
#include "cardiopinn/mlp.hpp"
#include "cardiopinn/pinn.hpp"
#include "cardiopinn/sampling.hpp"
#include "cardiopinn/trainer.hpp"

namespace cardiopinn {

namespace fs = std::filesystem;

class AtomicFile {
 public:
  explicit AtomicFile(fs::path target, bool binary = false);
  ~AtomicFile();  // discards the temporary unless committed
  AtomicFile(const AtomicFile&) = delete;
  AtomicFile& operator=(const AtomicFile&) = delete;

  std::ofstream& stream() { return out_; }
  void commit();

 private:
  fs::path target_;
  fs::path temp_;
  std::ofstream out_;
  bool committed_ = false;
};

void write_text_atomic(const fs::path& path, const std::string& content);
std::string read_text(const fs::path& path);

// %.17g
std::string format_double(double v);

// tau,phi,r[,t_ms,Phi_mV]
void write_trajectory_csv(const fs::path& path, const Trajectory& trajectory,
                          const std::optional<NormalizationScalars>& scalars = std::nullopt);
Trajectory read_trajectory_csv(const fs::path& path);

// Nodal field rows x, y, z (mm), t (ms), Phi (mV), r; columns are rows of
// the 6 x M matrix, ordered by snapshot then node.
struct FieldDataset {
  Eigen::MatrixXd rows;

  std::size_t size() const { return static_cast<std::size_t>(rows.cols()); }
};

FieldDataset dataset_from_solution(const HexMesh& mesh, const FemSolution& solution);

// CSV with header x,y,z,t,Phi,r.
void write_dataset_csv(const fs::path& path, const FieldDataset& data);
// Binary: 8-byte magic "CPNNFLD\0", uint32 version (1), uint32 column count
// (6), then little-endian float64 values row by row.
void write_dataset_binary(const fs::path& path, const FieldDataset& data);
// Detects the format from the first bytes.
FieldDataset read_dataset(const fs::path& path);

GroundTruthTable groundtruth_from_dataset(const FieldDataset& data, const NormalizationScalars& scalars,
                                          const InputScaler& scaler,
                                          std::optional<double> t_stim = std::nullopt);

// VTK legacy ASCII unstructured grid with hexahedral cells and point data.
struct PointField {
  std::string name;
  Eigen::VectorXd values;
};
void write_vtk(const fs::path& path, const HexMesh& mesh, const std::vector<PointField>& fields,
               const std::string& title = "cardiopinn");

// Checkpoint: 8-byte magic "CPNNMLP\0", uint32 version (1), uint32 layer
// count L, L+1 uint32 widths, then per layer W (row-major) and b as
// little-endian float64. A JSON sidecar `<path>.json` describes the layout.
void save_checkpoint(const fs::path& path, const MlpParams& params);
MlpParams load_checkpoint(const fs::path& path);

// Adam companion: magic "CPNNADAM", uint32 version, uint32 reserved, int64
// step, float64 beta1, beta2, eps, then m and v in checkpoint order.
void save_optimizer_state(const fs::path& path, const OptimizerState& state);
OptimizerState load_optimizer_state(const fs::path& path, const MlpConfig& cfg);

// role,in_0,...,in_{n0-1},target_phi[,target_r], with `<path>.json` holding
// the scaler.
void write_pointset(const fs::path& path, const PointSet& points, const InputScaler& scaler);
struct LoadedPointSet {
  PointSet points;
  InputScaler scaler;
};
LoadedPointSet read_pointset(const fs::path& path);

std::string scaler_to_json(const InputScaler& scaler);
InputScaler scaler_from_json(const std::string& text);

// epoch,loss_total,loss_R1,loss_R2,loss_GT,uw_R1,uw_R2,uw_GT,grad_norm_pre,
// grad_norm_post,alpha1,lr,rmse_phi,rmse_r (empty where not evaluated).
void write_training_log(const fs::path& path, const TrainReport& report);

// Per-point physical inputs, targets, predictions and absolute errors.
void write_error_field_csv(const fs::path& path, const GroundTruthTable& table, const EvalMetrics& metrics);

}  // namespace cardiopinn
