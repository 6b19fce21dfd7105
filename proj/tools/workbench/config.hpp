#pragma once

// Experiment description read from JSON. Parsing is strict: unknown keys,
// wrong types and out-of-range values are rejected with the offending key
// path before anything runs. "comment" keys are allowed in every object.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cardiopinn/error.hpp"
#include "cardiopinn/fem.hpp"
#include "cardiopinn/kinetics.hpp"
#include "cardiopinn/mlp.hpp"
#include "cardiopinn/pinn.hpp"
#include "cardiopinn/sampling.hpp"
#include "cardiopinn/trainer.hpp"

namespace cardiopinn::workbench {

class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

enum class Family { cell, cube3d, cube3d_param };

std::string to_string(Family f);

struct CellRunConfig {
  double dtau = 0.01;
  double tau_end = 100.0;
  int record_every = 1;
  CellState initial{1.0, 0.0};
  // One trajectory per (c, t_stim) pair. Empty lists fall back to
  // params.c and stimulus.t_stim.
  std::vector<double> c_values;
  std::vector<double> t_stim_values;  // TU
};

enum class DatasetFormat { csv, binary };

struct FemRunConfig {
  Vec3 lengths{100.0, 100.0, 100.0};
  std::array<int, 3> divisions{31, 31, 10};
  double dt = 2.0;
  double t_end = 2000.0;
  InitialCondition initial = InitialCondition::planar_front();
  int snapshot_stride = 1;
  int vtk_stride = 0;  // 0 disables the VTK series
  DatasetFormat format = DatasetFormat::csv;
  double newton_tol = 1e-8;
  int newton_max_iter = 20;
  LinearSolverKind linear_solver = LinearSolverKind::direct;
  // One simulation per value (ms); empty means a single run at stimulus.t_stim.
  std::vector<double> t_stim_values;
};

struct SamplingConfig {
  std::vector<SamplingRegion> regions;
  std::optional<double> gt_fraction;
  std::optional<std::size_t> gt_count;
  bool gt_with_r = false;
  std::size_t test_count = 10000;  // held out from the training rows
};

struct EvaluateConfig {
  std::vector<double> vtk_times;  // ms, 3-D only
};

struct PredictConfig {
  std::array<int, 3> grid{0, 0, 0};  // sample counts per axis (3-D)
  std::vector<double> times;
  std::vector<double> t_stim_values;
  std::vector<double> c_values;
};

struct ExperimentConfig {
  std::string name;
  Family family = Family::cell;
  std::uint64_t seed = 0;
  int threads = 1;
  APParameters params;
  NormalizationScalars scalars;
  ConductivityTensor conductivity;
  StimulusProtocol stimulus;
  std::optional<StimulusShape> residual_stimulus;
  InputScaler scaler;
  MlpConfig network;
  CellRunConfig cell;
  FemRunConfig fem;
  SamplingConfig sampling;
  TrainConfig training;
  EvaluateConfig evaluate;
  PredictConfig predict;

  // The parsed document, used for hashing and for overrides.
  nlohmann::json document;

  ProblemSpec problem() const;
  FemConfig fem_config(std::optional<double> t_stim) const;
  bool is_cell() const { return family == Family::cell; }
};

ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const std::filesystem::path& path);

// SHA-256 of the canonical (sorted-key, compact) serialization.
std::string config_hash(const ExperimentConfig& cfg);

}  // namespace cardiopinn::workbench
