#pragma once

// Workbench stages. Each stage reads and writes files below an output
// directory and returns the manifest it wrote:
//
//   groundtruth/  trajectory_NNN.csv or dataset_NNN.{csv,bin}, index.json, vtk/
//   points/       train.csv, test.csv (+ scaler sidecars)
//   train/        checkpoint.bin, optimizer.bin, log.csv, report.json
//   eval/         metrics.json, error_field.csv, vtk/
//   predict/      prediction.csv, vtk/
//
// Errors surface as ConfigError/InvalidArgument, NumericalError or IoError.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "workbench/config.hpp"
#include "workbench/manifest.hpp"

namespace cardiopinn::workbench {

namespace fs = std::filesystem;

std::string tool_version();

struct RunOptions {
  fs::path out = ".";
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  // Omits wall-clock values from every output file except manifests.
  bool deterministic = false;
  // Input locations; empty means the default place under `out`.
  fs::path groundtruth;
  fs::path points;
  fs::path checkpoint;
  std::ostream* progress = nullptr;
};

// Seed and thread overrides from the command line.
ExperimentConfig with_overrides(ExperimentConfig cfg, const RunOptions& opts);

RunManifest cmd_cell_run(const ExperimentConfig& cfg, const RunOptions& opts);
RunManifest cmd_fem_run(const ExperimentConfig& cfg, const RunOptions& opts);
// cell-run or fem-run depending on the family.
RunManifest cmd_groundtruth(const ExperimentConfig& cfg, const RunOptions& opts);
RunManifest cmd_sample(const ExperimentConfig& cfg, const RunOptions& opts);
// Throws NumericalError after writing the log when training diverges; the
// last periodic checkpoint is left in place.
RunManifest cmd_train(const ExperimentConfig& cfg, const RunOptions& opts);
RunManifest cmd_evaluate(const ExperimentConfig& cfg, const RunOptions& opts);
RunManifest cmd_predict(const ExperimentConfig& cfg, const RunOptions& opts);

// All stages in order (predict only when the config has a query grid).
std::vector<RunManifest> cmd_reproduce(const ExperimentConfig& cfg, const RunOptions& opts);

// Ground truth of every run in a groundtruth/ directory, in index order.
struct GroundTruthRun {
  std::string file;
  std::optional<double> c;
  std::optional<double> t_stim;
  GroundTruthTable table;
};
std::vector<GroundTruthRun> load_groundtruth(const ExperimentConfig& cfg, const fs::path& dir);

// Bundled configuration files.
fs::path default_config_dir();
std::vector<std::string> bundled_examples();
// "example1", "example2", "example3" map onto the desk-scale files.
fs::path bundled_config(const std::string& id, const fs::path& dir = default_config_dir());

// Parses a config after replacing dotted keys, e.g. {"training.epochs", 200}.
ExperimentConfig load_config_with(const fs::path& path,
                                  const std::vector<std::pair<std::string, nlohmann::json>>& overrides);

}  // namespace cardiopinn::workbench
