// cardiopinn: ground truth, sampling, training, evaluation and prediction for
// Aliev-Panfilov PINN experiments.
//
// Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "cardiopinn/error.hpp"
#include "workbench/pipeline.hpp"

namespace wb = cardiopinn::workbench;

namespace {

constexpr int kConfigError = 2;
constexpr int kNumericalError = 3;
constexpr int kIoError = 4;

struct Common {
  std::string config;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  bool deterministic = false;
  bool quiet = false;
  std::string groundtruth;
  std::string points;
  std::string checkpoint;
};

void add_common(CLI::App* cmd, Common& c, bool needs_config) {
  auto* opt = cmd->add_option("--config", c.config, "Experiment configuration (JSON)");
  if (needs_config) opt->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", c.out, "Output directory")->capture_default_str();
  cmd->add_option("--seed", c.seed, "Seed for every random stream (overrides the config)");
  cmd->add_option("--threads", c.threads, "Worker threads (overrides the config)")->check(CLI::PositiveNumber);
  cmd->add_flag("--deterministic", c.deterministic, "Keep wall-clock values out of result files");
  cmd->add_flag("-q,--quiet", c.quiet, "No progress messages");
}

wb::RunOptions options(const Common& c) {
  wb::RunOptions o;
  o.out = c.out;
  o.seed = c.seed;
  o.threads = c.threads;
  o.deterministic = c.deterministic;
  o.groundtruth = c.groundtruth;
  o.points = c.points;
  o.checkpoint = c.checkpoint;
  o.progress = c.quiet ? nullptr : &std::cerr;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Physics-informed networks for cardiac electrophysiology"};
  app.set_version_flag("--version", wb::tool_version());
  app.require_subcommand(1);

  Common c;
  using Stage = wb::RunManifest (*)(const wb::ExperimentConfig&, const wb::RunOptions&);
  Stage stage = nullptr;
  std::string example;
  std::string config_dir = wb::default_config_dir().string();
  bool validate_only = false;

  auto* cell = app.add_subcommand("cell-run", "Integrate the single-cell model and write trajectories");
  add_common(cell, c, true);
  cell->callback([&] { stage = wb::cmd_cell_run; });

  auto* fem = app.add_subcommand("fem-run", "Run the finite element solver and write the field dataset");
  add_common(fem, c, true);
  fem->callback([&] { stage = wb::cmd_fem_run; });

  auto* sample = app.add_subcommand("sample", "Draw collocation, ground-truth and test points");
  add_common(sample, c, true);
  sample->add_option("--groundtruth", c.groundtruth, "Ground-truth directory (default OUT/groundtruth)");
  sample->callback([&] { stage = wb::cmd_sample; });

  auto* train = app.add_subcommand("train", "Train the network on sampled points");
  add_common(train, c, true);
  train->add_option("--points", c.points, "Point set directory (default OUT/points)");
  train->callback([&] { stage = wb::cmd_train; });

  auto* evaluate = app.add_subcommand("evaluate", "Compare a checkpoint with the ground truth");
  add_common(evaluate, c, true);
  evaluate->add_option("--checkpoint", c.checkpoint, "Checkpoint (default OUT/train/checkpoint.bin)");
  evaluate->add_option("--groundtruth", c.groundtruth, "Ground-truth directory (default OUT/groundtruth)");
  evaluate->callback([&] { stage = wb::cmd_evaluate; });

  auto* predict = app.add_subcommand("predict", "Evaluate a checkpoint on the configured query grid");
  add_common(predict, c, true);
  predict->add_option("--checkpoint", c.checkpoint, "Checkpoint (default OUT/train/checkpoint.bin)");
  predict->callback([&] { stage = wb::cmd_predict; });

  auto* reproduce = app.add_subcommand("reproduce", "Run every stage of a bundled desk-scale example");
  add_common(reproduce, c, false);
  reproduce->add_option("example", example, "example1, example2 or example3")->required();
  reproduce->add_option("--config-dir", config_dir, "Directory with the bundled configs")->capture_default_str();

  auto* validate = app.add_subcommand("validate", "Check a configuration file and exit");
  validate->add_option("config", c.config, "Configuration file")->required()->check(CLI::ExistingFile);
  validate->callback([&] { validate_only = true; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kConfigError;
  }

  try {
    if (validate_only) {
      const auto cfg = wb::load_config(c.config);
      std::cout << c.config << ": ok (" << wb::to_string(cfg.family) << ", sha256 " << wb::config_hash(cfg) << ")\n";
      return 0;
    }
    const auto opts = options(c);
    if (!example.empty()) {
      const auto path = c.config.empty() ? wb::bundled_config(example, config_dir) : std::filesystem::path(c.config);
      const auto cfg = wb::with_overrides(wb::load_config(path), opts);
      for (const auto& m : wb::cmd_reproduce(cfg, opts))
        if (opts.progress) *opts.progress << "wrote " << (opts.out / ("manifest_" + m.command + ".json")).string() << "\n";
      return 0;
    }
    const auto cfg = wb::with_overrides(wb::load_config(c.config), opts);
    const auto m = stage(cfg, opts);
    if (opts.progress) *opts.progress << "wrote " << (opts.out / ("manifest_" + m.command + ".json")).string() << "\n";
    return 0;
  } catch (const cardiopinn::InvalidArgument& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kConfigError;
  } catch (const cardiopinn::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumericalError;
  } catch (const cardiopinn::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIoError;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIoError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
