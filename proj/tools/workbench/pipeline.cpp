#include "workbench/pipeline.hpp"

#include <cmath>
#include <chrono>
#include <cstdio>
#include <map>
#include <ostream>
#include <sstream>

#include "cardiopinn/io.hpp"

#ifndef CARDIOPINN_CONFIG_DIR
#define CARDIOPINN_CONFIG_DIR "configs"
#endif
#ifndef CARDIOPINN_VERSION
#define CARDIOPINN_VERSION "0.0.0"
#endif

namespace cardiopinn::workbench {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

fs::path or_default(const fs::path& given, const fs::path& fallback) { return given.empty() ? fallback : given; }

fs::path gt_dir(const RunOptions& o) { return or_default(o.groundtruth, o.out / "groundtruth"); }
fs::path points_dir(const RunOptions& o) { return or_default(o.points, o.out / "points"); }
fs::path checkpoint_path(const RunOptions& o) { return or_default(o.checkpoint, o.out / "train" / "checkpoint.bin"); }

void say(const RunOptions& o, const std::string& msg) {
  if (o.progress) *o.progress << msg << std::endl;
}

RunManifest start(const std::string& command, const ExperimentConfig& cfg, const RunOptions& opts) {
  RunManifest m;
  m.command = command;
  m.config_name = cfg.name;
  m.config_hash = config_hash(cfg);
  m.tool_version = tool_version();
  m.seed = cfg.seed;
  m.deterministic = opts.deterministic;
  m.threads = cfg.threads;
  m.started = utc_now();
  return m;
}

RunManifest finish(RunManifest m, const RunOptions& opts) {
  m.finished = utc_now();
  m.write(opts.out);
  return m;
}

std::string label(const char* prefix, std::size_t k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%03zu", prefix, k);
  return buf;
}

std::string number_tag(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

std::optional<double> opt_number(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

ordered_json metrics_json(const EvalMetrics& m) {
  ordered_json j;
  j["n"] = m.n;
  j["rmse_phi"] = m.rmse_phi;
  j["rmse_Phi_mV"] = m.rmse_Phi_mV;
  j["mse_phi"] = m.rmse_phi * m.rmse_phi;
  if (std::isfinite(m.rmse_r)) j["rmse_r"] = m.rmse_r;
  else j["rmse_r"] = nullptr;
  return j;
}

HexMesh config_mesh(const ExperimentConfig& cfg) { return make_box_mesh(cfg.fem.lengths, cfg.fem.divisions); }

}  // namespace

std::string tool_version() { return CARDIOPINN_VERSION; }

ExperimentConfig with_overrides(ExperimentConfig cfg, const RunOptions& opts) {
  if (opts.seed) {
    cfg.seed = *opts.seed;
    cfg.document["seed"] = *opts.seed;
  }
  if (opts.threads) {
    if (*opts.threads < 1) throw ConfigError("--threads: must be at least 1");
    cfg.threads = *opts.threads;
    cfg.training.threads = *opts.threads;
  }
  return cfg;
}

RunManifest cmd_cell_run(const ExperimentConfig& cfg, const RunOptions& opts) {
  if (!cfg.is_cell()) throw ConfigError("cell-run needs the cell family");
  auto man = start("cell-run", cfg, opts);
  const fs::path dir = gt_dir(opts);
  fs::create_directories(dir);
  const auto cs = cfg.cell.c_values.empty() ? std::vector<double>{cfg.params.c} : cfg.cell.c_values;
  const auto ts = cfg.cell.t_stim_values.empty() ? std::vector<double>{cfg.stimulus.t_stim} : cfg.cell.t_stim_values;
  const auto n_steps = static_cast<int>(std::llround(cfg.cell.tau_end / cfg.cell.dtau));
  ordered_json index;
  index["family"] = to_string(cfg.family);
  index["runs"] = ordered_json::array();
  std::size_t k = 0;
  for (double c : cs) {
    for (double t_stim : ts) {
      APParameters p = cfg.params;
      p.c = c;
      StimulusProtocol stim = cfg.stimulus;
      stim.t_stim = t_stim;
      Trajectory kept;
      if (n_steps > 0) {
        const auto tr = integrate_cell(p, cfg.scalars, cfg.cell.initial, stim, cfg.cell.dtau, n_steps);
        for (std::size_t i = 0; i < tr.size(); i += static_cast<std::size_t>(cfg.cell.record_every)) kept.push_back(tr[i]);
      }
      const std::string file = label("trajectory", k++) + ".csv";
      write_trajectory_csv(dir / file, kept, cfg.scalars);
      man.add(opts.out, dir / file);
      index["runs"].push_back({{"file", file}, {"c", c}, {"t_stim", t_stim}});
    }
  }
  say(opts, "cell-run: " + std::to_string(k) + " trajectories");
  write_text_atomic(dir / "index.json", index.dump(2) + "\n");
  man.add(opts.out, dir / "index.json");
  return finish(std::move(man), opts);
}

RunManifest cmd_fem_run(const ExperimentConfig& cfg, const RunOptions& opts) {
  if (cfg.is_cell()) throw ConfigError("fem-run needs a 3-D family");
  auto man = start("fem-run", cfg, opts);
  const fs::path dir = gt_dir(opts);
  fs::create_directories(dir);
  const HexMesh mesh = config_mesh(cfg);
  std::vector<std::optional<double>> runs;
  if (cfg.fem.t_stim_values.empty()) runs.emplace_back(std::nullopt);
  for (double t : cfg.fem.t_stim_values) runs.emplace_back(t);
  ordered_json index;
  index["family"] = to_string(cfg.family);
  index["runs"] = ordered_json::array();
  for (std::size_t k = 0; k < runs.size(); ++k) {
    const FemConfig fc = cfg.fem_config(runs[k]);
    MonodomainSolver solver(mesh, fc);
    const fs::path vtk_dir = dir / "vtk" / label("run", k);
    std::size_t snap = 0;
    std::vector<fs::path> vtk_files;
    const auto observer = [&](double t, const Eigen::VectorXd& Phi, const Eigen::VectorXd& r) {
      if (cfg.fem.vtk_stride > 0 && snap % static_cast<std::size_t>(cfg.fem.vtk_stride) == 0) {
        fs::create_directories(vtk_dir);
        const fs::path p = vtk_dir / (label("Phi", snap) + ".vtk");
        write_vtk(p, mesh, {{"Phi", Phi}, {"r", r}}, "t = " + format_double(t) + " ms");
        vtk_files.push_back(p);
      }
      ++snap;
    };
    say(opts, "fem-run: simulation " + std::to_string(k + 1) + "/" + std::to_string(runs.size()));
    const FemSolution sol = solver.run(observer);
    const FieldDataset data = dataset_from_solution(mesh, sol);
    const bool csv = cfg.fem.format == DatasetFormat::csv;
    const std::string file = label("dataset", k) + (csv ? ".csv" : ".bin");
    if (csv) write_dataset_csv(dir / file, data);
    else write_dataset_binary(dir / file, data);
    man.add(opts.out, dir / file);
    for (const auto& p : vtk_files) man.add(opts.out, p);
    ordered_json run{{"file", file}, {"snapshots", sol.times.size()}};
    run["t_stim"] = runs[k] ? json(*runs[k]) : json(nullptr);
    index["runs"].push_back(run);
  }
  index["mesh"] = {{"lengths", {cfg.fem.lengths.x(), cfg.fem.lengths.y(), cfg.fem.lengths.z()}},
                   {"divisions", cfg.fem.divisions},
                   {"nodes", mesh.num_nodes()}};
  write_text_atomic(dir / "index.json", index.dump(2) + "\n");
  man.add(opts.out, dir / "index.json");
  return finish(std::move(man), opts);
}

RunManifest cmd_groundtruth(const ExperimentConfig& cfg, const RunOptions& opts) {
  return cfg.is_cell() ? cmd_cell_run(cfg, opts) : cmd_fem_run(cfg, opts);
}

std::vector<GroundTruthRun> load_groundtruth(const ExperimentConfig& cfg, const fs::path& dir) {
  json index;
  try {
    index = json::parse(read_text(dir / "index.json"));
  } catch (const json::exception& e) {
    throw IoError((dir / "index.json").string() + ": " + e.what());
  }
  if (index.value("family", "") != to_string(cfg.family))
    throw ConfigError((dir / "index.json").string() + ": ground truth was produced for another family");
  std::vector<GroundTruthRun> out;
  for (const auto& run : index.at("runs")) {
    GroundTruthRun g;
    g.file = run.at("file").get<std::string>();
    g.c = opt_number(run, "c");
    g.t_stim = opt_number(run, "t_stim");
    const auto t_stim = cfg.scaler.has(InputRole::t_stim) ? g.t_stim : std::nullopt;
    if (cfg.is_cell()) {
      const auto c = cfg.scaler.has(InputRole::c) ? g.c : std::nullopt;
      g.table = groundtruth_from_trajectory(read_trajectory_csv(dir / g.file), cfg.scaler, c, t_stim);
    } else {
      g.table = groundtruth_from_dataset(read_dataset(dir / g.file), cfg.scalars, cfg.scaler, t_stim);
    }
    out.push_back(std::move(g));
  }
  return out;
}

RunManifest cmd_sample(const ExperimentConfig& cfg, const RunOptions& opts) {
  auto man = start("sample", cfg, opts);
  GroundTruthTable table;
  table.roles = cfg.scaler.roles;
  for (auto& run : load_groundtruth(cfg, gt_dir(opts))) table.append(run.table);
  const std::size_t n = table.size();
  std::size_t n_gt = 0;
  if (cfg.sampling.gt_count) n_gt = *cfg.sampling.gt_count;
  else if (cfg.sampling.gt_fraction) n_gt = subsample_count(n, *cfg.sampling.gt_fraction);
  if (n_gt > n) throw ConfigError("sampling.gt_count: exceeds the " + std::to_string(n) + " ground-truth rows");
  const std::size_t n_test = std::min(cfg.sampling.test_count, n - n_gt);
  const auto parts = partition_rows(n, {n_gt, n_test}, substream_seed(cfg.seed, "split"));

  PointSet train = sample_points(cfg.scaler, cfg.sampling.regions, substream_seed(cfg.seed, "sampling"));
  PointSet gt = groundtruth_rows(table, parts[0], cfg.scaler, cfg.sampling.gt_with_r);
  if (!cfg.sampling.gt_with_r) gt.target_r.clear();
  train.append(gt);
  if (train.size() == 0) throw ConfigError("sampling: no training points requested");
  const PointSet test = groundtruth_rows(table, parts[1], cfg.scaler, true);

  const fs::path dir = points_dir(opts);
  fs::create_directories(dir);
  write_pointset(dir / "train.csv", train, cfg.scaler);
  man.add(opts.out, dir / "train.csv");
  man.add(opts.out, dir / "train.csv.json");
  if (test.size() > 0) {
    write_pointset(dir / "test.csv", test, cfg.scaler);
    man.add(opts.out, dir / "test.csv");
    man.add(opts.out, dir / "test.csv.json");
  } else {
    fs::remove(dir / "test.csv");
    fs::remove(dir / "test.csv.json");
  }
  say(opts, "sample: " + std::to_string(train.size()) + " training points (" + std::to_string(n_gt) +
                " ground truth of " + std::to_string(n) + "), " + std::to_string(test.size()) + " test points");
  return finish(std::move(man), opts);
}

RunManifest cmd_train(const ExperimentConfig& cfg, const RunOptions& opts) {
  auto man = start("train", cfg, opts);
  const fs::path pdir = points_dir(opts);
  const auto train_set = read_pointset(pdir / "train.csv");
  if (!(train_set.scaler == cfg.scaler)) throw ConfigError("train: point set scaler differs from the config");
  std::optional<PointSet> test;
  if (fs::exists(pdir / "test.csv")) {
    auto t = read_pointset(pdir / "test.csv");
    if (!(t.scaler == cfg.scaler)) throw ConfigError("train: test set scaler differs from the config");
    test = std::move(t.points);
  }
  const ProblemSpec spec = cfg.problem();
  TrainConfig tc = cfg.training;
  tc.seed = substream_seed(cfg.seed, "training");
  tc.threads = cfg.threads;
  const MlpParams start_params = init_params(cfg.network, substream_seed(cfg.seed, "init"));

  const fs::path dir = opts.out / "train";
  fs::create_directories(dir);
  const fs::path ckpt = dir / "checkpoint.bin";
  const fs::path adam = dir / "optimizer.bin";
  const auto on_checkpoint = [&](long long epoch, const MlpParams& p, const OptimizerState& st) {
    save_checkpoint(ckpt, p);
    save_optimizer_state(adam, st);
    say(opts, "train: checkpoint at epoch " + std::to_string(epoch));
  };
  say(opts, "train: " + std::to_string(tc.epochs) + " epochs on " + std::to_string(train_set.points.size()) + " points");
  const TrainResult res = train(spec, train_set.points, start_params, tc, test ? &*test : nullptr, on_checkpoint);

  write_training_log(dir / "log.csv", res.report);
  ordered_json report;
  report["epochs_completed"] = res.report.epochs_completed;
  report["diverged"] = res.report.diverged;
  if (res.report.diverged) {
    report["divergence_epoch"] = res.report.divergence_epoch;
    report["divergence_reason"] = res.report.divergence_reason;
  }
  if (res.report.final_metrics) report["final_metrics"] = metrics_json(*res.report.final_metrics);
  if (!opts.deterministic) report["wall_seconds"] = res.report.wall_seconds;
  write_text_atomic(dir / "report.json", report.dump(2) + "\n");
  for (const char* f : {"log.csv", "report.json", "checkpoint.bin", "checkpoint.bin.json", "optimizer.bin"})
    if (fs::exists(dir / f)) man.add(opts.out, dir / f);
  man = finish(std::move(man), opts);
  if (res.report.diverged)
    throw NumericalError("training diverged at epoch " + std::to_string(res.report.divergence_epoch) + ": " +
                         res.report.divergence_reason + " (last periodic checkpoint kept)");
  return man;
}

RunManifest cmd_evaluate(const ExperimentConfig& cfg, const RunOptions& opts) {
  auto man = start("evaluate", cfg, opts);
  const MlpParams params = load_checkpoint(checkpoint_path(opts));
  if (params.config().widths != cfg.network.widths) throw ConfigError("evaluate: checkpoint widths differ from the config");
  const ProblemSpec spec = cfg.problem();
  const auto runs = load_groundtruth(cfg, gt_dir(opts));
  GroundTruthTable all;
  all.roles = cfg.scaler.roles;
  for (const auto& r : runs) all.append(r.table);
  const EvalMetrics m = evaluate(params, spec, all);

  const fs::path dir = opts.out / "eval";
  fs::create_directories(dir);
  ordered_json j = metrics_json(m);
  j["runs"] = ordered_json::array();
  for (const auto& r : runs) {
    const EvalMetrics mr = evaluate(params, spec, r.table);
    auto e = metrics_json(mr);
    e["file"] = r.file;
    if (r.c) e["c"] = *r.c;
    if (r.t_stim) e["t_stim"] = *r.t_stim;
    j["runs"].push_back(e);
  }
  write_text_atomic(dir / "metrics.json", j.dump(2) + "\n");
  man.add(opts.out, dir / "metrics.json");
  write_error_field_csv(dir / "error_field.csv", all, m);
  man.add(opts.out, dir / "error_field.csv");

  if (!cfg.is_cell() && !cfg.evaluate.vtk_times.empty()) {
    const HexMesh mesh = config_mesh(cfg);
    const auto nn = static_cast<Eigen::Index>(mesh.num_nodes());
    const int it = cfg.scaler.index_of(InputRole::t);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < runs.size(); ++k) {
      const auto& tab = runs[k].table;
      if (tab.size() % mesh.num_nodes() != 0) throw IoError(runs[k].file + ": row count is not a multiple of the mesh size");
      for (double t : cfg.evaluate.vtk_times) {
        Eigen::Index snap = -1;
        for (Eigen::Index s = 0; s * nn < static_cast<Eigen::Index>(tab.size()); ++s)
          if (std::abs(tab.inputs(it, s * nn) - t) < 1e-9) snap = s;
        if (snap < 0) throw ConfigError("evaluate.vtk_times: no snapshot at t = " + number_tag(t) + " ms");
        const auto base = static_cast<Eigen::Index>(offset) + snap * nn;
        const auto phi = all.phi.segment(base, nn).array();
        const auto phi_hat = m.phi_hat.segment(base, nn).array();
        const Eigen::VectorXd Phi = phi * cfg.scalars.beta_phi - cfg.scalars.delta_phi;
        const Eigen::VectorXd Phi_hat = phi_hat * cfg.scalars.beta_phi - cfg.scalars.delta_phi;
        const Eigen::VectorXd err = (Phi - Phi_hat).cwiseAbs();
        const Eigen::VectorXd r = all.r.segment(base, nn);
        const Eigen::VectorXd r_hat = m.r_hat.segment(base, nn);
        const fs::path p = dir / "vtk" / (label("run", k) + "_t" + number_tag(t) + ".vtk");
        fs::create_directories(p.parent_path());
        write_vtk(p, mesh,
                  {{"Phi", Phi}, {"Phi_hat", Phi_hat}, {"abs_err_Phi", err}, {"r", r}, {"r_hat", r_hat},
                   {"abs_err_r", (r - r_hat).cwiseAbs()}},
                  "t = " + number_tag(t) + " ms");
        man.add(opts.out, p);
      }
      offset += tab.size();
    }
  }
  std::ostringstream s;
  s << "evaluate: rmse_phi " << m.rmse_phi << " (" << m.rmse_Phi_mV << " mV), rmse_r " << m.rmse_r << " over " << m.n
    << " points";
  say(opts, s.str());
  return finish(std::move(man), opts);
}

RunManifest cmd_predict(const ExperimentConfig& cfg, const RunOptions& opts) {
  auto man = start("predict", cfg, opts);
  const MlpParams params = load_checkpoint(checkpoint_path(opts));
  if (params.config().widths != cfg.network.widths) throw ConfigError("predict: checkpoint widths differ from the config");
  const auto& q = cfg.predict;
  const bool has_c = cfg.scaler.has(InputRole::c), has_ts = cfg.scaler.has(InputRole::t_stim);
  if (!q.c_values.empty() && !has_c) throw ConfigError("predict.c_values: c is not a network input");
  if (!q.t_stim_values.empty() && !has_ts) throw ConfigError("predict.t_stim_values: t_stim is not a network input");
  if (has_c && q.c_values.empty()) throw ConfigError("predict.c_values: empty query grid");
  if (has_ts && q.t_stim_values.empty()) throw ConfigError("predict.t_stim_values: empty query grid");
  if (q.times.empty()) throw ConfigError("predict.times: empty query grid");
  const auto cs = has_c ? q.c_values : std::vector<double>{0.0};
  const auto ts = has_ts ? q.t_stim_values : std::vector<double>{0.0};

  const fs::path dir = opts.out / "predict";
  fs::create_directories(dir);
  const int n0 = cfg.scaler.size();
  std::optional<HexMesh> mesh;
  if (!cfg.is_cell()) {
    for (int g : q.grid)
      if (g < 2) throw ConfigError("predict.grid: empty query grid (need at least 2 samples per axis)");
    mesh = make_box_mesh(cfg.fem.lengths, {q.grid[0] - 1, q.grid[1] - 1, q.grid[2] - 1});
  }
  const std::size_t n_space = mesh ? mesh->num_nodes() : 1;

  AtomicFile csv(dir / "prediction.csv");
  auto& out = csv.stream();
  for (int i = 0; i < n0; ++i) out << to_string(cfg.scaler.roles[i]) << ',';
  out << "phi_hat,r_hat,Phi_hat_mV\n";
  std::vector<fs::path> vtk_files;
  for (std::size_t ic = 0; ic < cs.size(); ++ic) {
    for (std::size_t is = 0; is < ts.size(); ++is) {
      for (std::size_t itime = 0; itime < q.times.size(); ++itime) {
        Eigen::MatrixXd X(n0, static_cast<Eigen::Index>(n_space));
        for (std::size_t s = 0; s < n_space; ++s) {
          for (int i = 0; i < n0; ++i) {
            double v = 0.0;
            switch (cfg.scaler.roles[i]) {
              case InputRole::x: v = mesh->nodes[s].x(); break;
              case InputRole::y: v = mesh->nodes[s].y(); break;
              case InputRole::z: v = mesh->nodes[s].z(); break;
              case InputRole::t: v = q.times[itime]; break;
              case InputRole::c: v = cs[ic]; break;
              case InputRole::t_stim: v = ts[is]; break;
            }
            X(i, static_cast<Eigen::Index>(s)) = v;
          }
        }
        const Eigen::MatrixXd Y = forward_batch(params, cfg.scaler.scale_points(X));
        const Eigen::VectorXd phi_hat = Y.row(0).transpose();
        const Eigen::VectorXd r_hat = Y.row(1).transpose() / 0.4;
        const Eigen::VectorXd Phi_hat = (phi_hat.array() * cfg.scalars.beta_phi - cfg.scalars.delta_phi).matrix();
        for (Eigen::Index s = 0; s < X.cols(); ++s) {
          for (int i = 0; i < n0; ++i) out << format_double(X(i, s)) << ',';
          out << format_double(phi_hat[s]) << ',' << format_double(r_hat[s]) << ',' << format_double(Phi_hat[s]) << '\n';
        }
        if (mesh) {
          std::string name = "predict";
          if (has_ts) name += "_tstim" + number_tag(ts[is]);
          name += "_" + label("t", itime) + ".vtk";
          const fs::path p = dir / "vtk" / name;
          fs::create_directories(p.parent_path());
          write_vtk(p, *mesh, {{"Phi_hat", Phi_hat}, {"r_hat", r_hat}}, "t = " + number_tag(q.times[itime]) + " ms");
          vtk_files.push_back(p);
        }
      }
    }
  }
  csv.commit();
  man.add(opts.out, dir / "prediction.csv");
  for (const auto& p : vtk_files) man.add(opts.out, p);
  say(opts, "predict: " + std::to_string(vtk_files.size()) + " VTK snapshots");
  return finish(std::move(man), opts);
}

std::vector<RunManifest> cmd_reproduce(const ExperimentConfig& cfg, const RunOptions& opts) {
  std::vector<RunManifest> out;
  out.push_back(cmd_groundtruth(cfg, opts));
  out.push_back(cmd_sample(cfg, opts));
  out.push_back(cmd_train(cfg, opts));
  out.push_back(cmd_evaluate(cfg, opts));
  if (!cfg.predict.times.empty()) out.push_back(cmd_predict(cfg, opts));
  return out;
}

fs::path default_config_dir() { return CARDIOPINN_CONFIG_DIR; }

std::vector<std::string> bundled_examples() { return {"example1", "example2", "example3"}; }

fs::path bundled_config(const std::string& id, const fs::path& dir) {
  static const std::map<std::string, std::string> files{{"example1", "example1-continuous-desk.json"},
                                                        {"example2", "example2-trial2-desk.json"},
                                                        {"example3", "example3-desk.json"}};
  const auto it = files.find(id);
  if (it == files.end()) throw ConfigError("unknown example '" + id + "' (expected example1, example2 or example3)");
  return dir / it->second;
}

ExperimentConfig load_config_with(const fs::path& path,
                                  const std::vector<std::pair<std::string, json>>& overrides) {
  json doc;
  try {
    doc = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  for (const auto& [key, value] : overrides) {
    json* node = &doc;
    std::string rest = key;
    for (auto dot = rest.find('.'); dot != std::string::npos; dot = rest.find('.')) {
      node = &(*node)[rest.substr(0, dot)];
      rest = rest.substr(dot + 1);
    }
    (*node)[rest] = value;
  }
  return parse_config(doc);
}

}  // namespace cardiopinn::workbench
