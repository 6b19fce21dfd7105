// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance            run everything
//   acceptance --only 4   run one criterion
//   acceptance --list     print the criteria
//
// WARN marks a statistical check that is reported but never fails the run.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cardiopinn/error.hpp"
#include "cardiopinn/fem.hpp"
#include "cardiopinn/io.hpp"
#include "cardiopinn/kinetics.hpp"
#include "cardiopinn/pinn.hpp"
#include "cardiopinn/trainer.hpp"
#include "diffcheck.hpp"
#include "oracles.hpp"
#include "workbench/pipeline.hpp"

namespace fs = std::filesystem;
namespace wb = cardiopinn::workbench;
using namespace cardiopinn;

namespace {

enum class Verdict { pass, fail, warn };

struct Outcome {
  Verdict verdict = Verdict::fail;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  std::function<Outcome()> run;
};

std::string fmt(double v, int prec = 3) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

Outcome verdict(bool ok, std::string detail) { return {ok ? Verdict::pass : Verdict::fail, std::move(detail)}; }

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
  }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

struct ScratchDir {
  fs::path path;
  explicit ScratchDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("cardiopinn_accept_" + tag + "_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

// Rows of a training log keyed by column name; empty cells become NaN.
std::vector<std::map<std::string, double>> read_log(const fs::path& path) {
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  std::vector<std::string> cols;
  std::stringstream hs(line);
  for (std::string c; std::getline(hs, c, ',');) cols.push_back(c);
  std::vector<std::map<std::string, double>> rows;
  while (std::getline(in, line)) {
    std::map<std::string, double> row;
    std::size_t i = 0, start = 0;
    for (;;) {
      const auto comma = line.find(',', start);
      const std::string cell = line.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      row[cols.at(i++)] = cell.empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(cell);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(read_text(p)); }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

wb::RunOptions quiet_options(const fs::path& out, bool verbose) {
  wb::RunOptions o;
  o.out = out;
  o.deterministic = true;
  o.progress = verbose ? &std::cerr : nullptr;
  return o;
}

bool g_verbose = false;

// 1. Backward Euler at the default step against an adaptive explicit oracle.
Outcome kinetics_oracle() {
  const Stopwatch sw;
  const auto p = APParameters::cellular_example();
  const auto be = integrate_cell(p, NormalizationScalars::aliev_panfilov(), {1, 0}, {}, 0.01, 10000);
  const auto ref = oracle::reference_cell(p, {1, 0}, 100.0, 0.01, 1e-4);
  double dphi = 0, dr = 0, tau_phi = 0, tau_r = 0;
  for (std::size_t k = 0; k < be.size() && k < ref.size(); ++k) {
    const double a = std::abs(be[k].state.phi - ref[k].phi), b = std::abs(be[k].state.r - ref[k].r);
    if (a > dphi) dphi = a, tau_phi = ref[k].tau;
    if (b > dr) dr = b, tau_r = ref[k].tau;
  }
  const double t = sw.seconds();
  const bool ok = ref.size() == be.size() && dphi < 5e-3 && dr < 5e-3 && t < 5.0;
  return verdict(ok, "max|dphi| " + fmt(dphi) + " at tau " + fmt(tau_phi, 4) + ", max|dr| " + fmt(dr) + " at tau " +
                         fmt(tau_r, 4) + " (limit 5e-3 each), " + fmt(t, 2) + " s");
}

// 2. Spatially uniform FE run equals the 0-D integrator node by node.
Outcome homogeneity() {
  const Stopwatch sw;
  FemConfig cfg;
  cfg.dt = 1.0;
  cfg.t_end = 600.0;
  cfg.initial = InitialCondition::uniform(-50.0);
  const auto mesh = make_box_mesh({20, 20, 20}, {4, 4, 4});
  std::vector<double> times;
  std::vector<Eigen::VectorXd> Phi, r;
  MonodomainSolver(mesh, cfg).run(
      [&](double t, const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
        times.push_back(t);
        Phi.push_back(p);
        r.push_back(q);
      },
      false);
  const double dtau = normalize_time(cfg.dt, cfg.scalars);
  CellState s{normalize_potential(-50.0, cfg.scalars), 0.0};
  double worst = 0, peak = 0;
  for (std::size_t k = 0; k < times.size(); ++k) {
    if (k > 0) s = step_cell(cfg.params, s, dtau, 0.0);
    peak = std::max(peak, s.phi);
    for (Eigen::Index i = 0; i < Phi[k].size(); ++i) {
      worst = std::max(worst, std::abs(normalize_potential(Phi[k][i], cfg.scalars) - s.phi));
      worst = std::max(worst, std::abs(r[k][i] - s.r));
    }
  }
  const double t = sw.seconds();
  return verdict(worst < 1e-8 && peak > 0.9 && t < 10.0,
                 std::to_string(mesh.num_nodes()) + " nodes x " + std::to_string(times.size()) +
                     " steps, max deviation " + fmt(worst) + " (limit 1e-8), cell peak phi " + fmt(peak) + ", " +
                     fmt(t, 2) + " s");
}

// 3. Network derivatives against finite differences.
Outcome differentiation() {
  const Stopwatch sw;
  const auto r = diffcheck::run(50, 20240531);
  const double grad = std::max(r.grad_mse, r.grad_nested);
  const double t = sw.seconds();
  return verdict(r.jacobian < 1e-5 && r.hessian < 1e-4 && grad < 1e-4 && t < 30.0,
                 std::to_string(r.nets) + " nets: jacobian " + fmt(r.jacobian) + " (<1e-5), hessian " +
                     fmt(r.hessian) + " (<1e-4), weight gradient " + fmt(r.grad_mse) + ", through Hessian " +
                     fmt(r.grad_nested) + " (<1e-4), " + fmt(t, 2) + " s");
}

// 4. Scaled residuals against chain-rule oracles; printed coefficients.
Outcome residual_scaling() {
  const auto r = oracle::residual_check(200, 4242);
  ProblemSpec s;
  s.family = ResidualFamily::cellular;
  s.scaler = {{InputRole::t, InputRole::c}, {0, 4}, {100, 8}, 0, 1};
  const auto c = cellular_coefficients(s);
  const auto close = [](double a, double b) { return std::abs(a - b) <= 1e-15 * std::abs(b); };
  const bool coeff = close(c.dphi_dtbar, 0.01) && close(c.r_from_rhat, 2.5) && close(c.dr_dtbar, 0.025);
  const bool ok = r.worst_cellular < 1e-10 && r.worst_3d < 1e-10 && r.worst_batch < 1e-10 && coeff;
  return verdict(ok, std::to_string(r.cases) + " cases: cellular " + fmt(r.worst_cellular) + ", 3-D " +
                         fmt(r.worst_3d) + ", batched " + fmt(r.worst_batch) + " (limit 1e-10); coefficients " +
                         fmt(c.dphi_dtbar, 17) + ", " + fmt(c.r_from_rhat, 17) + ", " + fmt(c.dr_dtbar, 17));
}

// 5. Example 1, continuous, desk scale.
Outcome example1() {
  const Stopwatch sw;
  ScratchDir dir("ex1");
  const auto cfg = wb::load_config(wb::bundled_config("example1"));
  const auto opts = quiet_options(dir.path, g_verbose);
  wb::cmd_groundtruth(cfg, opts);
  wb::cmd_sample(cfg, opts);
  wb::cmd_train(cfg, opts);
  const auto report = read_json(dir.path / "train" / "report.json");
  const double mse = report.at("final_metrics").at("mse_phi").get<double>();
  const double rmse_r = report.at("final_metrics").at("rmse_r").get<double>();
  // Medians over the last five evaluations up to epoch 10000 and up to the end.
  std::vector<double> early, late;
  const long long end = cfg.training.epochs;
  for (const auto& row : read_log(dir.path / "train" / "log.csv")) {
    const double e = row.at("epoch"), rm = row.at("rmse_phi");
    if (std::isnan(rm)) continue;
    if (e > 5000 && e <= 10000) early.push_back(rm * rm);
    if (e > static_cast<double>(end) - 5000) late.push_back(rm * rm);
  }
  const double m_early = early.empty() ? NAN : median(early), m_late = late.empty() ? NAN : median(late);
  const double t = sw.seconds();
  const bool ok = mse <= 1e-3 && m_late < m_early && t <= 1800.0;
  return verdict(ok, "test MSE(phi) " + fmt(mse) + " (limit 1e-3; full-scale reference 3.6e-5), median MSE " +
                         fmt(m_early) + " near epoch 10k -> " + fmt(m_late) + " near " + std::to_string(end) +
                         ", RMSE(r) " + fmt(rmse_r) + ", " + fmt(t / 60, 3) + " min");
}

// 6. Clipping ablation (warning only).
Outcome clipping_ablation() {
  const Stopwatch sw;
  ScratchDir dir("clip");
  const long long epochs = 5000;
  const auto base = wb::load_config_with(wb::bundled_config("example1"),
                                         {{"sampling.regions", nlohmann::json::array({{{"name", "interior"},
                                                                                       {"count", 300},
                                                                                       {"role", "collocation"}}})},
                                          {"training.epochs", epochs},
                                          {"training.log_stride", 1},
                                          {"training.eval_stride", epochs},
                                          {"training.checkpoint_stride", epochs}});
  auto opts = quiet_options(dir.path, g_verbose);
  wb::cmd_groundtruth(base, opts);
  wb::cmd_sample(base, opts);
  int spiking = 0, clipped_finite = 0;
  std::string detail;
  for (int clip = 0; clip < 2; ++clip) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      auto cfg = base;
      cfg.seed = seed;
      cfg.training.clip.enabled = clip == 1;
      auto o = opts;
      o.out = dir.path / ((clip ? "clip_" : "noclip_") + std::to_string(seed));
      o.points = dir.path / "points";
      fs::create_directories(o.out);
      bool diverged = false;
      try {
        wb::cmd_train(cfg, o);
      } catch (const NumericalError&) {
        diverged = true;
      }
      const auto rows = read_log(o.out / "train" / "log.csv");
      double worst_ratio = 0;
      std::vector<double> window;
      for (const auto& row : rows) {
        const double l = row.at("loss_total");
        if (!std::isfinite(l)) diverged = true;
        if (window.size() >= 100) worst_ratio = std::max(worst_ratio, l / median(window));
        window.push_back(l);
        if (window.size() > 100) window.erase(window.begin());
      }
      if (clip) {
        if (!diverged) ++clipped_finite;
      } else if (diverged || worst_ratio >= 10.0) {
        ++spiking;
      }
      detail += std::string(clip ? " clip" : " noclip") + "/" + std::to_string(seed) + ":" +
                (diverged ? std::string("non-finite") : "x" + fmt(worst_ratio, 3));
    }
  }
  const bool ok = spiking >= 1 && clipped_finite == 3;
  Outcome out{ok ? Verdict::pass : Verdict::warn,
              std::to_string(epochs) + " epochs per run, unclipped runs with a spike " + std::to_string(spiking) +
                  "/3, clipped runs finite " + std::to_string(clipped_finite) + "/3; worst loss / trailing median:" +
                  detail + ", " + fmt(sw.seconds() / 60, 3) + " min"};
  return out;
}

// 7. Staged loss weight arithmetic, exact.
Outcome schedule_arithmetic() {
  const LossSchedule s{LossScheduleMode::staged, 1e-5, 1e-5, 10000, 20000};
  const double a = loss_weight_at(5000, s), b = loss_weight_at(40000, s), c = loss_weight_at(200000, s);
  return verdict(a == 1e-5 && b == 0.5 && c == 0.1,
                 "alpha_1(5000) = " + fmt(a, 17) + ", alpha_1(40000) = " + fmt(b, 17) + ", alpha_1(200000) = " + fmt(c, 17));
}

// 8. Example 2 trial 2, desk scale.
Outcome example2() {
  const Stopwatch sw;
  ScratchDir dir("ex2");
  const auto cfg = wb::load_config(wb::bundled_config("example2"));
  const auto opts = quiet_options(dir.path, g_verbose);
  wb::cmd_groundtruth(cfg, opts);
  wb::cmd_sample(cfg, opts);
  wb::cmd_train(cfg, opts);
  const auto m = read_json(dir.path / "train" / "report.json").at("final_metrics");
  const double mv = m.at("rmse_Phi_mV").get<double>(), rr = m.at("rmse_r").get<double>();
  const double t = sw.seconds();
  const bool ok = mv < 15.0 && rr < 0.5 && t <= 3600.0;
  return verdict(ok, "held-out RMSE(Phi) " + fmt(mv) + " mV (limit 15), RMSE(r) " + fmt(rr) + " (limit 0.5) on " +
                         std::to_string(m.at("n").get<long long>()) + " points, " + fmt(t / 60, 3) +
                         " min; full-scale reference 4.36 mV / 0.17");
}

double crossing_time(const std::vector<double>& t, const std::vector<double>& v, double level) {
  for (std::size_t k = 1; k < v.size(); ++k)
    if (v[k - 1] < level && v[k] >= level) return t[k - 1] + (t[k] - t[k - 1]) * (level - v[k - 1]) / (v[k] - v[k - 1]);
  return NAN;
}

double plane_wave_speed(int elements, double dt) {
  FemConfig cfg;
  cfg.dt = dt;
  cfg.t_end = 200.0;
  cfg.initial.excited = Box{{0, 0, 0}, {5, 10, 10}};
  const auto mesh = make_box_mesh({100, 10, 10}, {elements, 1, 1});
  const int i30 = elements * 30 / 100, i70 = elements * 70 / 100;
  std::vector<double> times, a, b;
  MonodomainSolver(mesh, cfg).run(
      [&](double t, const Eigen::VectorXd& Phi, const Eigen::VectorXd&) {
        times.push_back(t);
        a.push_back(Phi[i30]);
        b.push_back(Phi[i70]);
      },
      false);
  return 40.0 / (crossing_time(times, b, -20.0) - crossing_time(times, a, -20.0));
}

// 9. Temporal order of backward Euler and mesh convergence of the wave speed.
Outcome fem_convergence() {
  const Stopwatch sw;
  const auto p = APParameters::cellular_example();
  const auto phi_at = [&](double dtau) {
    const int n = static_cast<int>(std::llround(50.0 / dtau));
    return integrate_cell(p, NormalizationScalars::aliev_panfilov(), {1, 0}, {}, dtau, n).back().state.phi;
  };
  const double a = phi_at(0.04), b = phi_at(0.02), c = phi_at(0.01);
  const double order = std::log2(std::abs(a - b) / std::abs(b - c));
  const double v1 = plane_wave_speed(100, 0.5), v2 = plane_wave_speed(200, 0.5);
  const double change = std::abs(v2 - v1) / v2;
  const double t = sw.seconds();
  const bool ok = std::abs(order - 1.0) <= 0.3 && change < 0.10 && t < 300.0;
  return verdict(ok, "observed order " + fmt(order) + " (1 +- 0.3); wave speed " + fmt(v1, 4) + " mm/ms at h = 1 mm, " +
                         fmt(v2, 4) + " mm/ms at h = 0.5 mm, change " + fmt(100 * change, 3) + "% (limit 10%), " +
                         fmt(t, 3) + " s");
}

// 10. Byte-identical outputs on reruns (different thread counts).
Outcome determinism() {
  const Stopwatch sw;
  ScratchDir dir("det");
  const std::vector<std::pair<std::string, nlohmann::json>> shorten{
      {"training.epochs", 40},         {"training.eval_stride", 20}, {"training.checkpoint_stride", 20},
      {"training.log_stride", 5},      {"sampling.test_count", 200}};
  std::size_t compared = 0;
  std::string mismatch;
  for (const auto& id : wb::bundled_examples()) {
    auto overrides = shorten;
    overrides.push_back({"predict.times", nlohmann::json::array({0, id == "example1" ? 50 : 300})});
    if (id == "example1") overrides.push_back({"cell.c_values", nlohmann::json::array({4, 8})});
    const auto cfg = wb::load_config_with(wb::bundled_config(id), overrides);
    std::vector<std::map<std::string, std::string>> sums;
    for (int threads : {1, 3}) {
      auto o = quiet_options(dir.path / (id + "_" + std::to_string(threads)), g_verbose);
      o.threads = threads;
      std::map<std::string, std::string> files;
      for (const auto& m : wb::cmd_reproduce(wb::with_overrides(cfg, o), o))
        for (const auto& f : m.files) files[f.path] = wb::sha256_file(o.out / f.path);
      sums.push_back(std::move(files));
    }
    for (const auto& [path, sum] : sums[0]) {
      ++compared;
      const auto it = sums[1].find(path);
      if (it == sums[1].end() || it->second != sum) mismatch += " " + id + "/" + path;
    }
    if (sums[0].size() != sums[1].size()) mismatch += " " + id + ":file-list";
    for (const char* must : {"train/log.csv", "train/checkpoint.bin"})
      if (!sums[0].count(must)) mismatch += " " + id + ":missing-" + must;
  }
  return verdict(mismatch.empty() && compared > 0,
                 std::to_string(compared) + " files compared across 3 configs and thread counts 1/3" +
                     (mismatch.empty() ? std::string(", all identical") : ", differing:" + mismatch) + ", " +
                     fmt(sw.seconds(), 3) + " s");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  int only = 0;
  bool list = false;
  app.add_option("--only", only, "Run a single criterion (1-10)")->check(CLI::Range(1, 10));
  app.add_flag("--list", list, "List the criteria");
  app.add_flag("-v,--verbose", g_verbose, "Show pipeline progress");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> all{
      {1, "kinetics oracle", kinetics_oracle},
      {2, "FE homogeneity", homogeneity},
      {3, "differentiation", differentiation},
      {4, "residual scaling", residual_scaling},
      {5, "example 1 desk run", example1},
      {6, "clipping ablation", clipping_ablation},
      {7, "schedule arithmetic", schedule_arithmetic},
      {8, "3-D desk run", example2},
      {9, "FE convergence", fem_convergence},
      {10, "determinism", determinism},
  };

  if (list) {
    for (const auto& c : all) std::cout << c.id << "  " << c.name << "\n";
    return 0;
  }

  int failures = 0;
  for (const auto& c : all) {
    if (only && c.id != only) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {Verdict::fail, std::string("exception: ") + e.what()};
    }
    const char* tag = o.verdict == Verdict::pass ? "PASS" : o.verdict == Verdict::warn ? "WARN" : "FAIL";
    if (o.verdict == Verdict::fail) ++failures;
    std::cout << tag << " criterion " << c.id << " (" << c.name << "): " << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
