#include "workbench/config.hpp"

#include <fstream>
#include <set>

#include "cardiopinn/io.hpp"
#include "workbench/manifest.hpp"

namespace cardiopinn::workbench {

using nlohmann::json;

namespace {

// Walks one JSON object, remembering which keys were consumed so that
// leftovers can be reported.
class Obj {
 public:
  Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_, "expected an object");
  }

  [[noreturn]] static void fail(const std::string& path, const std::string& what) {
    throw ConfigError(path + ": " + what);
  }

  std::string at(const std::string& key) const { return path_ + "." + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  const json& need(const std::string& key) {
    const json* v = find(key);
    if (!v) fail(at(key), "missing required key");
    return *v;
  }

  double number(const std::string& key, double def) {
    const json* v = find(key);
    return v ? as_number(*v, at(key)) : def;
  }
  double number(const std::string& key) { return as_number(need(key), at(key)); }

  long long integer(const std::string& key, long long def) {
    const json* v = find(key);
    return v ? as_integer(*v, at(key)) : def;
  }

  bool boolean(const std::string& key, bool def) {
    const json* v = find(key);
    if (!v) return def;
    if (!v->is_boolean()) fail(at(key), "expected true or false");
    return v->get<bool>();
  }

  std::string text(const std::string& key, const std::string& def) {
    const json* v = find(key);
    if (!v) return def;
    if (!v->is_string()) fail(at(key), "expected a string");
    return v->get<std::string>();
  }

  std::vector<double> numbers(const std::string& key) {
    const json* v = find(key);
    if (!v) return {};
    if (!v->is_array()) fail(at(key), "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v->size(); ++i) out.push_back(as_number((*v)[i], at(key) + "[" + std::to_string(i) + "]"));
    return out;
  }

  template <std::size_t N>
  std::array<double, N> triple(const std::string& key, std::array<double, N> def) {
    const json* v = find(key);
    if (!v) return def;
    const auto xs = numbers(key);
    if (xs.size() != N) fail(at(key), "expected " + std::to_string(N) + " numbers");
    std::array<double, N> out{};
    std::copy(xs.begin(), xs.end(), out.begin());
    return out;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (it.key() != "comment" && !seen_.count(it.key())) fail(at(it.key()), "unknown key");
  }

  static double as_number(const json& v, const std::string& path) {
    if (!v.is_number()) fail(path, "expected a number");
    return v.get<double>();
  }

  static long long as_integer(const json& v, const std::string& path) {
    if (!v.is_number_integer()) fail(path, "expected an integer");
    return v.get<long long>();
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class E>
E choose(const std::string& value, const std::vector<std::pair<std::string, E>>& options,
         const std::string& path) {
  std::string list;
  for (const auto& [name, e] : options) {
    if (name == value) return e;
    list += (list.empty() ? "" : ", ") + name;
  }
  Obj::fail(path, "'" + value + "' is not one of " + list);
}

// Runs a core validate() and reports its message under the config path.
template <class F>
void checked(const std::string& path, F&& f) {
  try {
    f();
  } catch (const InvalidArgument& e) {
    if (dynamic_cast<const ConfigError*>(&e)) throw;
    Obj::fail(path, e.what());
  }
}

std::vector<double> expand_values(Obj& o, const std::string& key) {
  const json* v = o.find(key);
  if (!v) return {};
  if (v->is_array()) return o.numbers(key);
  Obj r(*v, o.at(key));
  const double lo = r.number("lo"), hi = r.number("hi");
  const long long n = r.integer("count", 0);
  r.finish();
  if (n < 1) Obj::fail(o.at(key) + ".count", "must be at least 1");
  if (n == 1) return {lo};
  std::vector<double> out;
  for (long long k = 0; k < n; ++k) out.push_back(lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(n - 1));
  return out;
}

APParameters parse_params(Obj o, APParameters p) {
  p.alpha = o.number("alpha", p.alpha);
  p.b = o.number("b", p.b);
  p.c = o.number("c", p.c);
  p.gamma = o.number("gamma", p.gamma);
  p.mu1 = o.number("mu1", p.mu1);
  p.mu2 = o.number("mu2", p.mu2);
  o.finish();
  return p;
}

StimulusProtocol parse_stimulus(Obj o, Family family) {
  StimulusProtocol s;
  s.amplitude = o.number("amplitude", 0.0);
  s.t_stim = o.number("t_stim", 0.0);
  s.half_width = o.number("half_width", 1e-6);
  s.shape = choose<StimulusShape>(o.text("shape", "square"),
                                  {{"square", StimulusShape::square}, {"exponential", StimulusShape::exponential}},
                                  o.at("shape"));
  s.unit = choose<TimeUnit>(o.text("unit", family == Family::cell ? "tu" : "ms"),
                            {{"tu", TimeUnit::normalized}, {"ms", TimeUnit::milliseconds}}, o.at("unit"));
  if (const json* sup = o.find("support")) {
    Obj b(*sup, o.at("support"));
    Box box;
    box.lo = b.triple<3>("lo", {0, 0, 0});
    box.hi = b.triple<3>("hi", {0, 0, 0});
    b.finish();
    s.support = box;
  }
  o.finish();
  return s;
}

InitialCondition parse_initial(Obj o) {
  const std::string type = o.text("type", "planar_front");
  InitialCondition ic;
  if (type == "planar_front") {
    ic = InitialCondition::planar_front();
    ic.Phi_excited = o.number("Phi_excited", ic.Phi_excited);
    ic.Phi_rest = o.number("Phi_rest", ic.Phi_rest);
  } else if (type == "uniform") {
    ic = InitialCondition::uniform(o.number("Phi"), o.number("r", 0.0));
  } else {
    Obj::fail(o.at("type"), "'" + type + "' is not one of planar_front, uniform");
  }
  o.finish();
  return ic;
}

SamplingRegion parse_region(Obj o) {
  SamplingRegion r;
  r.name = o.text("name", "");
  const long long n = o.integer("count", 0);
  if (n < 0) Obj::fail(o.at("count"), "must be non-negative");
  r.count = static_cast<std::size_t>(n);
  checked(o.at("role"), [&] { r.role = point_role_from_string(o.text("role", "collocation")); });
  if (r.role == PointRole::ground_truth) Obj::fail(o.at("role"), "ground-truth rows come from the dataset, not from regions");
  if (const json* cs = o.find("constraints")) {
    if (!cs->is_array()) Obj::fail(o.at("constraints"), "expected an array");
    for (std::size_t i = 0; i < cs->size(); ++i) {
      Obj c((*cs)[i], o.at("constraints") + "[" + std::to_string(i) + "]");
      RegionConstraint rc;
      checked(c.at("role"), [&] { rc.role = input_role_from_string(c.text("role", "")); });
      if (c.find("value")) rc.value = c.number("value");
      if (const json* eq = c.find("equal_to")) {
        if (!eq->is_string()) Obj::fail(c.at("equal_to"), "expected an input role");
        checked(c.at("equal_to"), [&] { rc.equal_to = input_role_from_string(eq->get<std::string>()); });
      }
      if (rc.value.has_value() == rc.equal_to.has_value())
        Obj::fail(c.at("value"), "give exactly one of value and equal_to");
      c.finish();
      r.constraints.push_back(rc);
    }
  }
  o.finish();
  return r;
}

TrainConfig parse_training(Obj o) {
  TrainConfig t;
  t.epochs = o.integer("epochs", t.epochs);
  if (const json* w = o.find("weights")) {
    Obj wo(*w, o.at("weights"));
    t.weights.r1 = wo.number("r1", t.weights.r1);
    t.weights.r2 = wo.number("r2", t.weights.r2);
    t.weights.gt = wo.number("gt", t.weights.gt);
    t.weights.bc1 = wo.number("bc1", t.weights.bc1);
    t.weights.bc2 = wo.number("bc2", t.weights.bc2);
    t.weights.neumann = wo.number("neumann", t.weights.neumann);
    wo.finish();
  }
  if (const json* s = o.find("r1_schedule")) {
    Obj so(*s, o.at("r1_schedule"));
    LossSchedule ls;
    ls.mode = choose<LossScheduleMode>(so.text("mode", "constant"),
                                       {{"constant", LossScheduleMode::constant},
                                        {"staged", LossScheduleMode::staged},
                                        {"geometric", LossScheduleMode::geometric}},
                                       so.at("mode"));
    ls.alpha0 = so.number("alpha0", ls.alpha0);
    ls.beta_l = so.number("beta_l", ls.beta_l);
    ls.first_stage = so.integer("first_stage", ls.first_stage);
    ls.stage = so.integer("stage", ls.stage);
    so.finish();
    t.r1_schedule = ls;
  }
  if (const json* lr = o.find("lr")) {
    if (!lr->is_array() || lr->empty()) Obj::fail(o.at("lr"), "expected a non-empty array of {epoch, rate}");
    t.lr.steps.clear();
    for (std::size_t i = 0; i < lr->size(); ++i) {
      Obj s((*lr)[i], o.at("lr") + "[" + std::to_string(i) + "]");
      t.lr.steps.emplace_back(s.integer("epoch", 0), s.number("rate"));
      s.finish();
    }
  }
  if (const json* c = o.find("clip")) {
    Obj co(*c, o.at("clip"));
    t.clip.enabled = co.boolean("enabled", t.clip.enabled);
    t.clip.norm = co.number("norm", t.clip.norm);
    t.clip.mode = choose<ClipMode>(co.text("mode", "scale_if_exceeds"),
                                   {{"scale_if_exceeds", ClipMode::scale_if_exceeds},
                                    {"always_scale", ClipMode::always_scale}},
                                   co.at("mode"));
    co.finish();
  }
  const auto positive = [&](const std::string& key, long long def) {
    const long long v = o.integer(key, def);
    if (v < 0) Obj::fail(o.at(key), "must be non-negative");
    return v;
  };
  t.chunk_size = static_cast<std::size_t>(positive("chunk_size", static_cast<long long>(t.chunk_size)));
  t.collocation_batch = static_cast<std::size_t>(positive("collocation_batch", 0));
  t.eval_stride = o.integer("eval_stride", t.eval_stride);
  t.checkpoint_stride = o.integer("checkpoint_stride", t.checkpoint_stride);
  t.log_stride = o.integer("log_stride", t.log_stride);
  o.finish();
  return t;
}

}  // namespace

std::string to_string(Family f) {
  switch (f) {
    case Family::cell: return "cell";
    case Family::cube3d: return "cube3d";
    case Family::cube3d_param: return "cube3d-param";
  }
  return "?";
}

ProblemSpec ExperimentConfig::problem() const {
  ProblemSpec s;
  s.family = is_cell() ? ResidualFamily::cellular : ResidualFamily::three_d;
  s.params = params;
  s.scalars = scalars;
  s.conductivity = conductivity;
  s.stimulus = stimulus;
  s.scaler = scaler;
  s.residual_stimulus = residual_stimulus;
  return s;
}

FemConfig ExperimentConfig::fem_config(std::optional<double> t_stim) const {
  FemConfig c;
  c.dt = fem.dt;
  c.t_end = fem.t_end;
  c.initial = fem.initial;
  c.stimulus = stimulus;
  if (t_stim) c.stimulus.t_stim = *t_stim;
  c.conductivity = conductivity;
  c.params = params;
  c.scalars = scalars;
  c.newton_tol = fem.newton_tol;
  c.newton_max_iter = fem.newton_max_iter;
  c.linear_solver = fem.linear_solver;
  c.snapshot_stride = fem.snapshot_stride;
  c.threads = threads;
  return c;
}

ExperimentConfig parse_config(const json& doc) {
  ExperimentConfig cfg;
  cfg.document = doc;
  Obj o(doc, "config");
  cfg.name = o.text("name", "experiment");
  cfg.family = choose<Family>(o.text("family", ""),
                              {{"cell", Family::cell}, {"cube3d", Family::cube3d}, {"cube3d-param", Family::cube3d_param}},
                              o.at("family"));
  const long long seed = o.integer("seed", 0);
  if (seed < 0) Obj::fail(o.at("seed"), "must be non-negative");
  cfg.seed = static_cast<std::uint64_t>(seed);
  cfg.threads = static_cast<int>(o.integer("threads", 1));
  if (cfg.threads < 1) Obj::fail(o.at("threads"), "must be at least 1");

  APParameters preset = cfg.family == Family::cell     ? APParameters::cellular_example()
                        : cfg.family == Family::cube3d ? APParameters::cube_example()
                                                       : APParameters::cube_param_example();
  cfg.params = preset;
  if (const json* p = o.find("params")) cfg.params = parse_params(Obj(*p, o.at("params")), preset);
  checked(o.at("params"), [&] { cfg.params.validate(); });

  if (const json* s = o.find("scalars")) {
    Obj so(*s, o.at("scalars"));
    cfg.scalars.beta_phi = so.number("beta_phi", cfg.scalars.beta_phi);
    cfg.scalars.delta_phi = so.number("delta_phi", cfg.scalars.delta_phi);
    cfg.scalars.beta_t = so.number("beta_t", cfg.scalars.beta_t);
    so.finish();
  }
  checked(o.at("scalars"), [&] { cfg.scalars.validate(); });

  if (const json* c = o.find("conductivity")) {
    Obj co(*c, o.at("conductivity"));
    cfg.conductivity.d_iso = co.number("d_iso", cfg.conductivity.d_iso);
    cfg.conductivity.d_ani = co.number("d_ani", cfg.conductivity.d_ani);
    const auto f0 = co.triple<3>("f0", {1, 0, 0});
    cfg.conductivity.f0 = Vec3(f0[0], f0[1], f0[2]);
    co.finish();
  }
  checked(o.at("conductivity"), [&] { cfg.conductivity.matrix(); });

  if (const json* s = o.find("stimulus")) cfg.stimulus = parse_stimulus(Obj(*s, o.at("stimulus")), cfg.family);
  else cfg.stimulus.unit = cfg.is_cell() ? TimeUnit::normalized : TimeUnit::milliseconds;
  checked(o.at("stimulus"), [&] { cfg.stimulus.validate(); });
  if (!cfg.is_cell() && cfg.stimulus.unit != TimeUnit::milliseconds)
    Obj::fail(o.at("stimulus.unit"), "3-D stimuli are given in ms");
  if (cfg.is_cell() && cfg.stimulus.support)
    Obj::fail(o.at("stimulus.support"), "a spatial support has no meaning for a single cell");

  if (const json* r = o.find("residual_stimulus")) {
    if (!r->is_string()) Obj::fail(o.at("residual_stimulus"), "expected a string");
    cfg.residual_stimulus = choose<StimulusShape>(
        r->get<std::string>(), {{"square", StimulusShape::square}, {"exponential", StimulusShape::exponential}},
        o.at("residual_stimulus"));
  }

  {
    Obj s(o.need("scaler"), o.at("scaler"));
    cfg.scaler.a = s.number("a", 0.0);
    cfg.scaler.b = s.number("b", 1.0);
    const json& inputs = s.need("inputs");
    if (!inputs.is_array()) Obj::fail(s.at("inputs"), "expected an array");
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      Obj in(inputs[i], s.at("inputs") + "[" + std::to_string(i) + "]");
      checked(in.at("role"), [&] { cfg.scaler.roles.push_back(input_role_from_string(in.text("role", ""))); });
      cfg.scaler.lo.push_back(in.number("lo"));
      cfg.scaler.hi.push_back(in.number("hi"));
      in.finish();
    }
    s.finish();
    checked(o.at("scaler"), [&] { cfg.scaler.validate(); });
  }

  {
    Obj n(o.need("network"), o.at("network"));
    const json& w = n.need("widths");
    if (!w.is_array()) Obj::fail(n.at("widths"), "expected an array of integers");
    for (std::size_t i = 0; i < w.size(); ++i)
      cfg.network.widths.push_back(static_cast<int>(Obj::as_integer(w[i], n.at("widths") + "[" + std::to_string(i) + "]")));
    n.finish();
    checked(o.at("network"), [&] { cfg.network.validate(); });
    if (cfg.network.inputs() != cfg.scaler.size())
      Obj::fail(o.at("network.widths"), "first width must equal the number of scaler inputs");
    if (cfg.network.outputs() != 2) Obj::fail(o.at("network.widths"), "last width must be 2 (phi_hat, r_hat)");
  }

  if (const json* c = o.find("cell")) {
    if (!cfg.is_cell()) Obj::fail(o.at("cell"), "only valid for the cell family");
    Obj co(*c, o.at("cell"));
    cfg.cell.dtau = co.number("dtau", cfg.cell.dtau);
    cfg.cell.tau_end = co.number("tau_end", cfg.cell.tau_end);
    cfg.cell.record_every = static_cast<int>(co.integer("record_every", cfg.cell.record_every));
    if (const json* ic = co.find("initial")) {
      Obj io(*ic, co.at("initial"));
      cfg.cell.initial.phi = io.number("phi", cfg.cell.initial.phi);
      cfg.cell.initial.r = io.number("r", cfg.cell.initial.r);
      io.finish();
    }
    cfg.cell.c_values = expand_values(co, "c_values");
    cfg.cell.t_stim_values = expand_values(co, "t_stim_values");
    co.finish();
    if (!(cfg.cell.dtau > 0)) Obj::fail(co.at("dtau"), "must be positive");
    if (!(cfg.cell.tau_end >= 0)) Obj::fail(co.at("tau_end"), "must be non-negative");
    if (cfg.cell.record_every < 1) Obj::fail(co.at("record_every"), "must be at least 1");
  }

  if (const json* f = o.find("fem")) {
    if (cfg.is_cell()) Obj::fail(o.at("fem"), "not valid for the cell family");
    Obj fo(*f, o.at("fem"));
    const auto l = fo.triple<3>("lengths", {100, 100, 100});
    cfg.fem.lengths = Vec3(l[0], l[1], l[2]);
    const auto d = fo.triple<3>("divisions", {31, 31, 10});
    for (int i = 0; i < 3; ++i) {
      if (d[i] != std::floor(d[i]) || d[i] < 1) Obj::fail(fo.at("divisions"), "expected positive integers");
      cfg.fem.divisions[i] = static_cast<int>(d[i]);
    }
    cfg.fem.dt = fo.number("dt", cfg.fem.dt);
    cfg.fem.t_end = fo.number("t_end", cfg.fem.t_end);
    if (const json* ic = fo.find("initial")) cfg.fem.initial = parse_initial(Obj(*ic, fo.at("initial")));
    cfg.fem.snapshot_stride = static_cast<int>(fo.integer("snapshot_stride", cfg.fem.snapshot_stride));
    cfg.fem.vtk_stride = static_cast<int>(fo.integer("vtk_stride", 0));
    if (cfg.fem.vtk_stride < 0) Obj::fail(fo.at("vtk_stride"), "must be non-negative");
    cfg.fem.format = choose<DatasetFormat>(fo.text("format", "csv"),
                                           {{"csv", DatasetFormat::csv}, {"binary", DatasetFormat::binary}},
                                           fo.at("format"));
    cfg.fem.newton_tol = fo.number("newton_tol", cfg.fem.newton_tol);
    cfg.fem.newton_max_iter = static_cast<int>(fo.integer("newton_max_iter", cfg.fem.newton_max_iter));
    cfg.fem.linear_solver = choose<LinearSolverKind>(
        fo.text("linear_solver", "direct"),
        {{"direct", LinearSolverKind::direct}, {"cg", LinearSolverKind::conjugate_gradient}}, fo.at("linear_solver"));
    cfg.fem.t_stim_values = expand_values(fo, "t_stim_values");
    fo.finish();
    checked(o.at("fem"), [&] {
      cfg.fem_config(std::nullopt).validate();
      make_box_mesh(cfg.fem.lengths, cfg.fem.divisions);
    });
  }
  if (!cfg.is_cell() && !o.find("fem")) Obj::fail(o.at("fem"), "missing required key");

  if (const json* s = o.find("sampling")) {
    Obj so(*s, o.at("sampling"));
    if (const json* rs = so.find("regions")) {
      if (!rs->is_array()) Obj::fail(so.at("regions"), "expected an array");
      for (std::size_t i = 0; i < rs->size(); ++i)
        cfg.sampling.regions.push_back(parse_region(Obj((*rs)[i], so.at("regions") + "[" + std::to_string(i) + "]")));
    }
    if (so.find("gt_fraction")) {
      cfg.sampling.gt_fraction = so.number("gt_fraction");
      if (!(*cfg.sampling.gt_fraction > 0 && *cfg.sampling.gt_fraction <= 1))
        Obj::fail(so.at("gt_fraction"), "must lie in (0, 1]");
    }
    if (so.find("gt_count")) {
      const long long n = so.integer("gt_count", 0);
      if (n < 0) Obj::fail(so.at("gt_count"), "must be non-negative");
      cfg.sampling.gt_count = static_cast<std::size_t>(n);
    }
    if (cfg.sampling.gt_fraction && cfg.sampling.gt_count)
      Obj::fail(so.at("gt_count"), "give at most one of gt_fraction and gt_count");
    cfg.sampling.gt_with_r = so.boolean("gt_with_r", false);
    const long long tc = so.integer("test_count", static_cast<long long>(cfg.sampling.test_count));
    if (tc < 0) Obj::fail(so.at("test_count"), "must be non-negative");
    cfg.sampling.test_count = static_cast<std::size_t>(tc);
    so.finish();
  }

  if (const json* t = o.find("training")) cfg.training = parse_training(Obj(*t, o.at("training")));
  cfg.training.threads = cfg.threads;
  checked(o.at("training"), [&] { cfg.training.validate(); });

  if (const json* e = o.find("evaluate")) {
    Obj eo(*e, o.at("evaluate"));
    cfg.evaluate.vtk_times = eo.numbers("vtk_times");
    eo.finish();
  }

  if (const json* p = o.find("predict")) {
    Obj po(*p, o.at("predict"));
    const auto g = po.triple<3>("grid", {0, 0, 0});
    for (int i = 0; i < 3; ++i) {
      if (g[i] != std::floor(g[i]) || g[i] < 0) Obj::fail(po.at("grid"), "expected non-negative integers");
      cfg.predict.grid[i] = static_cast<int>(g[i]);
    }
    cfg.predict.times = expand_values(po, "times");
    cfg.predict.t_stim_values = expand_values(po, "t_stim_values");
    cfg.predict.c_values = expand_values(po, "c_values");
    po.finish();
  }
  o.finish();

  checked("config", [&] { cfg.problem().validate(); });
  const bool param_t_stim = cfg.scaler.has(InputRole::t_stim);
  if (cfg.family == Family::cube3d_param && !param_t_stim)
    Obj::fail("config.scaler", "cube3d-param needs a t_stim input");
  if (cfg.family != Family::cube3d_param && !cfg.is_cell() && param_t_stim)
    Obj::fail("config.scaler", "t_stim as an input needs the cube3d-param family");
  if (!cfg.is_cell() && cfg.scaler.has(InputRole::c)) Obj::fail("config.scaler", "c is an input of the cell family only");
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  const std::string text = read_text(path);
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(doc);
}

std::string config_hash(const ExperimentConfig& cfg) { return sha256_hex(cfg.document.dump()); }

}  // namespace cardiopinn::workbench
