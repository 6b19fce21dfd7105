#include "cardiopinn/io.hpp"

#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <sstream>
#include <unistd.h>

#include <json.hpp>

#include "cardiopinn/error.hpp"

namespace cardiopinn {

namespace {

using json = nlohmann::json;

constexpr char kFieldMagic[8] = {'C', 'P', 'N', 'N', 'F', 'L', 'D', '\0'};
constexpr char kMlpMagic[8] = {'C', 'P', 'N', 'N', 'M', 'L', 'P', '\0'};
constexpr char kAdamMagic[8] = {'C', 'P', 'N', 'N', 'A', 'D', 'A', 'M'};
constexpr std::uint32_t kFormatVersion = 1;

template <class T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

template <class T>
void put(std::ostream& out, T v) {
  v = to_little(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in, const fs::path& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("unexpected end of file in " + path.string());
  return to_little(v);
}

void put_doubles(std::ostream& out, const std::vector<double>& v) {
  for (double x : v) put(out, x);
}

std::vector<double> get_doubles(std::istream& in, std::size_t n, const fs::path& path) {
  std::vector<double> v(n);
  for (auto& x : v) x = get<double>(in, path);
  return v;
}

void expect_magic(std::istream& in, const char (&magic)[8], const fs::path& path) {
  char buf[8];
  in.read(buf, 8);
  if (!in || std::memcmp(buf, magic, 8) != 0) throw IoError(path.string() + ": bad magic");
}

std::ifstream open_in(const fs::path& path, bool binary = false) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const fs::path& path) {
  if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw IoError(path.string() + ": not a number: '" + s + "'");
  return v;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

std::string optional_number(double v) { return std::isfinite(v) ? format_double(v) : std::string(); }

}  // namespace

AtomicFile::AtomicFile(fs::path target, bool binary) : target_(std::move(target)) {
  static std::atomic<unsigned> counter{0};
  if (target_.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(target_.parent_path(), ec);
    if (ec) throw IoError("cannot create " + target_.parent_path().string() + ": " + ec.message());
  }
  temp_ = target_;
  temp_ += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter++);
  out_.open(temp_, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
  if (!out_) throw IoError("cannot open " + temp_.string() + " for writing");
}

AtomicFile::~AtomicFile() {
  if (!committed_) {
    out_.close();
    std::error_code ec;
    fs::remove(temp_, ec);
  }
}

void AtomicFile::commit() {
  out_.flush();
  if (!out_) throw IoError("write failed for " + target_.string());
  out_.close();
  std::error_code ec;
  fs::rename(temp_, target_, ec);
  if (ec) throw IoError("cannot move " + temp_.string() + " to " + target_.string() + ": " + ec.message());
  committed_ = true;
}

void write_text_atomic(const fs::path& path, const std::string& content) {
  AtomicFile f(path, true);
  f.stream() << content;
  f.commit();
}

std::string read_text(const fs::path& path) {
  std::ifstream in = open_in(path, true);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_trajectory_csv(const fs::path& path, const Trajectory& trajectory,
                          const std::optional<NormalizationScalars>& scalars) {
  AtomicFile f(path);
  auto& out = f.stream();
  out << "tau,phi,r" << (scalars ? ",t_ms,Phi_mV" : "") << '\n';
  for (const auto& p : trajectory) {
    out << format_double(p.tau) << ',' << format_double(p.state.phi) << ',' << format_double(p.state.r);
    if (scalars)
      out << ',' << format_double(denormalize_time(p.tau, *scalars)) << ','
          << format_double(denormalize_potential(p.state.phi, *scalars));
    out << '\n';
  }
  f.commit();
}

Trajectory read_trajectory_csv(const fs::path& path) {
  std::ifstream in = open_in(path);
  std::string line;
  if (!std::getline(in, line)) throw IoError(path.string() + ": empty file");
  strip_cr(line);
  const auto header = split(line);
  if (header.size() < 3 || header[0] != "tau" || header[1] != "phi" || header[2] != "r")
    throw IoError(path.string() + ": expected header tau,phi,r");
  Trajectory t;
  while (std::getline(in, line)) {
    strip_cr(line);
    if (line.empty()) continue;
    const auto f = split(line);
    if (f.size() != header.size()) throw IoError(path.string() + ": ragged row");
    t.push_back({parse_double(f[0], path), {parse_double(f[1], path), parse_double(f[2], path)}});
  }
  return t;
}

FieldDataset dataset_from_solution(const HexMesh& mesh, const FemSolution& solution) {
  const std::size_t nn = mesh.num_nodes();
  FieldDataset d;
  d.rows.resize(6, static_cast<Eigen::Index>(nn * solution.times.size()));
  Eigen::Index k = 0;
  for (std::size_t s = 0; s < solution.times.size(); ++s) {
    if (static_cast<std::size_t>(solution.Phi[s].size()) != nn || static_cast<std::size_t>(solution.r[s].size()) != nn)
      throw InvalidArgument("dataset_from_solution: snapshot size does not match the mesh");
    for (std::size_t n = 0; n < nn; ++n, ++k) {
      const auto i = static_cast<Eigen::Index>(n);
      d.rows(0, k) = mesh.nodes[n].x();
      d.rows(1, k) = mesh.nodes[n].y();
      d.rows(2, k) = mesh.nodes[n].z();
      d.rows(3, k) = solution.times[s];
      d.rows(4, k) = solution.Phi[s][i];
      d.rows(5, k) = solution.r[s][i];
    }
  }
  return d;
}

void write_dataset_csv(const fs::path& path, const FieldDataset& data) {
  AtomicFile f(path);
  auto& out = f.stream();
  out << "x,y,z,t,Phi,r\n";
  for (Eigen::Index k = 0; k < data.rows.cols(); ++k) {
    for (Eigen::Index c = 0; c < 6; ++c) out << (c ? "," : "") << format_double(data.rows(c, k));
    out << '\n';
  }
  f.commit();
}

void write_dataset_binary(const fs::path& path, const FieldDataset& data) {
  AtomicFile f(path, true);
  auto& out = f.stream();
  out.write(kFieldMagic, 8);
  put<std::uint32_t>(out, kFormatVersion);
  put<std::uint32_t>(out, 6);
  for (Eigen::Index k = 0; k < data.rows.cols(); ++k)
    for (Eigen::Index c = 0; c < 6; ++c) put(out, data.rows(c, k));
  f.commit();
}

FieldDataset read_dataset(const fs::path& path) {
  std::ifstream in = open_in(path, true);
  char magic[8] = {};
  in.read(magic, 8);
  FieldDataset d;
  if (in && std::memcmp(magic, kFieldMagic, 8) == 0) {
    const auto version = get<std::uint32_t>(in, path);
    const auto cols = get<std::uint32_t>(in, path);
    if (version != kFormatVersion || cols != 6) throw IoError(path.string() + ": unsupported dataset layout");
    const auto begin = in.tellg();
    in.seekg(0, std::ios::end);
    const auto bytes = static_cast<std::size_t>(in.tellg() - begin);
    in.seekg(begin);
    if (bytes % (6 * sizeof(double)) != 0) throw IoError(path.string() + ": truncated dataset");
    const auto m = static_cast<Eigen::Index>(bytes / (6 * sizeof(double)));
    d.rows.resize(6, m);
    for (Eigen::Index k = 0; k < m; ++k)
      for (Eigen::Index c = 0; c < 6; ++c) d.rows(c, k) = get<double>(in, path);
    return d;
  }
  in.clear();
  in.seekg(0);
  std::string line;
  if (!std::getline(in, line)) throw IoError(path.string() + ": empty file");
  strip_cr(line);
  if (line != "x,y,z,t,Phi,r") throw IoError(path.string() + ": expected header x,y,z,t,Phi,r");
  std::vector<double> values;
  while (std::getline(in, line)) {
    strip_cr(line);
    if (line.empty()) continue;
    const auto f = split(line);
    if (f.size() != 6) throw IoError(path.string() + ": expected 6 columns");
    for (const auto& s : f) values.push_back(parse_double(s, path));
  }
  d.rows = Eigen::Map<Eigen::MatrixXd>(values.data(), 6, static_cast<Eigen::Index>(values.size() / 6));
  return d;
}

GroundTruthTable groundtruth_from_dataset(const FieldDataset& data, const NormalizationScalars& scalars,
                                          const InputScaler& scaler, std::optional<double> t_stim) {
  if (scaler.has(InputRole::t_stim) && !t_stim)
    throw InvalidArgument("ground truth: scaler expects t_stim but the dataset has none");
  if (scaler.has(InputRole::c)) throw InvalidArgument("ground truth: c is not a field input");
  GroundTruthTable t;
  t.roles = scaler.roles;
  const Eigen::Index m = data.rows.cols();
  t.inputs.resize(scaler.size(), m);
  for (int i = 0; i < scaler.size(); ++i) {
    switch (scaler.roles[i]) {
      case InputRole::x: t.inputs.row(i) = data.rows.row(0); break;
      case InputRole::y: t.inputs.row(i) = data.rows.row(1); break;
      case InputRole::z: t.inputs.row(i) = data.rows.row(2); break;
      case InputRole::t: t.inputs.row(i) = data.rows.row(3); break;
      case InputRole::t_stim: t.inputs.row(i).setConstant(*t_stim); break;
      case InputRole::c: break;
    }
  }
  t.phi = ((data.rows.row(4).array() + scalars.delta_phi) / scalars.beta_phi).transpose();
  t.r = data.rows.row(5).transpose();
  return t;
}

void write_vtk(const fs::path& path, const HexMesh& mesh, const std::vector<PointField>& fields,
               const std::string& title) {
  AtomicFile f(path);
  auto& out = f.stream();
  out << "# vtk DataFile Version 3.0\n" << title << "\nASCII\nDATASET UNSTRUCTURED_GRID\n";
  out << "POINTS " << mesh.num_nodes() << " double\n";
  for (const auto& x : mesh.nodes)
    out << format_double(x.x()) << ' ' << format_double(x.y()) << ' ' << format_double(x.z()) << '\n';
  out << "CELLS " << mesh.num_elements() << ' ' << 9 * mesh.num_elements() << '\n';
  for (const auto& e : mesh.elements) {
    out << 8;
    for (int n : e) out << ' ' << n;
    out << '\n';
  }
  out << "CELL_TYPES " << mesh.num_elements() << '\n';
  for (std::size_t e = 0; e < mesh.num_elements(); ++e) out << "12\n";
  if (!fields.empty()) out << "POINT_DATA " << mesh.num_nodes() << '\n';
  for (const auto& field : fields) {
    if (static_cast<std::size_t>(field.values.size()) != mesh.num_nodes())
      throw InvalidArgument("write_vtk: field '" + field.name + "' does not match the node count");
    out << "SCALARS " << field.name << " double 1\nLOOKUP_TABLE default\n";
    for (Eigen::Index i = 0; i < field.values.size(); ++i) out << format_double(field.values[i]) << '\n';
  }
  f.commit();
}

void save_checkpoint(const fs::path& path, const MlpParams& params) {
  const MlpConfig cfg = params.config();
  cfg.validate();
  {
    AtomicFile f(path, true);
    auto& out = f.stream();
    out.write(kMlpMagic, 8);
    put<std::uint32_t>(out, kFormatVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.layers()));
    for (int w : cfg.widths) put<std::uint32_t>(out, static_cast<std::uint32_t>(w));
    put_doubles(out, params.flatten());
    f.commit();
  }
  json side;
  side["format"] = "cardiopinn-mlp";
  side["version"] = kFormatVersion;
  side["widths"] = cfg.widths;
  side["hidden_activation"] = "tanh";
  side["output_activation"] = "identity";
  side["parameters"] = params.size();
  side["layout"] = "per layer l: W_l row-major (n_l x n_{l-1}), then b_l; little-endian float64";
  write_text_atomic(fs::path(path.string() + ".json"), side.dump(2) + "\n");
}

MlpParams load_checkpoint(const fs::path& path) {
  std::ifstream in = open_in(path, true);
  expect_magic(in, kMlpMagic, path);
  if (get<std::uint32_t>(in, path) != kFormatVersion) throw IoError(path.string() + ": unsupported version");
  const auto layers = get<std::uint32_t>(in, path);
  if (layers == 0 || layers > 1024) throw IoError(path.string() + ": bad layer count");
  MlpConfig cfg;
  for (std::uint32_t i = 0; i <= layers; ++i) cfg.widths.push_back(static_cast<int>(get<std::uint32_t>(in, path)));
  MlpParams p = MlpParams::zeros(cfg);
  p.unflatten(get_doubles(in, p.size(), path));
  if (in.peek() != std::char_traits<char>::eof()) throw IoError(path.string() + ": trailing bytes");
  return p;
}

void save_optimizer_state(const fs::path& path, const OptimizerState& state) {
  AtomicFile f(path, true);
  auto& out = f.stream();
  out.write(kAdamMagic, 8);
  put<std::uint32_t>(out, kFormatVersion);
  put<std::uint32_t>(out, 0);
  put<std::int64_t>(out, state.step);
  put(out, state.beta1);
  put(out, state.beta2);
  put(out, state.eps);
  put_doubles(out, state.m.flatten());
  put_doubles(out, state.v.flatten());
  f.commit();
}

OptimizerState load_optimizer_state(const fs::path& path, const MlpConfig& cfg) {
  std::ifstream in = open_in(path, true);
  expect_magic(in, kAdamMagic, path);
  if (get<std::uint32_t>(in, path) != kFormatVersion) throw IoError(path.string() + ": unsupported version");
  get<std::uint32_t>(in, path);
  OptimizerState s = OptimizerState::zeros(cfg);
  s.step = get<std::int64_t>(in, path);
  s.beta1 = get<double>(in, path);
  s.beta2 = get<double>(in, path);
  s.eps = get<double>(in, path);
  s.m.unflatten(get_doubles(in, s.m.size(), path));
  s.v.unflatten(get_doubles(in, s.v.size(), path));
  if (in.peek() != std::char_traits<char>::eof()) throw IoError(path.string() + ": size does not match the network");
  return s;
}

std::string scaler_to_json(const InputScaler& scaler) {
  json j;
  j["a"] = scaler.a;
  j["b"] = scaler.b;
  json inputs = json::array();
  for (int i = 0; i < scaler.size(); ++i)
    inputs.push_back({{"role", to_string(scaler.roles[i])}, {"lo", scaler.lo[i]}, {"hi", scaler.hi[i]}});
  j["inputs"] = inputs;
  return j.dump(2) + "\n";
}

InputScaler scaler_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    InputScaler s;
    s.a = j.at("a").get<double>();
    s.b = j.at("b").get<double>();
    for (const auto& in : j.at("inputs")) {
      s.roles.push_back(input_role_from_string(in.at("role").get<std::string>()));
      s.lo.push_back(in.at("lo").get<double>());
      s.hi.push_back(in.at("hi").get<double>());
    }
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw IoError(std::string("scaler sidecar: ") + e.what());
  }
}

void write_pointset(const fs::path& path, const PointSet& points, const InputScaler& scaler) {
  points.validate(scaler);
  AtomicFile f(path);
  auto& out = f.stream();
  out << "role";
  for (int i = 0; i < scaler.size(); ++i) out << ",in_" << i;
  out << ",target_phi" << (points.has_r() ? ",target_r" : "") << '\n';
  for (std::size_t k = 0; k < points.size(); ++k) {
    out << to_string(points.roles[k]);
    for (Eigen::Index i = 0; i < points.X.rows(); ++i)
      out << ',' << format_double(points.X(i, static_cast<Eigen::Index>(k)));
    out << ',' << optional_number(points.target_phi[k]);
    if (points.has_r()) out << ',' << optional_number(points.target_r[k]);
    out << '\n';
  }
  f.commit();
  write_text_atomic(fs::path(path.string() + ".json"), scaler_to_json(scaler));
}

LoadedPointSet read_pointset(const fs::path& path) {
  LoadedPointSet res;
  res.scaler = scaler_from_json(read_text(fs::path(path.string() + ".json")));
  std::ifstream in = open_in(path);
  std::string line;
  if (!std::getline(in, line)) throw IoError(path.string() + ": empty file");
  strip_cr(line);
  const auto header = split(line);
  const int n0 = res.scaler.size();
  const bool with_r = header.size() == static_cast<std::size_t>(n0 + 3);
  if (header.size() != static_cast<std::size_t>(n0 + 2) && !with_r)
    throw IoError(path.string() + ": header does not match the scaler sidecar");
  std::vector<double> xs;
  PointSet& p = res.points;
  while (std::getline(in, line)) {
    strip_cr(line);
    if (line.empty()) continue;
    const auto f = split(line);
    if (f.size() != header.size()) throw IoError(path.string() + ": ragged row");
    p.roles.push_back(point_role_from_string(f[0]));
    for (int i = 0; i < n0; ++i) xs.push_back(parse_double(f[1 + i], path));
    p.target_phi.push_back(parse_double(f[1 + n0], path));
    if (with_r) p.target_r.push_back(parse_double(f[2 + n0], path));
  }
  p.X = Eigen::Map<Eigen::MatrixXd>(xs.data(), n0, static_cast<Eigen::Index>(p.roles.size()));
  p.validate(res.scaler);
  return res;
}

void write_training_log(const fs::path& path, const TrainReport& report) {
  AtomicFile f(path);
  auto& out = f.stream();
  out << "epoch,loss_total,loss_R1,loss_R2,loss_GT,uw_R1,uw_R2,uw_GT,grad_norm_pre,grad_norm_post,alpha1,lr,"
         "rmse_phi,rmse_r\n";
  for (const auto& r : report.rows) {
    const auto& l = r.loss;
    out << r.epoch << ',' << format_double(l.total) << ',' << format_double(l.weighted_of(LossTerm::r1)) << ','
        << format_double(l.weighted_of(LossTerm::r2)) << ',' << format_double(l.weighted_of(LossTerm::gt)) << ','
        << format_double(l.unweighted_of(LossTerm::r1)) << ',' << format_double(l.unweighted_of(LossTerm::r2))
        << ',' << format_double(l.unweighted_of(LossTerm::gt)) << ',' << format_double(r.grad_norm_pre) << ','
        << format_double(r.grad_norm_post) << ',' << format_double(r.alpha1) << ',' << format_double(r.lr) << ','
        << optional_number(r.rmse_phi) << ',' << optional_number(r.rmse_r) << '\n';
  }
  f.commit();
}

void write_error_field_csv(const fs::path& path, const GroundTruthTable& table, const EvalMetrics& m) {
  if (static_cast<std::size_t>(m.phi_hat.size()) != table.size())
    throw InvalidArgument("write_error_field_csv: metrics do not match the table");
  const bool with_r = m.abs_err_r.size() == m.phi_hat.size();
  AtomicFile f(path);
  auto& out = f.stream();
  for (InputRole role : table.roles) out << to_string(role) << ',';
  out << "phi,phi_hat,abs_err_phi" << (with_r ? ",r,r_hat,abs_err_r" : "") << '\n';
  for (Eigen::Index k = 0; k < table.inputs.cols(); ++k) {
    for (Eigen::Index i = 0; i < table.inputs.rows(); ++i) out << format_double(table.inputs(i, k)) << ',';
    out << format_double(table.phi[k]) << ',' << format_double(m.phi_hat[k]) << ','
        << format_double(m.abs_err_phi[k]);
    if (with_r)
      out << ',' << format_double(table.r[k]) << ',' << format_double(m.r_hat[k]) << ','
          << format_double(m.abs_err_r[k]);
    out << '\n';
  }
  f.commit();
}

}  // namespace cardiopinn
