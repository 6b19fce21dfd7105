#include "cardiopinn/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "cardiopinn/error.hpp"

namespace cardiopinn {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

std::uint64_t substream_seed(std::uint64_t seed, std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char ch : name) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(splitmix64(seed) ^ h);
}

std::size_t PointSet::count(PointRole role) const {
  return static_cast<std::size_t>(std::count(roles.begin(), roles.end(), role));
}

std::vector<std::size_t> PointSet::indices(PointRole role) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < roles.size(); ++i)
    if (roles[i] == role) out.push_back(i);
  return out;
}

void PointSet::validate(const InputScaler& scaler) const {
  if (X.rows() != scaler.size() && size() > 0)
    throw InvalidArgument("PointSet: input dimension does not match the scaler");
  if (static_cast<std::size_t>(X.cols()) != size() || target_phi.size() != size())
    throw InvalidArgument("PointSet: inconsistent lengths");
  if (!target_r.empty() && target_r.size() != size())
    throw InvalidArgument("PointSet: recovery targets do not match the point count");
  const double lo = std::min(scaler.a, scaler.b) - 1e-12;
  const double hi = std::max(scaler.a, scaler.b) + 1e-12;
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    for (Eigen::Index i = 0; i < X.rows(); ++i)
      if (!(X(i, j) >= lo && X(i, j) <= hi))
        throw InvalidArgument("PointSet: coordinate outside the normalized bounds");
    if (roles[j] == PointRole::ground_truth && !std::isfinite(target_phi[j]))
      throw InvalidArgument("PointSet: ground-truth point without a finite target");
  }
}

void PointSet::append(const PointSet& other) {
  if (other.size() == 0) return;
  if (size() == 0) {
    const bool keep_r = has_r();
    *this = other;
    if (keep_r && target_r.empty()) target_r.assign(size(), kNaN);
    return;
  }
  if (other.X.rows() != X.rows()) throw InvalidArgument("PointSet::append: input dimension mismatch");
  const std::size_t n = size();
  Eigen::MatrixXd merged(X.rows(), X.cols() + other.X.cols());
  merged << X, other.X;
  X = std::move(merged);
  roles.insert(roles.end(), other.roles.begin(), other.roles.end());
  target_phi.insert(target_phi.end(), other.target_phi.begin(), other.target_phi.end());
  if (has_r() || other.has_r()) {
    target_r.resize(n, kNaN);
    if (other.has_r())
      target_r.insert(target_r.end(), other.target_r.begin(), other.target_r.end());
    else
      target_r.resize(size(), kNaN);
  }
}

PointSet PointSet::select(const std::vector<std::size_t>& idx) const {
  PointSet out;
  out.X.resize(X.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] >= size()) throw InvalidArgument("PointSet::select: index out of range");
    out.X.col(static_cast<Eigen::Index>(k)) = X.col(static_cast<Eigen::Index>(idx[k]));
    out.roles.push_back(roles[idx[k]]);
    out.target_phi.push_back(target_phi[idx[k]]);
    if (has_r()) out.target_r.push_back(target_r[idx[k]]);
  }
  return out;
}

PointSet sample_points(const InputScaler& scaler, const std::vector<SamplingRegion>& regions,
                       std::uint64_t seed) {
  scaler.validate();
  const int n0 = scaler.size();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  PointSet out;
  std::size_t total = 0;
  for (const auto& reg : regions) total += reg.count;
  out.X.resize(n0, static_cast<Eigen::Index>(total));
  out.roles.reserve(total);
  out.target_phi.assign(total, kNaN);

  Eigen::Index col = 0;
  for (const auto& reg : regions) {
    // Physical sampling interval per input, and the source of tied inputs.
    std::vector<double> lo = scaler.lo, hi = scaler.hi;
    std::vector<int> tied(static_cast<std::size_t>(n0), -1);
    std::vector<char> fixed(static_cast<std::size_t>(n0), 0);
    for (const auto& con : reg.constraints) {
      const int i = scaler.index_of(con.role);
      if (i < 0) throw InvalidArgument("sample_points: region '" + reg.name + "' constrains a missing input");
      if (con.value.has_value() == con.equal_to.has_value())
        throw InvalidArgument("sample_points: region '" + reg.name + "' needs exactly one of value/equal_to");
      if (con.value) {
        const double tol = 1e-9 * scaler.range(i);
        if (*con.value < scaler.lo[i] - tol || *con.value > scaler.hi[i] + tol)
          throw InvalidArgument("sample_points: region '" + reg.name + "' pins " + to_string(con.role) +
                                " outside its bounds");
        lo[i] = hi[i] = std::clamp(*con.value, scaler.lo[i], scaler.hi[i]);
        fixed[i] = 1;
      } else {
        const int j = scaler.index_of(*con.equal_to);
        if (j < 0 || j == i)
          throw InvalidArgument("sample_points: region '" + reg.name + "' ties to an invalid input");
        tied[i] = j;
      }
    }
    for (int i = 0; i < n0; ++i) {
      const int j = tied[i];
      if (j < 0) continue;
      if (tied[j] >= 0) throw InvalidArgument("sample_points: chained ties are not supported");
      const double l = std::max(lo[i], lo[j]);
      const double h = std::min(hi[i], hi[j]);
      if (l > h) throw InvalidArgument("sample_points: region '" + reg.name + "' is empty");
      if (fixed[i]) throw InvalidArgument("sample_points: input both pinned and tied");
      lo[j] = l;
      hi[j] = h;
    }

    for (std::size_t k = 0; k < reg.count; ++k, ++col) {
      Eigen::VectorXd phys(n0);
      for (int i = 0; i < n0; ++i) {
        if (tied[i] >= 0) continue;
        phys[i] = fixed[i] ? lo[i] : lo[i] + (hi[i] - lo[i]) * unit(rng);
      }
      for (int i = 0; i < n0; ++i)
        if (tied[i] >= 0) phys[i] = phys[tied[i]];
      for (int i = 0; i < n0; ++i)
        out.X(i, col) = std::clamp(scaler.scale(i, phys[i]), std::min(scaler.a, scaler.b),
                                   std::max(scaler.a, scaler.b));
      out.roles.push_back(reg.role);
    }
  }
  return out;
}

void GroundTruthTable::append(const GroundTruthTable& other) {
  if (other.size() == 0) return;
  if (size() == 0) {
    *this = other;
    return;
  }
  if (roles != other.roles) throw InvalidArgument("GroundTruthTable::append: role mismatch");
  Eigen::MatrixXd in(inputs.rows(), inputs.cols() + other.inputs.cols());
  in << inputs, other.inputs;
  Eigen::VectorXd p(phi.size() + other.phi.size()), q(r.size() + other.r.size());
  p << phi, other.phi;
  q << r, other.r;
  inputs = std::move(in);
  phi = std::move(p);
  r = std::move(q);
}

GroundTruthTable groundtruth_from_fem(const HexMesh& mesh, const FemSolution& solution,
                                      const NormalizationScalars& scalars, const InputScaler& scaler,
                                      std::optional<double> t_stim) {
  const int n0 = scaler.size();
  if (scaler.has(InputRole::t_stim) && !t_stim)
    throw InvalidArgument("groundtruth_from_fem: scaler expects t_stim but none was given");
  if (scaler.has(InputRole::c)) throw InvalidArgument("groundtruth_from_fem: c is not a field input");
  const std::size_t nn = mesh.num_nodes();
  GroundTruthTable table;
  table.roles = scaler.roles;
  const std::size_t rows = nn * solution.times.size();
  table.inputs.resize(n0, static_cast<Eigen::Index>(rows));
  table.phi.resize(static_cast<Eigen::Index>(rows));
  table.r.resize(static_cast<Eigen::Index>(rows));
  Eigen::Index row = 0;
  for (std::size_t s = 0; s < solution.times.size(); ++s) {
    if (static_cast<std::size_t>(solution.Phi[s].size()) != nn)
      throw InvalidArgument("groundtruth_from_fem: snapshot size does not match the mesh");
    for (std::size_t n = 0; n < nn; ++n, ++row) {
      for (int i = 0; i < n0; ++i) {
        double v = 0.0;
        switch (scaler.roles[i]) {
          case InputRole::x: v = mesh.nodes[n].x(); break;
          case InputRole::y: v = mesh.nodes[n].y(); break;
          case InputRole::z: v = mesh.nodes[n].z(); break;
          case InputRole::t: v = solution.times[s]; break;
          case InputRole::t_stim: v = *t_stim; break;
          case InputRole::c: break;
        }
        table.inputs(i, row) = v;
      }
      table.phi[row] = normalize_potential(solution.Phi[s][static_cast<Eigen::Index>(n)], scalars);
      table.r[row] = solution.r[s][static_cast<Eigen::Index>(n)];
    }
  }
  return table;
}

GroundTruthTable groundtruth_from_trajectory(const Trajectory& trajectory, const InputScaler& scaler,
                                             std::optional<double> c, std::optional<double> t_stim) {
  const int n0 = scaler.size();
  GroundTruthTable table;
  table.roles = scaler.roles;
  const auto rows = static_cast<Eigen::Index>(trajectory.size());
  table.inputs.resize(n0, rows);
  table.phi.resize(rows);
  table.r.resize(rows);
  for (int i = 0; i < n0; ++i) {
    switch (scaler.roles[i]) {
      case InputRole::t:
        break;
      case InputRole::c:
        if (!c) throw InvalidArgument("groundtruth_from_trajectory: scaler expects c");
        break;
      case InputRole::t_stim:
        if (!t_stim) throw InvalidArgument("groundtruth_from_trajectory: scaler expects t_stim");
        break;
      default:
        throw InvalidArgument("groundtruth_from_trajectory: spatial inputs are not defined for a cell");
    }
  }
  for (Eigen::Index k = 0; k < rows; ++k) {
    const auto& pt = trajectory[static_cast<std::size_t>(k)];
    for (int i = 0; i < n0; ++i) {
      switch (scaler.roles[i]) {
        case InputRole::t: table.inputs(i, k) = pt.tau; break;
        case InputRole::c: table.inputs(i, k) = *c; break;
        case InputRole::t_stim: table.inputs(i, k) = *t_stim; break;
        default: break;
      }
    }
    table.phi[k] = pt.state.phi;
    table.r[k] = pt.state.r;
  }
  return table;
}

std::size_t subsample_count(std::size_t population, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidArgument("subsample: fraction must lie in (0, 1]");
  return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(population)));
}

PointSet groundtruth_points(const GroundTruthTable& table, const InputScaler& scaler, bool with_r) {
  std::vector<std::size_t> all(table.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return groundtruth_rows(table, all, scaler, with_r);
}

std::vector<std::vector<std::size_t>> partition_rows(std::size_t population,
                                                    const std::vector<std::size_t>& counts,
                                                    std::uint64_t seed) {
  std::size_t total = 0;
  for (auto c : counts) total += c;
  if (total > population) throw InvalidArgument("subsample: requested count exceeds the population");
  // Partial Fisher-Yates; each subset is emitted in ascending order.
  std::vector<std::size_t> idx(population);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < total; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, population - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  std::vector<std::vector<std::size_t>> out;
  auto it = idx.begin();
  for (auto c : counts) {
    std::vector<std::size_t> part(it, it + static_cast<std::ptrdiff_t>(c));
    std::sort(part.begin(), part.end());
    out.push_back(std::move(part));
    it += static_cast<std::ptrdiff_t>(c);
  }
  return out;
}

PointSet groundtruth_rows(const GroundTruthTable& table, const std::vector<std::size_t>& rows,
                          const InputScaler& scaler, bool with_r) {
  if (table.roles != scaler.roles) throw InvalidArgument("subsample: table roles do not match the scaler");
  PointSet out;
  out.X.resize(scaler.size(), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] >= table.size()) throw InvalidArgument("groundtruth_rows: row index out of range");
    const auto j = static_cast<Eigen::Index>(rows[k]);
    out.X.col(static_cast<Eigen::Index>(k)) = scaler.scale_point(table.inputs.col(j));
    out.roles.push_back(PointRole::ground_truth);
    out.target_phi.push_back(table.phi[j]);
    if (with_r) out.target_r.push_back(table.r[j]);
  }
  return out;
}

PointSet subsample_groundtruth(const GroundTruthTable& table, std::size_t count, std::uint64_t seed,
                               const InputScaler& scaler, bool with_r) {
  if (table.roles != scaler.roles) throw InvalidArgument("subsample: table roles do not match the scaler");
  return groundtruth_rows(table, partition_rows(table.size(), {count}, seed).front(), scaler, with_r);
}

PointSet subsample_groundtruth_fraction(const GroundTruthTable& table, double fraction,
                                        std::uint64_t seed, const InputScaler& scaler, bool with_r) {
  return subsample_groundtruth(table, subsample_count(table.size(), fraction), seed, scaler, with_r);
}

}  // namespace cardiopinn
