#pragma once

// Collocation sampling and ground-truth subsampling in normalized input space.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "cardiopinn/fem.hpp"
#include "cardiopinn/kinetics.hpp"
#include "cardiopinn/mesh.hpp"
#include "cardiopinn/pinn.hpp"

namespace cardiopinn {

// Independent stream seeds derived from one user seed (mesh, sampling, init,
// training, ...).
std::uint64_t substream_seed(std::uint64_t seed, std::string_view name);

struct PointSet {
  std::vector<PointRole> roles;
  Eigen::MatrixXd X;                 // normalized, n0 x N
  std::vector<double> target_phi;    // NaN where the point has no target
  std::vector<double> target_r;      // r (not r_hat); empty, or one per point

  std::size_t size() const { return roles.size(); }
  int inputs() const { return static_cast<int>(X.rows()); }
  bool has_r() const { return !target_r.empty(); }
  std::size_t count(PointRole role) const;
  // Indices of points with the given role, ascending.
  std::vector<std::size_t> indices(PointRole role) const;

  void validate(const InputScaler& scaler) const;
  void append(const PointSet& other);
  PointSet select(const std::vector<std::size_t>& idx) const;
};

// A coordinate pinned inside a region: a fixed physical value or equality
// with another input (e.g. t = t_stim).
struct RegionConstraint {
  InputRole role = InputRole::t;
  std::optional<double> value;
  std::optional<InputRole> equal_to;
};

struct SamplingRegion {
  std::string name;
  std::size_t count = 0;
  PointRole role = PointRole::collocation;
  std::vector<RegionConstraint> constraints;
};

// Uniform samples in the normalized box, region constraints applied exactly.
PointSet sample_points(const InputScaler& scaler, const std::vector<SamplingRegion>& regions,
                       std::uint64_t seed);

// Physical inputs per row plus normalized targets.
struct GroundTruthTable {
  std::vector<InputRole> roles;
  Eigen::MatrixXd inputs;       // physical, n0 x M
  Eigen::VectorXd phi;          // normalized potential
  Eigen::VectorXd r;            // recovery variable

  std::size_t size() const { return static_cast<std::size_t>(inputs.cols()); }
  void append(const GroundTruthTable& other);
};

// Rows (x, y, z, t[, t_stim]) for every node and snapshot; roles follow the
// scaler order. Spatial roles absent from the scaler are dropped.
GroundTruthTable groundtruth_from_fem(const HexMesh& mesh, const FemSolution& solution,
                                      const NormalizationScalars& scalars, const InputScaler& scaler,
                                      std::optional<double> t_stim = std::nullopt);

// Rows (t[, c][, t_stim]) of a 0-D trajectory; times in TU.
GroundTruthTable groundtruth_from_trajectory(const Trajectory& trajectory, const InputScaler& scaler,
                                             std::optional<double> c = std::nullopt,
                                             std::optional<double> t_stim = std::nullopt);

// Number of rows kept for a fraction: llround(fraction * population).
std::size_t subsample_count(std::size_t population, double fraction);

// Uniform sampling without replacement; rows must lie within the scaler
// bounds. `with_r` stores recovery targets for diagnostics.
// Disjoint uniform subsets of [0, population) drawn from one permutation;
// each subset is sorted. The first subset equals what subsample_groundtruth
// picks for the same seed.
std::vector<std::vector<std::size_t>> partition_rows(std::size_t population,
                                                    const std::vector<std::size_t>& counts,
                                                    std::uint64_t seed);

// Selected rows as ground-truth points, in the given order.
PointSet groundtruth_rows(const GroundTruthTable& table, const std::vector<std::size_t>& rows,
                          const InputScaler& scaler, bool with_r = true);

PointSet subsample_groundtruth(const GroundTruthTable& table, std::size_t count, std::uint64_t seed,
                               const InputScaler& scaler, bool with_r = true);
PointSet subsample_groundtruth_fraction(const GroundTruthTable& table, double fraction,
                                        std::uint64_t seed, const InputScaler& scaler,
                                        bool with_r = true);

// Whole table as ground-truth points, in row order.
PointSet groundtruth_points(const GroundTruthTable& table, const InputScaler& scaler,
                            bool with_r = true);

}  // namespace cardiopinn
