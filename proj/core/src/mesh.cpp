#include "cardiopinn/mesh.hpp"

#include <cmath>
#include <sstream>

#include <Eigen/Dense>

#include "cardiopinn/error.hpp"

namespace cardiopinn {

const std::array<Vec3, 8>& reference_corners() {
  static const std::array<Vec3, 8> corners = {
      Vec3(-1, -1, -1), Vec3(1, -1, -1), Vec3(1, 1, -1), Vec3(-1, 1, -1),
      Vec3(-1, -1, 1),  Vec3(1, -1, 1),  Vec3(1, 1, 1),  Vec3(-1, 1, 1)};
  return corners;
}

ShapeValues shape_functions(const Vec3& xi) {
  ShapeValues out;
  const auto& corners = reference_corners();
  for (int a = 0; a < 8; ++a) {
    const Vec3& c = corners[a];
    const double f0 = 1.0 + c[0] * xi[0];
    const double f1 = 1.0 + c[1] * xi[1];
    const double f2 = 1.0 + c[2] * xi[2];
    out.N[a] = 0.125 * f0 * f1 * f2;
    out.dN_dxi(a, 0) = 0.125 * c[0] * f1 * f2;
    out.dN_dxi(a, 1) = 0.125 * f0 * c[1] * f2;
    out.dN_dxi(a, 2) = 0.125 * f0 * f1 * c[2];
  }
  return out;
}

GaussRule gauss_hex(int order) {
  std::vector<double> x, w;
  switch (order) {
    case 1:
      x = {0.0};
      w = {2.0};
      break;
    case 2:
      x = {-1.0 / std::sqrt(3.0), 1.0 / std::sqrt(3.0)};
      w = {1.0, 1.0};
      break;
    case 3:
      x = {-std::sqrt(0.6), 0.0, std::sqrt(0.6)};
      w = {5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0};
      break;
    case 4: {
      const double a = std::sqrt(3.0 / 7.0 - 2.0 / 7.0 * std::sqrt(6.0 / 5.0));
      const double b = std::sqrt(3.0 / 7.0 + 2.0 / 7.0 * std::sqrt(6.0 / 5.0));
      const double wa = (18.0 + std::sqrt(30.0)) / 36.0;
      const double wb = (18.0 - std::sqrt(30.0)) / 36.0;
      x = {-b, -a, a, b};
      w = {wb, wa, wa, wb};
      break;
    }
    case 5: {
      const double a = std::sqrt(5.0 - 2.0 * std::sqrt(10.0 / 7.0)) / 3.0;
      const double b = std::sqrt(5.0 + 2.0 * std::sqrt(10.0 / 7.0)) / 3.0;
      const double wa = (322.0 + 13.0 * std::sqrt(70.0)) / 900.0;
      const double wb = (322.0 - 13.0 * std::sqrt(70.0)) / 900.0;
      x = {-b, -a, 0.0, a, b};
      w = {wb, wa, 128.0 / 225.0, wa, wb};
      break;
    }
    default:
      throw InvalidArgument("gauss_hex: order must be in 1..5");
  }
  GaussRule rule;
  for (std::size_t k = 0; k < x.size(); ++k)
    for (std::size_t j = 0; j < x.size(); ++j)
      for (std::size_t i = 0; i < x.size(); ++i) {
        rule.points.emplace_back(x[i], x[j], x[k]);
        rule.weights.push_back(w[i] * w[j] * w[k]);
      }
  return rule;
}

void HexMesh::validate() const {
  const int n = static_cast<int>(nodes.size());
  const GaussRule rule = gauss_hex(2);
  for (std::size_t e = 0; e < elements.size(); ++e) {
    Eigen::Matrix<double, 8, 3> X;
    for (int a = 0; a < 8; ++a) {
      const int id = elements[e][a];
      if (id < 0 || id >= n) {
        std::ostringstream msg;
        msg << "HexMesh: element " << e << " references node " << id << " out of range";
        throw InvalidArgument(msg.str());
      }
      X.row(a) = nodes[id].transpose();
    }
    for (const Vec3& xi : rule.points) {
      const Eigen::Matrix3d J = X.transpose() * shape_functions(xi).dN_dxi;
      if (!(J.determinant() > 0.0)) {
        std::ostringstream msg;
        msg << "HexMesh: non-positive Jacobian determinant in element " << e;
        throw InvalidArgument(msg.str());
      }
    }
  }
  for (const BoundaryFace& f : boundary) {
    if (f.element < 0 || f.element >= static_cast<int>(elements.size()) || f.local_face < 0 ||
        f.local_face > 5)
      throw InvalidArgument("HexMesh: invalid boundary face");
  }
}

HexMesh make_box_mesh(const Vec3& lengths, const std::array<int, 3>& divisions) {
  const auto [nx, ny, nz] = divisions;
  if (nx < 1 || ny < 1 || nz < 1) throw InvalidArgument("make_box_mesh: divisions must be >= 1");
  if (!(lengths.minCoeff() > 0.0)) throw InvalidArgument("make_box_mesh: lengths must be positive");

  HexMesh mesh;
  mesh.nodes.reserve(static_cast<std::size_t>(nx + 1) * (ny + 1) * (nz + 1));
  for (int k = 0; k <= nz; ++k)
    for (int j = 0; j <= ny; ++j)
      for (int i = 0; i <= nx; ++i)
        mesh.nodes.emplace_back(lengths[0] * i / nx, lengths[1] * j / ny, lengths[2] * k / nz);

  const auto node = [&](int i, int j, int k) { return i + (nx + 1) * (j + (ny + 1) * k); };
  mesh.elements.reserve(static_cast<std::size_t>(nx) * ny * nz);
  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        const int e = static_cast<int>(mesh.elements.size());
        mesh.elements.push_back({node(i, j, k), node(i + 1, j, k), node(i + 1, j + 1, k),
                                 node(i, j + 1, k), node(i, j, k + 1), node(i + 1, j, k + 1),
                                 node(i + 1, j + 1, k + 1), node(i, j + 1, k + 1)});
        if (i == 0) mesh.boundary.push_back({e, 0});
        if (i == nx - 1) mesh.boundary.push_back({e, 1});
        if (j == 0) mesh.boundary.push_back({e, 2});
        if (j == ny - 1) mesh.boundary.push_back({e, 3});
        if (k == 0) mesh.boundary.push_back({e, 4});
        if (k == nz - 1) mesh.boundary.push_back({e, 5});
      }
  return mesh;
}

}  // namespace cardiopinn
