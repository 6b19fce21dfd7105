#pragma once

#include <array>
#include <vector>

#include <Eigen/Core>

namespace cardiopinn {

using Vec3 = Eigen::Vector3d;

// Element-local face numbering: 0:-x 1:+x 2:-y 3:+y 4:-z 5:+z (xi direction).
struct BoundaryFace {
  int element = 0;
  int local_face = 0;
};

// Eight-node hexahedral mesh. Element node order follows the VTK_HEXAHEDRON
// convention: bottom face (xi3 = -1) counter-clockwise, then the top face.
struct HexMesh {
  std::vector<Vec3> nodes;                  // mm
  std::vector<std::array<int, 8>> elements;
  std::vector<BoundaryFace> boundary;

  std::size_t num_nodes() const { return nodes.size(); }
  std::size_t num_elements() const { return elements.size(); }

  // Connectivity range and positive Jacobian at all 2x2x2 Gauss points.
  void validate() const;
};

// Structured box [0,L]^3. Node (i, j, k) has index i + (nx+1) * (j + (ny+1) * k);
// element (i, j, k) has index i + nx * (j + ny * k).
HexMesh make_box_mesh(const Vec3& lengths, const std::array<int, 3>& divisions);

struct ShapeValues {
  Eigen::Matrix<double, 8, 1> N;
  Eigen::Matrix<double, 8, 3> dN_dxi;
};

// Reference coordinates of the element corners, in node order.
const std::array<Vec3, 8>& reference_corners();

// Trilinear shape functions on [-1, 1]^3.
ShapeValues shape_functions(const Vec3& xi);

struct GaussRule {
  std::vector<Vec3> points;
  std::vector<double> weights;
};

// Tensor-product Gauss-Legendre rule with `order` points per direction (1..5).
GaussRule gauss_hex(int order);

}  // namespace cardiopinn
