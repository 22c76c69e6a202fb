#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "femnet/fem.hpp"
#include "femnet/mesh.hpp"

namespace femnet {

/// Per-cell quantities precomputed once per domain. Arrays indexed by vertex
/// follow the storage order of the cell; `sorted_order` lists those local
/// indices by ascending polar angle of the local coordinate.
struct CellGeometry {
  Vec2 center;
  std::array<Vec2, 3> local_coords;
  double area = 0.0;
  std::array<int, 3> sorted_order{0, 1, 2};
  std::array<double, 3> load{};
  ConvectionProducts conv{};
  std::array<Vec2, 3> basis_grads{};
};

inline CellGeometry cell_geometry(const PointCloud& points, const Cell& cell) {
  // Everything is evaluated with the vertices in ascending global index and
  // then mapped back, so the stored vertex order cannot change a single bit.
  std::array<int, 3> by_index{0, 1, 2};
  std::sort(by_index.begin(), by_index.end(), [&](int a, int b) { return cell[a] < cell[b]; });
  const Triangle t{points[cell[by_index[0]]], points[cell[by_index[1]]], points[cell[by_index[2]]]};

  CellGeometry g;
  g.center = (t[0] + t[1] + t[2]) / 3.0;
  g.area = triangle_area(t[0], t[1], t[2]);
  g.load = load_vector(g.area);
  const auto grads = basis_gradients(t);
  const auto conv = convection_products(t);
  for (int a = 0; a < 3; ++a) {
    // Built from vertex differences only, so a translated mesh yields identical bits.
    g.local_coords[by_index[a]] = ((t[a] - t[(a + 1) % 3]) + (t[a] - t[(a + 2) % 3])) / 3.0;
    g.basis_grads[by_index[a]] = grads[a];
    for (int b = 0; b < 3; ++b) g.conv[by_index[a]][by_index[b]] = conv[a][b];
  }

  std::array<double, 3> angle;
  for (int k = 0; k < 3; ++k) angle[k] = std::atan2(g.local_coords[k].y, g.local_coords[k].x);
  std::stable_sort(g.sorted_order.begin(), g.sorted_order.end(), [&](int a, int b) {
    if (angle[a] != angle[b]) return angle[a] < angle[b];
    return cell[a] < cell[b];
  });
  return g;
}

inline std::vector<CellGeometry> compute_geometry(const Mesh& mesh) {
  std::vector<CellGeometry> out;
  out.reserve(mesh.num_cells());
  for (const Cell& c : mesh.cells) out.push_back(cell_geometry(mesh.points, c));
  return out;
}

inline LumpedMass lumped_mass(const Mesh& mesh, const std::vector<CellGeometry>& geometry) {
  LumpedMass out{std::vector<double>(mesh.num_nodes(), 0.0)};
  for (Index c = 0; c < mesh.num_cells(); ++c) {
    for (int k = 0; k < 3; ++k) out.diag[mesh.cells[c][k]] += geometry[c].load[k];
  }
  for (Index i = 0; i < out.diag.size(); ++i) {
    require(out.diag[i] > 0.0, ErrorCode::IsolatedNode, "node " + std::to_string(i) + " belongs to no cell");
  }
  return out;
}

}  // namespace femnet
