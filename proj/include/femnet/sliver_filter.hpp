#pragma once

#include <cmath>
#include <deque>
#include <map>
#include <numbers>
#include <vector>

#include "femnet/error.hpp"
#include "femnet/geometry.hpp"
#include "femnet/mesh.hpp"

namespace femnet {

inline constexpr double kDefaultSliverThreshold = 10.0 * std::numbers::pi / 180.0;

/// Smallest angle at a face vertex A between A->B and A->xi, where xi is the
/// cell vertex off the face and B its orthogonal projection onto the face line.
inline double min_boundary_angle(const Cell& cell, const Face& face, const PointCloud& points) {
  Index xi_index = cell[0];
  for (Index v : cell) {
    if (v != face[0] && v != face[1]) xi_index = v;
  }
  const Vec2 a0 = points[face[0]], a1 = points[face[1]], xi = points[xi_index];
  const Vec2 dir = a1 - a0;
  const Vec2 foot = a0 + (dot(xi - a0, dir) / squared_norm(dir)) * dir;
  const double height = norm(xi - foot);
  double gamma = std::numbers::pi;
  for (Vec2 a : {a0, a1}) {
    // Right triangle (A, B, xi): the angle at A is atan(|B xi| / |A B|).
    gamma = std::min(gamma, std::atan2(height, norm(foot - a)));
  }
  return gamma;
}

/// Removes boundary cells with a single boundary face whose boundary-adjacent
/// angle is below `threshold`, cascading into the cells that become exposed.
/// Cells with two or more boundary faces are never removed.
inline Mesh filter_sliver_cells(const Mesh& mesh, double threshold = kDefaultSliverThreshold) {
  require(threshold > 0.0, ErrorCode::InvalidSpec, "sliver threshold must be positive");
  const std::size_t n_cells = mesh.num_cells();
  auto owners = edge_cells(mesh.cells);

  std::map<Face, bool> is_boundary;
  for (const auto& [face, cells] : owners) is_boundary[face] = cells.size() == 1;

  std::vector<int> boundary_count(n_cells, 0);
  for (Index c = 0; c < n_cells; ++c) {
    for (const Face& f : cell_faces(mesh.cells[c])) boundary_count[c] += is_boundary[f] ? 1 : 0;
  }

  std::vector<char> removed(n_cells, 0);
  std::deque<Index> queue;
  for (Index c = 0; c < n_cells; ++c) {
    if (boundary_count[c] == 1) queue.push_back(c);
  }

  while (!queue.empty()) {
    const Index c = queue.front();
    queue.pop_front();
    if (removed[c] || boundary_count[c] != 1) continue;
    const Cell& cell = mesh.cells[c];
    Face boundary_face{};
    for (const Face& f : cell_faces(cell)) {
      if (is_boundary[f]) boundary_face = f;
    }
    if (min_boundary_angle(cell, boundary_face, mesh.points) >= threshold) continue;

    removed[c] = 1;
    is_boundary[boundary_face] = false;
    for (const Face& f : cell_faces(cell)) {
      if (f == boundary_face) continue;
      is_boundary[f] = true;
      for (Index other : owners[f]) {
        if (other == c || removed[other]) continue;
        ++boundary_count[other];
        queue.push_back(other);
      }
    }
  }

  std::vector<Cell> kept;
  for (Index c = 0; c < n_cells; ++c) {
    if (!removed[c]) kept.push_back(mesh.cells[c]);
  }
  require(!kept.empty(), ErrorCode::EmptyMesh, "sliver filtering removed every cell");
  return make_mesh(mesh.points, std::move(kept));
}

}  // namespace femnet
