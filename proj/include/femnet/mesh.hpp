#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "femnet/error.hpp"
#include "femnet/geometry.hpp"

namespace femnet {

using Index = std::size_t;
using Cell = std::array<Index, 3>;
/// Boundary face (an edge in 2D), stored with ascending vertex indices.
using Face = std::array<Index, 2>;

inline constexpr double kMinPointDistance = 1e-12;
inline constexpr double kMinCellArea = 1e-12;

struct PointCloud {
  std::vector<Vec2> coords;

  std::size_t size() const { return coords.size(); }
  const Vec2& operator[](Index i) const { return coords[i]; }
};

struct Mesh {
  PointCloud points;
  std::vector<Cell> cells;
  std::vector<Face> boundary_faces;

  std::size_t num_nodes() const { return points.size(); }
  std::size_t num_cells() const { return cells.size(); }
};

inline Face make_face(Index a, Index b) { return a < b ? Face{a, b} : Face{b, a}; }

inline std::array<Face, 3> cell_faces(const Cell& c) {
  return {make_face(c[1], c[2]), make_face(c[2], c[0]), make_face(c[0], c[1])};
}

inline double cell_area(const PointCloud& pts, const Cell& c) {
  return triangle_area(pts[c[0]], pts[c[1]], pts[c[2]]);
}

/// Rejects point sets with fewer than three points or with coincident points.
inline void validate_points(const PointCloud& pts) {
  require(pts.size() >= 3, ErrorCode::DegenerateInput, "need at least 3 points, got " + std::to_string(pts.size()));
  std::vector<Index> order(pts.size());
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(), [&](Index a, Index b) { return pts[a].x < pts[b].x; });
  for (std::size_t i = 0; i < order.size(); ++i) {
    const Vec2 p = pts[order[i]];
    require(std::isfinite(p.x) && std::isfinite(p.y), ErrorCode::DegenerateInput, "non-finite point coordinate");
    for (std::size_t j = i + 1; j < order.size() && pts[order[j]].x - p.x <= kMinPointDistance; ++j) {
      require(norm(pts[order[j]] - p) > kMinPointDistance, ErrorCode::DegenerateInput,
              "duplicate points " + std::to_string(order[i]) + " and " + std::to_string(order[j]));
    }
  }
}

/// Map from each edge to the cells containing it, in cell-index order.
inline std::map<Face, std::vector<Index>> edge_cells(const std::vector<Cell>& cells) {
  std::map<Face, std::vector<Index>> out;
  for (Index c = 0; c < cells.size(); ++c) {
    for (const Face& f : cell_faces(cells[c])) out[f].push_back(c);
  }
  return out;
}

/// Edges belonging to exactly one cell, sorted.
inline std::vector<Face> compute_boundary_faces(const std::vector<Cell>& cells) {
  std::vector<Face> out;
  for (const auto& [face, owners] : edge_cells(cells)) {
    if (owners.size() == 1) out.push_back(face);
  }
  return out;
}

/// Checks every structural mesh invariant; throws InvalidMesh on violation.
/// Cells whose opposite vertices fall on the same side of a shared edge are
/// reported as overlapping.
inline void validate_mesh(const Mesh& mesh) {
  const std::size_t n = mesh.num_nodes();
  require(!mesh.cells.empty(), ErrorCode::EmptyMesh, "mesh has no cells");
  for (Index c = 0; c < mesh.cells.size(); ++c) {
    const Cell& cell = mesh.cells[c];
    for (Index v : cell) {
      require(v < n, ErrorCode::InvalidMesh, "cell " + std::to_string(c) + " references node " + std::to_string(v));
    }
    require(cell[0] != cell[1] && cell[1] != cell[2] && cell[0] != cell[2], ErrorCode::InvalidMesh,
            "cell " + std::to_string(c) + " repeats a vertex");
    require(cell_area(mesh.points, cell) > kMinCellArea, ErrorCode::InvalidMesh,
            "cell " + std::to_string(c) + " is degenerate");
  }
  for (const auto& [face, owners] : edge_cells(mesh.cells)) {
    require(owners.size() <= 2, ErrorCode::InvalidMesh,
            "edge (" + std::to_string(face[0]) + "," + std::to_string(face[1]) + ") belongs to more than two cells");
    if (owners.size() == 2) {
      auto opposite = [&](Index c) {
        for (Index v : mesh.cells[c])
          if (v != face[0] && v != face[1]) return v;
        return face[0];
      };
      const Vec2 a = mesh.points[face[0]], b = mesh.points[face[1]];
      const double s0 = orient2d(a, b, mesh.points[opposite(owners[0])]);
      const double s1 = orient2d(a, b, mesh.points[opposite(owners[1])]);
      require(s0 * s1 < 0.0, ErrorCode::InvalidMesh,
              "cells " + std::to_string(owners[0]) + " and " + std::to_string(owners[1]) + " overlap");
    }
  }
  std::vector<Face> expected = compute_boundary_faces(mesh.cells);
  std::vector<Face> given = mesh.boundary_faces;
  std::sort(given.begin(), given.end());
  require(given == expected, ErrorCode::InvalidMesh, "boundary faces do not match the cells");
}

/// Builds a mesh from explicit cells, filling in the boundary faces, and validates it.
inline Mesh make_mesh(PointCloud points, std::vector<Cell> cells) {
  Mesh mesh{std::move(points), std::move(cells), {}};
  mesh.boundary_faces = compute_boundary_faces(mesh.cells);
  validate_mesh(mesh);
  return mesh;
}

inline double mesh_area(const Mesh& mesh) {
  double total = 0.0;
  for (const Cell& c : mesh.cells) total += cell_area(mesh.points, c);
  return total;
}

/// Area of the convex hull (Andrew's monotone chain).
inline double convex_hull_area(const PointCloud& pts) {
  std::vector<Vec2> p = pts.coords;
  std::sort(p.begin(), p.end(), [](Vec2 a, Vec2 b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  if (p.size() < 3) return 0.0;
  std::vector<Vec2> hull(2 * p.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    while (k >= 2 && orient2d(hull[k - 2], hull[k - 1], p[i]) <= 0) --k;
    hull[k++] = p[i];
  }
  for (std::size_t i = p.size() - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && orient2d(hull[k - 2], hull[k - 1], p[i]) <= 0) --k;
    hull[k++] = p[i];
  }
  hull.resize(k - 1);
  double twice = 0.0;
  for (std::size_t i = 0; i < hull.size(); ++i) twice += cross(hull[i], hull[(i + 1) % hull.size()]);
  return 0.5 * std::abs(twice);
}

}  // namespace femnet
