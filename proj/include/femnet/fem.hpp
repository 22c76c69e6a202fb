#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "femnet/error.hpp"
#include "femnet/geometry.hpp"
#include "femnet/mesh.hpp"

namespace femnet {

// Closed-form P1 inner products on a single triangle. Vertex-local indices
// (0, 1, 2) follow the order in which the vertices are passed in.

using Triangle = std::array<Vec2, 3>;
using LocalMassMatrix = std::array<std::array<double, 3>, 3>;
/// conv[j][i] = <grad phi_j, phi_i> over the cell.
using ConvectionProducts = std::array<std::array<Vec2, 3>, 3>;

/// <phi_i, phi_j> over a cell of the given area.
inline LocalMassMatrix local_mass(double area) {
  LocalMassMatrix m{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) m[i][j] = i == j ? area / 6.0 : area / 12.0;
  return m;
}

/// <1, phi_i> over a cell of the given area.
inline std::array<double, 3> load_vector(double area) { return {area / 3.0, area / 3.0, area / 3.0}; }

inline std::array<Vec2, 3> basis_gradients(const Triangle& t) {
  const double twice = orient2d(t[0], t[1], t[2]);
  require(std::abs(twice) * 0.5 >= kMinCellArea, ErrorCode::DegenerateCell,
          "cell area " + std::to_string(std::abs(twice) * 0.5) + " is below the threshold");
  std::array<Vec2, 3> g;
  for (int i = 0; i < 3; ++i) {
    const Vec2 b = t[(i + 1) % 3], c = t[(i + 2) % 3];
    g[i] = Vec2{b.y - c.y, c.x - b.x} / twice;
  }
  return g;
}

/// P1 gradients are constant on the cell, so the product factors into the
/// gradient times the load value.
inline ConvectionProducts convection_products(const Triangle& t) {
  const auto grads = basis_gradients(t);
  const auto load = load_vector(triangle_area(t[0], t[1], t[2]));
  ConvectionProducts c;
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i < 3; ++i) c[j][i] = grads[j] * load[i];
  return c;
}

struct LumpedMass {
  std::vector<double> diag;
};

/// Row-sum lumped mass matrix. Accumulates cells in index order.
inline LumpedMass lumped_mass(const Mesh& mesh) {
  LumpedMass out{std::vector<double>(mesh.num_nodes(), 0.0)};
  for (const Cell& c : mesh.cells) {
    const double share = cell_area(mesh.points, c) / 3.0;
    for (Index v : c) out.diag[v] += share;
  }
  for (Index i = 0; i < out.diag.size(); ++i) {
    require(out.diag[i] > 0.0, ErrorCode::IsolatedNode, "node " + std::to_string(i) + " belongs to no cell");
  }
  return out;
}

struct QuadraturePoint {
  double l1, l2, weight;  // barycentric coordinates of vertices 1 and 2; weights sum to 1
};

/// Symmetric Gauss rules on the reference triangle: 1 point (degree 1),
/// 3 points (degree 2), 7 points (degree 5).
inline std::vector<QuadraturePoint> triangle_rule(int points) {
  switch (points) {
    case 1:
      return {{1.0 / 3.0, 1.0 / 3.0, 1.0}};
    case 3:
      return {{1.0 / 6.0, 1.0 / 6.0, 1.0 / 3.0}, {2.0 / 3.0, 1.0 / 6.0, 1.0 / 3.0}, {1.0 / 6.0, 2.0 / 3.0, 1.0 / 3.0}};
    case 7: {
      const double s = std::sqrt(15.0);
      const double a1 = (6.0 - s) / 21.0, w1 = (155.0 - s) / 1200.0;
      const double a2 = (6.0 + s) / 21.0, w2 = (155.0 + s) / 1200.0;
      const double b1 = 1.0 - 2.0 * a1, b2 = 1.0 - 2.0 * a2;
      return {{1.0 / 3.0, 1.0 / 3.0, 9.0 / 40.0}, {a1, a1, w1}, {b1, a1, w1}, {a1, b1, w1},
              {a2, a2, w2}, {b2, a2, w2}, {a2, b2, w2}};
    }
    default:
      fail(ErrorCode::InvalidSpec, "quadrature order must be 1, 3 or 7");
  }
}

/// Integrates `fn` over the triangle with the given Gauss rule.
inline double quadrature_integrate(const std::function<double(Vec2)>& fn, const Triangle& t, int points = 7) {
  const double area = triangle_area(t[0], t[1], t[2]);
  double sum = 0.0;
  for (const QuadraturePoint& q : triangle_rule(points)) {
    const Vec2 x = t[0] + q.l1 * (t[1] - t[0]) + q.l2 * (t[2] - t[0]);
    sum += q.weight * fn(x);
  }
  return area * sum;
}

}  // namespace femnet
