#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <utility>
#include <vector>

#include "femnet/error.hpp"
#include "femnet/geometry.hpp"
#include "femnet/mesh.hpp"

namespace femnet {

/// In-circle tolerance, in coordinates normalized to the unit bounding box.
inline constexpr double kIncircleTolerance = 1e-10;

namespace detail {

inline constexpr double kOrientEps = 1e-14;

struct BwTriangle {
  std::array<int, 3> v;
  std::array<int, 3> nb;  // nb[k] lies across the edge opposite v[k]
  bool alive = true;
};

/// Incremental Bowyer-Watson insertion into a super-triangle. Points are
/// expected in unit-box coordinates.
class BowyerWatson {
 public:
  explicit BowyerWatson(std::vector<Vec2> points) : pts_(std::move(points)), n_real_(static_cast<int>(pts_.size())) {
    constexpr double r = 1e3;
    pts_.push_back({0.5 - 2 * r, 0.5 - r});
    pts_.push_back({0.5 + 2 * r, 0.5 - r});
    pts_.push_back({0.5, 0.5 + 2 * r});
    tris_.push_back({{n_real_, n_real_ + 1, n_real_ + 2}, {-1, -1, -1}, true});
  }

  void insert(int p) {
    const Vec2 q = pts_[p];
    const int start = locate(q);
    ++stamp_;
    mark_.resize(tris_.size(), 0);
    std::vector<int> cavity{start};
    mark_[start] = stamp_;
    for (std::size_t i = 0; i < cavity.size(); ++i) {
      const BwTriangle& t = tris_[cavity[i]];
      for (int k = 0; k < 3; ++k) {
        const int n = t.nb[k];
        if (n < 0 || mark_[n] == stamp_) continue;
        const BwTriangle& o = tris_[n];
        if (incircle(pts_[o.v[0]], pts_[o.v[1]], pts_[o.v[2]], q) > kIncircleTolerance) {
          mark_[n] = stamp_;
          cavity.push_back(n);
        }
      }
    }

    // Grow the cavity until every boundary edge is strictly visible from q so
    // the re-triangulation is star-shaped.
    struct Rim {
      int a, b, outside;
    };
    std::vector<Rim> rim;
    for (bool grown = true; grown;) {
      grown = false;
      rim.clear();
      for (int c : cavity) {
        const BwTriangle& t = tris_[c];
        for (int k = 0; k < 3 && !grown; ++k) {
          const int n = t.nb[k];
          if (n >= 0 && mark_[n] == stamp_) continue;
          const int a = t.v[(k + 1) % 3], b = t.v[(k + 2) % 3];
          if (orient2d(pts_[a], pts_[b], q) <= kOrientEps) {
            require(n >= 0, ErrorCode::DegenerateInput, "point lies outside the super-triangle");
            mark_[n] = stamp_;
            cavity.push_back(n);
            grown = true;
          } else {
            rim.push_back({a, b, n});
          }
        }
        if (grown) break;
      }
    }

    const int first = static_cast<int>(tris_.size());
    for (const Rim& e : rim) {
      const int id = static_cast<int>(tris_.size());
      tris_.push_back({{e.a, e.b, p}, {-1, -1, e.outside}, true});
      if (e.outside >= 0) {
        BwTriangle& o = tris_[e.outside];
        for (int k = 0; k < 3; ++k) {
          if (o.v[(k + 1) % 3] == e.b && o.v[(k + 2) % 3] == e.a) o.nb[k] = id;
        }
      }
    }
    const int last = static_cast<int>(tris_.size());
    for (int i = first; i < last; ++i) {
      BwTriangle& t = tris_[i];
      for (int j = first; j < last; ++j) {
        if (i == j) continue;
        const BwTriangle& o = tris_[j];
        if (o.v[0] == t.v[1]) t.nb[0] = j;  // edge b->p meets the triangle starting at b
        if (o.v[1] == t.v[0]) t.nb[1] = j;  // edge p->a meets the triangle ending at a
      }
    }
    for (int c : cavity) tris_[c].alive = false;
    hint_ = last - 1;
  }

  /// Triangles that do not touch the super-triangle, counter-clockwise.
  std::vector<std::array<int, 3>> real_triangles() const {
    std::vector<std::array<int, 3>> out;
    for (const BwTriangle& t : tris_) {
      if (!t.alive) continue;
      if (t.v[0] < n_real_ && t.v[1] < n_real_ && t.v[2] < n_real_) out.push_back(t.v);
    }
    return out;
  }

 private:
  bool contains(const BwTriangle& t, Vec2 q) const {
    for (int k = 0; k < 3; ++k) {
      if (orient2d(pts_[t.v[(k + 1) % 3]], pts_[t.v[(k + 2) % 3]], q) < 0.0) return false;
    }
    return true;
  }

  int locate(Vec2 q) const {
    int t = hint_;
    const std::size_t cap = 4 * tris_.size() + 16;
    for (std::size_t step = 0; step < cap; ++step) {
      const BwTriangle& tri = tris_[t];
      int next = -1;
      for (int k = 0; k < 3; ++k) {
        if (orient2d(pts_[tri.v[(k + 1) % 3]], pts_[tri.v[(k + 2) % 3]], q) < 0.0) {
          next = tri.nb[k];
          break;
        }
      }
      if (next < 0) {
        if (contains(tri, q)) return t;
        break;
      }
      t = next;
    }
    // Walk failed (cycling on near-degenerate input): fall back to a scan.
    int best = -1;
    double best_margin = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < static_cast<int>(tris_.size()); ++i) {
      const BwTriangle& tri = tris_[i];
      if (!tri.alive) continue;
      double margin = std::numeric_limits<double>::infinity();
      for (int k = 0; k < 3; ++k) {
        margin = std::min(margin, orient2d(pts_[tri.v[(k + 1) % 3]], pts_[tri.v[(k + 2) % 3]], q));
      }
      if (margin > best_margin) {
        best_margin = margin;
        best = i;
      }
    }
    return best;
  }

  std::vector<Vec2> pts_;
  int n_real_;
  std::vector<BwTriangle> tris_;
  std::vector<int> mark_;
  int stamp_ = 0;
  int hint_ = 0;
};

using Tri = std::array<int, 3>;

inline std::map<std::pair<int, int>, int> directed_edges(const std::vector<Tri>& tris) {
  std::map<std::pair<int, int>, int> out;
  for (int t = 0; t < static_cast<int>(tris.size()); ++t) {
    for (int k = 0; k < 3; ++k) out[{tris[t][k], tris[t][(k + 1) % 3]}] = t;
  }
  return out;
}

/// Adds hull points the super-triangle left untouched and fills boundary
/// concavities so the triangulation covers the convex hull.
inline void complete_hull(const std::vector<Vec2>& p, std::vector<Tri>& tris) {
  const int n = static_cast<int>(p.size());
  constexpr double on_edge = 1e-12;
  for (int guard = 0; guard < 4 * n + 16; ++guard) {
    auto edges = directed_edges(tris);
    std::vector<char> used(n, 0);
    for (const Tri& t : tris)
      for (int v : t) used[v] = 1;
    std::vector<std::pair<int, int>> boundary;
    for (const auto& [e, t] : edges) {
      if (!edges.count({e.second, e.first})) boundary.push_back(e);
    }

    bool changed = false;
    for (int q = 0; q < n && !changed; ++q) {
      if (used[q]) continue;
      double best = std::numeric_limits<double>::infinity();
      std::pair<int, int> target{-1, -1};
      for (const auto& [a, b] : boundary) {
        const Vec2 ab = p[b] - p[a];
        const double s = dot(p[q] - p[a], ab) / squared_norm(ab);
        if (s < 0.0 || s > 1.0 || orient2d(p[a], p[b], p[q]) > on_edge) continue;
        const double dist = std::abs(cross(ab, p[q] - p[a])) / norm(ab);
        if (dist < best) {
          best = dist;
          target = {a, b};
        }
      }
      require(target.first >= 0, ErrorCode::DegenerateInput, "could not attach hull point");
      const auto [a, b] = target;
      if (orient2d(p[a], p[b], p[q]) < -on_edge) {
        tris.push_back({a, q, b});
      } else {
        Tri& inner = tris[edges.at({a, b})];
        int x = inner[0] + inner[1] + inner[2] - a - b;
        inner = {a, q, x};
        tris.push_back({q, b, x});
      }
      changed = true;
    }
    if (changed) continue;

    std::map<int, int> next, prev;
    for (const auto& [a, b] : boundary) {
      next[a] = b;
      prev[b] = a;
    }
    for (const auto& [b, c] : next) {
      auto it = prev.find(b);
      if (it == prev.end()) continue;
      const int a = it->second;
      if (orient2d(p[a], p[b], p[c]) < -on_edge) {
        tris.push_back({a, c, b});
        changed = true;
        break;
      }
    }
    if (!changed) return;
  }
}

/// Lawson edge flips until every interior edge passes the in-circle test.
inline void flip_to_delaunay(const std::vector<Vec2>& p, std::vector<Tri>& tris) {
  for (std::size_t pass = 0; pass < 64 * tris.size() + 16; ++pass) {
    auto edges = directed_edges(tris);
    std::vector<char> touched(tris.size(), 0);
    bool flipped = false;
    for (const auto& [e, t1] : edges) {
      auto it = edges.find({e.second, e.first});
      if (it == edges.end() || e.first > e.second) continue;
      const int t2 = it->second;
      if (touched[t1] || touched[t2]) continue;
      const int a = e.first, b = e.second;
      const int c = tris[t1][0] + tris[t1][1] + tris[t1][2] - a - b;
      const int d = tris[t2][0] + tris[t2][1] + tris[t2][2] - a - b;
      // t1 = (a, b, c) and t2 = (b, a, d), both counter-clockwise.
      if (incircle(p[a], p[b], p[c], p[d]) <= kIncircleTolerance) continue;
      if (orient2d(p[a], p[d], p[c]) <= kOrientEps || orient2d(p[d], p[b], p[c]) <= kOrientEps) continue;
      tris[t1] = {a, d, c};
      tris[t2] = {d, b, c};
      touched[t1] = touched[t2] = 1;
      flipped = true;
    }
    if (!flipped) return;
  }
}

inline Tri ccw(const std::vector<Vec2>& p, Tri t) {
  if (orient2d(p[t[0]], p[t[1]], p[t[2]]) < 0) std::swap(t[1], t[2]);
  return t;
}

}  // namespace detail

/// Delaunay triangulation of the convex hull of `points`.
///
/// Bowyer-Watson insertion runs in unit-box coordinates; a completion pass
/// then restores hull cells lost to the finite super-triangle and Lawson
/// flips repair any in-circle violation above the tolerance.
inline Mesh delaunay_triangulate(const PointCloud& points) {
  validate_points(points);
  const std::size_t n = points.size();

  Vec2 lo = points[0], hi = points[0];
  for (const Vec2& q : points.coords) {
    lo = {std::min(lo.x, q.x), std::min(lo.y, q.y)};
    hi = {std::max(hi.x, q.x), std::max(hi.y, q.y)};
  }
  const double extent = std::max(hi.x - lo.x, hi.y - lo.y);
  require(extent > 0.0, ErrorCode::DegenerateInput, "all points coincide");
  std::vector<Vec2> unit(n);
  for (std::size_t i = 0; i < n; ++i) unit[i] = (points[i] - lo) / extent;

  std::size_t far = 1;
  for (std::size_t i = 1; i < n; ++i) {
    if (squared_norm(unit[i] - unit[0]) > squared_norm(unit[far] - unit[0])) far = i;
  }
  double spread = 0.0;
  for (std::size_t i = 0; i < n; ++i) spread = std::max(spread, std::abs(orient2d(unit[0], unit[far], unit[i])));
  require(spread > 1e-12, ErrorCode::DegenerateInput, "all points are collinear");

  detail::BowyerWatson bw(unit);
  for (std::size_t i = 0; i < n; ++i) bw.insert(static_cast<int>(i));
  std::vector<detail::Tri> tris = bw.real_triangles();
  detail::complete_hull(unit, tris);
  detail::flip_to_delaunay(unit, tris);

  std::vector<Cell> cells;
  cells.reserve(tris.size());
  for (const detail::Tri& raw : tris) {
    const detail::Tri t = detail::ccw(unit, raw);
    cells.push_back({static_cast<Index>(t[0]), static_cast<Index>(t[1]), static_cast<Index>(t[2])});
  }
  std::sort(cells.begin(), cells.end());
  return make_mesh(points, std::move(cells));
}

}  // namespace femnet
