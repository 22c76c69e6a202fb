#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "femnet/cell_geometry.hpp"
#include "femnet/delaunay.hpp"
#include "femnet/dynamics.hpp"
#include "femnet/error.hpp"
#include "femnet/io.hpp"
#include "femnet/mesh.hpp"
#include "femnet/odeint.hpp"
#include "femnet/rng.hpp"
#include "femnet/sliver_filter.hpp"

namespace femnet {

// ---------------------------------------------------------------------------
// Classical lumped-Galerkin convection right-hand side

/// -A^-1 sum_cells sum_j y_j (v . <grad phi_j, phi_i>), assembled cell by cell
/// from the stored convection products. `velocity` holds one row per cell with
/// columns (v_x, v_y) per feature.
inline Tensor oracle_fem_rhs(const Tensor& y, const Mesh& mesh, const std::vector<CellGeometry>& geometry,
                             const LumpedMass& mass, const Tensor& velocity) {
  const Eigen::Index n = static_cast<Eigen::Index>(mesh.num_nodes());
  const Eigen::Index m = y.cols();
  require(y.rows() == n, ErrorCode::ShapeMismatch, "state has " + std::to_string(y.rows()) + " rows for " + std::to_string(n) + " nodes");
  require(velocity.rows() == static_cast<Eigen::Index>(mesh.num_cells()) && velocity.cols() == 2 * m, ErrorCode::ShapeMismatch,
          "velocity " + shape_string(velocity) + " does not match cells x 2m");
  require(geometry.size() == mesh.num_cells() && mass.diag.size() == mesh.num_nodes(), ErrorCode::ShapeMismatch,
          "mesh artifacts do not match the mesh");
  Tensor out = Tensor::Zero(n, m);
  for (std::size_t c = 0; c < mesh.num_cells(); ++c) {
    const Cell& cell = mesh.cells[c];
    const ConvectionProducts& conv = geometry[c].conv;
    for (Eigen::Index k = 0; k < m; ++k) {
      const Vec2 v{velocity(c, 2 * k), velocity(c, 2 * k + 1)};
      for (int i = 0; i < 3; ++i) {
        double acc = 0.0;
        for (int j = 0; j < 3; ++j) acc += y(cell[j], k) * dot(v, conv[j][i]);
        out(cell[i], k) -= acc;
      }
    }
  }
  for (Eigen::Index i = 0; i < n; ++i) out.row(i) /= mass.diag[i];
  return out;
}

inline Tensor oracle_fem_rhs(const Tensor& y, const FemDomain& domain, const Tensor& velocity) {
  return oracle_fem_rhs(y, domain.mesh(), domain.geometry(), domain.mass(), velocity);
}

// ---------------------------------------------------------------------------
// Synthetic advection data

enum class VelocityField { Constant, Rotation };

struct SourceSpec {
  Vec2 center{0.3, 0.3};
  double width = 0.07;
  double rate = 1.0;
};

struct SyntheticSpec {
  int n_dense = 61;
  VelocityField field = VelocityField::Constant;
  Vec2 velocity{0.1, 0.05};
  double angular_velocity = 0.5;  // rotation about (0.5, 0.5)
  int features = 1;
  int bumps = 1;
  double width_min = 0.07;
  double width_max = 0.09;
  double amplitude_min = 0.5;
  double amplitude_max = 1.0;
  std::optional<SourceSpec> source;
  double dt = 0.05;
  int n_steps = 22;
  int n_sequences = 20;
  std::size_t n_nodes = 100;
  std::vector<std::size_t> superres_nodes;
  double train_fraction = 0.6;
  double val_fraction = 0.2;
  double sliver_threshold = kDefaultSliverThreshold;
  double oracle_tol = 1e-8;
  std::uint64_t seed = 0;
};

inline constexpr double kBumpSupportWidths = 4.0;
inline const Vec2 kRotationCenter{0.5, 0.5};

/// Gaussian with its tail above 4 sigma cut off; shifted so it is continuous
/// at the cut and rescaled so the peak stays at the amplitude.
inline double truncated_gaussian(double r, double width, double amplitude) {
  const double cut = std::exp(-0.5 * kBumpSupportWidths * kBumpSupportWidths);
  const double g = std::exp(-0.5 * (r * r) / (width * width));
  return g <= cut ? 0.0 : amplitude * (g - cut) / (1.0 - cut);
}

struct GaussianBump {
  Vec2 center;
  double width = 0.1;
  double amplitude = 1.0;
  int feature = 0;
};

inline Vec2 velocity_at(const SyntheticSpec& spec, Vec2 x) {
  if (spec.field == VelocityField::Constant) return spec.velocity;
  const Vec2 r = x - kRotationCenter;
  return Vec2{-r.y, r.x} * spec.angular_velocity;
}

inline double sequence_duration(const SyntheticSpec& spec) { return spec.dt * spec.n_steps; }

inline std::size_t split_count(double fraction, int n) {
  return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
}

inline void validate_spec(const SyntheticSpec& s) {
  auto check = [](bool ok, const std::string& what) { require(ok, ErrorCode::InvalidSpec, what); };
  check(s.n_dense >= 3, "n_dense must be at least 3");
  check(s.features >= 1, "features must be at least 1");
  check(s.bumps >= 1, "bumps must be at least 1");
  check(s.width_min > 0.0 && s.width_max >= s.width_min, "bump widths must satisfy 0 < width_min <= width_max");
  check(s.amplitude_max >= s.amplitude_min, "amplitude_min must not exceed amplitude_max");
  check(s.dt > 0.0, "dt must be positive");
  check(s.n_steps >= 1, "n_steps must be at least 1");
  check(s.n_sequences >= 3, "n_sequences must be at least 3");
  check(s.train_fraction > 0.0 && s.val_fraction > 0.0 && s.train_fraction + s.val_fraction < 1.0,
        "split fractions must be positive and leave room for a test split");
  const std::size_t n_train = split_count(s.train_fraction, s.n_sequences);
  const std::size_t n_val = split_count(s.val_fraction, s.n_sequences);
  check(n_train >= 1 && n_val >= 1 && n_train + n_val < static_cast<std::size_t>(s.n_sequences),
        "every split needs at least one sequence");
  check(s.n_nodes >= 3, "n_nodes must be at least 3");
  const std::size_t n_dense_points = static_cast<std::size_t>(s.n_dense) * static_cast<std::size_t>(s.n_dense);
  require(s.n_nodes <= n_dense_points, ErrorCode::KTooLarge,
          "n_nodes (" + std::to_string(s.n_nodes) + ") must not exceed the " + std::to_string(n_dense_points) + " dense points");
  for (std::size_t r : s.superres_nodes) {
    require(r <= n_dense_points, ErrorCode::KTooLarge,
            "superres node count " + std::to_string(r) + " exceeds the " + std::to_string(n_dense_points) + " dense points");
    check(r >= 3, "superres node counts must be at least 3");
  }
  check(s.sliver_threshold > 0.0, "sliver_threshold must be positive");
  check(s.oracle_tol > 0.0, "oracle_tol must be positive");
  if (s.source) check(s.source->width > 0.0, "source width must be positive");
}

namespace detail {

/// Interval of admissible centers along one axis so that a support of radius
/// `r` stays inside [0, 1] while translating by `shift`.
inline std::pair<double, double> admissible_axis(double r, double shift) {
  return {r - std::min(0.0, shift), 1.0 - r - std::max(0.0, shift)};
}

inline bool support_stays_inside(const SyntheticSpec& spec, Vec2 center, double radius) {
  if (spec.field == VelocityField::Rotation) return norm(center - kRotationCenter) + radius <= 0.5;
  const double t = sequence_duration(spec);
  const auto [xlo, xhi] = admissible_axis(radius, spec.velocity.x * t);
  const auto [ylo, yhi] = admissible_axis(radius, spec.velocity.y * t);
  return center.x >= xlo && center.x <= xhi && center.y >= ylo && center.y <= yhi;
}

inline Vec2 sample_center(const SyntheticSpec& spec, double radius, Rng& rng) {
  if (spec.field == VelocityField::Rotation) {
    const double room = 0.5 - radius;
    require(room >= 0.0, ErrorCode::InvalidSpec, "bump support does not fit inside the rotation disc");
    const double rho = room * std::sqrt(rng.uniform());
    const double phi = 2.0 * std::numbers::pi * rng.uniform();
    return kRotationCenter + Vec2{rho * std::cos(phi), rho * std::sin(phi)};
  }
  const double t = sequence_duration(spec);
  const auto [xlo, xhi] = admissible_axis(radius, spec.velocity.x * t);
  const auto [ylo, yhi] = admissible_axis(radius, spec.velocity.y * t);
  require(xlo <= xhi && ylo <= yhi, ErrorCode::InvalidSpec,
          "bump support cannot stay inside the unit square for the whole sequence; reduce widths, speed or duration");
  return {rng.uniform(xlo, xhi), rng.uniform(ylo, yhi)};
}

}  // namespace detail

inline PointCloud dense_grid(int n) {
  PointCloud pc;
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) pc.coords.push_back({static_cast<double>(i) / (n - 1), static_cast<double>(j) / (n - 1)});
  return pc;
}

/// Structured triangulation of `dense_grid(n)`, two cells per square.
inline Mesh dense_grid_mesh(int n) {
  std::vector<Cell> cells;
  auto id = [n](int i, int j) { return static_cast<Index>(j * n + i); };
  for (int j = 0; j + 1 < n; ++j) {
    for (int i = 0; i + 1 < n; ++i) {
      cells.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
      cells.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
    }
  }
  return make_mesh(dense_grid(n), std::move(cells));
}

struct Sequence {
  std::vector<double> times;
  std::vector<Tensor> states;  // N x m each
};

/// Full-resolution output of the generator, before subsampling.
struct DenseData {
  PointCloud points;
  std::vector<Sequence> sequences;
  std::vector<std::vector<GaussianBump>> initial_bumps;
};

inline std::vector<GaussianBump> sample_bumps(const SyntheticSpec& spec, Rng& rng) {
  std::vector<GaussianBump> bumps;
  for (int k = 0; k < spec.features; ++k) {
    for (int b = 0; b < spec.bumps; ++b) {
      GaussianBump g;
      g.feature = k;
      g.width = rng.uniform(spec.width_min, spec.width_max);
      g.amplitude = rng.uniform(spec.amplitude_min, spec.amplitude_max);
      g.center = detail::sample_center(spec, kBumpSupportWidths * g.width, rng);
      bumps.push_back(g);
    }
  }
  return bumps;
}

inline Tensor bump_field(const PointCloud& pts, int features, const std::vector<GaussianBump>& bumps, Vec2 shift = {0, 0}) {
  Tensor y = Tensor::Zero(static_cast<Eigen::Index>(pts.size()), features);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (const GaussianBump& b : bumps) y(i, b.feature) += truncated_gaussian(norm(pts[i] - shift - b.center), b.width, b.amplitude);
  }
  return y;
}

inline Tensor source_rate(const PointCloud& pts, int features, const SourceSpec& source) {
  Tensor s(static_cast<Eigen::Index>(pts.size()), features);
  for (std::size_t i = 0; i < pts.size(); ++i) s.row(i).setConstant(truncated_gaussian(norm(pts[i] - source.center), source.width, source.rate));
  return s;
}

inline std::vector<double> time_grid(const SyntheticSpec& spec) {
  std::vector<double> t(static_cast<std::size_t>(spec.n_steps) + 1);
  for (std::size_t j = 0; j < t.size(); ++j) t[j] = static_cast<double>(j) * spec.dt;
  return t;
}

/// Generates every sequence on the dense grid. Constant velocity without a
/// source is the exact translate of the initial bumps; otherwise the lumped
/// Galerkin system on the dense grid is integrated at `oracle_tol`.
inline DenseData generate_dense(const SyntheticSpec& spec) {
  validate_spec(spec);
  if (spec.source) {
    require(detail::support_stays_inside(spec, spec.source->center, kBumpSupportWidths * spec.source->width), ErrorCode::InvalidSpec,
            "source support must stay inside the domain under the flow");
  }
  DenseData out;
  out.points = dense_grid(spec.n_dense);
  const std::vector<double> times = time_grid(spec);
  Rng rng(spec.seed);

  const bool analytic = spec.field == VelocityField::Constant && !spec.source;
  std::optional<FemDomain> domain;
  Tensor cell_velocity, source;
  if (!analytic) {
    domain.emplace(dense_grid_mesh(spec.n_dense), spec.features);
    cell_velocity = Tensor(domain->num_cells(), 2 * spec.features);
    for (Eigen::Index c = 0; c < domain->num_cells(); ++c) {
      const Vec2 v = velocity_at(spec, domain->geometry()[c].center);
      for (int k = 0; k < spec.features; ++k) {
        cell_velocity(c, 2 * k) = v.x;
        cell_velocity(c, 2 * k + 1) = v.y;
      }
    }
    source = spec.source ? source_rate(out.points, spec.features, *spec.source)
                         : Tensor(Tensor::Zero(static_cast<Eigen::Index>(out.points.size()), spec.features));
  }

  for (int s = 0; s < spec.n_sequences; ++s) {
    const std::vector<GaussianBump> bumps = sample_bumps(spec, rng);
    Sequence seq;
    seq.times = times;
    if (analytic) {
      for (double t : times) seq.states.push_back(bump_field(out.points, spec.features, bumps, spec.velocity * t));
    } else {
      SolverConfig cfg;
      cfg.atol = spec.oracle_tol;
      cfg.rtol = spec.oracle_tol;
      cfg.max_nfe = 1000000;
      auto rhs = [&](double, const Tensor& y) -> Tensor { return oracle_fem_rhs(y, *domain, cell_velocity) + source; };
      seq.states = dopri5_solve<Tensor>(rhs, bump_field(out.points, spec.features, bumps), times, cfg).states;
    }
    out.sequences.push_back(std::move(seq));
    out.initial_bumps.push_back(bumps);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Subsampling

namespace detail {

/// One alternating k-medoids run from k-medoids++ seeds; returns the medoids
/// and their total distance cost.
inline std::pair<std::vector<std::size_t>, double> kmedoids_run(const PointCloud& points, std::size_t k, Rng& rng,
                                                                int max_iterations) {
  const std::size_t n = points.size();
  std::vector<std::size_t> medoids{static_cast<std::size_t>(rng.below(n))};
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  while (medoids.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], squared_norm(points[i] - points[medoids.back()]));
      total += nearest[i];
    }
    double target = rng.uniform() * total;
    std::size_t pick = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (nearest[i] <= 0.0) continue;
      pick = i;
      target -= nearest[i];
      if (target < 0.0) break;
    }
    require(pick < n, ErrorCode::DegenerateInput, "fewer than k distinct points");
    medoids.push_back(pick);
  }

  std::vector<std::size_t> assignment(n, k);
  std::vector<double> dist(n, 0.0);
  auto assign = [&] {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double d = squared_norm(points[i] - points[medoids[c]]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      dist[i] = std::sqrt(best_d);
      if (assignment[i] != best) {
        assignment[i] = best;
        changed = true;
      }
    }
    return changed;
  };

  for (int iter = 0; iter < max_iterations && assign(); ++iter) {
    std::vector<std::vector<std::size_t>> members(k);
    for (std::size_t i = 0; i < n; ++i) members[assignment[i]].push_back(i);
    for (std::size_t c = 0; c < k; ++c) {
      double best_cost = std::numeric_limits<double>::infinity();
      for (std::size_t candidate : members[c]) {
        double cost = 0.0;
        for (std::size_t other : members[c]) cost += norm(points[candidate] - points[other]);
        if (cost < best_cost) {
          best_cost = cost;
          medoids[c] = candidate;
        }
      }
    }
  }
  assign();
  double cost = 0.0;
  for (double d : dist) cost += d;
  return {medoids, cost};
}

}  // namespace detail

inline constexpr int kKMedoidsRestarts = 5;

/// Alternating k-medoids: assign every point to its nearest medoid, move each
/// medoid to the member with the smallest total distance to its cluster, and
/// repeat until assignments no longer change (at most `max_iterations`).
/// Seeded with k-medoids++ sampling; the cheapest of `restarts` runs wins.
/// Returns sorted indices of input points.
inline std::vector<std::size_t> kmedoids_subsample(const PointCloud& points, std::size_t k, std::uint64_t seed,
                                                   int max_iterations = 100, int restarts = kKMedoidsRestarts) {
  const std::size_t n = points.size();
  require(k <= n, ErrorCode::KTooLarge, "k (" + std::to_string(k) + ") exceeds the number of points (" + std::to_string(n) + ")");
  require(k >= 1, ErrorCode::InvalidSpec, "k must be positive");
  require(restarts >= 1, ErrorCode::InvalidSpec, "restarts must be positive");
  if (k == n) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  Rng rng(seed);
  std::vector<std::size_t> best;
  double best_cost = std::numeric_limits<double>::infinity();
  for (int r = 0; r < restarts; ++r) {
    auto [medoids, cost] = detail::kmedoids_run(points, k, rng, max_iterations);
    if (cost < best_cost) {
      best_cost = cost;
      best = std::move(medoids);
    }
  }
  std::sort(best.begin(), best.end());
  return best;
}

/// Delaunay mesh of the selected points with slivers removed. Points left
/// without a cell by the filter are dropped from `indices` and the mesh.
inline Mesh sparse_mesh(const PointCloud& dense, std::vector<std::size_t>& indices, double sliver_threshold) {
  PointCloud pc;
  for (std::size_t i : indices) pc.coords.push_back(dense[i]);
  const Mesh filtered = filter_sliver_cells(delaunay_triangulate(pc), sliver_threshold);

  std::vector<Index> remap(pc.size(), pc.size());
  std::vector<std::size_t> kept_indices;
  PointCloud kept_points;
  std::vector<char> used(pc.size(), 0);
  for (const Cell& c : filtered.cells)
    for (Index v : c) used[v] = 1;
  for (std::size_t i = 0; i < pc.size(); ++i) {
    if (!used[i]) continue;
    remap[i] = kept_points.size();
    kept_points.coords.push_back(pc[i]);
    kept_indices.push_back(indices[i]);
  }
  std::vector<Cell> cells;
  for (const Cell& c : filtered.cells) cells.push_back({remap[c[0]], remap[c[1]], remap[c[2]]});
  indices = std::move(kept_indices);
  return make_mesh(std::move(kept_points), std::move(cells));
}

// ---------------------------------------------------------------------------
// Datasets and normalization

struct NormalizationStats {
  std::vector<double> feature_mean;
  std::vector<double> feature_std;
  Vec2 coord_mean{0.0, 0.0};
  double coord_std = 1.0;
};

struct DatasetSplit {
  std::vector<std::size_t> train, val, test;
};

struct Dataset {
  Mesh mesh;
  int features = 1;
  std::vector<Sequence> sequences;
  std::optional<NormalizationStats> stats;
  DatasetSplit split;
  bool normalized = false;
  std::uint64_t seed = 0;
  Json spec = Json::object();
  std::vector<std::size_t> dense_indices;
};

inline DatasetSplit contiguous_split(std::size_t n, double train_fraction, double val_fraction) {
  const std::size_t n_train = split_count(train_fraction, static_cast<int>(n));
  const std::size_t n_val = split_count(val_fraction, static_cast<int>(n));
  DatasetSplit s;
  for (std::size_t i = 0; i < n; ++i) (i < n_train ? s.train : i < n_train + n_val ? s.val : s.test).push_back(i);
  return s;
}

/// Training-split feature statistics and isotropic coordinate statistics (one
/// shared scale for both axes, so directions are preserved).
inline NormalizationStats compute_stats(const Dataset& d) {
  require(!d.split.train.empty(), ErrorCode::InvalidSpec, "training split is empty");
  NormalizationStats s;
  const int m = d.features;
  std::vector<double> sum(m, 0.0), sq(m, 0.0);
  double count = 0.0;
  for (std::size_t idx : d.split.train) {
    for (const Tensor& y : d.sequences.at(idx).states) {
      for (int k = 0; k < m; ++k) sum[k] += y.col(k).sum();
      count += static_cast<double>(y.rows());
    }
  }
  for (int k = 0; k < m; ++k) sum[k] /= count;
  for (std::size_t idx : d.split.train) {
    for (const Tensor& y : d.sequences.at(idx).states) {
      for (int k = 0; k < m; ++k) sq[k] += (y.col(k).array() - sum[k]).square().sum();
    }
  }
  for (int k = 0; k < m; ++k) {
    const double sd = std::sqrt(sq[k] / count);
    require(sd > 0.0, ErrorCode::ZeroVariance, "feature " + std::to_string(k) + " has zero variance on the training split");
    s.feature_mean.push_back(sum[k]);
    s.feature_std.push_back(sd);
  }
  const auto& pts = d.mesh.points.coords;
  Vec2 mean{0, 0};
  for (Vec2 p : pts) mean = mean + p;
  mean = mean / static_cast<double>(pts.size());
  double var = 0.0;
  for (Vec2 p : pts) var += squared_norm(p - mean);
  var /= 2.0 * static_cast<double>(pts.size());
  require(var > 0.0, ErrorCode::ZeroVariance, "node coordinates have zero variance");
  s.coord_mean = mean;
  s.coord_std = std::sqrt(var);
  return s;
}

inline Tensor normalize_state(const Tensor& y, const NormalizationStats& s) {
  Tensor out = y;
  for (Eigen::Index k = 0; k < y.cols(); ++k) out.col(k) = (y.col(k).array() - s.feature_mean[k]) / s.feature_std[k];
  return out;
}

inline Tensor denormalize_state(const Tensor& y, const NormalizationStats& s) {
  Tensor out = y;
  for (Eigen::Index k = 0; k < y.cols(); ++k) out.col(k) = y.col(k).array() * s.feature_std[k] + s.feature_mean[k];
  return out;
}

inline Sequence denormalize(const Sequence& seq, const NormalizationStats& s) {
  Sequence out{seq.times, {}};
  for (const Tensor& y : seq.states) out.states.push_back(denormalize_state(y, s));
  return out;
}

inline PointCloud normalize_points(const PointCloud& pts, const NormalizationStats& s) {
  PointCloud out;
  for (Vec2 p : pts.coords) out.coords.push_back((p - s.coord_mean) / s.coord_std);
  return out;
}

/// Scales features and coordinates with the given statistics.
inline Dataset apply_normalization(const Dataset& d, const NormalizationStats& s) {
  require(!d.normalized, ErrorCode::InvalidSpec, "dataset is already normalized");
  require(static_cast<int>(s.feature_mean.size()) == d.features && static_cast<int>(s.feature_std.size()) == d.features,
          ErrorCode::ShapeMismatch, "normalization statistics do not match the feature count");
  Dataset out = d;
  out.stats = s;
  out.normalized = true;
  out.mesh = make_mesh(normalize_points(d.mesh.points, s), d.mesh.cells);
  for (Sequence& seq : out.sequences)
    for (Tensor& y : seq.states) y = normalize_state(y, s);
  return out;
}

/// Normalizes with the dataset's stored statistics, computing them from the
/// training split if none are stored.
inline Dataset normalize(const Dataset& d) { return apply_normalization(d, d.stats ? *d.stats : compute_stats(d)); }

/// Builds a dataset on `k` medoids of the dense output.
inline Dataset build_dataset(const DenseData& dense, const SyntheticSpec& spec, std::size_t k, std::uint64_t subsample_seed) {
  Dataset d;
  d.features = spec.features;
  d.seed = spec.seed;
  d.dense_indices = kmedoids_subsample(dense.points, k, subsample_seed);
  d.mesh = sparse_mesh(dense.points, d.dense_indices, spec.sliver_threshold);
  for (const Sequence& full : dense.sequences) {
    Sequence seq{full.times, {}};
    for (const Tensor& y : full.states) {
      Tensor r(static_cast<Eigen::Index>(d.dense_indices.size()), y.cols());
      for (std::size_t i = 0; i < d.dense_indices.size(); ++i) r.row(i) = y.row(d.dense_indices[i]);
      seq.states.push_back(std::move(r));
    }
    d.sequences.push_back(std::move(seq));
  }
  d.split = contiguous_split(d.sequences.size(), spec.train_fraction, spec.val_fraction);
  return d;
}

struct DatasetFamily {
  Dataset primary;
  std::vector<Dataset> superres;  // same sequences at other node counts, sharing primary's statistics
};

inline Json spec_to_json(const SyntheticSpec& s);

inline DatasetFamily generate_family(const SyntheticSpec& spec) {
  const DenseData dense = generate_dense(spec);
  DatasetFamily f;
  f.primary = build_dataset(dense, spec, spec.n_nodes, spec.seed);
  f.primary.stats = compute_stats(f.primary);
  f.primary.spec = spec_to_json(spec);
  for (std::size_t r : spec.superres_nodes) {
    Dataset d = build_dataset(dense, spec, r, spec.seed);
    d.stats = f.primary.stats;
    d.spec = f.primary.spec;
    f.superres.push_back(std::move(d));
  }
  return f;
}

inline Dataset generate_synthetic(const SyntheticSpec& spec) { return generate_family(spec).primary; }

// ---------------------------------------------------------------------------
// Serialization

inline Json spec_to_json(const SyntheticSpec& s) {
  Json j;
  j["n_dense"] = s.n_dense;
  j["field"] = s.field == VelocityField::Constant ? "constant" : "rotation";
  j["velocity"] = {s.velocity.x, s.velocity.y};
  j["angular_velocity"] = s.angular_velocity;
  j["features"] = s.features;
  j["bumps"] = s.bumps;
  j["width_min"] = s.width_min;
  j["width_max"] = s.width_max;
  j["amplitude_min"] = s.amplitude_min;
  j["amplitude_max"] = s.amplitude_max;
  if (s.source) {
    j["source"] = {{"center", {s.source->center.x, s.source->center.y}}, {"width", s.source->width}, {"rate", s.source->rate}};
  } else {
    j["source"] = nullptr;
  }
  j["dt"] = s.dt;
  j["n_steps"] = s.n_steps;
  j["n_sequences"] = s.n_sequences;
  j["n_nodes"] = s.n_nodes;
  j["superres_nodes"] = s.superres_nodes;
  j["train_fraction"] = s.train_fraction;
  j["val_fraction"] = s.val_fraction;
  j["sliver_threshold"] = s.sliver_threshold;
  j["oracle_tol"] = s.oracle_tol;
  j["seed"] = s.seed;
  return j;
}

/// Reads a spec; absent keys keep their defaults, unknown keys are rejected.
inline SyntheticSpec spec_from_json(const Json& j) {
  require(j.is_object(), ErrorCode::InvalidSpec, "synthetic spec must be a JSON object");
  SyntheticSpec s;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "n_dense") s.n_dense = v.get<int>();
      else if (key == "field") {
        const std::string f = v.get<std::string>();
        require(f == "constant" || f == "rotation", ErrorCode::InvalidSpec, "field must be \"constant\" or \"rotation\"");
        s.field = f == "constant" ? VelocityField::Constant : VelocityField::Rotation;
      } else if (key == "velocity") s.velocity = {v.at(0).get<double>(), v.at(1).get<double>()};
      else if (key == "angular_velocity") s.angular_velocity = v.get<double>();
      else if (key == "features") s.features = v.get<int>();
      else if (key == "bumps") s.bumps = v.get<int>();
      else if (key == "width_min") s.width_min = v.get<double>();
      else if (key == "width_max") s.width_max = v.get<double>();
      else if (key == "amplitude_min") s.amplitude_min = v.get<double>();
      else if (key == "amplitude_max") s.amplitude_max = v.get<double>();
      else if (key == "source") {
        if (v.is_null()) {
          s.source.reset();
        } else {
          SourceSpec src;
          if (v.contains("center")) src.center = {v["center"].at(0).get<double>(), v["center"].at(1).get<double>()};
          if (v.contains("width")) src.width = v["width"].get<double>();
          if (v.contains("rate")) src.rate = v["rate"].get<double>();
          s.source = src;
        }
      } else if (key == "dt") s.dt = v.get<double>();
      else if (key == "n_steps") s.n_steps = v.get<int>();
      else if (key == "n_sequences") s.n_sequences = v.get<int>();
      else if (key == "n_nodes") s.n_nodes = v.get<std::size_t>();
      else if (key == "superres_nodes") s.superres_nodes = v.get<std::vector<std::size_t>>();
      else if (key == "train_fraction") s.train_fraction = v.get<double>();
      else if (key == "val_fraction") s.val_fraction = v.get<double>();
      else if (key == "sliver_threshold") s.sliver_threshold = v.get<double>();
      else if (key == "oracle_tol") s.oracle_tol = v.get<double>();
      else if (key == "seed") s.seed = v.get<std::uint64_t>();
      else fail(ErrorCode::InvalidSpec, "unknown synthetic spec key \"" + key + "\"");
    }
  } catch (const Json::exception& e) {
    fail(ErrorCode::InvalidSpec, std::string("malformed synthetic spec: ") + e.what());
  }
  return s;
}

inline Json mesh_to_json(const Mesh& mesh) {
  Json pts = Json::array(), cells = Json::array();
  for (Vec2 p : mesh.points.coords) pts.push_back({p.x, p.y});
  for (const Cell& c : mesh.cells) cells.push_back({c[0], c[1], c[2]});
  return {{"points", pts}, {"cells", cells}};
}

/// Imported meshes are validated but not re-triangulated.
inline Mesh mesh_from_json(const Json& j) {
  PointCloud pc;
  std::vector<Cell> cells;
  try {
    for (const Json& p : j.at("points")) pc.coords.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    for (const Json& c : j.at("cells")) cells.push_back({c.at(0).get<Index>(), c.at(1).get<Index>(), c.at(2).get<Index>()});
  } catch (const Json::exception& e) {
    fail(ErrorCode::InvalidMesh, std::string("malformed mesh file: ") + e.what());
  }
  return make_mesh(std::move(pc), std::move(cells));
}

inline Json stats_to_json(const NormalizationStats& s) {
  return {{"feature_mean", s.feature_mean},
          {"feature_std", s.feature_std},
          {"coord_mean", {s.coord_mean.x, s.coord_mean.y}},
          {"coord_std", s.coord_std}};
}

inline NormalizationStats stats_from_json(const Json& j) {
  NormalizationStats s;
  s.feature_mean = j.at("feature_mean").get<std::vector<double>>();
  s.feature_std = j.at("feature_std").get<std::vector<double>>();
  s.coord_mean = {j.at("coord_mean").at(0).get<double>(), j.at("coord_mean").at(1).get<double>()};
  s.coord_std = j.at("coord_std").get<double>();
  return s;
}

inline constexpr char kSequenceMagic[] = "FENDATA1";

inline std::string encode_sequence(const Sequence& seq) {
  require(!seq.states.empty() && seq.states.size() == seq.times.size(), ErrorCode::ShapeMismatch, "sequence times and states differ in length");
  const auto n = static_cast<std::uint64_t>(seq.states[0].rows());
  const auto m = static_cast<std::uint64_t>(seq.states[0].cols());
  std::string out(kSequenceMagic, 8);
  io::put_u64(out, n);
  io::put_u64(out, m);
  io::put_u64(out, seq.states.size());
  for (std::size_t t = 0; t < seq.states.size(); ++t) {
    const Tensor& y = seq.states[t];
    require(static_cast<std::uint64_t>(y.rows()) == n && static_cast<std::uint64_t>(y.cols()) == m, ErrorCode::ShapeMismatch,
            "states in a sequence must share one shape");
    io::put_f64(out, seq.times[t]);
    for (Eigen::Index i = 0; i < y.rows(); ++i)
      for (Eigen::Index k = 0; k < y.cols(); ++k) io::put_f64(out, y(i, k));
  }
  return out;
}

inline Sequence decode_sequence(const std::string& data, const std::string& name) {
  io::Reader r(data, name);
  require(r.bytes(8) == std::string(kSequenceMagic, 8), ErrorCode::Io, name + ": bad magic");
  const std::uint64_t n = r.u64(), m = r.u64(), steps = r.u64();
  require(data.size() == 32 + steps * (1 + n * m) * 8, ErrorCode::Io, name + ": size does not match header");
  Sequence seq;
  for (std::uint64_t t = 0; t < steps; ++t) {
    seq.times.push_back(r.f64());
    Tensor y(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
    for (Eigen::Index i = 0; i < y.rows(); ++i)
      for (Eigen::Index k = 0; k < y.cols(); ++k) y(i, k) = r.f64();
    seq.states.push_back(std::move(y));
  }
  return seq;
}

inline std::string sequence_file_name(std::size_t i) {
  std::string digits = std::to_string(i);
  return "seq_" + std::string(digits.size() < 4 ? 4 - digits.size() : 0, '0') + digits + ".bin";
}

/// Writes raw (unnormalized) data: manifest.json, mesh.json, seq_XXXX.bin.
inline void write_dataset(const std::filesystem::path& dir, const Dataset& d) {
  require(!d.normalized, ErrorCode::InvalidSpec, "datasets are stored unnormalized");
  std::filesystem::create_directories(dir);
  io::write_json(dir / "mesh.json", mesh_to_json(d.mesh));
  Json seqs = Json::array();
  for (std::size_t i = 0; i < d.sequences.size(); ++i) {
    const std::string name = sequence_file_name(i);
    io::write_file(dir / name, encode_sequence(d.sequences[i]));
    seqs.push_back({{"file", name}, {"length", d.sequences[i].states.size()}});
  }
  Json manifest;
  manifest["format"] = "femnet-dataset-1";
  manifest["mesh_file"] = "mesh.json";
  manifest["num_nodes"] = d.mesh.num_nodes();
  manifest["num_cells"] = d.mesh.num_cells();
  manifest["features"] = d.features;
  manifest["sequences"] = seqs;
  manifest["normalization"] = d.stats ? stats_to_json(*d.stats) : Json(nullptr);
  manifest["split"] = {{"train", d.split.train}, {"val", d.split.val}, {"test", d.split.test}};
  manifest["seed"] = d.seed;
  manifest["spec"] = d.spec;
  manifest["dense_indices"] = d.dense_indices;
  manifest["subsampling"] = "alternating k-medoids, k-medoids++ seeding, best of " + std::to_string(kKMedoidsRestarts) + " restarts";
  manifest["config_hash"] = io::config_hash(d.spec);
  io::write_json(dir / "manifest.json", manifest);
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
  require(std::filesystem::is_directory(dir), ErrorCode::Io, "dataset directory " + dir.string() + " does not exist");
  const Json manifest = io::read_json(dir / "manifest.json");
  Dataset d;
  try {
    d.mesh = mesh_from_json(io::read_json(dir / manifest.at("mesh_file").get<std::string>()));
    d.features = manifest.at("features").get<int>();
    for (const Json& s : manifest.at("sequences")) {
      const std::filesystem::path p = dir / s.at("file").get<std::string>();
      d.sequences.push_back(decode_sequence(io::read_file(p), p.string()));
      const Sequence& seq = d.sequences.back();
      require(static_cast<std::size_t>(seq.states[0].rows()) == d.mesh.num_nodes() && seq.states[0].cols() == d.features,
              ErrorCode::ShapeMismatch, p.string() + ": state shape does not match the mesh");
    }
    if (!manifest.at("normalization").is_null()) d.stats = stats_from_json(manifest.at("normalization"));
    d.split.train = manifest.at("split").at("train").get<std::vector<std::size_t>>();
    d.split.val = manifest.at("split").at("val").get<std::vector<std::size_t>>();
    d.split.test = manifest.at("split").at("test").get<std::vector<std::size_t>>();
    d.seed = manifest.at("seed").get<std::uint64_t>();
    d.spec = manifest.at("spec");
    d.dense_indices = manifest.value("dense_indices", std::vector<std::size_t>{});
  } catch (const Json::exception& e) {
    fail(ErrorCode::Io, dir.string() + "/manifest.json: " + e.what());
  }
  for (const auto* part : {&d.split.train, &d.split.val, &d.split.test})
    for (std::size_t i : *part) require(i < d.sequences.size(), ErrorCode::Io, "split index out of range");
  return d;
}

}  // namespace femnet
