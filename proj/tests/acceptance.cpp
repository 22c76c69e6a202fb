// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "femnet/cell_geometry.hpp"
#include "femnet/config.hpp"
#include "femnet/delaunay.hpp"
#include "femnet/fem.hpp"
#include "femnet/sliver_filter.hpp"
#include "femnet/training.hpp"

namespace fs = std::filesystem;
using namespace femnet;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

class Clock {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

PointCloud random_points(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  PointCloud pc;
  for (std::size_t i = 0; i < n; ++i) pc.coords.push_back({rng.uniform(), rng.uniform()});
  return pc;
}

Tensor random_state(Eigen::Index n, Eigen::Index m, std::uint64_t seed) {
  Rng rng(seed);
  Tensor y(n, m);
  for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = rng.uniform(-1, 1);
  return y;
}

void randomize_output_layer(MlpParams& p, Rng& rng) {
  for (Eigen::Index i = 0; i < p.layers.back().weight.size(); ++i) p.layers.back().weight.data()[i] = rng.uniform(-0.5, 0.5);
  for (Eigen::Index i = 0; i < p.layers.back().bias.size(); ++i) p.layers.back().bias.data()[i] = rng.uniform(-0.5, 0.5);
}

// ---------------------------------------------------------------------------
// 1. Local products against 7-point quadrature

double barycentric(const Triangle& t, int i, Vec2 x) {
  const Vec2 b = t[(i + 1) % 3], c = t[(i + 2) % 3];
  return orient2d(x, b, c) / orient2d(t[i], b, c);
}

Vec2 barycentric_gradient(const Triangle& t, int i) {
  Eigen::Matrix3d a;
  for (int k = 0; k < 3; ++k) a.row(k) << 1.0, t[k].x, t[k].y;
  Eigen::Vector3d rhs = Eigen::Vector3d::Zero();
  rhs(i) = 1.0;
  const Eigen::Vector3d coef = a.fullPivLu().solve(rhs);
  return {coef(1), coef(2)};
}

Outcome fem_assembly_oracle() {
  const Clock clock;
  Rng rng(2024);
  double worst = 0.0;
  auto track = [&](double got, double want, double scale) { worst = std::max(worst, std::abs(got - want) / scale); };
  for (int trial = 0; trial < 100; ++trial) {
    Triangle t;
    do {
      for (Vec2& v : t) v = {rng.uniform(-2, 2), rng.uniform(-2, 2)};
    } while (triangle_area(t[0], t[1], t[2]) < 0.05);
    const double area = triangle_area(t[0], t[1], t[2]);
    const auto mass = local_mass(area);
    const auto load = load_vector(area);
    const auto conv = convection_products(t);
    for (int i = 0; i < 3; ++i) {
      const double li = quadrature_integrate([&](Vec2 x) { return barycentric(t, i, x); }, t);
      track(load[i], li, std::abs(li));
      for (int j = 0; j < 3; ++j) {
        const double mij = quadrature_integrate([&](Vec2 x) { return barycentric(t, i, x) * barycentric(t, j, x); }, t);
        track(mass[i][j], mij, std::abs(mij));
        const Vec2 gj = barycentric_gradient(t, j);
        const double cx = quadrature_integrate([&](Vec2 x) { return gj.x * barycentric(t, i, x); }, t);
        const double cy = quadrature_integrate([&](Vec2 x) { return gj.y * barycentric(t, i, x); }, t);
        const double scale = std::hypot(cx, cy);
        track(conv[j][i].x, cx, scale);
        track(conv[j][i].y, cy, scale);
      }
    }
  }
  const double secs = clock.seconds();
  return {worst < 1e-12 && secs < 1.0, "100 triangles, max relative error " + num(worst) + ", " + num(secs) + " s"};
}

// 2. Lumped mass sums to the mesh area

Outcome lumped_mass_conservation() {
  double worst = 0.0;
  int meshes = 0;
  for (std::size_t n : {10u, 50u, 200u, 1000u}) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      const Mesh mesh = delaunay_triangulate(random_points(n, 31 * n + seed));
      const LumpedMass a = lumped_mass(mesh);
      double total = 0.0;
      for (double d : a.diag) total += d;
      worst = std::max(worst, std::abs(total / mesh_area(mesh) - 1.0));
      ++meshes;
    }
  }
  return {worst < 1e-9, std::to_string(meshes) + " Delaunay meshes up to 1000 nodes, max relative error " + num(worst)};
}

// 3. Transport with a clamped velocity against the classical Galerkin RHS

Outcome transport_oracle() {
  double worst = 0.0;
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    const int m = 2;
    const FemDomain domain(delaunay_triangulate(random_points(40 + 60 * seed, seed)), m);
    Rng rng(100 + seed);
    std::vector<double> v(2 * m);
    for (double& c : v) c = rng.uniform(-1, 1);
    ModelOptions o;
    o.features = m;
    o.hidden_width = 12;
    o.seed = seed;
    FenModel model = make_model(o);
    model.transport->layers.back().weight.setZero();
    for (std::size_t j = 0; j < v.size(); ++j) model.transport->layers.back().bias(0, j) = v[j];
    Tensor velocity(domain.num_cells(), 2 * m);
    for (int j = 0; j < 2 * m; ++j) velocity.col(j).setConstant(v[j]);
    const Tensor y = random_state(domain.num_nodes(), m, seed + 10);
    const Tensor oracle = oracle_fem_rhs(y, domain, velocity);
    worst = std::max(worst, (*evaluate_terms(model, 0.0, y, domain).transport_rate - oracle).cwiseAbs().maxCoeff());
  }
  return {worst <= 1e-10, "5 random meshes, 2 features, max abs deviation " + num(worst)};
}

// 4. Constant fields and zero-initialised models

Outcome constant_field_fixed_point() {
  double transport_worst = 0.0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const FemDomain domain(delaunay_triangulate(random_points(80, seed)), 2);
    ModelOptions o;
    o.features = 2;
    o.hidden_width = 16;
    o.seed = seed;
    FenModel model = make_model(o);
    Rng rng(seed + 50);
    randomize_output_layer(*model.transport, rng);
    Tensor y(domain.num_nodes(), 2);
    y.col(0).setConstant(rng.uniform(-3, 3));
    y.col(1).setConstant(rng.uniform(-3, 3));
    transport_worst = std::max(transport_worst, evaluate_terms(model, 0.0, y, domain).transport_rate->cwiseAbs().maxCoeff());
  }

  SyntheticSpec spec;
  spec.n_dense = 31;
  spec.n_sequences = 5;
  spec.n_steps = 14;
  spec.n_nodes = 60;
  spec.seed = 8;
  const Dataset d = normalize(generate_synthetic(spec));
  bool persistence = true;
  for (bool transport : {false, true}) {
    ModelOptions o;
    o.transport = transport;
    o.hidden_width = 16;
    o.seed = 4;
    const FenModel model = make_model(o);
    const EvalReport r = evaluate(model, d, d.split.test, 10);
    persistence = persistence && r.mae == r.persistence_mae;
    const Sequence& s = d.sequences[d.split.test.front()];
    const auto traj = forecast(model, FemDomain(d.mesh, d.features), s.states[0], s.times, {});
    for (const Tensor& y : traj.states) persistence = persistence && y == s.states[0];
  }
  return {transport_worst <= 1e-12 && persistence,
          "transport rate on constant states " + num(transport_worst) + ", zero-init forecasts " +
              (persistence ? "equal persistence exactly" : "differ from persistence")};
}

// 5. Gradients through solver and loss against central differences

Outcome gradient_integrity() {
  const Clock clock;
  PointCloud pc{{{0, 0}, {1, 0}, {0, 1}, {1, 1}, {0.45, 0.55}, {0.8, 0.3}}};
  const FemDomain domain(delaunay_triangulate(pc), 1);
  ModelOptions o;
  o.hidden_width = 6;
  o.hidden_layers = 2;
  o.seed = 3;
  FenModel model = make_model(o);
  Rng rng(4);
  randomize_output_layer(model.freeform, rng);
  randomize_output_layer(*model.transport, rng);
  const Tensor y0 = (Tensor(6, 1) << 0.1, -0.4, 0.7, 0.2, 1.0, 0.5).finished();
  const std::vector<Tensor> targets{(Tensor(6, 1) << 0.0, 0.3, 0.5, -0.1, 0.8, 0.4).finished(),
                                    (Tensor(6, 1) << 0.1, 0.2, 0.6, -0.2, 0.7, 0.3).finished(),
                                    (Tensor(6, 1) << 0.2, 0.1, 0.4, 0.0, 0.9, 0.2).finished()};
  const std::vector<double> times{0.0, 0.1, 0.2, 0.3};
  std::vector<Tensor> observed{y0};
  observed.insert(observed.end(), targets.begin(), targets.end());

  Tape tape;
  const BoundModel bound = bind(tape, model);
  const auto traj =
      solve_with_gradients([&](double t, const Var& y) { return time_derivative(bound, t, y, domain); }, tape.constant(y0), times);
  tape.backward(l1_loss(traj.states, observed));

  SolverConfig replay;
  replay.fixed_steps = traj.stats.steps;
  auto loss_value = [&](const FenModel& m) {
    const auto t = forecast(m, domain, y0, times, replay);
    return l1_loss(std::span<const Tensor>(t.states), std::span<const Tensor>(observed));
  };

  const double h = 1e-6;
  double worst = 0.0;
  int checked = 0;
  for (int net = 0; net < 2; ++net) {
    const MlpVars& vars = net == 0 ? bound.freeform : *bound.transport;
    for (std::size_t l = 0; l < vars.weights.size(); ++l) {
      for (int which = 0; which < 2; ++which) {
        const Tensor g = tape.grad(which == 0 ? vars.weights[l] : vars.biases[l]);
        for (Eigen::Index i = 0; i < g.size(); ++i) {
          FenModel plus = model, minus = model;
          auto entry = [&](FenModel& fm) -> double& {
            DenseLayer& layer = (net == 0 ? fm.freeform : *fm.transport).layers[l];
            return (which == 0 ? layer.weight : layer.bias).data()[i];
          };
          entry(plus) += h;
          entry(minus) -= h;
          const double fd = (loss_value(plus) - loss_value(minus)) / (2 * h);
          worst = std::max(worst, std::abs(g.data()[i] - fd) / std::max(std::abs(fd), 1e-3));
          ++checked;
        }
      }
    }
  }
  const double secs = clock.seconds();
  return {worst < 1e-4 && secs < 60.0, std::to_string(checked) + " parameters on a 6-node mesh, 3 steps, max relative error " + num(worst) +
                                           ", " + num(secs) + " s"};
}

// 6. Dormand-Prince accuracy and tolerance scaling

double decay_error(double tol) {
  SolverConfig cfg;
  cfg.atol = tol;
  cfg.rtol = tol;
  const std::vector<double> times{0.0, 5.0};
  const auto traj = dopri5_solve<Tensor>([](double, const Tensor& y) -> Tensor { return -y; }, Tensor::Constant(1, 1, 1.0), times, cfg);
  return std::abs(traj.states.back()(0, 0) - std::exp(-5.0));
}

Outcome solver_accuracy() {
  const Clock clock;
  const double err = decay_error(1e-6);
  std::vector<double> x, y;
  for (double tol : {1e-4, 1e-5, 1e-6, 1e-7, 1e-8}) {
    x.push_back(std::log10(tol));
    y.push_back(std::log10(decay_error(tol)));
  }
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / x.size(), my = std::accumulate(y.begin(), y.end(), 0.0) / y.size();
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  const double slope = sxy / sxx, secs = clock.seconds();
  return {err < 1e-5 && slope >= 0.7 && slope <= 1.3 && secs < 1.0,
          "error at tol 1e-6 " + num(err) + ", log-log slope " + num(slope) + ", " + num(secs) + " s"};
}

// ---------------------------------------------------------------------------
// 7, 8, 10. End-to-end learning on synthetic advection

constexpr int kHiddenWidth = 48;
constexpr double kMinutesBudget = 30.0;

SyntheticSpec advection_spec() {
  SyntheticSpec s;
  s.seed = 1;
  s.superres_nodes = {200, 400};
  return s;
}

TrainConfig advection_train_config() {
  TrainConfig c;
  c.horizon = 10;
  c.max_epochs = 50;
  c.patience = 10;
  c.stride = 1;
  c.lr = 1e-3;
  c.seed = 1;
  return c;
}

FenModel advection_model() {
  ModelOptions o;
  o.hidden_width = kHiddenWidth;
  o.seed = 1;
  return make_model(o);
}

struct TrainedRun {
  TrainResult result;
  std::string log;
  double seconds = 0.0;
};

TrainedRun run_training(const FenModel& init, const Dataset& d, const TrainConfig& cfg) {
  const Clock clock;
  std::ostringstream log;
  TrainedRun r{train(init, d, cfg, &log), log.str(), 0.0};
  r.seconds = clock.seconds();
  return r;
}

std::string strip_wall_time(const std::string& log) {
  std::istringstream in(log);
  std::string out;
  for (std::string line; std::getline(in, line);) {
    Json j = Json::parse(line);
    j.erase("wall_time");
    out += j.dump() + "\n";
  }
  return out;
}

// Density-weighted mean cosine between learned cell velocities and the true
// field, over the observed test states; cells below 10% of the peak density
// are left out.
double velocity_cosine(const FenModel& model, const Dataset& raw, const Dataset& d, Vec2 truth) {
  const FemDomain domain(d.mesh, d.features);
  double weighted = 0.0, total = 0.0;
  for (std::size_t s : d.split.test) {
    const Sequence& normed = d.sequences[s];
    const Sequence& orig = raw.sequences[s];
    for (std::size_t j = 0; j < normed.states.size(); ++j) {
      const Tensor v = *evaluate_terms(model, normed.times[j], normed.states[j], domain).velocity;
      std::vector<double> density(raw.mesh.num_cells());
      for (std::size_t c = 0; c < density.size(); ++c) {
        const Cell& cell = raw.mesh.cells[c];
        density[c] = (orig.states[j](cell[0], 0) + orig.states[j](cell[1], 0) + orig.states[j](cell[2], 0)) / 3.0;
      }
      const double peak = *std::max_element(density.begin(), density.end());
      if (peak <= 0.0) continue;
      for (std::size_t c = 0; c < density.size(); ++c) {
        if (density[c] <= 0.1 * peak) continue;
        const Vec2 learned{v(c, 0), v(c, 1)};
        const double len = norm(learned);
        if (len == 0.0) continue;
        weighted += density[c] * dot(learned, truth) / (len * norm(truth));
        total += density[c];
      }
    }
  }
  return total > 0.0 ? weighted / total : 0.0;
}

// Share of the free-form term's integrated |contribution| within 4 widths of
// the source center, over the observed test states.
double source_localization(const FenModel& model, const Dataset& raw, const Dataset& d, const SourceSpec& source) {
  const FemDomain domain(d.mesh, d.features);
  const std::vector<double>& mass = domain.mass().diag;
  double inside = 0.0, total = 0.0;
  for (std::size_t s : d.split.test) {
    const Sequence& seq = d.sequences[s];
    for (std::size_t j = 0; j < seq.states.size(); ++j) {
      const Tensor ff = evaluate_terms(model, seq.times[j], seq.states[j], domain).freeform_rate;
      for (Eigen::Index i = 0; i < ff.rows(); ++i) {
        const double c = mass[i] * ff.row(i).cwiseAbs().sum();
        total += c;
        if (norm(raw.mesh.points[static_cast<std::size_t>(i)] - source.center) <= 4.0 * source.width) inside += c;
      }
    }
  }
  return total > 0.0 ? inside / total : 0.0;
}

struct Shared {
  DatasetFamily raw;
  Dataset primary;
  std::optional<TrainedRun> run;
  double data_seconds = 0.0;
};

Outcome end_to_end(Shared& sh) {
  const Clock clock;
  sh.raw = generate_family(advection_spec());
  sh.primary = normalize(sh.raw.primary);
  sh.data_seconds = clock.seconds();
  sh.run = run_training(advection_model(), sh.primary, advection_train_config());
  const TrainResult& r = sh.run->result;
  const double ratio = r.best_val_mae / r.persistence_val_mae;
  const double cosine = velocity_cosine(r.best, sh.raw.primary, sh.primary, advection_spec().velocity);

  // Inlet-dominated flow: faint initial bumps, the fixed source supplies most of the density.
  SyntheticSpec src_spec = advection_spec();
  src_spec.superres_nodes.clear();
  src_spec.source = SourceSpec{};
  src_spec.amplitude_min = 0.1;
  src_spec.amplitude_max = 0.2;
  const Dataset src_raw = generate_synthetic(src_spec);
  const Dataset src = normalize(src_raw);
  const TrainedRun src_run = run_training(advection_model(), src, advection_train_config());
  const double localized = source_localization(src_run.result.best, src_raw, src, *src_spec.source);

  const double minutes = clock.seconds() / 60.0;
  const bool a = ratio < 0.2, b = cosine > 0.9, c = localized >= 0.7;
  std::ostringstream detail;
  detail << "(a) val MAE / persistence " << num(ratio) << (a ? " ok" : " FAIL") << " [" << r.history.size() << " epochs, best " << r.best_epoch
         << "]; (b) velocity cosine " << num(cosine) << (b ? " ok" : " FAIL") << "; (c) free-form share near source " << num(localized)
         << (c ? " ok" : " FAIL") << "; " << num(minutes) << " min";
  return {a && b && c && minutes < kMinutesBudget, detail.str()};
}

Outcome super_resolution(Shared& sh) {
  const Clock clock;
  if (!sh.run) return {false, "criterion 7 did not produce a model"};
  std::vector<Dataset> sets{sh.primary};
  for (const Dataset& d : sh.raw.superres) sets.push_back(apply_normalization(d, *sh.primary.stats));
  const TrainConfig cfg = advection_train_config();
  const auto reports = super_resolution_eval(sh.run->result.best, sets, cfg.horizon, cfg.solver, 1, cfg.test_skip);
  std::ostringstream table;
  bool sorted = true, decreasing = true;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    table << (i ? ", " : "") << reports[i].num_nodes << ": " << num(reports[i].mae);
    if (i > 0) {
      sorted = sorted && reports[i].num_nodes > reports[i - 1].num_nodes;
      decreasing = decreasing && reports[i].mae <= reports[i - 1].mae;
    }
  }
  const double ratio = reports.back().mae / reports.front().mae;
  const double minutes = clock.seconds() / 60.0;
  const bool pass = reports.size() == 3 && sorted && reports.back().num_nodes == 400 && ratio <= 3.0 && minutes < 10.0;
  return {pass, "test MAE by node count {" + table.str() + "}, MAE400 / MAE100 " + num(ratio) + ", MAE " +
                    (decreasing ? "non-increasing" : "not monotone") + " in resolution, " + num(minutes) + " min"};
}

// 9. Sliver filtering

std::set<Cell> sorted_cells(const Mesh& m) {
  std::set<Cell> out;
  for (Cell c : m.cells) {
    std::sort(c.begin(), c.end());
    out.insert(c);
  }
  return out;
}

Outcome sliver_filtering() {
  // Nearly collinear lower hull: the flat hull cell goes first and exposes a
  // second flat cell behind it.
  const PointCloud pc{{{0, 0}, {1, 0.06}, {2, 0.08}, {3, 0.06}, {4, 0}, {0, 2}, {2, 2}, {4, 2}, {1, 1}, {3, 1}}};
  const Mesh m = delaunay_triangulate(pc);
  const Mesh f = filter_sliver_cells(m);
  const auto before = sorted_cells(m), after = sorted_cells(f);
  std::vector<Cell> removed;
  std::set_difference(before.begin(), before.end(), after.begin(), after.end(), std::back_inserter(removed));
  const std::set<Face> boundary(m.boundary_faces.begin(), m.boundary_faces.end());
  bool cascaded = false;
  for (const Cell& c : removed) {
    int faces = 0;
    for (const Face& fc : cell_faces(c)) faces += boundary.count(fc) ? 1 : 0;
    cascaded = cascaded || faces == 0;
  }
  const bool construction = removed.size() >= 2 && cascaded && std::includes(before.begin(), before.end(), after.begin(), after.end());

  PointCloud grid;
  for (int j = 0; j < 6; ++j)
    for (int i = 0; i < 6; ++i) grid.coords.push_back({static_cast<double>(i), static_cast<double>(j)});
  const Mesh g = delaunay_triangulate(grid);
  const bool grid_kept = sorted_cells(filter_sliver_cells(g)) == sorted_cells(g);

  bool idempotent = sorted_cells(filter_sliver_cells(f)) == after;
  for (std::uint64_t seed : {21u, 22u, 23u}) {
    const Mesh once = filter_sliver_cells(delaunay_triangulate(random_points(300, seed)));
    idempotent = idempotent && sorted_cells(filter_sliver_cells(once)) == sorted_cells(once);
  }
  return {construction && grid_kept && idempotent,
          "construction removed " + std::to_string(removed.size()) + " cells (" + (cascaded ? "with" : "without") + " cascade), grid " +
              (grid_kept ? "unchanged" : "changed") + ", " + (idempotent ? "idempotent" : "not idempotent")};
}

// 10. Reproducibility

std::string checkpoint_bytes(const TrainResult& r, const Dataset& d, const fs::path& dir) {
  fs::create_directories(dir);
  std::string bytes;
  for (const auto& [name, model] : {std::pair{"best", &r.best}, std::pair{"final", &r.final}}) {
    write_checkpoint(dir, name, {*model, "tfen", 1, d.stats, Json::object()});
    bytes += io::read_file(dir / (std::string(name) + ".bin")) + io::read_file(dir / (std::string(name) + ".json"));
  }
  return bytes;
}

Outcome reproducibility(Shared& sh) {
  if (!sh.run) return {false, "criterion 7 did not produce a model"};
  const TrainedRun again = run_training(advection_model(), normalize(generate_family(advection_spec()).primary), advection_train_config());
  const fs::path root = fs::temp_directory_path() / "femnet_acceptance";
  fs::remove_all(root);
  const bool logs = strip_wall_time(sh.run->log) == strip_wall_time(again.log);
  const bool checkpoints = checkpoint_bytes(sh.run->result, sh.primary, root / "a") == checkpoint_bytes(again.result, sh.primary, root / "b");
  fs::remove_all(root);
  return {logs && checkpoints, std::string("training logs ") + (logs ? "identical" : "differ") + " (wall_time excluded), checkpoints " +
                                   (checkpoints ? "bit-identical" : "differ") + ", rerun " + num(again.seconds / 60.0) + " min"};
}

}  // namespace

int main() {
  Shared shared;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"FEM assembly oracle", fem_assembly_oracle},
      {"lumped-mass conservation", lumped_mass_conservation},
      {"transport/oracle equivalence", transport_oracle},
      {"constant-field fixed point", constant_field_fixed_point},
      {"gradient integrity", gradient_integrity},
      {"solver accuracy", solver_accuracy},
      {"end-to-end learning", [&] { return end_to_end(shared); }},
      {"super-resolution transfer", [&] { return super_resolution(shared); }},
      {"sliver filtering", sliver_filtering},
      {"reproducibility", [&] { return reproducibility(shared); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::cout << "criterion " << i + 1 << " " << (o.pass ? "PASS" : "FAIL") << "  " << criteria[i].first << ": " << o.detail << std::endl;
  }
  std::cout << criteria.size() - failed << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
