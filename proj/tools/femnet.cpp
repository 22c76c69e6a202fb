#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "femnet/config.hpp"
#include "femnet/data.hpp"
#include "femnet/delaunay.hpp"
#include "femnet/sliver_filter.hpp"
#include "femnet/training.hpp"

namespace fs = std::filesystem;
using namespace femnet;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_path(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw UsageError(what + " " + p.string() + " does not exist");
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string provenance(const std::string& hash, std::uint64_t seed) {
  return "# config_hash=" + hash + " seed=" + std::to_string(seed) + "\n";
}

PointCloud read_points_csv(const fs::path& path) {
  std::istringstream in(io::read_file(path));
  PointCloud pc;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream fields(line);
    double x, y;
    if (!(fields >> x >> y)) {
      if (pc.size() == 0 && line_no == 1) continue;  // header
      fail(ErrorCode::InvalidSpec, path.string() + ":" + std::to_string(line_no) + ": expected \"x,y\"");
    }
    pc.coords.push_back({x, y});
  }
  return pc;
}

/// Config from an optional file, with flags applied on top by the caller.
RunConfig load_config(const std::string& path) {
  if (path.empty()) return {};
  require_path(path, "config file");
  return run_config_from_json(io::read_json(path));
}

// Normalizes a dataset with the statistics stored in a checkpoint, so every
// resolution is scaled exactly like the training data.
Dataset normalized_for(const Checkpoint& c, const Dataset& d) {
  require(c.stats.has_value(), ErrorCode::InvalidSpec, "checkpoint carries no normalization statistics");
  return apply_normalization(d, *c.stats);
}

std::string eval_csv_header() { return "num_nodes,n_sequences,mae,persistence_mae,nfe_mean,nfe_std\n"; }

std::string eval_csv_row(const EvalReport& r) {
  return std::to_string(r.num_nodes) + "," + std::to_string(r.n_sequences) + "," + fmt(r.mae) + "," + fmt(r.persistence_mae) + "," +
         fmt(r.nfe_mean) + "," + fmt(r.nfe_std) + "\n";
}

std::string checkpoint_hash(const Checkpoint& c) { return c.extra.value("config_hash", std::string("unknown")); }

// ---------------------------------------------------------------------------

struct MeshArgs {
  std::string points;
  int grid = 0;
  double threshold = kDefaultSliverThreshold;
  std::string out;
};

int cmd_mesh(const MeshArgs& a) {
  PointCloud pc;
  if (!a.points.empty()) {
    require_path(a.points, "points file");
    pc = read_points_csv(a.points);
  } else if (a.grid > 0) {
    pc = dense_grid(a.grid);
  } else {
    throw UsageError("mesh needs --points or --grid");
  }
  const Mesh raw = delaunay_triangulate(pc);
  const Mesh filtered = filter_sliver_cells(raw, a.threshold);
  Json j = mesh_to_json(filtered);
  j["sliver_threshold_degrees"] = a.threshold;
  j["removed_cells"] = raw.num_cells() - filtered.num_cells();
  io::write_json(a.out, j);
  std::cout << "mesh: " << filtered.num_nodes() << " nodes, " << filtered.num_cells() << " cells ("
            << raw.num_cells() - filtered.num_cells() << " slivers removed) -> " << a.out << "\n";
  return 0;
}

struct GenArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int cmd_gen_data(const GenArgs& a) {
  RunConfig cfg = load_config(a.config);
  if (a.seed) cfg.data.seed = *a.seed;
  const DatasetFamily f = generate_family(cfg.data);
  write_dataset(a.out, f.primary);
  for (const Dataset& d : f.superres) write_dataset(fs::path(a.out) / "superres" / ("nodes_" + std::to_string(d.dense_indices.size())), d);
  std::cout << "gen-data: " << f.primary.sequences.size() << " sequences on " << f.primary.mesh.num_nodes() << " nodes -> " << a.out << "\n";
  for (const Dataset& d : f.superres) std::cout << "  superres: " << d.mesh.num_nodes() << " nodes\n";
  return 0;
}

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::optional<std::string> variant;
  std::optional<std::uint64_t> seed;
  std::optional<int> hidden_width;
  std::optional<int> epochs;
  std::optional<std::size_t> stride;
  std::optional<double> lr;
  std::optional<int> horizon;
};

int cmd_train(const TrainArgs& a) {
  RunConfig cfg = load_config(a.config);
  require_path(a.data, "dataset directory");
  if (a.variant) {
    cfg.model.variant = *a.variant;
    if (!a.hidden_width) cfg.model.hidden_width.reset();
  }
  if (a.seed) cfg.seed = *a.seed;
  if (a.hidden_width) cfg.model.hidden_width = *a.hidden_width;
  if (a.epochs) cfg.train.max_epochs = *a.epochs;
  if (a.stride) cfg.train.stride = *a.stride;
  if (a.lr) cfg.train.lr = *a.lr;
  if (a.horizon) cfg.train.horizon = *a.horizon;
  cfg.train.seed = cfg.seed;

  const Dataset raw = read_dataset(a.data);
  const Dataset data = normalize(raw);
  const ModelOptions opts = model_options(cfg.model, data.features, cfg.seed);
  Json run = run_config_to_json(cfg);
  run.erase("data");
  run["dataset_config_hash"] = io::config_hash(raw.spec);
  const std::string hash = io::config_hash(run);

  const fs::path out(a.out);
  fs::create_directories(out);
  std::ofstream log(out / "train_log.jsonl", std::ios::trunc);
  if (!log) fail(ErrorCode::Io, "cannot write " + (out / "train_log.jsonl").string());
  log << Json{{"config_hash", hash}, {"seed", cfg.seed}, {"config", run}}.dump() << "\n";
  const TrainResult r = train(make_model(opts), data, cfg.train, &log);

  const Json extra{{"run_config_hash", hash}, {"best_epoch", r.best_epoch}, {"best_val_mae", r.best_val_mae},
                   {"persistence_val_mae", r.persistence_val_mae}, {"epochs_run", r.history.size()}, {"config", run}};
  write_checkpoint(out, "best", {r.best, cfg.model.variant, cfg.seed, data.stats, extra});
  write_checkpoint(out, "final", {r.final, cfg.model.variant, cfg.seed, data.stats, extra});
  std::cout << "train: " << cfg.model.variant << " width " << opts.hidden_width << ", " << r.history.size() << " epochs, best epoch "
            << r.best_epoch << ", val MAE " << r.best_val_mae << " (persistence " << r.persistence_val_mae << ") -> " << a.out << "\n";
  return 0;
}

struct ForecastArgs {
  std::string config;
  std::string checkpoint;
  std::string data;
  std::size_t sequence = 0;
  std::size_t start = 0;
  int horizon = 10;
  std::string out;
  std::string dump_terms;
};

int cmd_forecast(const ForecastArgs& a) {
  require_path(a.checkpoint, "checkpoint");
  require_path(a.data, "dataset directory");
  const Checkpoint ck = read_checkpoint(a.checkpoint);
  const Dataset raw = read_dataset(a.data);
  const Dataset d = normalized_for(ck, raw);
  require(a.sequence < d.sequences.size(), ErrorCode::InvalidSpec, "sequence " + std::to_string(a.sequence) + " out of range");
  const Sequence& seq = d.sequences[a.sequence];
  require(a.horizon >= 0 && a.start + static_cast<std::size_t>(a.horizon) < seq.times.size(), ErrorCode::InvalidSpec,
          "start + horizon exceeds the sequence length " + std::to_string(seq.times.size() - 1));
  const FemDomain domain(d.mesh, d.features);
  const std::span<const double> times = std::span<const double>(seq.times).subspan(a.start, static_cast<std::size_t>(a.horizon) + 1);
  const Trajectory<Tensor> traj = forecast(ck.model, domain, seq.states[a.start], times, load_config(a.config).train.solver);
  const NormalizationStats& s = *ck.stats;
  const std::string head = provenance(checkpoint_hash(ck), ck.seed);

  std::string csv = head + "time,node,x,y";
  for (int k = 0; k < d.features; ++k) csv += ",f" + std::to_string(k) + ",target" + std::to_string(k);
  csv += "\n";
  for (std::size_t j = 0; j < traj.states.size(); ++j) {
    const Tensor y = denormalize_state(traj.states[j], s);
    const Tensor target = denormalize_state(seq.states[a.start + j], s);
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      const Vec2 p = raw.mesh.points[static_cast<std::size_t>(i)];
      csv += fmt(traj.times[j]) + "," + std::to_string(i) + "," + fmt(p.x) + "," + fmt(p.y);
      for (Eigen::Index k = 0; k < y.cols(); ++k) csv += "," + fmt(y(i, k)) + "," + fmt(target(i, k));
      csv += "\n";
    }
  }
  io::write_file(a.out, csv);

  if (!a.dump_terms.empty()) {
    // Rates in original units per unit time; velocities in original coordinates.
    std::string nodes = head + "time,node,x,y,feature,value,freeform,transport,rate\n";
    std::string cells = head + "time,cell,cx,cy,feature,density,vx,vy\n";
    for (std::size_t j = 0; j < traj.states.size(); ++j) {
      const TermValues tv = evaluate_terms(ck.model, traj.times[j], traj.states[j], domain);
      const Tensor y = denormalize_state(traj.states[j], s);
      for (Eigen::Index i = 0; i < y.rows(); ++i) {
        const Vec2 p = raw.mesh.points[static_cast<std::size_t>(i)];
        for (Eigen::Index k = 0; k < y.cols(); ++k) {
          const double sd = s.feature_std[k];
          nodes += fmt(traj.times[j]) + "," + std::to_string(i) + "," + fmt(p.x) + "," + fmt(p.y) + "," + std::to_string(k) + "," +
                   fmt(y(i, k)) + "," + fmt(tv.freeform_rate(i, k) * sd) + "," +
                   fmt(tv.transport_rate ? (*tv.transport_rate)(i, k) * sd : 0.0) + "," + fmt(tv.rate(i, k) * sd) + "\n";
        }
      }
      if (!tv.velocity) continue;
      for (std::size_t c = 0; c < raw.mesh.num_cells(); ++c) {
        const Cell& cell = raw.mesh.cells[c];
        const Vec2 center = (raw.mesh.points[cell[0]] + raw.mesh.points[cell[1]] + raw.mesh.points[cell[2]]) / 3.0;
        for (Eigen::Index k = 0; k < y.cols(); ++k) {
          const double density = (y(cell[0], k) + y(cell[1], k) + y(cell[2], k)) / 3.0;
          cells += fmt(traj.times[j]) + "," + std::to_string(c) + "," + fmt(center.x) + "," + fmt(center.y) + "," + std::to_string(k) + "," +
                   fmt(density) + "," + fmt((*tv.velocity)(c, 2 * k) * s.coord_std) + "," +
                   fmt((*tv.velocity)(c, 2 * k + 1) * s.coord_std) + "\n";
        }
      }
    }
    io::write_file(fs::path(a.dump_terms) / "node_terms.csv", nodes);
    if (ck.model.transport) io::write_file(fs::path(a.dump_terms) / "cell_velocity.csv", cells);
  }
  std::cout << "forecast: " << traj.states.size() - 1 << " steps, " << traj.stats.nfe << " evaluations -> " << a.out << "\n";
  return 0;
}

struct EvalArgs {
  std::string config;
  std::string checkpoint;
  std::vector<std::string> data;
  int horizon = 10;
  std::string split = "test";
  std::optional<std::size_t> stride;
  std::optional<std::size_t> skip;
  std::string out;
};

std::vector<std::size_t> split_indices(const Dataset& d, const std::string& name) {
  if (name == "train") return d.split.train;
  if (name == "val") return d.split.val;
  if (name == "test") return d.split.test;
  throw UsageError("split must be train, val or test");
}

int cmd_eval(const EvalArgs& a) {
  require_path(a.checkpoint, "checkpoint");
  require_path(a.data.at(0), "dataset directory");
  const Checkpoint ck = read_checkpoint(a.checkpoint);
  const Dataset d = normalized_for(ck, read_dataset(a.data[0]));
  const TrainConfig tc = load_config(a.config).train;
  const std::size_t skip = a.skip.value_or(a.split == "test" ? tc.test_skip : 0);
  const EvalReport r = evaluate(ck.model, d, split_indices(d, a.split), a.horizon, tc.solver, a.stride.value_or(1), skip);
  const fs::path out(a.out);
  Json j = report_to_json(r);
  j["split"] = a.split;
  j["horizon"] = a.horizon;
  j["config_hash"] = checkpoint_hash(ck);
  j["seed"] = ck.seed;
  io::write_json(out / "eval.json", j);
  io::write_file(out / "eval.csv", provenance(checkpoint_hash(ck), ck.seed) + eval_csv_header() + eval_csv_row(r));
  std::cout << "eval: MAE " << r.mae << " (persistence " << r.persistence_mae << "), NFE " << r.nfe_mean << " +- " << r.nfe_std << "\n";
  return 0;
}

int cmd_superres(const EvalArgs& a) {
  require_path(a.checkpoint, "checkpoint");
  for (const std::string& p : a.data) require_path(p, "dataset directory");
  const Checkpoint ck = read_checkpoint(a.checkpoint);
  std::vector<Dataset> sets;
  for (const std::string& p : a.data) sets.push_back(normalized_for(ck, read_dataset(p)));
  std::stable_sort(sets.begin(), sets.end(), [](const Dataset& x, const Dataset& y) { return x.mesh.num_nodes() < y.mesh.num_nodes(); });
  const TrainConfig tc = load_config(a.config).train;
  const std::size_t skip = a.skip.value_or(tc.test_skip);
  const auto reports = super_resolution_eval(ck.model, sets, a.horizon, tc.solver, a.stride.value_or(1), skip);
  const fs::path out(a.out);
  std::string csv = provenance(checkpoint_hash(ck), ck.seed) + eval_csv_header();
  Json rows = Json::array();
  for (const EvalReport& r : reports) {
    csv += eval_csv_row(r);
    rows.push_back(report_to_json(r));
  }
  io::write_file(out / "superres.csv", csv);
  io::write_json(out / "superres.json", {{"reports", rows}, {"horizon", a.horizon}, {"config_hash", checkpoint_hash(ck)}, {"seed", ck.seed}});
  for (const EvalReport& r : reports) std::cout << "superres: " << r.num_nodes << " nodes, MAE " << r.mae << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Finite element networks: meshes, synthetic data, training and evaluation"};
  app.require_subcommand(1);

  MeshArgs mesh;
  auto* m = app.add_subcommand("mesh", "Delaunay mesh with sliver filtering");
  m->add_option("--points", mesh.points, "CSV file of x,y coordinates");
  m->add_option("--grid", mesh.grid, "use an n x n grid on the unit square instead");
  m->add_option("--threshold", mesh.threshold, "sliver angle threshold in degrees");
  m->add_option("--out", mesh.out, "output mesh JSON")->required();

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "generate a synthetic dataset");
  g->add_option("--config", gen.config, "run config JSON (data section)");
  g->add_option("--seed", gen.seed, "generator seed");
  g->add_option("--out", gen.out, "output dataset directory")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a model");
  t->add_option("--config", tr.config, "run config JSON");
  t->add_option("--data", tr.data, "dataset directory")->required();
  t->add_option("--out", tr.out, "output directory")->required();
  t->add_option("--variant", tr.variant, "fen or tfen")->check(CLI::IsMember({"fen", "tfen"}));
  t->add_option("--seed", tr.seed, "training seed");
  t->add_option("--hidden-width", tr.hidden_width, "hidden layer width");
  t->add_option("--epochs", tr.epochs, "maximum epochs");
  t->add_option("--stride", tr.stride, "distance between subsequence starts");
  t->add_option("--lr", tr.lr, "Adam learning rate");
  t->add_option("--horizon", tr.horizon, "prediction steps");

  ForecastArgs fc;
  auto* f = app.add_subcommand("forecast", "roll a model out from one sequence");
  f->add_option("--config", fc.config, "run config JSON (solver section)");
  f->add_option("--checkpoint", fc.checkpoint, "checkpoint JSON")->required();
  f->add_option("--data", fc.data, "dataset directory")->required();
  f->add_option("--sequence", fc.sequence, "sequence index");
  f->add_option("--start", fc.start, "first step of the window");
  f->add_option("--horizon", fc.horizon, "prediction steps");
  f->add_option("--out", fc.out, "output trajectory CSV")->required();
  f->add_option("--dump-terms", fc.dump_terms, "directory for per-node term and per-cell velocity CSVs");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "MAE and NFE on one dataset split");
  e->add_option("--config", ev.config, "run config JSON (solver and test_skip)");
  e->add_option("--checkpoint", ev.checkpoint, "checkpoint JSON")->required();
  e->add_option("--data", ev.data, "dataset directory")->required()->expected(1);
  e->add_option("--horizon", ev.horizon, "prediction steps");
  e->add_option("--split", ev.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  e->add_option("--stride", ev.stride, "distance between window starts");
  e->add_option("--skip", ev.skip, "leading steps never used as starts (default 12 on test)");
  e->add_option("--out", ev.out, "output directory")->required();

  EvalArgs sr;
  auto* s = app.add_subcommand("superres", "evaluate one model on several resolutions");
  s->add_option("--config", sr.config, "run config JSON (solver and test_skip)");
  s->add_option("--checkpoint", sr.checkpoint, "checkpoint JSON")->required();
  s->add_option("--data", sr.data, "dataset directories")->required()->expected(1, -1);
  s->add_option("--horizon", sr.horizon, "prediction steps");
  s->add_option("--stride", sr.stride, "distance between window starts");
  s->add_option("--skip", sr.skip, "leading test steps never used as starts (default 12)");
  s->add_option("--out", sr.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (m->parsed()) return cmd_mesh(mesh);
    if (g->parsed()) return cmd_gen_data(gen);
    if (t->parsed()) return cmd_train(tr);
    if (f->parsed()) return cmd_forecast(fc);
    if (e->parsed()) return cmd_eval(ev);
    if (s->parsed()) return cmd_superres(sr);
  } catch (const UsageError& err) {
    std::cerr << "femnet: " << err.what() << "\n";
    return kExitUsage;
  } catch (const Error& err) {
    std::cerr << "femnet: " << err.what() << "\n";
    const bool usage = err.code() == ErrorCode::InvalidSpec || err.code() == ErrorCode::KTooLarge;
    return usage ? kExitUsage : kExitRuntime;
  } catch (const std::exception& err) {
    std::cerr << "femnet: " << err.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
