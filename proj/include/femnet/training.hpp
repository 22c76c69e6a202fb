#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "femnet/data.hpp"
#include "femnet/dynamics.hpp"
#include "femnet/io.hpp"
#include "femnet/nn.hpp"
#include "femnet/odeint.hpp"

namespace femnet {

struct TrainConfig {
  int horizon = 10;
  double lr = 1e-3;
  int max_epochs = 50;
  int patience = 5;
  int curriculum_start = 3;
  std::uint64_t seed = 0;
  SolverConfig solver;
  std::size_t stride = 1;      // distance between subsequence starts
  std::size_t test_skip = 12;  // leading steps of test sequences never used as starts
  std::optional<double> max_wall_seconds;
};

inline void validate_train_config(const TrainConfig& c) {
  require(c.horizon >= 1, ErrorCode::InvalidSpec, "horizon must be at least 1");
  require(c.curriculum_start >= 1 && c.curriculum_start <= c.horizon, ErrorCode::InvalidSpec,
          "curriculum_start must lie in [1, horizon]");
  require(c.lr > 0.0, ErrorCode::InvalidSpec, "lr must be positive");
  require(c.max_epochs >= 1, ErrorCode::InvalidSpec, "max_epochs must be at least 1");
  require(c.patience >= 1, ErrorCode::InvalidSpec, "patience must be at least 1");
  require(c.stride >= 1, ErrorCode::InvalidSpec, "stride must be at least 1");
}

inline int curriculum_length(const TrainConfig& c, int epoch) { return std::min(c.curriculum_start + epoch, c.horizon); }

struct Window {
  std::size_t sequence;
  std::size_t start;
  std::size_t steps;
};

/// Every `steps`-step window of the listed sequences whose start is a multiple
/// of `stride` at or after `skip`.
inline std::vector<Window> windows(const Dataset& d, std::span<const std::size_t> split, std::size_t steps, std::size_t stride,
                                   std::size_t skip = 0) {
  std::vector<Window> out;
  for (std::size_t q : split) {
    const std::size_t n = d.sequences.at(q).states.size();
    for (std::size_t start = skip; start + steps < n; start += stride) out.push_back({q, start, steps});
  }
  return out;
}

inline std::span<const double> window_times(const Dataset& d, const Window& w) {
  return std::span<const double>(d.sequences[w.sequence].times).subspan(w.start, w.steps + 1);
}

/// Mean L1 error per node and prediction step; index 0 (the initial
/// condition) is excluded: (1/(N T)) sum_j sum_i |pred_j,i - target_j,i|_1.
inline double l1_loss(std::span<const Tensor> predicted, std::span<const Tensor> target) {
  require(predicted.size() == target.size() && predicted.size() >= 2, ErrorCode::ShapeMismatch,
          "l1_loss needs matching trajectories with at least one prediction step");
  double total = 0.0;
  for (std::size_t j = 1; j < predicted.size(); ++j) {
    require(predicted[j].rows() == target[j].rows() && predicted[j].cols() == target[j].cols(), ErrorCode::ShapeMismatch,
            "l1_loss: prediction " + shape_string(predicted[j]) + " against target " + shape_string(target[j]));
    total += (predicted[j] - target[j]).cwiseAbs().sum();
  }
  return total / (static_cast<double>(predicted[0].rows()) * static_cast<double>(predicted.size() - 1));
}

inline double l1_loss(const Trajectory<Tensor>& predicted, const Trajectory<Tensor>& target) {
  require(predicted.times == target.times, ErrorCode::ShapeMismatch, "l1_loss: output times differ");
  return l1_loss(std::span<const Tensor>(predicted.states), std::span<const Tensor>(target.states));
}

inline Var l1_loss(std::span<const Var> predicted, std::span<const Tensor> target) {
  require(predicted.size() == target.size() && predicted.size() >= 2, ErrorCode::ShapeMismatch,
          "l1_loss needs matching trajectories with at least one prediction step");
  Tape& tape = *predicted[0].tape();
  auto step = [&](std::size_t j) { return ops::sum(ops::abs(ops::sub(predicted[j], tape.constant(target[j])))); };
  Var total = step(1);
  for (std::size_t j = 2; j < predicted.size(); ++j) total = ops::add(total, step(j));
  return ops::scale(total, 1.0 / (static_cast<double>(predicted[0].rows()) * static_cast<double>(predicted.size() - 1)));
}

/// Solves the model from the window's first state over its time stamps.
inline Trajectory<Tensor> forecast(const FenModel& model, const FemDomain& domain, const Tensor& y0, std::span<const double> times,
                                   const SolverConfig& solver) {
  return dopri5_solve<Tensor>([&](double t, const Tensor& y) { return time_derivative(model, t, y, domain); }, y0, times, solver);
}

struct EvalReport {
  double mae = 0.0;
  double persistence_mae = 0.0;
  double nfe_mean = 0.0;
  double nfe_std = 0.0;
  std::vector<double> per_step_mae;
  std::size_t n_sequences = 0;  // number of evaluated windows
  std::size_t num_nodes = 0;
};

inline Json report_to_json(const EvalReport& r) {
  return {{"mae", r.mae},           {"persistence_mae", r.persistence_mae}, {"nfe_mean", r.nfe_mean},
          {"nfe_std", r.nfe_std},   {"per_step_mae", r.per_step_mae},       {"n_sequences", r.n_sequences},
          {"num_nodes", r.num_nodes}};
}

namespace detail {

inline const Dataset& ensure_normalized(const Dataset& d, std::optional<Dataset>& storage) {
  if (d.normalized) return d;
  storage = normalize(d);
  return *storage;
}

// Error of one normalized state in original units, summed over nodes and features.
inline double raw_abs_error(const Tensor& a, const Tensor& b, const NormalizationStats& s) {
  double e = 0.0;
  for (Eigen::Index k = 0; k < a.cols(); ++k) e += (a.col(k) - b.col(k)).cwiseAbs().sum() * s.feature_std[k];
  return e;
}

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  double sum = 0.0;
  for (double x : v) sum += x;
  const double mean = sum / static_cast<double>(v.size());
  double sq = 0.0;
  for (double x : v) sq += (x - mean) * (x - mean);
  return {mean, std::sqrt(sq / static_cast<double>(v.size()))};
}

}  // namespace detail

/// MAE in original units over every `horizon`-step window of the split (test
/// windows start at or after `skip`), the matching persistence MAE, and the
/// NFE of each solve.
inline EvalReport evaluate(const FenModel& model, const Dataset& data, std::span<const std::size_t> split, int horizon,
                           const SolverConfig& solver = {}, std::size_t stride = 1, std::size_t skip = 0) {
  require(horizon >= 1, ErrorCode::InvalidSpec, "horizon must be at least 1");
  std::optional<Dataset> storage;
  const Dataset& d = detail::ensure_normalized(data, storage);
  const FemDomain domain(d.mesh, d.features);
  const auto ws = windows(d, split, static_cast<std::size_t>(horizon), stride, skip);
  require(!ws.empty(), ErrorCode::InvalidSpec, "no window of " + std::to_string(horizon) + " steps fits the split");

  EvalReport r;
  r.per_step_mae.assign(static_cast<std::size_t>(horizon), 0.0);
  r.n_sequences = ws.size();
  r.num_nodes = d.mesh.num_nodes();
  // Both errors go through identical arithmetic so a model that never moves
  // reproduces the persistence MAE exactly.
  std::vector<double> persistence(static_cast<std::size_t>(horizon), 0.0);
  std::vector<double> nfe;
  for (const Window& w : ws) {
    const Sequence& seq = d.sequences[w.sequence];
    const Trajectory<Tensor> pred = forecast(model, domain, seq.states[w.start], window_times(d, w), solver);
    nfe.push_back(static_cast<double>(pred.stats.nfe));
    for (std::size_t j = 1; j <= w.steps; ++j) {
      const Tensor& target = seq.states[w.start + j];
      r.per_step_mae[j - 1] += detail::raw_abs_error(pred.states[j], target, *d.stats);
      persistence[j - 1] += detail::raw_abs_error(seq.states[w.start], target, *d.stats);
    }
  }
  const double n = static_cast<double>(d.mesh.num_nodes());
  const double count = static_cast<double>(ws.size());
  for (std::size_t j = 0; j < persistence.size(); ++j) {
    r.per_step_mae[j] /= n * count;
    persistence[j] /= n * count;
    r.mae += r.per_step_mae[j] / horizon;
    r.persistence_mae += persistence[j] / horizon;
  }
  std::tie(r.nfe_mean, r.nfe_std) = detail::mean_std(nfe);
  return r;
}

struct EpochRecord {
  int epoch = 0;
  int length = 0;  // curriculum subsequence length s
  double train_loss = 0.0;
  double val_mae = 0.0;
  double nfe_mean = 0.0;
  double nfe_std = 0.0;
  double wall_seconds = 0.0;
};

inline Json epoch_to_json(const EpochRecord& e) {
  return {{"epoch", e.epoch},   {"s", e.length},       {"train_loss", e.train_loss},     {"val_mae", e.val_mae},
          {"nfe_mean", e.nfe_mean}, {"nfe_std", e.nfe_std}, {"wall_time", e.wall_seconds}};
}

struct TrainResult {
  FenModel best;
  FenModel final;
  int best_epoch = -1;
  double best_val_mae = std::numeric_limits<double>::infinity();
  double initial_val_mae = 0.0;
  double persistence_val_mae = 0.0;
  std::vector<EpochRecord> history;
};

/// Multi-step L1 training with a growing subsequence length, Adam with batch
/// size one, and early stopping on validation MAE over full-horizon windows.
/// One JSON line per epoch goes to `log` (preceded by one line describing the
/// untrained model).
inline TrainResult train(FenModel model, const Dataset& data, const TrainConfig& cfg, std::ostream* log = nullptr) {
  validate_train_config(cfg);
  std::optional<Dataset> storage;
  const Dataset& d = detail::ensure_normalized(data, storage);
  require(!d.split.train.empty() && !d.split.val.empty(), ErrorCode::InvalidSpec, "training needs train and validation splits");
  const FemDomain domain(d.mesh, d.features);
  const auto started = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count(); };

  auto validate = [&](const std::string& when) {
    try {
      return evaluate(model, d, d.split.val, cfg.horizon, cfg.solver, cfg.stride);
    } catch (const Error& e) {
      fail(e.code(), "validation after " + when + ": " + e.what());
    }
  };

  TrainResult result;
  const EvalReport initial = validate("initialization");
  result.initial_val_mae = initial.mae;
  result.persistence_val_mae = initial.persistence_mae;
  if (log) {
    *log << Json{{"epoch", nullptr}, {"val_mae", initial.mae}, {"persistence_mae", initial.persistence_mae},
                 {"parameters", model.parameter_count()}, {"seed", cfg.seed}}
                .dump()
         << "\n";
  }
  result.best = model;
  result.best_val_mae = initial.mae;

  std::vector<MlpParams*> nets{&model.freeform};
  if (model.transport) nets.push_back(&*model.transport);
  const std::vector<Tensor*> params = parameter_list(nets);
  AdamState adam = make_adam(params, AdamConfig{cfg.lr});
  Rng order_rng(cfg.seed);
  int since_best = 0;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.length = curriculum_length(cfg, epoch);
    std::vector<Window> ws = windows(d, d.split.train, static_cast<std::size_t>(rec.length), cfg.stride);
    require(!ws.empty(), ErrorCode::InvalidSpec, "training sequences are shorter than the curriculum length");
    order_rng.shuffle(ws);

    std::vector<double> nfe;
    for (std::size_t i = 0; i < ws.size(); ++i) {
      const Window& w = ws[i];
      const Sequence& seq = d.sequences[w.sequence];
      Tape tape;
      const BoundModel bound = bind(tape, model);
      std::optional<Trajectory<Var>> traj;
      try {
        traj = solve_with_gradients([&](double t, const Var& y) { return time_derivative(bound, t, y, domain); },
                                    tape.constant(seq.states[w.start]), window_times(d, w), cfg.solver);
      } catch (const Error& e) {
        fail(e.code(), "epoch " + std::to_string(epoch) + ", window " + std::to_string(i) + " (sequence " +
                           std::to_string(w.sequence) + ", start " + std::to_string(w.start) + "): " + e.what());
      }
      nfe.push_back(static_cast<double>(traj->stats.nfe));
      const Var loss = l1_loss(std::span<const Var>(traj->states),
                               std::span<const Tensor>(seq.states).subspan(w.start, w.steps + 1));
      rec.train_loss += loss.value()(0, 0) / static_cast<double>(ws.size());
      tape.backward(loss);
      std::vector<Tensor> grads;
      for (const MlpVars* vars : {&bound.freeform, bound.transport ? &*bound.transport : nullptr}) {
        if (!vars) continue;
        for (std::size_t l = 0; l < vars->weights.size(); ++l) {
          grads.push_back(tape.grad(vars->weights[l]));
          grads.push_back(tape.grad(vars->biases[l]));
        }
      }
      adam_step(params, grads, adam);
    }
    std::tie(rec.nfe_mean, rec.nfe_std) = detail::mean_std(nfe);
    rec.val_mae = validate("epoch " + std::to_string(epoch)).mae;
    rec.wall_seconds = elapsed();
    result.history.push_back(rec);
    if (log) *log << epoch_to_json(rec).dump() << "\n" << std::flush;

    if (rec.val_mae < result.best_val_mae) {
      result.best_val_mae = rec.val_mae;
      result.best_epoch = epoch;
      result.best = model;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
    if (cfg.max_wall_seconds && rec.wall_seconds >= *cfg.max_wall_seconds) break;
  }
  result.final = std::move(model);
  return result;
}

/// Evaluates one model on each resolution with that resolution's own mesh.
inline std::vector<EvalReport> super_resolution_eval(const FenModel& model, std::span<const Dataset> datasets, int horizon,
                                                     const SolverConfig& solver = {}, std::size_t stride = 1, std::size_t skip = 12) {
  std::vector<EvalReport> out;
  for (const Dataset& d : datasets) out.push_back(evaluate(model, d, d.split.test, horizon, solver, stride, skip));
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: <name>.json describes the model, <name>.bin holds every
// parameter as little-endian f64 in parameter_list order.

inline constexpr char kCheckpointMagic[] = "FENCKPT1";

struct Checkpoint {
  FenModel model;
  std::string variant;
  std::uint64_t seed = 0;
  std::optional<NormalizationStats> stats;
  Json extra = Json::object();
};

inline std::string variant_name(const FenModel& m) { return m.transport ? "tfen" : "fen"; }

inline void write_checkpoint(const std::filesystem::path& dir, const std::string& name, const Checkpoint& c) {
  FenModel model = c.model;
  std::vector<MlpParams*> nets{&model.freeform};
  if (model.transport) nets.push_back(&*model.transport);
  std::string blob(kCheckpointMagic, 8);
  const std::vector<Tensor*> params = parameter_list(nets);
  std::size_t count = 0;
  for (const Tensor* p : params) count += static_cast<std::size_t>(p->size());
  io::put_u64(blob, count);
  for (const Tensor* p : params)
    for (Eigen::Index i = 0; i < p->rows(); ++i)
      for (Eigen::Index j = 0; j < p->cols(); ++j) io::put_f64(blob, (*p)(i, j));
  io::write_file(dir / (name + ".bin"), blob);

  auto shapes = [](const MlpParams& p) {
    Json s = Json::array();
    for (const DenseLayer& l : p.layers) s.push_back({l.weight.rows(), l.weight.cols()});
    return s;
  };
  Json j;
  j["format"] = "femnet-checkpoint-1";
  j["variant"] = variant_name(model);
  j["features"] = model.features;
  j["autonomous"] = model.autonomous;
  j["stationary"] = model.stationary;
  j["time_period"] = model.time_period ? Json(*model.time_period) : Json(nullptr);
  j["hidden_width"] = model.freeform.layers.front().weight.rows();
  j["hidden_layers"] = model.freeform.layers.size() - 1;
  j["input_dim"] = model.input_dim();
  j["freeform_layers"] = shapes(model.freeform);
  j["transport_layers"] = model.transport ? shapes(*model.transport) : Json(nullptr);
  j["parameter_count"] = model.parameter_count();
  j["seed"] = c.seed;
  j["normalization"] = c.stats ? stats_to_json(*c.stats) : Json(nullptr);
  j["blob"] = name + ".bin";
  for (const auto& [k, v] : c.extra.items()) j[k] = v;
  Json hashed = j;
  hashed.erase("blob");
  j["config_hash"] = io::config_hash(hashed);
  io::write_json(dir / (name + ".json"), j);
}

inline Checkpoint read_checkpoint(const std::filesystem::path& json_path) {
  const Json j = io::read_json(json_path);
  Checkpoint c;
  try {
    auto layers_from = [](const Json& shapes) {
      MlpParams p;
      for (const Json& s : shapes) {
        const auto rows = s.at(0).get<Eigen::Index>(), cols = s.at(1).get<Eigen::Index>();
        p.layers.push_back({Tensor::Zero(rows, cols), Tensor::Zero(1, rows)});
      }
      return p;
    };
    c.model.features = j.at("features").get<int>();
    c.model.autonomous = j.at("autonomous").get<bool>();
    c.model.stationary = j.at("stationary").get<bool>();
    if (!j.at("time_period").is_null()) c.model.time_period = j.at("time_period").get<double>();
    c.model.freeform = layers_from(j.at("freeform_layers"));
    if (!j.at("transport_layers").is_null()) c.model.transport = layers_from(j.at("transport_layers"));
    c.variant = j.at("variant").get<std::string>();
    c.seed = j.at("seed").get<std::uint64_t>();
    if (!j.at("normalization").is_null()) c.stats = stats_from_json(j.at("normalization"));
    c.extra = j;
    require(c.model.freeform.in_dim() == c.model.input_dim(), ErrorCode::Io, json_path.string() + ": layer shapes do not match the model flags");

    const std::filesystem::path blob_path = json_path.parent_path() / j.at("blob").get<std::string>();
    const std::string blob = io::read_file(blob_path);
    io::Reader r(blob, blob_path.string());
    require(r.bytes(8) == std::string(kCheckpointMagic, 8), ErrorCode::Io, blob_path.string() + ": bad magic");
    std::vector<MlpParams*> nets{&c.model.freeform};
    if (c.model.transport) nets.push_back(&*c.model.transport);
    const std::vector<Tensor*> params = parameter_list(nets);
    std::size_t count = 0;
    for (const Tensor* p : params) count += static_cast<std::size_t>(p->size());
    require(r.u64() == count, ErrorCode::Io, blob_path.string() + ": parameter count does not match the manifest");
    for (Tensor* p : params)
      for (Eigen::Index i = 0; i < p->rows(); ++i)
        for (Eigen::Index k = 0; k < p->cols(); ++k) (*p)(i, k) = r.f64();
    require(r.done(), ErrorCode::Io, blob_path.string() + ": trailing bytes");
  } catch (const Json::exception& e) {
    fail(ErrorCode::Io, json_path.string() + ": " + e.what());
  }
  return c;
}

}  // namespace femnet
