#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "femnet/data.hpp"
#include "femnet/dynamics.hpp"
#include "femnet/io.hpp"
#include "femnet/training.hpp"

namespace femnet {

struct ModelConfig {
  std::string variant = "tfen";
  std::optional<int> hidden_width;  // variant default when absent
  int hidden_layers = 4;
  bool autonomous = true;
  bool stationary = true;
  std::optional<double> time_period;
};

/// Everything a pipeline run depends on. `seed` drives model initialisation
/// and training order; the data section carries its own generator seed.
struct RunConfig {
  SyntheticSpec data;
  ModelConfig model;
  TrainConfig train;
  std::uint64_t seed = 0;
};

inline ModelOptions model_options(const ModelConfig& m, int features, std::uint64_t seed) {
  require(m.variant == "fen" || m.variant == "tfen", ErrorCode::InvalidSpec, "variant must be \"fen\" or \"tfen\", got \"" + m.variant + "\"");
  ModelOptions o;
  o.features = features;
  o.transport = m.variant == "tfen";
  o.hidden_width = m.hidden_width.value_or(default_hidden_width(o.transport));
  o.hidden_layers = m.hidden_layers;
  o.autonomous = m.autonomous;
  o.stationary = m.stationary;
  o.time_period = m.time_period;
  o.seed = seed;
  require(o.hidden_width >= 1 && o.hidden_layers >= 0, ErrorCode::InvalidSpec, "hidden sizes must be positive");
  return o;
}

inline Json solver_to_json(const SolverConfig& s) {
  return {{"atol", s.atol},     {"rtol", s.rtol},          {"max_nfe", s.max_nfe},
          {"safety", s.safety}, {"min_factor", s.min_factor}, {"max_factor", s.max_factor},
          {"initial_step", s.initial_step ? Json(*s.initial_step) : Json(nullptr)}};
}

inline Json train_to_json(const TrainConfig& t) {
  return {{"horizon", t.horizon},
          {"lr", t.lr},
          {"max_epochs", t.max_epochs},
          {"patience", t.patience},
          {"curriculum_start", t.curriculum_start},
          {"stride", t.stride},
          {"test_skip", t.test_skip},
          {"max_wall_seconds", t.max_wall_seconds ? Json(*t.max_wall_seconds) : Json(nullptr)},
          {"solver", solver_to_json(t.solver)}};
}

inline Json model_to_json(const ModelConfig& m) {
  return {{"variant", m.variant},
          {"hidden_width", m.hidden_width ? Json(*m.hidden_width) : Json(nullptr)},
          {"hidden_layers", m.hidden_layers},
          {"autonomous", m.autonomous},
          {"stationary", m.stationary},
          {"time_period", m.time_period ? Json(*m.time_period) : Json(nullptr)}};
}

inline Json run_config_to_json(const RunConfig& c) {
  return {{"seed", c.seed}, {"data", spec_to_json(c.data)}, {"model", model_to_json(c.model)}, {"train", train_to_json(c.train)}};
}

namespace detail {

template <class F>
void for_each_key(const Json& j, const std::string& section, F&& handle) {
  require(j.is_object(), ErrorCode::InvalidSpec, section + " must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    if (!handle(key, v)) fail(ErrorCode::InvalidSpec, "unknown key \"" + key + "\" in " + section);
  }
}

template <class T>
std::optional<T> optional_value(const Json& v) {
  if (v.is_null()) return std::nullopt;
  return v.get<T>();
}

}  // namespace detail

inline SolverConfig solver_from_json(const Json& j, SolverConfig s = {}) {
  detail::for_each_key(j, "solver", [&](const std::string& k, const Json& v) {
    if (k == "atol") s.atol = v.get<double>();
    else if (k == "rtol") s.rtol = v.get<double>();
    else if (k == "max_nfe") s.max_nfe = v.get<std::size_t>();
    else if (k == "safety") s.safety = v.get<double>();
    else if (k == "min_factor") s.min_factor = v.get<double>();
    else if (k == "max_factor") s.max_factor = v.get<double>();
    else if (k == "initial_step") s.initial_step = detail::optional_value<double>(v);
    else return false;
    return true;
  });
  return s;
}

inline TrainConfig train_from_json(const Json& j, TrainConfig t = {}) {
  detail::for_each_key(j, "train", [&](const std::string& k, const Json& v) {
    if (k == "horizon") t.horizon = v.get<int>();
    else if (k == "lr") t.lr = v.get<double>();
    else if (k == "max_epochs") t.max_epochs = v.get<int>();
    else if (k == "patience") t.patience = v.get<int>();
    else if (k == "curriculum_start") t.curriculum_start = v.get<int>();
    else if (k == "stride") t.stride = v.get<std::size_t>();
    else if (k == "test_skip") t.test_skip = v.get<std::size_t>();
    else if (k == "max_wall_seconds") t.max_wall_seconds = detail::optional_value<double>(v);
    else if (k == "solver") t.solver = solver_from_json(v, t.solver);
    else return false;
    return true;
  });
  return t;
}

inline ModelConfig model_from_json(const Json& j, ModelConfig m = {}) {
  detail::for_each_key(j, "model", [&](const std::string& k, const Json& v) {
    if (k == "variant") m.variant = v.get<std::string>();
    else if (k == "hidden_width") m.hidden_width = detail::optional_value<int>(v);
    else if (k == "hidden_layers") m.hidden_layers = v.get<int>();
    else if (k == "autonomous") m.autonomous = v.get<bool>();
    else if (k == "stationary") m.stationary = v.get<bool>();
    else if (k == "time_period") m.time_period = detail::optional_value<double>(v);
    else return false;
    return true;
  });
  return m;
}

/// Absent keys keep their defaults; unknown keys and wrong types are InvalidSpec.
inline RunConfig run_config_from_json(const Json& j) {
  RunConfig c;
  try {
    detail::for_each_key(j, "config", [&](const std::string& k, const Json& v) {
      if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "data") c.data = spec_from_json(v);
      else if (k == "model") c.model = model_from_json(v);
      else if (k == "train") c.train = train_from_json(v);
      else return false;
      return true;
    });
  } catch (const Json::exception& e) {
    fail(ErrorCode::InvalidSpec, std::string("malformed config: ") + e.what());
  }
  return c;
}

}  // namespace femnet
