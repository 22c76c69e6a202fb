#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "femnet/autodiff.hpp"
#include "femnet/error.hpp"

namespace femnet {

struct SolverConfig {
  double atol = 1e-6;
  double rtol = 1e-6;
  std::size_t max_nfe = 10000;
  std::optional<double> initial_step;
  double safety = 0.9;
  double min_factor = 0.2;
  double max_factor = 10.0;
  /// Replays these step sizes without error control instead of adapting.
  std::optional<std::vector<double>> fixed_steps;
};

struct OdeStats {
  std::size_t nfe = 0;
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::vector<double> steps;  // accepted step sizes, in order
};

template <class State>
struct Trajectory {
  std::vector<double> times;
  std::vector<State> states;
  OdeStats stats;
};

/// Arithmetic needed by the integrator, for plain tensors and recorded values.
template <class State>
struct StateOps;

template <>
struct StateOps<Tensor> {
  static const Tensor& value(const Tensor& s) { return s; }
  static Tensor lift(const Tensor&, Tensor v) { return v; }
  static Tensor combine(const Tensor& base, std::span<const Tensor> terms, std::span<const double> coeffs) {
    Tensor y = base;
    for (std::size_t i = 0; i < terms.size(); ++i)
      if (coeffs[i] != 0.0) y.noalias() += coeffs[i] * terms[i];
    return y;
  }
};

template <>
struct StateOps<Var> {
  static const Tensor& value(const Var& s) { return s.value(); }
  static Var lift(const Var& like, Tensor v) { return like.tape()->constant(std::move(v)); }
  static Var combine(const Var& base, std::span<const Var> terms, std::span<const double> coeffs) {
    return ops::linear_combination(base, terms, coeffs);
  }
};

namespace dopri5 {

inline constexpr std::array<double, 7> c{0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
inline constexpr std::array<std::array<double, 6>, 7> a{{
    {},
    {1.0 / 5},
    {3.0 / 40, 9.0 / 40},
    {44.0 / 45, -56.0 / 15, 32.0 / 9},
    {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
    {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
    {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84},
}};
// Fifth minus fourth order weights.
inline constexpr std::array<double, 7> e{71.0 / 57600,      0.0,         -71.0 / 16695, 71.0 / 1920,
                                         -17253.0 / 339200, 22.0 / 525, -1.0 / 40};

inline constexpr double kMinStepFraction = 1e-12;

}  // namespace dopri5

namespace detail {

inline double scaled_rms(const Tensor& v, const Tensor& y0, const Tensor& y1, double atol, double rtol) {
  const Tensor scale = (atol + rtol * y0.cwiseAbs().cwiseMax(y1.cwiseAbs()).array()).matrix();
  return std::sqrt(v.cwiseQuotient(scale).squaredNorm() / static_cast<double>(v.size()));
}

template <class State, class F>
class Dopri5 {
 public:
  using Ops = StateOps<State>;

  Dopri5(F& f, const SolverConfig& opt, OdeStats& stats) : f_(f), opt_(opt), stats_(stats) {}

  State eval(double t, const State& y) {
    ++stats_.nfe;
    if (stats_.nfe > opt_.max_nfe) {
      fail(ErrorCode::MaxNfeExceeded, "more than " + std::to_string(opt_.max_nfe) + " function evaluations");
    }
    State dy = f_(t, y);
    const Tensor& v = Ops::value(dy);
    require(v.rows() == Ops::value(y).rows() && v.cols() == Ops::value(y).cols(), ErrorCode::ShapeMismatch,
            "derivative " + shape_string(v) + " for state " + shape_string(Ops::value(y)));
    return dy;
  }

  double initial_step(double t0, const State& y0, const State& f0, double span) {
    const Tensor& y = Ops::value(y0);
    const Tensor& dy = Ops::value(f0);
    const double d0 = scaled_rms(y, y, y, opt_.atol, opt_.rtol);
    const double d1 = scaled_rms(dy, y, y, opt_.atol, opt_.rtol);
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h0 = std::min(h0, span);
    const Tensor y1 = y + h0 * dy;
    const State f1 = eval(t0 + h0, Ops::lift(y0, y1));
    const double d2 = scaled_rms(Ops::value(f1) - dy, y, y, opt_.atol, opt_.rtol) / h0;
    const double dmax = std::max(d1, d2);
    if (dmax <= 1e-15) return span;
    const double h1 = std::pow(0.01 / dmax, 1.0 / 5.0);
    return std::min({100.0 * h0, h1, span});
  }

  struct StepResult {
    State y;
    State k7;
    double error;
  };

  StepResult step(double t, const State& y, const State& k1, double h, bool need_error) {
    std::array<State, 7> k;
    k[0] = k1;
    std::array<double, 6> coeffs{};
    for (int s = 1; s < 7; ++s) {
      for (int j = 0; j < s; ++j) coeffs[j] = h * dopri5::a[s][j];
      const State ys = Ops::combine(y, std::span<const State>(k.data(), s), std::span<const double>(coeffs.data(), s));
      if (s == 6) {
        k[6] = eval(t + h, ys);
        double err = 0.0;
        if (need_error) {
          Tensor diff = Tensor::Zero(Ops::value(y).rows(), Ops::value(y).cols());
          for (int j = 0; j < 7; ++j)
            if (dopri5::e[j] != 0.0) diff.noalias() += (h * dopri5::e[j]) * Ops::value(k[j]);
          err = scaled_rms(diff, Ops::value(y), Ops::value(ys), opt_.atol, opt_.rtol);
        }
        return {ys, k[6], err};
      }
      k[s] = eval(t + dopri5::c[s] * h, ys);
    }
    fail(ErrorCode::ShapeMismatch, "unreachable");
  }

 private:
  F& f_;
  const SolverConfig& opt_;
  OdeStats& stats_;
};

}  // namespace detail

/// Dormand-Prince 5(4) with first-same-as-last reuse and a standard
/// elementary step-size controller. Steps are shortened to land exactly on
/// every requested output time. `f(t, y)` must return dy/dt with the shape of y.
template <class State, class F>
Trajectory<State> dopri5_solve(F&& f, const State& y0, std::span<const double> times, const SolverConfig& opt = {}) {
  using Ops = StateOps<State>;
  require(!times.empty(), ErrorCode::InvalidSpec, "no output times");
  for (std::size_t i = 1; i < times.size(); ++i) {
    require(times[i] > times[i - 1], ErrorCode::InvalidSpec, "output times must be strictly increasing");
  }
  require(opt.atol > 0.0 && opt.rtol > 0.0, ErrorCode::InvalidSpec, "tolerances must be positive");
  require(!opt.initial_step || *opt.initial_step > 0.0, ErrorCode::InvalidSpec, "initial step must be positive");
  require(std::isfinite(Ops::value(y0).sum()), ErrorCode::NonFiniteOutput, "initial state is not finite");

  Trajectory<State> out;
  out.times.assign(times.begin(), times.end());
  out.states.push_back(y0);
  if (times.size() == 1) return out;

  auto& fn = f;
  detail::Dopri5<State, std::remove_reference_t<F>> solver(fn, opt, out.stats);
  const double t_begin = times.front();
  const double span = times.back() - t_begin;
  const double min_step = dopri5::kMinStepFraction * span;

  double t = t_begin;
  State y = y0;
  State k1 = solver.eval(t, y);

  if (opt.fixed_steps) {
    std::size_t next = 1;
    for (const double h : *opt.fixed_steps) {
      require(next < times.size() && h > 0.0, ErrorCode::InvalidSpec, "replayed steps overrun the output times");
      auto r = solver.step(t, y, k1, h, false);
      t += h;
      if (std::abs(t - times[next]) <= 1e-9 * span) t = times[next];
      y = std::move(r.y);
      k1 = std::move(r.k7);
      ++out.stats.accepted;
      out.stats.steps.push_back(h);
      if (t == times[next]) {
        out.states.push_back(y);
        ++next;
      }
    }
    require(next == times.size(), ErrorCode::InvalidSpec, "replayed steps do not reach the last output time");
    return out;
  }

  double h = opt.initial_step ? std::min(*opt.initial_step, span) : solver.initial_step(t, y, k1, span);
  for (std::size_t next = 1; next < times.size(); ++next) {
    const double target = times[next];
    while (t < target) {
      require(h >= min_step, ErrorCode::StepUnderflow, "step size " + std::to_string(h) + " underflowed");
      const double proposed = h;
      bool clamped = false;
      if (t + h * (1.0 + 1e-8) >= target) {
        h = target - t;
        clamped = true;
      }
      auto r = solver.step(t, y, k1, h, true);
      const double err = r.error;
      require(std::isfinite(err), ErrorCode::NonFiniteOutput, "non-finite error estimate");
      if (err <= 1.0) {
        const double factor = err == 0.0 ? opt.max_factor
                                         : std::clamp(opt.safety * std::pow(err, -0.2), opt.min_factor,
                                                      opt.max_factor);
        t = clamped ? target : t + h;
        y = std::move(r.y);
        k1 = std::move(r.k7);
        ++out.stats.accepted;
        out.stats.steps.push_back(h);
        const double grown = factor * h;
        h = (clamped && factor >= 1.0) ? std::max(proposed, grown) : grown;
      } else {
        ++out.stats.rejected;
        h *= std::clamp(opt.safety * std::pow(err, -0.2), opt.min_factor, 1.0);
      }
    }
    out.states.push_back(y);
  }
  return out;
}

template <class State, class F>
Trajectory<State> dopri5_solve(F&& f, const State& y0, const std::vector<double>& times, const SolverConfig& opt = {}) {
  return dopri5_solve(std::forward<F>(f), y0, std::span<const double>(times.data(), times.size()), opt);
}

/// Solve whose every stage is recorded on the tape of `y0`, so that a loss on
/// the returned states can be differentiated with respect to the parameters
/// used by `f`. Step sizes are treated as constants.
template <class F>
Trajectory<Var> solve_with_gradients(F&& f, const Var& y0, std::span<const double> times, const SolverConfig& opt = {}) {
  return dopri5_solve<Var>(std::forward<F>(f), y0, times, opt);
}

}  // namespace femnet
