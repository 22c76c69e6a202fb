#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "femnet/data.hpp"
#include "femnet/dynamics.hpp"
#include "femnet/odeint.hpp"

using namespace femnet;

namespace {

Tensor scalar(double v) { return Tensor::Constant(1, 1, v); }

double decay_error(double tol) {
  SolverConfig cfg;
  cfg.atol = tol;
  cfg.rtol = tol;
  const std::vector<double> times{0.0, 5.0};
  const auto traj = dopri5_solve<Tensor>([](double, const Tensor& y) -> Tensor { return -y; }, scalar(1.0), times, cfg);
  return std::abs(traj.states.back()(0, 0) - std::exp(-5.0));
}

}  // namespace

TEST(Dopri5, ExponentialDecay) {
  std::vector<double> times;
  for (int i = 0; i <= 10; ++i) times.push_back(0.5 * i);
  const auto traj = dopri5_solve<Tensor>([](double, const Tensor& y) -> Tensor { return -y; }, scalar(1.0), times);
  ASSERT_EQ(traj.states.size(), times.size());
  for (std::size_t i = 0; i < times.size(); ++i) {
    EXPECT_EQ(traj.times[i], times[i]);
    EXPECT_LT(std::abs(traj.states[i](0, 0) - std::exp(-times[i])), 1e-5);
  }
  EXPECT_GE(traj.stats.nfe, 6 * traj.stats.accepted);
}

TEST(Dopri5, ErrorScalesWithTolerance) {
  std::vector<double> logs_tol, logs_err;
  for (double tol : {1e-4, 1e-5, 1e-6, 1e-7, 1e-8}) {
    logs_tol.push_back(std::log10(tol));
    logs_err.push_back(std::log10(decay_error(tol)));
  }
  const double n = static_cast<double>(logs_tol.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < logs_tol.size(); ++i) {
    mx += logs_tol[i] / n;
    my += logs_err[i] / n;
  }
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < logs_tol.size(); ++i) {
    sxy += (logs_tol[i] - mx) * (logs_err[i] - my);
    sxx += (logs_tol[i] - mx) * (logs_tol[i] - mx);
  }
  const double slope = sxy / sxx;
  EXPECT_GE(slope, 0.7);
  EXPECT_LE(slope, 1.3);
}

TEST(Dopri5, TighterToleranceNeverUsesFewerEvaluations) {
  // Above 1e-4 the forced problem has rejected steps that break strict ordering.
  std::size_t previous = 0;
  for (double tol : {1e-4, 3e-5, 1e-5, 3e-6, 1e-6, 1e-7, 1e-8, 1e-9}) {
    SolverConfig cfg;
    cfg.atol = tol;
    cfg.rtol = tol;
    const std::vector<double> times{0.0, 1.0, 2.0, 3.0};
    const auto traj = dopri5_solve<Tensor>(
        [](double t, const Tensor& y) -> Tensor { return Tensor(-y.array() + std::sin(3.0 * t)); }, scalar(0.5), times, cfg);
    EXPECT_GE(traj.stats.nfe, previous);
    previous = traj.stats.nfe;
  }
}

TEST(Dopri5, ZeroDerivativeTakesOneStepPerInterval) {
  const std::vector<double> times{0.0, 0.1, 0.2, 0.7};
  const Tensor y0 = (Tensor(2, 2) << 1, 2, 3, 4).finished();
  const auto traj = dopri5_solve<Tensor>([](double, const Tensor& y) -> Tensor { return Tensor::Zero(y.rows(), y.cols()); }, y0, times);
  for (const Tensor& y : traj.states) EXPECT_EQ(y, y0);
  EXPECT_LE(traj.stats.accepted, times.size() - 1);
  EXPECT_EQ(traj.stats.rejected, 0u);
}

TEST(Dopri5, RotationReturnsAfterOnePeriod) {
  const double period = 2.0 * std::numbers::pi;
  const std::vector<double> times{0.0, period};
  const Tensor y0 = (Tensor(1, 2) << 1.0, 0.0).finished();
  const auto traj = dopri5_solve<Tensor>(
      [](double, const Tensor& y) -> Tensor { return (Tensor(1, 2) << -y(0, 1), y(0, 0)).finished(); }, y0, times);
  EXPECT_LT((traj.states.back() - y0).norm(), 1e-4);
  EXPECT_LT(std::abs(traj.states.back().norm() - 1.0), 1e-4);
}

TEST(Dopri5, OutputTimesAreExact) {
  const std::vector<double> times{0.1, 0.3, 0.7, 1.1, 2.9, 3.0000001};
  const auto traj = dopri5_solve<Tensor>([](double t, const Tensor& y) -> Tensor { return Tensor(y * std::cos(t)); }, scalar(1.0), times);
  ASSERT_EQ(traj.times.size(), times.size());
  for (std::size_t i = 0; i < times.size(); ++i) EXPECT_EQ(traj.times[i], times[i]);
  for (std::size_t i = 0; i < times.size(); ++i) EXPECT_NEAR(traj.states[i](0, 0), std::exp(std::sin(times[i]) - std::sin(0.1)), 1e-5);
}

TEST(Dopri5, Errors) {
  auto code_of = [](const std::function<void()>& f) {
    try {
      f();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::Io;
  };
  const std::vector<double> times{0.0, 10.0};
  SolverConfig tight;
  tight.max_nfe = 20;
  EXPECT_EQ(code_of([&] { dopri5_solve<Tensor>([](double, const Tensor& y) -> Tensor { return Tensor(-50.0 * y); }, scalar(1.0), times, tight); }),
            ErrorCode::MaxNfeExceeded);
  // Finite-time blow-up at t = 1 drives the step size to zero.
  SolverConfig loose;
  loose.max_nfe = 1000000;
  EXPECT_EQ(code_of([&] {
              dopri5_solve<Tensor>([](double, const Tensor& y) -> Tensor { return Tensor(y.array().square()); }, scalar(1.0),
                                   std::vector<double>{0.0, 2.0}, loose);
            }),
            ErrorCode::StepUnderflow);
  EXPECT_EQ(code_of([&] { dopri5_solve<Tensor>([](double, const Tensor& y) -> Tensor { return y; }, scalar(1.0), std::vector<double>{1.0, 0.5}); }),
            ErrorCode::InvalidSpec);
}

TEST(SolveWithGradients, LinearDynamicsMatchFiniteDifferences) {
  const std::vector<double> times{0.0, 0.5, 1.0, 1.5};
  const Tensor target = (Tensor(1, 2) << 0.3, -0.2).finished();
  auto loss_value = [&](double theta) {
    const auto traj = dopri5_solve<Tensor>([theta](double, const Tensor& y) -> Tensor { return Tensor(theta * y); },
                                           (Tensor(1, 2) << 1.0, -0.5).finished(), times);
    double l = 0;
    for (std::size_t i = 1; i < traj.states.size(); ++i) l += (traj.states[i] - target).cwiseAbs().sum();
    return l;
  };

  Tensor theta = Tensor::Constant(1, 2, -1.0);
  Tape tape;
  const Var p = tape.parameter(theta);
  const Var y0 = tape.constant((Tensor(1, 2) << 1.0, -0.5).finished());
  const auto traj = solve_with_gradients([&](double, const Var& y) { return ops::mul(p, y); }, y0, times);
  Var loss = ops::sum(ops::abs(ops::sub(traj.states[1], tape.constant(target))));
  for (std::size_t i = 2; i < traj.states.size(); ++i) loss = ops::add(loss, ops::sum(ops::abs(ops::sub(traj.states[i], tape.constant(target)))));
  EXPECT_NEAR(loss.value()(0, 0), loss_value(-1.0), 1e-12);
  tape.backward(loss);
  const Tensor g = tape.grad(p);
  const double h = 1e-5;
  const double fd = (loss_value(-1.0 + h) - loss_value(-1.0 - h)) / (2 * h);
  EXPECT_NEAR(g.sum(), fd, 1e-4 * std::abs(fd));
}

TEST(SolveWithGradients, ZeroHorizonIsIdentity) {
  Tensor theta = Tensor::Constant(1, 1, 2.0);
  Tape tape;
  const Var p = tape.parameter(theta);
  const Var y0 = tape.constant(scalar(3.0));
  const std::vector<double> times{0.0};
  const auto traj = solve_with_gradients([&](double, const Var& y) { return ops::mul(p, y); }, y0, times);
  ASSERT_EQ(traj.states.size(), 1u);
  EXPECT_EQ(traj.states[0].value(), scalar(3.0));
  EXPECT_EQ(traj.stats.nfe, 0u);
  tape.backward(ops::sum(traj.states[0]));
  EXPECT_EQ(tape.grad(p), Tensor::Zero(1, 1));
}

TEST(SolveWithGradients, ReplayReproducesAdaptiveSolve) {
  const std::vector<double> times{0.0, 0.4, 1.3};
  auto f = [](double t, const Tensor& y) -> Tensor { return Tensor(-y.array().cube() + std::cos(t)); };
  const auto adaptive = dopri5_solve<Tensor>(f, scalar(0.8), times);
  SolverConfig replay;
  replay.fixed_steps = adaptive.stats.steps;
  const auto replayed = dopri5_solve<Tensor>(f, scalar(0.8), times, replay);
  ASSERT_EQ(replayed.states.size(), adaptive.states.size());
  for (std::size_t i = 0; i < times.size(); ++i) EXPECT_EQ(replayed.states[i], adaptive.states[i]);
}

TEST(SolveWithGradients, FenLossMatchesFiniteDifferences) {
  PointCloud pc{{{0, 0}, {1, 0}, {0, 1}, {1, 1}, {0.45, 0.55}}};
  const FemDomain domain(delaunay_triangulate(pc), 1);
  ModelOptions o;
  o.hidden_width = 6;
  o.hidden_layers = 2;
  o.seed = 3;
  FenModel model = make_model(o);
  Rng rng(4);
  for (MlpParams* net : {&model.freeform, &*model.transport})
    for (Eigen::Index i = 0; i < net->layers.back().weight.size(); ++i) net->layers.back().weight.data()[i] = rng.uniform(-0.5, 0.5);
  const Tensor y0 = (Tensor(5, 1) << 0.1, -0.4, 0.7, 0.2, 1.0).finished();
  const Tensor target = (Tensor(5, 1) << 0.0, 0.3, 0.5, -0.1, 0.8).finished();
  const std::vector<double> times{0.0, 0.1, 0.2, 0.3};

  std::vector<double> steps;
  auto loss_value = [&](const FenModel& m) {
    SolverConfig cfg;
    cfg.fixed_steps = steps;
    const auto traj = dopri5_solve<Tensor>([&](double t, const Tensor& y) { return time_derivative(m, t, y, domain); }, y0, times, cfg);
    double l = 0;
    for (std::size_t i = 1; i < traj.states.size(); ++i) l += (traj.states[i] - target).cwiseAbs().sum();
    return l;
  };

  Tape tape;
  const BoundModel bound = bind(tape, model);
  const auto traj = solve_with_gradients([&](double t, const Var& y) { return time_derivative(bound, t, y, domain); },
                                         tape.constant(y0), times);
  steps = traj.stats.steps;
  Var loss = ops::sum(ops::abs(ops::sub(traj.states[1], tape.constant(target))));
  for (std::size_t i = 2; i < traj.states.size(); ++i) loss = ops::add(loss, ops::sum(ops::abs(ops::sub(traj.states[i], tape.constant(target)))));
  tape.backward(loss);

  const double h = 1e-6;
  int checked = 0;
  for (int net = 0; net < 2; ++net) {
    const MlpVars& vars = net == 0 ? bound.freeform : *bound.transport;
    for (std::size_t l = 0; l < vars.weights.size(); ++l) {
      const Tensor g = tape.grad(vars.weights[l]);
      for (Eigen::Index i = 0; i < g.size(); i += 5) {
        FenModel plus = model, minus = model;
        (net == 0 ? plus.freeform : *plus.transport).layers[l].weight.data()[i] += h;
        (net == 0 ? minus.freeform : *minus.transport).layers[l].weight.data()[i] -= h;
        const double fd = (loss_value(plus) - loss_value(minus)) / (2 * h);
        EXPECT_NEAR(g.data()[i], fd, 1e-4 * std::max(std::abs(fd), 1e-3)) << "net " << net << " layer " << l << " entry " << i;
        ++checked;
      }
    }
  }
  EXPECT_GT(checked, 10);
}
