#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "femnet/autodiff.hpp"
#include "femnet/error.hpp"
#include "femnet/rng.hpp"

namespace femnet {

struct DenseLayer {
  Tensor weight;  // out x in
  Tensor bias;    // 1 x out
};

/// Fully connected tanh network: `hidden_layers` affine+tanh blocks of equal
/// width followed by a linear output layer.
struct MlpParams {
  std::vector<DenseLayer> layers;

  Eigen::Index in_dim() const { return layers.front().weight.cols(); }
  Eigen::Index out_dim() const { return layers.back().weight.rows(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const DenseLayer& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }
};

/// Hidden layers are drawn uniformly from +-sqrt(1/fan_in); the output layer
/// starts at exactly zero so a fresh network is the zero function.
inline MlpParams make_mlp(Eigen::Index in_dim, Eigen::Index width, int hidden_layers, Eigen::Index out_dim, Rng& rng) {
  require(in_dim > 0 && width > 0 && out_dim > 0 && hidden_layers >= 0, ErrorCode::InvalidSpec, "invalid MLP dimensions");
  MlpParams p;
  Eigen::Index fan_in = in_dim;
  for (int l = 0; l < hidden_layers; ++l) {
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    DenseLayer layer{Tensor(width, fan_in), Tensor(1, width)};
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = rng.uniform(-bound, bound);
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias.data()[i] = rng.uniform(-bound, bound);
    p.layers.push_back(std::move(layer));
    fan_in = width;
  }
  p.layers.push_back({Tensor::Zero(out_dim, fan_in), Tensor::Zero(1, out_dim)});
  return p;
}

/// Parameters of one network registered on a tape.
struct MlpVars {
  std::vector<Var> weights;
  std::vector<Var> biases;
};

inline MlpVars bind(Tape& tape, const MlpParams& params) {
  MlpVars v;
  for (const DenseLayer& l : params.layers) {
    v.weights.push_back(tape.parameter(l.weight));
    v.biases.push_back(tape.parameter(l.bias));
  }
  return v;
}

inline Var mlp_forward(const MlpVars& net, const Var& input) {
  require(!net.weights.empty(), ErrorCode::ShapeMismatch, "empty network");
  require(input.cols() == net.weights.front().cols(), ErrorCode::ShapeMismatch,
          "MLP expects " + std::to_string(net.weights.front().cols()) + " inputs, got " + std::to_string(input.cols()));
  Var h = input;
  const std::size_t last = net.weights.size() - 1;
  for (std::size_t l = 0; l < last; ++l) h = ops::tanh(ops::affine(h, net.weights[l], net.biases[l]));
  return ops::affine(h, net.weights[last], net.biases[last]);
}

inline Tensor mlp_forward(const MlpParams& params, const Tensor& input) {
  Tape tape;
  return mlp_forward(bind(tape, params), tape.constant(input)).value();
}

/// Flat view of every parameter tensor of a set of networks, in a fixed order.
inline std::vector<Tensor*> parameter_list(std::vector<MlpParams*> nets) {
  std::vector<Tensor*> out;
  for (MlpParams* n : nets) {
    for (DenseLayer& l : n->layers) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
  }
  return out;
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  long step = 0;
};

inline AdamState make_adam(const std::vector<Tensor*>& params, AdamConfig config = {}) {
  AdamState s{config, {}, {}, 0};
  for (const Tensor* p : params) {
    s.first_moment.push_back(Tensor::Zero(p->rows(), p->cols()));
    s.second_moment.push_back(Tensor::Zero(p->rows(), p->cols()));
  }
  return s;
}

/// One bias-corrected Adam update, in place.
inline void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads, AdamState& state) {
  require(params.size() == grads.size() && params.size() == state.first_moment.size(), ErrorCode::ShapeMismatch,
          "adam_step: parameter, gradient and state counts differ");
  ++state.step;
  const AdamConfig& c = state.config;
  const double correction1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = grads[i];
    require(g.rows() == p.rows() && g.cols() == p.cols(), ErrorCode::ShapeMismatch,
            "adam_step: gradient " + shape_string(g) + " for parameter " + shape_string(p));
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseAbs2();
    p.array() -= c.lr * (m.array() / correction1) / ((v.array() / correction2).sqrt() + c.eps);
  }
}

}  // namespace femnet
