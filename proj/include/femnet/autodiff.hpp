#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "femnet/error.hpp"

namespace femnet {

/// Dense row-major real matrix. Every tensor in the engine is 2D; the leading
/// extent doubles as the batch axis (cells or nodes).
using Tensor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::string shape_string(const Tensor& t) {
  return "(" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + ")";
}

class Tape;

/// Handle to a value recorded on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id, std::uint64_t generation) : tape_(tape), id_(id), generation_(generation) {}

  const Tensor& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  std::uint64_t generation() const { return generation_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
  std::uint64_t generation_ = 0;
};

/// Reverse-mode recording of whole-tensor operations. A tape belongs to one
/// thread; backward walks nodes in reverse creation order, so gradient
/// accumulation order is fixed and results are bit-reproducible.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that refers to an externally owned tensor (e.g. a model parameter).
  /// The tensor must outlive the tape's use of it.
  Var parameter(const Tensor& external) { return push_leaf(nullptr, &external, true); }

  /// Leaf holding a copy of a constant value; receives no gradient.
  Var constant(Tensor value) { return push_leaf(std::make_unique<Tensor>(std::move(value)), nullptr, false); }

  /// Leaf holding a copy of a value that does receive gradients.
  Var variable(Tensor value) { return push_leaf(std::make_unique<Tensor>(std::move(value)), nullptr, true); }

  Var record(Tensor value, bool requires_grad, BackwardFn backward, const char* op) {
    // x * 0 is 0 for finite x and NaN otherwise; the sum vectorizes, allFinite does not.
    if ((value.array() * 0.0).sum() != 0.0) fail(ErrorCode::NonFiniteOutput, std::string("non-finite value produced by ") + op);
    Node node;
    node.owned = std::make_unique<Tensor>(std::move(value));
    node.requires_grad = requires_grad;
    if (requires_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1, generation_);
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value(); }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Adds `g` into the gradient slot of node `id` (no-op for constants).
  void accumulate(std::size_t id, const Tensor& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
      n.grad = g;
      n.has_grad = true;
    } else {
      n.grad += g;
    }
  }

  /// Back-propagates from a 1x1 output. Gradients of earlier backward calls
  /// are cleared first.
  void backward(const Var& output) {
    check(output);
    require(output.rows() == 1 && output.cols() == 1, ErrorCode::ShapeMismatch,
            "backward needs a scalar output, got " + shape_string(output.value()));
    for (Node& n : nodes_) {
      n.has_grad = false;
      n.grad.resize(0, 0);
    }
    accumulate(output.id(), Tensor::Ones(1, 1));
    for (std::size_t i = output.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.has_grad || !n.backward) continue;
      n.backward(*this, n.grad);
    }
    backward_done_ = true;
  }

  /// Gradient of the last backward output with respect to `v`; zeros if `v`
  /// did not influence it.
  Tensor grad(const Var& v) const {
    check(v);
    require(backward_done_, ErrorCode::GraphNotRecorded, "backward has not been run on this tape");
    const Node& n = nodes_[v.id()];
    if (!n.has_grad) return Tensor::Zero(n.value().rows(), n.value().cols());
    return n.grad;
  }

  void check(const Var& v) const {
    require(v.tape() == this && v.generation() == generation_ && v.id() < nodes_.size(), ErrorCode::GraphNotRecorded,
            "variable does not belong to the current recording of this tape");
  }

  /// Drops every recorded node; existing Vars become invalid.
  void clear() {
    nodes_.clear();
    ++generation_;
    backward_done_ = false;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::unique_ptr<Tensor> owned;
    const Tensor* external = nullptr;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;

    const Tensor& value() const { return external ? *external : *owned; }
  };

  Var push_leaf(std::unique_ptr<Tensor> owned, const Tensor* external, bool requires_grad) {
    Node node;
    node.owned = std::move(owned);
    node.external = external;
    node.requires_grad = requires_grad;
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1, generation_);
  }

  std::vector<Node> nodes_;
  std::uint64_t generation_ = 1;
  bool backward_done_ = false;
};

inline const Tensor& Var::value() const {
  require(tape_ != nullptr, ErrorCode::GraphNotRecorded, "empty variable");
  tape_->check(*this);
  return tape_->value(id_);
}

namespace ops {

namespace detail {

inline Tape& tape_of(const Var& a) {
  require(a.valid(), ErrorCode::GraphNotRecorded, "empty variable");
  return *a.tape();
}

inline void same_shape(const Var& a, const Var& b, const char* op) {
  require(a.tape() == b.tape(), ErrorCode::GraphNotRecorded, std::string(op) + ": operands on different tapes");
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorCode::ShapeMismatch,
          std::string(op) + ": " + shape_string(a.value()) + " vs " + shape_string(b.value()));
}

}  // namespace detail

/// x W^T + b for x (batch x in), W (out x in), b (1 x out).
inline Var affine(const Var& x, const Var& w, const Var& b) {
  Tape& tape = detail::tape_of(x);
  require(x.cols() == w.cols() && b.rows() == 1 && b.cols() == w.rows(), ErrorCode::ShapeMismatch,
          "affine: input " + shape_string(x.value()) + ", weight " + shape_string(w.value()) + ", bias " +
              shape_string(b.value()));
  Tensor y = x.value() * w.value().transpose();
  y.rowwise() += b.value().row(0);
  const bool rg = tape.requires_grad(x.id()) || tape.requires_grad(w.id()) || tape.requires_grad(b.id());
  const std::size_t xi = x.id(), wi = w.id(), bi = b.id();
  return tape.record(std::move(y), rg, [xi, wi, bi](Tape& t, const Tensor& g) {
    if (t.requires_grad(xi)) t.accumulate(xi, g * t.value(wi));
    if (t.requires_grad(wi)) t.accumulate(wi, g.transpose() * t.value(xi));
    if (t.requires_grad(bi)) t.accumulate(bi, g.colwise().sum());
  }, "affine");
}

/// tanh through exp, which Eigen vectorizes for doubles (std::tanh is
/// scalar). Absolute error stays within a few ulp of 1.
inline Tensor tanh_values(const Tensor& x) {
  const Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> t = (-2.0 * x.array().abs()).exp();
  return ((1.0 - t) / (1.0 + t) * x.array().sign()).matrix();
}

inline Var tanh(const Var& x) {
  Tape& tape = detail::tape_of(x);
  Tensor y = tanh_values(x.value());
  const std::size_t xi = x.id();
  const std::size_t yi = tape.size();
  return tape.record(std::move(y), tape.requires_grad(xi), [xi, yi](Tape& t, const Tensor& g) {
    const Tensor& y = t.value(yi);
    t.accumulate(xi, (g.array() * (1.0 - y.array().square())).matrix());
  }, "tanh");
}

inline Var add(const Var& a, const Var& b) {
  detail::same_shape(a, b, "add");
  Tape& tape = detail::tape_of(a);
  const std::size_t ai = a.id(), bi = b.id();
  return tape.record(a.value() + b.value(), tape.requires_grad(ai) || tape.requires_grad(bi),
                     [ai, bi](Tape& t, const Tensor& g) {
                       t.accumulate(ai, g);
                       t.accumulate(bi, g);
                     }, "add");
}

inline Var sub(const Var& a, const Var& b) {
  detail::same_shape(a, b, "sub");
  Tape& tape = detail::tape_of(a);
  const std::size_t ai = a.id(), bi = b.id();
  return tape.record(a.value() - b.value(), tape.requires_grad(ai) || tape.requires_grad(bi),
                     [ai, bi](Tape& t, const Tensor& g) {
                       t.accumulate(ai, g);
                       t.accumulate(bi, -g);
                     }, "sub");
}

/// Elementwise product.
inline Var mul(const Var& a, const Var& b) {
  detail::same_shape(a, b, "mul");
  Tape& tape = detail::tape_of(a);
  const std::size_t ai = a.id(), bi = b.id();
  return tape.record(a.value().cwiseProduct(b.value()), tape.requires_grad(ai) || tape.requires_grad(bi),
                     [ai, bi](Tape& t, const Tensor& g) {
                       if (t.requires_grad(ai)) t.accumulate(ai, g.cwiseProduct(t.value(bi)));
                       if (t.requires_grad(bi)) t.accumulate(bi, g.cwiseProduct(t.value(ai)));
                     }, "mul");
}

/// Elementwise product with a constant. `c` is referenced, not copied, and
/// must stay alive until backward has run.
inline Var mul(const Var& a, const Tensor& c) {
  Tape& tape = detail::tape_of(a);
  require(a.rows() == c.rows() && a.cols() == c.cols(), ErrorCode::ShapeMismatch,
          "mul: " + shape_string(a.value()) + " vs constant " + shape_string(c));
  const std::size_t ai = a.id();
  const Tensor* cp = &c;
  return tape.record(a.value().cwiseProduct(c), tape.requires_grad(ai),
                     [ai, cp](Tape& t, const Tensor& g) { t.accumulate(ai, g.cwiseProduct(*cp)); }, "mul");
}

inline Var scale(const Var& a, double s) {
  Tape& tape = detail::tape_of(a);
  const std::size_t ai = a.id();
  return tape.record(a.value() * s, tape.requires_grad(ai),
                     [ai, s](Tape& t, const Tensor& g) { t.accumulate(ai, g * s); }, "scale");
}

/// base + sum_i coeffs[i] * terms[i]; one node for an explicit Runge-Kutta stage.
inline Var linear_combination(const Var& base, std::span<const Var> terms, std::span<const double> coeffs) {
  Tape& tape = detail::tape_of(base);
  require(terms.size() == coeffs.size(), ErrorCode::ShapeMismatch, "linear_combination: coefficient count");
  Tensor y = base.value();
  bool rg = tape.requires_grad(base.id());
  std::vector<std::pair<std::size_t, double>> parts;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (coeffs[i] == 0.0) continue;
    detail::same_shape(base, terms[i], "linear_combination");
    y.noalias() += coeffs[i] * terms[i].value();
    rg = rg || tape.requires_grad(terms[i].id());
    parts.emplace_back(terms[i].id(), coeffs[i]);
  }
  const std::size_t bi = base.id();
  return tape.record(std::move(y), rg, [bi, parts = std::move(parts)](Tape& t, const Tensor& g) {
    t.accumulate(bi, g);
    for (const auto& [id, c] : parts) t.accumulate(id, g * c);
  }, "linear_combination");
}

inline Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), ErrorCode::ShapeMismatch, "concat_cols: no inputs");
  Tape& tape = detail::tape_of(parts[0]);
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  bool rg = false;
  std::vector<std::pair<std::size_t, Eigen::Index>> spans;
  for (const Var& p : parts) {
    require(p.rows() == rows, ErrorCode::ShapeMismatch, "concat_cols: row count mismatch");
    spans.emplace_back(p.id(), p.cols());
    cols += p.cols();
    rg = rg || tape.requires_grad(p.id());
  }
  Tensor y(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    y.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return tape.record(std::move(y), rg, [spans = std::move(spans)](Tape& t, const Tensor& g) {
    Eigen::Index at = 0;
    for (const auto& [id, width] : spans) {
      if (t.requires_grad(id)) t.accumulate(id, g.middleCols(at, width));
      at += width;
    }
  }, "concat_cols");
}

inline Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

/// Columns [first, first + count).
inline Var slice_cols(const Var& a, Eigen::Index first, Eigen::Index count) {
  Tape& tape = detail::tape_of(a);
  require(first >= 0 && count >= 0 && first + count <= a.cols(), ErrorCode::ShapeMismatch, "slice_cols: out of range");
  const std::size_t ai = a.id();
  const Eigen::Index rows = a.rows(), cols = a.cols();
  return tape.record(a.value().middleCols(first, count), tape.requires_grad(ai),
                     [ai, first, count, rows, cols](Tape& t, const Tensor& g) {
                       Tensor full = Tensor::Zero(rows, cols);
                       full.middleCols(first, count) = g;
                       t.accumulate(ai, full);
                     }, "slice_cols");
}

/// Columns picked by index (repeats allowed).
inline Var select_cols(const Var& a, std::vector<Eigen::Index> cols) {
  Tape& tape = detail::tape_of(a);
  Tensor y(a.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    require(cols[j] >= 0 && cols[j] < a.cols(), ErrorCode::ShapeMismatch, "select_cols: index out of range");
    y.col(static_cast<Eigen::Index>(j)) = a.value().col(cols[j]);
  }
  const std::size_t ai = a.id();
  const Eigen::Index rows = a.rows(), width = a.cols();
  return tape.record(std::move(y), tape.requires_grad(ai), [ai, rows, width, cols = std::move(cols)](Tape& t, const Tensor& g) {
    Tensor full = Tensor::Zero(rows, width);
    for (std::size_t j = 0; j < cols.size(); ++j) full.col(cols[j]) += g.col(static_cast<Eigen::Index>(j));
    t.accumulate(ai, full);
  }, "select_cols");
}

/// Row gather: y[r] = a[index[r]].
inline Var gather_rows(const Var& a, std::span<const std::size_t> index) {
  Tape& tape = detail::tape_of(a);
  Tensor y(static_cast<Eigen::Index>(index.size()), a.cols());
  const Tensor& av = a.value();
  for (std::size_t r = 0; r < index.size(); ++r) {
    require(index[r] < static_cast<std::size_t>(av.rows()), ErrorCode::ShapeMismatch, "gather_rows: index out of range");
    y.row(static_cast<Eigen::Index>(r)) = av.row(static_cast<Eigen::Index>(index[r]));
  }
  const std::size_t ai = a.id();
  const Eigen::Index rows = a.rows(), cols = a.cols();
  std::vector<std::size_t> idx(index.begin(), index.end());
  return tape.record(std::move(y), tape.requires_grad(ai), [ai, rows, cols, index = std::move(idx)](Tape& t, const Tensor& g) {
    Tensor full = Tensor::Zero(rows, cols);
    for (std::size_t r = 0; r < index.size(); ++r) full.row(static_cast<Eigen::Index>(index[r])) += g.row(static_cast<Eigen::Index>(r));
    t.accumulate(ai, full);
  }, "gather_rows");
}

/// Row scatter-add into `out_rows` rows: y[index[r]] += a[r], in order of r.
inline Var scatter_add_rows(const Var& a, std::span<const std::size_t> index, Eigen::Index out_rows) {
  Tape& tape = detail::tape_of(a);
  require(static_cast<std::size_t>(a.rows()) == index.size(), ErrorCode::ShapeMismatch, "scatter_add_rows: index length");
  Tensor y = Tensor::Zero(out_rows, a.cols());
  const Tensor& av = a.value();
  for (std::size_t r = 0; r < index.size(); ++r) {
    require(index[r] < static_cast<std::size_t>(out_rows), ErrorCode::ShapeMismatch, "scatter_add_rows: index out of range");
    y.row(static_cast<Eigen::Index>(index[r])) += av.row(static_cast<Eigen::Index>(r));
  }
  const std::size_t ai = a.id();
  const Eigen::Index cols = a.cols();
  std::vector<std::size_t> idx(index.begin(), index.end());
  return tape.record(std::move(y), tape.requires_grad(ai), [ai, cols, index = std::move(idx)](Tape& t, const Tensor& g) {
    Tensor part(static_cast<Eigen::Index>(index.size()), cols);
    for (std::size_t r = 0; r < index.size(); ++r) part.row(static_cast<Eigen::Index>(r)) = g.row(static_cast<Eigen::Index>(index[r]));
    t.accumulate(ai, part);
  }, "scatter_add_rows");
}

/// Sum of all entries, as a 1x1 tensor.
inline Var sum(const Var& a) {
  Tape& tape = detail::tape_of(a);
  Tensor y(1, 1);
  y(0, 0) = a.value().sum();
  const std::size_t ai = a.id();
  const Eigen::Index rows = a.rows(), cols = a.cols();
  return tape.record(std::move(y), tape.requires_grad(ai), [ai, rows, cols](Tape& t, const Tensor& g) {
    t.accumulate(ai, Tensor::Constant(rows, cols, g(0, 0)));
  }, "sum");
}

/// Elementwise |a| with subgradient 0 at 0.
inline Var abs(const Var& a) {
  Tape& tape = detail::tape_of(a);
  const std::size_t ai = a.id();
  return tape.record(a.value().cwiseAbs(), tape.requires_grad(ai), [ai](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(ai);
    t.accumulate(ai, (g.array() * x.array().sign()).matrix());
  }, "abs");
}

}  // namespace ops
}  // namespace femnet
