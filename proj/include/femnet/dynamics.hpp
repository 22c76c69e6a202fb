#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "femnet/autodiff.hpp"
#include "femnet/cell_geometry.hpp"
#include "femnet/error.hpp"
#include "femnet/fem.hpp"
#include "femnet/mesh.hpp"
#include "femnet/nn.hpp"

namespace femnet {

inline constexpr int kSpatialDim = 2;
inline constexpr int kCellVertices = kSpatialDim + 1;

/// Learned dynamics: a free-form network producing one coefficient per cell
/// vertex and feature, and optionally a transport network producing one
/// velocity per cell and feature.
struct FenModel {
  MlpParams freeform;
  std::optional<MlpParams> transport;
  int features = 1;
  bool autonomous = true;
  bool stationary = true;
  std::optional<double> time_period;

  int time_features() const { return autonomous ? 0 : (time_period ? 2 : 1); }

  Eigen::Index input_dim() const {
    return time_features() + (stationary ? 0 : kSpatialDim) + kCellVertices * (features + kSpatialDim);
  }
  Eigen::Index freeform_out_dim() const { return kCellVertices * features; }
  Eigen::Index transport_out_dim() const { return features * kSpatialDim; }

  std::size_t parameter_count() const {
    return freeform.parameter_count() + (transport ? transport->parameter_count() : 0);
  }
};

struct ModelOptions {
  int features = 1;
  bool transport = true;
  int hidden_width = 96;
  int hidden_layers = 4;
  bool autonomous = true;
  bool stationary = true;
  std::optional<double> time_period;
  std::uint64_t seed = 0;
};

inline int default_hidden_width(bool transport) { return transport ? 96 : 128; }

inline FenModel make_model(const ModelOptions& o) {
  require(o.features > 0, ErrorCode::InvalidSpec, "feature count must be positive");
  require(!o.time_period || *o.time_period > 0.0, ErrorCode::InvalidSpec, "time period must be positive");
  FenModel model;
  model.features = o.features;
  model.autonomous = o.autonomous;
  model.stationary = o.stationary;
  model.time_period = o.time_period;
  Rng rng(o.seed);
  model.freeform = make_mlp(model.input_dim(), o.hidden_width, o.hidden_layers, model.freeform_out_dim(), rng);
  if (o.transport) {
    model.transport = make_mlp(model.input_dim(), o.hidden_width, o.hidden_layers, model.transport_out_dim(), rng);
  }
  return model;
}

/// (t) without a period, otherwise (sin, cos) of the phase 2*pi*t/period.
inline std::vector<double> time_embed(double t, std::optional<double> period) {
  if (!period) return {t};
  require(*period > 0.0, ErrorCode::InvalidSpec, "time period must be positive");
  const double phase = 2.0 * std::numbers::pi * t / *period;
  return {std::sin(phase), std::cos(phase)};
}

/// Node-features that are held fixed (Dirichlet); their derivative is zero.
struct DirichletMask {
  std::vector<std::vector<bool>> mask;  // N x m
  Tensor fixed_values;                  // N x m

  Tensor keep() const {
    Tensor k(fixed_values.rows(), fixed_values.cols());
    for (Eigen::Index i = 0; i < k.rows(); ++i)
      for (Eigen::Index j = 0; j < k.cols(); ++j) k(i, j) = mask[i][j] ? 0.0 : 1.0;
    return k;
  }

  /// Overwrites masked entries of a state with their fixed values.
  Tensor apply(Tensor y) const {
    require(y.rows() == fixed_values.rows() && y.cols() == fixed_values.cols(), ErrorCode::ShapeMismatch,
            "Dirichlet mask shape " + shape_string(fixed_values) + " vs state " + shape_string(y));
    for (Eigen::Index i = 0; i < y.rows(); ++i)
      for (Eigen::Index j = 0; j < y.cols(); ++j)
        if (mask[i][j]) y(i, j) = fixed_values(i, j);
    return y;
  }
};

/// Everything the dynamics need from the mesh, laid out per sorted vertex
/// slot so that cell-wise work is a handful of whole-tensor operations.
class FemDomain {
 public:
  FemDomain(Mesh mesh, int features) : mesh_(std::move(mesh)), features_(features) {
    validate_mesh(mesh_);
    geometry_ = compute_geometry(mesh_);
    mass_ = lumped_mass(mesh_, geometry_);
    const Eigen::Index nc = static_cast<Eigen::Index>(mesh_.num_cells());
    const Eigen::Index nn = static_cast<Eigen::Index>(mesh_.num_nodes());
    centers_ = Tensor(nc, kSpatialDim);
    for (int s = 0; s < kCellVertices; ++s) {
      slot_nodes_[s].resize(mesh_.num_cells());
      slot_local_[s] = Tensor(nc, kSpatialDim);
      slot_load_[s] = Tensor(nc, features);
      neg_slot_load_[s] = Tensor(nc, features);
      slot_grad_x_[s] = Tensor(nc, features);
      slot_grad_y_[s] = Tensor(nc, features);
    }
    for (Eigen::Index c = 0; c < nc; ++c) {
      const CellGeometry& g = geometry_[c];
      centers_(c, 0) = g.center.x;
      centers_(c, 1) = g.center.y;
      for (int s = 0; s < kCellVertices; ++s) {
        const int k = g.sorted_order[s];
        slot_nodes_[s][c] = mesh_.cells[c][k];
        slot_local_[s](c, 0) = g.local_coords[k].x;
        slot_local_[s](c, 1) = g.local_coords[k].y;
        slot_load_[s].row(c).setConstant(g.load[k]);
        neg_slot_load_[s].row(c).setConstant(-g.load[k]);
        slot_grad_x_[s].row(c).setConstant(g.basis_grads[k].x);
        slot_grad_y_[s].row(c).setConstant(g.basis_grads[k].y);
      }
    }
    inv_mass_ = Tensor(nn, features);
    for (Eigen::Index i = 0; i < nn; ++i) inv_mass_.row(i).setConstant(1.0 / mass_.diag[i]);
  }

  const Mesh& mesh() const { return mesh_; }
  const std::vector<CellGeometry>& geometry() const { return geometry_; }
  const LumpedMass& mass() const { return mass_; }
  int features() const { return features_; }
  Eigen::Index num_nodes() const { return static_cast<Eigen::Index>(mesh_.num_nodes()); }
  Eigen::Index num_cells() const { return static_cast<Eigen::Index>(mesh_.num_cells()); }

  const Tensor& centers() const { return centers_; }
  const std::vector<std::size_t>& slot_nodes(int s) const { return slot_nodes_[s]; }
  const Tensor& slot_local_coords(int s) const { return slot_local_[s]; }
  const Tensor& slot_load(int s) const { return slot_load_[s]; }
  const Tensor& neg_slot_load(int s) const { return neg_slot_load_[s]; }
  const Tensor& slot_grad_x(int s) const { return slot_grad_x_[s]; }
  const Tensor& slot_grad_y(int s) const { return slot_grad_y_[s]; }
  const Tensor& inv_mass() const { return inv_mass_; }

 private:
  Mesh mesh_;
  int features_;
  std::vector<CellGeometry> geometry_;
  LumpedMass mass_;
  Tensor centers_;
  std::array<std::vector<std::size_t>, kCellVertices> slot_nodes_;
  std::array<Tensor, kCellVertices> slot_local_, slot_load_, neg_slot_load_, slot_grad_x_, slot_grad_y_;
  Tensor inv_mass_;
};

/// Model parameters registered on one tape.
struct BoundModel {
  const FenModel* model = nullptr;
  MlpVars freeform;
  std::optional<MlpVars> transport;
};

inline BoundModel bind(Tape& tape, const FenModel& model) {
  BoundModel b{&model, bind(tape, model.freeform), std::nullopt};
  if (model.transport) b.transport = bind(tape, *model.transport);
  return b;
}

namespace detail {

inline void check_state(const FenModel& model, const FemDomain& domain, const Var& y) {
  require(y.rows() == domain.num_nodes() && y.cols() == model.features && domain.features() == model.features,
          ErrorCode::ShapeMismatch,
          "state " + shape_string(y.value()) + " does not match " + std::to_string(domain.num_nodes()) + " nodes x " +
              std::to_string(model.features) + " features");
}

inline std::array<Var, kCellVertices> gather_slots(const FemDomain& domain, const Var& y) {
  std::array<Var, kCellVertices> out;
  for (int s = 0; s < kCellVertices; ++s) out[s] = ops::gather_rows(y, domain.slot_nodes(s));
  return out;
}

inline Var cell_input(const FenModel& model, double t, const FemDomain& domain, const std::array<Var, kCellVertices>& slot_values) {
  Tape& tape = *slot_values[0].tape();
  std::vector<Var> parts;
  if (!model.autonomous) {
    const std::vector<double> emb = time_embed(t, model.time_period);
    Tensor time(domain.num_cells(), static_cast<Eigen::Index>(emb.size()));
    for (Eigen::Index j = 0; j < time.cols(); ++j) time.col(j).setConstant(emb[j]);
    parts.push_back(tape.constant(std::move(time)));
  }
  if (!model.stationary) parts.push_back(tape.constant(domain.centers()));
  for (int s = 0; s < kCellVertices; ++s) {
    parts.push_back(tape.constant(domain.slot_local_coords(s)));
    parts.push_back(slot_values[s]);
  }
  return ops::concat_cols(parts);
}

inline Var scatter_slots(const FemDomain& domain, const std::array<Var, kCellVertices>& per_slot) {
  Var total = ops::scatter_add_rows(per_slot[0], domain.slot_nodes(0), domain.num_nodes());
  for (int s = 1; s < kCellVertices; ++s) {
    total = ops::add(total, ops::scatter_add_rows(per_slot[s], domain.slot_nodes(s), domain.num_nodes()));
  }
  return total;
}

}  // namespace detail

/// Network input for every cell: [time embedding] ++ [cell center] ++, per
/// vertex in angular order, [local coordinate, vertex features].
inline Var assemble_cell_input(const FenModel& model, double t, const FemDomain& domain, const Var& y) {
  detail::check_state(model, domain, y);
  return detail::cell_input(model, t, domain, detail::gather_slots(domain, y));
}

inline Tensor assemble_cell_input(const FenModel& model, double t, const FemDomain& domain, const Tensor& y) {
  Tape tape;
  return assemble_cell_input(model, t, domain, tape.constant(y)).value();
}

/// Per-vertex contributions of every term, before and after the mass solve.
struct DerivativeTerms {
  Var freeform_messages;                 // N x m
  std::optional<Var> transport_messages;  // N x m
  std::optional<Var> velocity;            // cells x (m*d), column k*d + a
  Var rate;                               // N x m, after mass solve and mask
};

/// One message-passing step of the model. Free-form messages are the network
/// coefficient times <1, phi_i>; transport messages are
///   -sum_j y_j (v . <grad phi_j, phi_i>) = -<1, phi_i> (v . grad u)
/// since P1 gradients are constant on a cell.
inline DerivativeTerms derivative_terms(const BoundModel& bound, double t, const Var& y, const FemDomain& domain,
                                        const DirichletMask* mask = nullptr, const Tensor* keep = nullptr) {
  const FenModel& model = *bound.model;
  detail::check_state(model, domain, y);
  const auto slots = detail::gather_slots(domain, y);
  const Var input = detail::cell_input(model, t, domain, slots);
  const Eigen::Index m = model.features;

  DerivativeTerms terms;
  const Var coeffs = mlp_forward(bound.freeform, input);
  std::array<Var, kCellVertices> ff;
  for (int s = 0; s < kCellVertices; ++s) ff[s] = ops::mul(ops::slice_cols(coeffs, s * m, m), domain.slot_load(s));
  terms.freeform_messages = detail::scatter_slots(domain, ff);
  Var total = terms.freeform_messages;

  if (bound.transport) {
    const Var velocity = mlp_forward(*bound.transport, input);
    std::vector<Eigen::Index> xcols, ycols;
    for (Eigen::Index k = 0; k < m; ++k) {
      xcols.push_back(k * kSpatialDim);
      ycols.push_back(k * kSpatialDim + 1);
    }
    Var grad_x = ops::mul(slots[0], domain.slot_grad_x(0));
    Var grad_y = ops::mul(slots[0], domain.slot_grad_y(0));
    for (int s = 1; s < kCellVertices; ++s) {
      grad_x = ops::add(grad_x, ops::mul(slots[s], domain.slot_grad_x(s)));
      grad_y = ops::add(grad_y, ops::mul(slots[s], domain.slot_grad_y(s)));
    }
    const Var advective = ops::add(ops::mul(ops::select_cols(velocity, xcols), grad_x),
                                   ops::mul(ops::select_cols(velocity, ycols), grad_y));
    std::array<Var, kCellVertices> tr;
    for (int s = 0; s < kCellVertices; ++s) tr[s] = ops::mul(advective, domain.neg_slot_load(s));
    terms.transport_messages = detail::scatter_slots(domain, tr);
    terms.velocity = velocity;
    total = ops::add(total, *terms.transport_messages);
  }

  terms.rate = ops::mul(total, domain.inv_mass());
  if (mask) {
    require(keep != nullptr, ErrorCode::ShapeMismatch, "Dirichlet mask needs its keep tensor");
    terms.rate = ops::mul(terms.rate, *keep);
  }
  return terms;
}

inline Var time_derivative(const BoundModel& bound, double t, const Var& y, const FemDomain& domain,
                           const DirichletMask* mask = nullptr, const Tensor* keep = nullptr) {
  return derivative_terms(bound, t, y, domain, mask, keep).rate;
}

inline Var freeform_messages(const BoundModel& bound, double t, const Var& y, const FemDomain& domain) {
  return derivative_terms(bound, t, y, domain).freeform_messages;
}

inline Var transport_messages(const BoundModel& bound, double t, const Var& y, const FemDomain& domain) {
  require(bound.transport.has_value(), ErrorCode::TransportAbsent, "model has no transport term");
  return *derivative_terms(bound, t, y, domain).transport_messages;
}

/// Plain-value results of one evaluation, for inspection and plotting.
struct TermValues {
  Tensor freeform_rate;                 // free-form messages / lumped mass
  std::optional<Tensor> transport_rate; // transport messages / lumped mass
  std::optional<Tensor> velocity;
  Tensor rate;
};

inline TermValues evaluate_terms(const FenModel& model, double t, const Tensor& y, const FemDomain& domain,
                                 const DirichletMask* mask = nullptr) {
  Tape tape;
  const BoundModel bound = bind(tape, model);
  const Tensor keep = mask ? mask->keep() : Tensor();
  const DerivativeTerms terms = derivative_terms(bound, t, tape.constant(y), domain, mask, mask ? &keep : nullptr);
  TermValues out;
  out.freeform_rate = terms.freeform_messages.value().cwiseProduct(domain.inv_mass());
  if (terms.transport_messages) out.transport_rate = terms.transport_messages->value().cwiseProduct(domain.inv_mass());
  if (terms.velocity) out.velocity = terms.velocity->value();
  out.rate = terms.rate.value();
  return out;
}

inline Tensor time_derivative(const FenModel& model, double t, const Tensor& y, const FemDomain& domain,
                              const DirichletMask* mask = nullptr) {
  return evaluate_terms(model, t, y, domain, mask).rate;
}

}  // namespace femnet
