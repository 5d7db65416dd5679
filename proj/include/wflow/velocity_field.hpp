#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "wflow/errors.hpp"
#include "wflow/mlp.hpp"
#include "wflow/rng.hpp"

namespace wflow {

struct TimeInterval {
  double begin = 0.0;
  double end = 1.0;

  double length() const { return end - begin; }
  bool contains(double t) const;
  bool contains(const TimeInterval& other) const;
};

/// Trace-of-Jacobian estimator. Exact mode propagates one unit tangent per
/// coordinate; Hutchinson uses Rademacher probes.
struct DivergenceEstimator {
  enum class Mode : std::uint8_t { exact, hutchinson };
  Mode mode = Mode::exact;
  std::size_t probes = 8;

  static DivergenceEstimator exact() { return {Mode::exact, 0}; }
  static DivergenceEstimator hutchinson(std::size_t probes) { return {Mode::hutchinson, probes}; }
  /// Exact up to dimension 8, Hutchinson with 8 probes above.
  static DivergenceEstimator default_for(std::size_t dim);
  void validate() const;
};

/// Probes drawn once and held fixed along a trajectory (m x d each).
struct DivergencePlan {
  DivergenceEstimator estimator;
  std::vector<Tensor> probes;

  static DivergencePlan make(const DivergenceEstimator& est, std::size_t rows, std::size_t dim, Rng& rng);
};

/// v(x, t): an MLP applied to concat(x, t / time_scale), active on `interval`.
class VelocityField {
 public:
  VelocityField() = default;
  VelocityField(std::size_t dim, Mlp net, TimeInterval interval, double time_scale);

  std::size_t dim() const { return dim_; }
  const TimeInterval& interval() const { return interval_; }
  double time_scale() const { return time_scale_; }
  const Mlp& net() const { return net_; }
  Mlp& net() { return net_; }

  std::vector<Tensor> parameters() const { return net_.parameters(); }
  void set_parameters(std::span<const Tensor> p) { net_.set_parameters(p); }
  std::size_t parameter_count() const { return net_.parameter_count(); }

  void check_time(double t) const;

 private:
  std::size_t dim_ = 0;
  Mlp net_;
  TimeInterval interval_;
  double time_scale_ = 1.0;
};

/// Hidden layers drawn with scale 1/sqrt(fan_in); the output layer is zero so
/// the field vanishes and the induced block map is the identity.
VelocityField init_near_identity(std::size_t dim, std::span<const std::size_t> widths, std::uint64_t seed,
                                 TimeInterval interval = {0.0, 1.0}, double time_scale = 1.0,
                                 Activation activation = Activation::tanh);

template <typename T>
struct FieldEval {
  T velocity;
  std::optional<T> divergence;  // m x 1
};

/// Evaluates the field on a batch x (m x d) at per-row times (m x 1) with
/// parameters bound as `params`; computes the divergence when `plan` is given.
template <typename T>
FieldEval<T> evaluate_field_rows(const VelocityField& field, std::span<const T> params, const T& x,
                                 const Tensor& times, const DivergencePlan* plan) {
  const Tensor& xv = value_of(x);
  const std::size_t m = xv.rows();
  const std::size_t d = field.dim();
  if (xv.cols() != d) {
    throw ShapeError("velocity field of dimension " + std::to_string(d) + " evaluated on " + xv.shape_string());
  }
  if (times.rows() != m || times.cols() != 1) throw ShapeError("time column must be m x 1, got " + times.shape_string());
  T input = concat(x, constant_like(x, scale(times, 1.0 / field.time_scale())));
  const std::vector<Activation> acts = field.net().activations();

  std::vector<T> tangents;
  if (plan) {
    if (plan->estimator.mode == DivergenceEstimator::Mode::exact) {
      for (std::size_t j = 0; j < d; ++j) {
        Tensor e = Tensor::zeros(m, d + 1);
        for (std::size_t i = 0; i < m; ++i) e(i, j) = 1.0;
        tangents.push_back(constant_like(x, std::move(e)));
      }
    } else {
      for (const Tensor& eps : plan->probes) {
        if (eps.rows() != m || eps.cols() != d) throw ShapeError("divergence probe shape mismatch");
        tangents.push_back(constant_like(x, concat(eps, Tensor::zeros(m, 1))));
      }
    }
  }
  Jet<T> jet = mlp_forward<T>(acts, params, std::move(input), std::move(tangents));
  FieldEval<T> out{std::move(jet.value), std::nullopt};
  if (plan) {
    if (plan->estimator.mode == DivergenceEstimator::Mode::exact) {
      T div = slice(jet.tangents[0], 0, 1);
      for (std::size_t j = 1; j < d; ++j) div = add(div, slice(jet.tangents[j], j, 1));
      out.divergence = std::move(div);
    } else {
      const std::size_t k = plan->probes.size();
      T acc = row_sum(mul(constant_like(x, plan->probes[0]), jet.tangents[0]));
      for (std::size_t p = 1; p < k; ++p) {
        acc = add(acc, row_sum(mul(constant_like(x, plan->probes[p]), jet.tangents[p])));
      }
      out.divergence = scale(acc, 1.0 / static_cast<double>(k));
    }
  }
  return out;
}

/// Single time shared by every row.
template <typename T>
FieldEval<T> evaluate_field(const VelocityField& field, std::span<const T> params, const T& x, double t,
                            const DivergencePlan* plan) {
  return evaluate_field_rows<T>(field, params, x, Tensor::filled(value_of(x).rows(), 1, t), plan);
}

/// v(x, t) for every row of x.
Tensor eval_velocity(const VelocityField& field, const Tensor& x, double t);
/// Divergence per row of x (m x 1).
Tensor divergence(const VelocityField& field, const Tensor& x, double t, const DivergenceEstimator& est, Rng& rng);

}  // namespace wflow
