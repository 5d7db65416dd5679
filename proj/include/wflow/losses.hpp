#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "wflow/density.hpp"
#include "wflow/flow_chain.hpp"
#include "wflow/tape.hpp"

namespace wflow {

enum class InterpolantKind : std::uint8_t { linear, trig };

std::string_view interpolant_name(InterpolantKind k);
InterpolantKind parse_interpolant(std::string_view name);

/// I_t(x0, x1) on s in [0, 1]; x0 at s = 0 and x1 at s = 1.
/// linear: (1 - s) x0 + s x1.  trig: cos(pi s / 2) x0 + sin(pi s / 2) x1.
struct Interpolant {
  InterpolantKind kind = InterpolantKind::linear;

  /// `s` is m x 1, one interpolation time per pair.
  Tensor at(const Tensor& x0, const Tensor& x1, const Tensor& s) const;
  /// d/ds I_s.
  Tensor rate(const Tensor& x0, const Tensor& x1, const Tensor& s) const;
};

/// Loss value and gradient with respect to each parameter tensor.
struct LossEval {
  double value = 0.0;
  std::vector<Tensor> grads;
};

struct JkoTerms {
  double potential = 0.0;   // mean V(x(t_n))
  double divergence = 0.0;  // mean of the divergence integral
  double movement = 0.0;    // mean |x(t_n) - x(t_{n-1})|^2
};

// Tape builders; `params` are the bound parameter tensors of the subject.

/// -(1/m) sum log p(x^i) through the whole chain.
Var nll_objective(const FlowChain& chain, std::span<const Var> params, const Tensor& batch,
                  const std::vector<DivergencePlan>& plans);

/// (1/m) sum [V(x^i(t_n)) - int div] + (1/(2 gamma m)) sum |x^i(t_n) - x^i(t_{n-1})|^2,
/// V being the potential of `target`.
Var jko_objective(const FlowBlock& block, std::span<const Var> params, const Tensor& batch_prev, double gamma,
                  const AnalyticDensity& target, const DivergencePlan& plan, JkoTerms* terms = nullptr);

/// Regression points for the field: positions, per-row physical times and
/// target velocities (already converted from s to block time).
struct FmBatch {
  Tensor points;
  Tensor times;
  Tensor targets;
};

/// Pairs row i of x0 with row i of x1 and draws `time_draws` stratified times
/// per pair (8 strata over [s_lo, s_hi]). That range of interpolation time is
/// mapped affinely onto the field's interval.
FmBatch make_fm_batch(const VelocityField& field, const Interpolant& interp, const Tensor& x0, const Tensor& x1,
                      std::size_t time_draws, Rng& rng, double s_lo = 0.0, double s_hi = 1.0);

/// (1/n) sum |v(x_i, t_i) - target_i|^2.
Var fm_objective(const VelocityField& field, std::span<const Var> params, const FmBatch& batch);

LossEval nll_loss(const FlowChain& chain, const Tensor& batch, const DivergenceEstimator& est, Rng& rng);
LossEval jko_block_loss(const FlowBlock& block, const Tensor& batch_prev, double gamma, const AnalyticDensity& target,
                        const DivergenceEstimator& est, Rng& rng, JkoTerms* terms = nullptr);
LossEval fm_loss(const VelocityField& field, const Interpolant& interp, const Tensor& x0, const Tensor& x1,
                 std::size_t time_draws, Rng& rng);

/// Ornstein-Uhlenbeck step of length gamma_n: returns (x_l, x_r) with
/// x_r = exp(-gamma_n) x_l + sqrt(1 - exp(-2 gamma_n)) g, g ~ N(0, I).
std::pair<Tensor, Tensor> make_local_fm_targets(const Tensor& batch_prev, double gamma_n, Rng& rng);

/// Evaluates a tape builder and its gradient at the given parameter values.
template <typename Build>
LossEval evaluate_loss(std::span<const Tensor> params, Build&& build) {
  Tape tape;
  std::vector<Var> bound;
  bound.reserve(params.size());
  for (const Tensor& p : params) bound.push_back(tape.parameter(p));
  Var loss = build(tape, std::span<const Var>(bound));
  LossEval out;
  out.value = loss.value().item();
  out.grads = tape.grad(loss, Tensor::scalar(1.0));
  return out;
}

}  // namespace wflow
