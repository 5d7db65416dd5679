#include "wflow/losses.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "wflow/errors.hpp"

namespace wflow {
namespace {

constexpr std::size_t kStrata = 8;

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) throw ShapeError(std::string(what) + ": " + a.shape_string() + " vs " + b.shape_string());
}

// Row-wise combination a_i x0_i + b_i x1_i.
Tensor combine(const Tensor& x0, const Tensor& x1, const Tensor& s, double (*fa)(double), double (*fb)(double)) {
  Tensor out = Tensor::zeros(x0.rows(), x0.cols());
  for (std::size_t i = 0; i < x0.rows(); ++i) {
    const double a = fa(s(i, 0));
    const double b = fb(s(i, 0));
    for (std::size_t j = 0; j < x0.cols(); ++j) out(i, j) = a * x0(i, j) + b * x1(i, j);
  }
  return out;
}

void check_interp_args(const Tensor& x0, const Tensor& x1, const Tensor& s) {
  require_same(x0, x1, "interpolant endpoints");
  if (s.rows() != x0.rows() || s.cols() != 1) throw ShapeError("interpolant times must be m x 1");
}

}  // namespace

std::string_view interpolant_name(InterpolantKind k) { return k == InterpolantKind::linear ? "linear" : "trig"; }

InterpolantKind parse_interpolant(std::string_view name) {
  if (name == "linear") return InterpolantKind::linear;
  if (name == "trig") return InterpolantKind::trig;
  throw std::invalid_argument("unknown interpolant '" + std::string(name) + "' (expected linear or trig)");
}

Tensor Interpolant::at(const Tensor& x0, const Tensor& x1, const Tensor& s) const {
  check_interp_args(x0, x1, s);
  if (kind == InterpolantKind::linear) {
    return combine(x0, x1, s, [](double t) { return 1.0 - t; }, [](double t) { return t; });
  }
  return combine(
      x0, x1, s, [](double t) { return std::cos(0.5 * std::numbers::pi * t); },
      [](double t) { return std::sin(0.5 * std::numbers::pi * t); });
}

Tensor Interpolant::rate(const Tensor& x0, const Tensor& x1, const Tensor& s) const {
  check_interp_args(x0, x1, s);
  if (kind == InterpolantKind::linear) {
    return combine(x0, x1, s, [](double) { return -1.0; }, [](double) { return 1.0; });
  }
  return combine(
      x0, x1, s, [](double t) { return -0.5 * std::numbers::pi * std::sin(0.5 * std::numbers::pi * t); },
      [](double t) { return 0.5 * std::numbers::pi * std::cos(0.5 * std::numbers::pi * t); });
}

Var nll_objective(const FlowChain& chain, std::span<const Var> params, const Tensor& batch,
                  const std::vector<DivergencePlan>& plans) {
  if (batch.rows() == 0) throw std::invalid_argument("nll: empty batch");
  Tape& tape = *params.front().tape;
  Var x = tape.constant(batch);
  return scale(mean(chain_log_density<Var>(chain, params, x, plans)), -1.0);
}

Var jko_objective(const FlowBlock& block, std::span<const Var> params, const Tensor& batch_prev, double gamma,
                  const AnalyticDensity& target, const DivergencePlan& plan, JkoTerms* terms) {
  if (!(gamma > 0) || !std::isfinite(gamma)) throw std::invalid_argument("jko: gamma must be positive");
  if (batch_prev.rows() == 0) throw std::invalid_argument("jko: empty batch");
  Tape& tape = *params.front().tape;
  Var x0 = tape.constant(batch_prev);
  AugmentedState<Var> s = block_forward<Var>(block, params, x0, &plan);
  Var potential = mean(target.potential(s.x));
  Var div = mean(s.logdet);
  Var movement = mean(row_sum(square(sub(s.x, x0))));
  if (terms) {
    terms->potential = potential.value().item();
    terms->divergence = div.value().item();
    terms->movement = movement.value().item();
  }
  return add(sub(potential, div), scale(movement, 0.5 / gamma));
}

FmBatch make_fm_batch(const VelocityField& field, const Interpolant& interp, const Tensor& x0, const Tensor& x1,
                      std::size_t time_draws, Rng& rng, double s_lo, double s_hi) {
  if (!(s_lo >= 0.0 && s_hi <= 1.0 && s_lo < s_hi)) throw std::invalid_argument("fm: bad interpolation time range");
  if (x0.rows() == 0 || x1.rows() == 0) throw std::invalid_argument("fm: empty batch");
  require_same(x0, x1, "fm batches");
  if (x0.cols() != field.dim()) throw ShapeError("fm: batch dimension does not match field");
  if (time_draws == 0) throw std::invalid_argument("fm: time_draws must be at least 1");
  const std::size_t m = x0.rows();
  const std::size_t n = m * time_draws;
  std::vector<std::size_t> idx(n);
  Tensor s = Tensor::zeros(n, 1);
  // Stratum offset is random per call so that small batches still cover [0, 1].
  const std::size_t offset = rng.index(kStrata);
  for (std::size_t k = 0; k < n; ++k) {
    idx[k] = k % m;
    const std::size_t stratum = (k + offset) % kStrata;
    s(k, 0) = s_lo + (s_hi - s_lo) * (static_cast<double>(stratum) + rng.uniform()) / static_cast<double>(kStrata);
  }
  const Tensor a = gather_rows(x0, idx);
  const Tensor b = gather_rows(x1, idx);
  const double begin = field.interval().begin;
  const double len = field.interval().length();
  FmBatch out;
  out.points = interp.at(a, b, s);
  const double ds = s_hi - s_lo;
  out.targets = scale(interp.rate(a, b, s), ds / len);
  out.times = add_scalar(scale(add_scalar(s, -s_lo), len / ds), begin);
  return out;
}

Var fm_objective(const VelocityField& field, std::span<const Var> params, const FmBatch& batch) {
  Tape& tape = *params.front().tape;
  Var x = tape.constant(batch.points);
  Var v = evaluate_field_rows<Var>(field, params, x, batch.times, nullptr).velocity;
  return mean(row_sum(square(sub(v, tape.constant(batch.targets)))));
}

LossEval nll_loss(const FlowChain& chain, const Tensor& batch, const DivergenceEstimator& est, Rng& rng) {
  const std::vector<DivergencePlan> plans = make_plans(chain, est, batch.rows(), rng);
  const std::vector<Tensor> params = chain.parameters();
  return evaluate_loss(params, [&](Tape&, std::span<const Var> p) { return nll_objective(chain, p, batch, plans); });
}

LossEval jko_block_loss(const FlowBlock& block, const Tensor& batch_prev, double gamma, const AnalyticDensity& target,
                        const DivergenceEstimator& est, Rng& rng, JkoTerms* terms) {
  if (!(gamma > 0)) throw std::invalid_argument("jko: gamma must be positive");
  const DivergencePlan plan = DivergencePlan::make(est, batch_prev.rows(), block.field.dim(), rng);
  const std::vector<Tensor> params = block.field.parameters();
  return evaluate_loss(params, [&](Tape&, std::span<const Var> p) {
    return jko_objective(block, p, batch_prev, gamma, target, plan, terms);
  });
}

LossEval fm_loss(const VelocityField& field, const Interpolant& interp, const Tensor& x0, const Tensor& x1,
                 std::size_t time_draws, Rng& rng) {
  const FmBatch batch = make_fm_batch(field, interp, x0, x1, time_draws, rng);
  const std::vector<Tensor> params = field.parameters();
  return evaluate_loss(params, [&](Tape&, std::span<const Var> p) { return fm_objective(field, p, batch); });
}

std::pair<Tensor, Tensor> make_local_fm_targets(const Tensor& batch_prev, double gamma_n, Rng& rng) {
  if (!(gamma_n >= 0) || !std::isfinite(gamma_n)) throw std::invalid_argument("OU step must be non-negative");
  const double a = std::exp(-gamma_n);
  const double b = std::sqrt(1.0 - std::exp(-2.0 * gamma_n));
  Tensor xr = batch_prev;
  if (gamma_n > 0) {
    auto out = xr.data();
    auto in = batch_prev.data();
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = a * in[k] + b * rng.normal();
  }
  return {batch_prev, std::move(xr)};
}

}  // namespace wflow
