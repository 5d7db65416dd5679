#include "wflow/ot.hpp"

#include <algorithm>
#include <stdexcept>

#include "wflow/errors.hpp"

namespace wflow {

namespace {

// Forward sweep over all blocks; returns the end point, the summed logdet
// (zero without plans) and adds the per-block displacement cost to `cost`.
template <typename T>
std::pair<T, T> sweep_forward(const FlowChain& chain, std::span<const T> params, const T& x,
                              const std::vector<DivergencePlan>* plans, T* cost) {
  const auto offsets = chain.parameter_offsets();
  T z = x;
  T logdet = constant_like(x, Tensor::zeros(value_of(x).rows(), 1));
  for (std::size_t n = 0; n < chain.size(); ++n) {
    const FlowBlock& b = chain.block(n);
    AugmentedState<T> s = block_forward<T>(b, params.subspan(offsets[n], offsets[n + 1] - offsets[n]), z,
                                           plans ? &plans->at(n) : nullptr);
    if (cost) {
      const double len = b.integrator.interval.length();
      *cost = add(*cost, scale(mean(row_sum(square(sub(s.x, z)))), 1.0 / len));
    }
    z = s.x;
    logdet = add(logdet, s.logdet);
  }
  return {z, logdet};
}

template <typename T>
std::pair<T, T> sweep_reverse(const FlowChain& chain, std::span<const T> params, const T& y,
                              const std::vector<DivergencePlan>* plans) {
  const auto offsets = chain.parameter_offsets();
  T z = y;
  T logdet = constant_like(y, Tensor::zeros(value_of(y).rows(), 1));
  for (std::size_t k = chain.size(); k-- > 0;) {
    AugmentedState<T> s = block_forward<T>(chain.block(k), params.subspan(offsets[k], offsets[k + 1] - offsets[k]), z,
                                           plans ? &plans->at(k) : nullptr, Direction::reverse);
    z = s.x;
    logdet = add(logdet, s.logdet);
  }
  return {z, logdet};
}

double mean_of(const Tensor& t) {
  double s = 0.0;
  for (std::size_t k = 0; k < t.size(); ++k) s += t[k];
  return s / static_cast<double>(t.size());
}

// phi with frozen weights evaluated on the tape.
Var frozen_phi(const RatioModel& model, const Var& x) {
  Tape& tape = *x.tape;
  std::vector<Var> w;
  for (const Tensor& p : model.net.parameters()) w.push_back(tape.constant(p));
  const auto acts = model.net.activations();
  return mlp_value<Var>(acts, w, x);
}

}  // namespace

double transport_cost(const FlowChain& chain, const Tensor& x) {
  const auto params = chain.parameters();
  Tensor cost = Tensor::scalar(0.0);
  sweep_forward<Tensor>(chain, params, x, nullptr, &cost);
  return cost.item();
}

Var ot_objective(const FlowChain& chain, std::span<const Var> params, const Tensor& xp, const Tensor& xq,
                 double gamma, const AnalyticDensity& p, const AnalyticDensity& q,
                 const std::vector<DivergencePlan>& plans_p, const std::vector<DivergencePlan>& plans_q,
                 OtTerms* terms) {
  if (!(gamma > 0)) throw std::invalid_argument("ot: gamma must be positive");
  Tape& tape = *params.front().tape;
  Var cost = tape.constant(Tensor::scalar(0.0));
  // log p_hat(x) = log q(F(x)) + forward logdet.
  auto [fx, ld_fwd] = sweep_forward<Var>(chain, params, tape.constant(xp), &plans_p, &cost);
  Var log_p_hat = add(q.log_pdf(fx), ld_fwd);
  // log q_hat(y) = log p(F^-1(y)) + reverse logdet.
  auto [fy, ld_rev] = sweep_reverse<Var>(chain, params, tape.constant(xq), &plans_q);
  Var log_q_hat = add(p.log_pdf(fy), ld_rev);
  Var kl_p = add_scalar(scale(mean(log_p_hat), -1.0), mean_of(p.log_pdf(xp)));
  Var kl_q = add_scalar(scale(mean(log_q_hat), -1.0), mean_of(q.log_pdf(xq)));
  if (terms) {
    terms->cost = cost.value().item();
    terms->kl_p = kl_p.value().item();
    terms->kl_q = kl_q.value().item();
  }
  return add(cost, scale(add(kl_p, kl_q), gamma));
}

Var ot_sample_objective(const FlowChain& chain, std::span<const Var> params, const Tensor& xp, const Tensor& xq,
                        double gamma, const RatioModel& phi, const RatioModel& psi, OtTerms* terms) {
  if (!(gamma > 0)) throw std::invalid_argument("ot: gamma must be positive");
  Tape& tape = *params.front().tape;
  Var cost = tape.constant(Tensor::scalar(0.0));
  Var fx = sweep_forward<Var>(chain, params, tape.constant(xp), nullptr, &cost).first;
  Var fy = sweep_reverse<Var>(chain, params, tape.constant(xq), nullptr).first;
  Var kl_p = scale(mean(frozen_phi(phi, fx)), -1.0);
  Var kl_q = scale(mean(frozen_phi(psi, fy)), -1.0);
  if (terms) {
    terms->cost = cost.value().item();
    terms->kl_p = kl_p.value().item();
    terms->kl_q = kl_q.value().item();
  }
  return add(cost, scale(add(kl_p, kl_q), gamma));
}

namespace {

struct Classifiers {
  RatioModel phi, psi;
};

Classifiers refit(const FlowChain& chain, const Tensor& p, const Tensor& q, const OtConfig& cfg, std::size_t round) {
  Rng rng = Rng(cfg.train.seed).derive(0x07).derive(round);
  const Tensor xp = draw_batch(p, std::min(cfg.refit_samples, p.rows()), rng);
  const Tensor xq = draw_batch(q, std::min(cfg.refit_samples, q.rows()), rng);
  const Tensor fp = push_through(chain, xp, 0, chain.size());
  const Tensor bq = inverse_map(chain, ParticleEnsemble(xq)).positions;
  RatioConfig rc = cfg.ratio;
  rc.train.seed = cfg.ratio.train.seed + 2 * round;
  Classifiers c;
  c.phi = fit_logistic_ratio(fp, xq, rc);
  rc.train.seed += 1;
  c.psi = fit_logistic_ratio(bq, xp, rc);
  return c;
}

}  // namespace

OtResult ot_train(const Tensor& p_samples, const Tensor& q_samples, FlowChain& chain, const OtConfig& cfg,
                  const std::optional<AnalyticDensity>& p, const std::optional<AnalyticDensity>& q) {
  cfg.train.validate(std::min(p_samples.rows(), q_samples.rows()));
  if (p_samples.cols() != chain.dim() || q_samples.cols() != chain.dim()) throw ShapeError("ot: dimension mismatch");
  OtResult out;
  out.analytic = p.has_value() && q.has_value();
  const std::size_t batch = cfg.train.batch_size;
  std::vector<Tensor> params = chain.parameters();
  FlowChain scratch = chain;
  Classifiers cls;
  std::size_t round = 0;
  if (!out.analytic) {
    if (cfg.refit_every == 0) throw std::invalid_argument("ot: refit_every must be at least 1");
    cls = refit(chain, p_samples, q_samples, cfg, round++);
  }
  out.trace = minimize(params, cfg.train, [&](std::span<const Var> v, std::size_t it, Rng& rng) {
    const Tensor xp = draw_batch(p_samples, batch, rng);
    const Tensor xq = draw_batch(q_samples, batch, rng);
    if (out.analytic) {
      const auto plans_p = make_plans(chain, cfg.estimator, xp.rows(), rng);
      const auto plans_q = make_plans(chain, cfg.estimator, xq.rows(), rng);
      return ot_objective(chain, v, xp, xq, cfg.train.gamma, *p, *q, plans_p, plans_q);
    }
    if (it > 0 && it % cfg.refit_every == 0) {
      std::vector<Tensor> now;
      for (const Var& w : v) now.push_back(w.value());
      scratch.set_parameters(now);
      cls = refit(scratch, p_samples, q_samples, cfg, round++);
    }
    return ot_sample_objective(chain, v, xp, xq, cfg.train.gamma, cls.phi, cls.psi);
  });
  chain.set_parameters(params);
  for (std::size_t n = 0; n < chain.size(); ++n) chain.block(n).trained = true;

  out.transported = push_through(chain, p_samples, 0, chain.size());
  out.terms.cost = transport_cost(chain, p_samples);
  if (out.analytic) {
    Rng rng = Rng(cfg.train.seed).derive(0xe7a1);
    FlowChain to_q = chain;
    to_q.set_base(*q);
    out.terms.kl_p = mean_of(sub(p->log_pdf(p_samples), log_density(to_q, p_samples, cfg.estimator, rng)));
    const auto plans_q = make_plans(chain, cfg.estimator, q_samples.rows(), rng);
    auto [fy, ld_rev] = sweep_reverse<Tensor>(chain, params, q_samples, &plans_q);
    out.terms.kl_q = mean_of(sub(q->log_pdf(q_samples), add(p->log_pdf(fy), ld_rev)));
  } else {
    cls = refit(chain, p_samples, q_samples, cfg, round++);
    out.terms.kl_p = -mean_of(cls.phi.log_ratio(out.transported));
    out.terms.kl_q = -mean_of(cls.psi.log_ratio(inverse_map(chain, ParticleEnsemble(q_samples)).positions));
  }
  return out;
}

}  // namespace wflow
