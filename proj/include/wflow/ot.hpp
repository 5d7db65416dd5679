#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "wflow/flow_chain.hpp"
#include "wflow/ratio.hpp"
#include "wflow/training.hpp"

namespace wflow {

/// Flow-based optimal transport from p (time 0) to q (time T). The objective
/// is the particle transport cost plus gamma * (KL(p || p_hat) + KL(q || q_hat))
/// with p_hat = (F^-1)# q and q_hat = F# p.
struct OtConfig {
  TrainConfig train;  // train.gamma is the terminal penalty weight
  DivergenceEstimator estimator = DivergenceEstimator::exact();
  /// Sample-only mode: classifier settings and refit period (iterations).
  RatioConfig ratio;
  std::size_t refit_every = 50;
  std::size_t refit_samples = 2000;
};

struct OtTerms {
  double cost = 0.0;
  double kl_p = 0.0;
  double kl_q = 0.0;
};

struct OtResult {
  LossTrace trace;
  OtTerms terms;       // evaluated on the full sample sets after training
  Tensor transported;  // F(p samples)
  bool analytic = false;
};

/// sum over blocks of (1/(len_n m)) sum_i |x_n^i - x_{n-1}^i|^2.
double transport_cost(const FlowChain& chain, const Tensor& x);

/// Analytic-density objective on a tape; `plans_p` / `plans_q` hold one plan
/// per block for the p and q batches.
Var ot_objective(const FlowChain& chain, std::span<const Var> params, const Tensor& xp, const Tensor& xq,
                 double gamma, const AnalyticDensity& p, const AnalyticDensity& q,
                 const std::vector<DivergencePlan>& plans_p, const std::vector<DivergencePlan>& plans_q,
                 OtTerms* terms = nullptr);

/// Sample-only objective. By invariance of KL under the flow,
/// KL(p || p_hat) = KL(F# p || q) and KL(q || q_hat) = KL(F^-1# q || p); with
/// frozen classifiers phi ~ log(q / F# p) and psi ~ log(p / F^-1# q) these are
/// -E phi(F(x)) and -E psi(F^-1(y)), whose gradients in theta are exact at the
/// classifier optimum.
Var ot_sample_objective(const FlowChain& chain, std::span<const Var> params, const Tensor& xp, const Tensor& xq,
                        double gamma, const RatioModel& phi, const RatioModel& psi, OtTerms* terms = nullptr);

/// Trains every block of `chain` jointly. Uses the analytic objective when both
/// densities are given, the classifier-based one otherwise.
OtResult ot_train(const Tensor& p_samples, const Tensor& q_samples, FlowChain& chain, const OtConfig& cfg,
                  const std::optional<AnalyticDensity>& p = std::nullopt,
                  const std::optional<AnalyticDensity>& q = std::nullopt);

}  // namespace wflow
