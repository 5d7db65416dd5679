#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include <Eigen/Dense>

#include "wflow/flow_chain.hpp"
#include "wflow/mlp.hpp"
#include "wflow/training.hpp"

namespace wflow {

/// Per-particle risk R(x) (m x 1), differentiable on a tape.
class RiskFunction {
 public:
  using TapeFn = std::function<Var(const Var& x)>;

  RiskFunction(std::string name, TapeFn fn) : name_(std::move(name)), fn_(std::move(fn)) {}

  static RiskFunction constant(double c);
  /// R(x) = c^T x.
  static RiskFunction linear(const Eigen::VectorXd& c);
  /// R(x) = -|x - mu|^2 / 2.
  static RiskFunction neg_quadratic(const Eigen::VectorXd& mu);
  /// Negated logistic loss of classifier logits phi(x) at a fixed label, so
  /// minimizing R pushes particles toward misclassification.
  static RiskFunction classifier(Mlp net, int label);

  const std::string& name() const { return name_; }
  Var on_tape(const Var& x) const { return fn_(x); }
  Tensor operator()(const Tensor& x) const;

 private:
  std::string name_;
  TapeFn fn_;
};

struct DroConfig {
  TrainConfig train;  // train.gamma is the transport budget
  std::size_t detector_window = 500;
  std::size_t detector_chunk = 50;
};

struct DroTerms {
  double risk = 0.0;      // mean R(F(x))
  double movement = 0.0;  // mean |x - F(x)|^2
};

struct DroResult {
  LossTrace trace;
  Tensor transported;  // F*(x) for the input particles
  double risk_before = 0.0;
  double risk_after = 0.0;
  double movement = 0.0;
  double objective = 0.0;
};

/// mean R(F(x)) + mean |x - F(x)|^2 / (2 gamma) with F the whole chain.
Var dro_objective(const FlowChain& chain, std::span<const Var> params, const Tensor& x, const RiskFunction& risk,
                  double gamma, DroTerms* terms = nullptr);

/// True when the last `window` losses, split into chunks, have strictly
/// decreasing chunk means and the final decrement is at least half the first
/// (descent that is not slowing down).
bool unbounded_descent(const LossTrace& trace, std::size_t window, std::size_t chunk);

class UnboundedRisk : public TrainingDiverged {
 public:
  using TrainingDiverged::TrainingDiverged;
};

/// Trains a single-block chain on the DRO objective. Throws UnboundedRisk
/// when the descent detector fires.
DroResult dro_train(const RiskFunction& risk, const Tensor& p_samples, FlowChain& chain, const DroConfig& cfg);

}  // namespace wflow
