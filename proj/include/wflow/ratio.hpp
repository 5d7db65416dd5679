#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "wflow/flow_chain.hpp"
#include "wflow/mlp.hpp"
#include "wflow/optimizer.hpp"
#include "wflow/training.hpp"

namespace wflow {

/// Logistic classifier phi(x) trained to separate samples of f0 (label 0)
/// from samples of f1 (label 1). At the population optimum
/// phi = log(f1 / f0).
struct RatioModel {
  Mlp net;
  std::size_t step = 0;  // position of the link along a bridge path
  std::size_t count0 = 0;
  std::size_t count1 = 0;
  LossTrace trace;

  /// phi(x), m x 1.
  Tensor log_ratio(const Tensor& x) const;
};

struct RatioConfig {
  TrainConfig train;
  std::vector<std::size_t> hidden = {32, 32};
};

/// mean softplus(phi(x0)) + mean softplus(-phi(x1)) on a tape; `params` bind
/// the classifier layers.
Var logistic_objective(std::span<const Activation> activations, std::span<const Var> params, const Tensor& x0,
                       const Tensor& x1);

/// Minimizes the empirical logistic loss. Throws std::invalid_argument when a
/// class is empty or the dimensions differ.
RatioModel fit_logistic_ratio(const Tensor& samples0, const Tensor& samples1, const RatioConfig& cfg);

using LogRatioFn = std::function<Tensor(const Tensor&)>;

/// Sum of the per-link log-ratios, all evaluated at the same points.
Tensor telescope(std::span<const LogRatioFn> links, const Tensor& x);

struct TelescopicEstimate {
  Tensor log_ratio;  // log(p_last / p_first) at the query points, m x 1
  std::vector<RatioModel> links;
};

/// Fits one classifier per consecutive pair of `path` (path.front() ~ p,
/// path.back() ~ q) and sums them at `x`. Link n is seeded with cfg seed + n.
TelescopicEstimate telescopic_log_ratio(std::span<const Tensor> path, const Tensor& x, const RatioConfig& cfg);

/// Ornstein-Uhlenbeck bridge [p_0 .. p_K, q_K .. q_0]: both sample sets are
/// evolved by successive OU steps gammas[0..K-1] toward N(0, I), and the q
/// side is traversed backwards so the path runs from p to q.
std::vector<Tensor> ou_bridge_path(const Tensor& p, const Tensor& q, std::span<const double> gammas, Rng& rng);

/// Bridge through trained flows: p pushed block by block through chain_p,
/// then q's pushed ensembles in reverse order.
std::vector<Tensor> flow_bridge_path(const FlowChain& chain_p, const Tensor& p, const FlowChain& chain_q,
                                     const Tensor& q);

enum class BridgeKind : std::uint8_t { ou, flow };
std::string_view bridge_name(BridgeKind k);
BridgeKind parse_bridge(std::string_view name);

}  // namespace wflow
