#include "wflow/ratio.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include "wflow/errors.hpp"
#include "wflow/losses.hpp"

namespace wflow {

Tensor RatioModel::log_ratio(const Tensor& x) const {
  const auto acts = net.activations();
  const auto params = net.parameters();
  return mlp_value<Tensor>(acts, params, x);
}

Var logistic_objective(std::span<const Activation> activations, std::span<const Var> params, const Tensor& x0,
                       const Tensor& x1) {
  Tape& tape = *params.front().tape;
  Var phi0 = mlp_value<Var>(activations, params, tape.constant(x0));
  Var phi1 = mlp_value<Var>(activations, params, tape.constant(x1));
  return add(mean(softplus(phi0)), mean(softplus(scale(phi1, -1.0))));
}

RatioModel fit_logistic_ratio(const Tensor& samples0, const Tensor& samples1, const RatioConfig& cfg) {
  if (samples0.rows() == 0 || samples1.rows() == 0) {
    throw std::invalid_argument("fit_logistic_ratio: both classes need samples");
  }
  if (samples0.cols() != samples1.cols()) throw ShapeError("fit_logistic_ratio: class dimensions differ");
  TrainConfig tc = cfg.train;
  tc.batch_size = std::min({tc.batch_size, samples0.rows(), samples1.rows()});
  RatioModel model;
  model.net = Mlp::init(samples0.cols(), cfg.hidden, 1, Activation::tanh, Rng::mix(tc.seed ^ 0x5a17), false);
  model.count0 = samples0.rows();
  model.count1 = samples1.rows();
  const auto acts = model.net.activations();
  std::vector<Tensor> params = model.net.parameters();
  model.trace = minimize(params, tc, [&](std::span<const Var> p, std::size_t, Rng& rng) {
    const Tensor b0 = draw_batch(samples0, tc.batch_size, rng);
    const Tensor b1 = draw_batch(samples1, tc.batch_size, rng);
    return logistic_objective(acts, p, b0, b1);
  });
  model.net.set_parameters(params);
  return model;
}

Tensor telescope(std::span<const LogRatioFn> links, const Tensor& x) {
  Tensor total = Tensor::zeros(x.rows(), 1);
  for (const auto& f : links) total = add(total, f(x));
  return total;
}

TelescopicEstimate telescopic_log_ratio(std::span<const Tensor> path, const Tensor& x, const RatioConfig& cfg) {
  if (path.size() < 2) throw std::invalid_argument("telescopic_log_ratio: path needs at least two ensembles");
  TelescopicEstimate out;
  std::vector<LogRatioFn> fns;
  for (std::size_t n = 0; n + 1 < path.size(); ++n) {
    RatioConfig link = cfg;
    link.train.seed = cfg.train.seed + n;
    out.links.push_back(fit_logistic_ratio(path[n], path[n + 1], link));
    out.links.back().step = n;
  }
  for (const RatioModel& m : out.links) fns.push_back([&m](const Tensor& q) { return m.log_ratio(q); });
  out.log_ratio = telescope(fns, x);
  return out;
}

std::vector<Tensor> ou_bridge_path(const Tensor& p, const Tensor& q, std::span<const double> gammas, Rng& rng) {
  std::vector<Tensor> forward{p}, backward{q};
  for (double g : gammas) {
    forward.push_back(make_local_fm_targets(forward.back(), g, rng).second);
    backward.push_back(make_local_fm_targets(backward.back(), g, rng).second);
  }
  std::vector<Tensor> path = std::move(forward);
  for (auto it = backward.rbegin(); it != backward.rend(); ++it) path.push_back(*it);
  return path;
}

std::vector<Tensor> flow_bridge_path(const FlowChain& chain_p, const Tensor& p, const FlowChain& chain_q,
                                     const Tensor& q) {
  std::vector<Tensor> forward{p}, backward{q};
  for (std::size_t n = 0; n < chain_p.size(); ++n) forward.push_back(push_through(chain_p, forward.back(), n, n + 1));
  for (std::size_t n = 0; n < chain_q.size(); ++n) backward.push_back(push_through(chain_q, backward.back(), n, n + 1));
  std::vector<Tensor> path = std::move(forward);
  for (auto it = backward.rbegin(); it != backward.rend(); ++it) path.push_back(*it);
  return path;
}

std::string_view bridge_name(BridgeKind k) { return k == BridgeKind::ou ? "ou" : "flow"; }

BridgeKind parse_bridge(std::string_view name) {
  if (name == "ou") return BridgeKind::ou;
  if (name == "flow") return BridgeKind::flow;
  throw std::invalid_argument("unknown bridge '" + std::string(name) + "' (expected ou or flow)");
}

}  // namespace wflow
