#include "wflow/dro.hpp"

#include <sstream>
#include <stdexcept>

#include "wflow/errors.hpp"

namespace wflow {

namespace {

Tensor row_of(const Eigen::VectorXd& v) {
  Tensor t = Tensor::zeros(1, static_cast<std::size_t>(v.size()));
  for (Eigen::Index j = 0; j < v.size(); ++j) t(0, static_cast<std::size_t>(j)) = v(j);
  return t;
}

Tensor tiled(const Eigen::VectorXd& v, std::size_t rows) {
  Tensor t = Tensor::zeros(rows, static_cast<std::size_t>(v.size()));
  for (std::size_t i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < v.size(); ++j) t(i, static_cast<std::size_t>(j)) = v(j);
  return t;
}

}  // namespace

RiskFunction RiskFunction::constant(double c) {
  return RiskFunction("constant", [c](const Var& x) {
    return x.tape->constant(Tensor::filled(x.value().rows(), 1, c));
  });
}

RiskFunction RiskFunction::linear(const Eigen::VectorXd& c) {
  const Tensor w = row_of(c);
  return RiskFunction("linear", [w](const Var& x) {
    if (x.value().cols() != w.cols()) throw ShapeError("linear risk: dimension mismatch");
    return wflow::linear(x, x.tape->constant(w));
  });
}

RiskFunction RiskFunction::neg_quadratic(const Eigen::VectorXd& mu) {
  return RiskFunction("neg-quadratic", [mu](const Var& x) {
    if (x.value().cols() != static_cast<std::size_t>(mu.size())) throw ShapeError("quadratic risk: dimension mismatch");
    Var d = sub(x, x.tape->constant(tiled(mu, x.value().rows())));
    return scale(row_sum(square(d)), -0.5);
  });
}

RiskFunction RiskFunction::classifier(Mlp net, int label) {
  if (net.out_width() != 1) throw ShapeError("classifier risk needs a single logit output");
  if (label != 0 && label != 1) throw std::invalid_argument("classifier risk: label must be 0 or 1");
  return RiskFunction("classifier", [net = std::move(net), label](const Var& x) {
    std::vector<Var> w;
    for (const Tensor& p : net.parameters()) w.push_back(x.tape->constant(p));
    const auto acts = net.activations();
    Var phi = mlp_value<Var>(acts, w, x);
    // Logistic loss: softplus(-phi) for label 1, softplus(phi) for label 0.
    Var loss = softplus(label == 1 ? scale(phi, -1.0) : phi);
    return scale(loss, -1.0);
  });
}

Tensor RiskFunction::operator()(const Tensor& x) const {
  Tape tape;
  return fn_(tape.constant(x)).value();
}

Var dro_objective(const FlowChain& chain, std::span<const Var> params, const Tensor& x, const RiskFunction& risk,
                  double gamma, DroTerms* terms) {
  if (!(gamma > 0)) throw std::invalid_argument("dro: gamma must be positive");
  Tape& tape = *params.front().tape;
  const auto offsets = chain.parameter_offsets();
  Var x0 = tape.constant(x);
  Var z = x0;
  for (std::size_t n = 0; n < chain.size(); ++n) {
    z = block_forward<Var>(chain.block(n), params.subspan(offsets[n], offsets[n + 1] - offsets[n]), z, nullptr).x;
  }
  Var r = risk.on_tape(z);
  if (r.value().rows() != x.rows() || r.value().cols() != 1) throw ShapeError("risk must return one value per particle");
  Var rbar = mean(r);
  Var move = mean(row_sum(square(sub(z, x0))));
  if (terms) {
    terms->risk = rbar.value().item();
    terms->movement = move.value().item();
  }
  return add(rbar, scale(move, 1.0 / (2.0 * gamma)));
}

bool unbounded_descent(const LossTrace& trace, std::size_t window, std::size_t chunk) {
  if (chunk == 0 || window < 3 * chunk || trace.size() < window) return false;
  const std::size_t n_chunks = window / chunk;
  const std::size_t begin = trace.size() - n_chunks * chunk;
  std::vector<double> means;
  for (std::size_t c = 0; c < n_chunks; ++c) {
    double s = 0.0;
    for (std::size_t k = 0; k < chunk; ++k) s += trace.raw[begin + c * chunk + k];
    means.push_back(s / static_cast<double>(chunk));
  }
  for (std::size_t c = 1; c < means.size(); ++c) {
    if (!(means[c] < means[c - 1])) return false;
  }
  const double first = means[0] - means[1];
  const double last = means[n_chunks - 2] - means[n_chunks - 1];
  return last >= 0.5 * first;
}

DroResult dro_train(const RiskFunction& risk, const Tensor& p_samples, FlowChain& chain, const DroConfig& cfg) {
  cfg.train.validate(p_samples.rows());
  if (chain.size() != 1) throw std::invalid_argument("dro: the transport map is a single block");
  if (p_samples.cols() != chain.dim()) throw ShapeError("dro: dimension mismatch");
  std::vector<Tensor> params = chain.parameters();
  auto monitor = [&](const LossTrace& trace) {
    if (!unbounded_descent(trace, cfg.detector_window, cfg.detector_chunk)) return;
    std::ostringstream msg;
    msg << "risk descent appears unbounded: loss fell steadily over the last " << cfg.detector_window
        << " iterations (now " << trace.raw.back() << "); the risk is likely unbounded below relative to the "
        << "transport penalty, try a smaller gamma or a bounded risk";
    throw UnboundedRisk(msg.str(), trace);
  };
  DroResult out;
  out.trace = minimize(
      params, cfg.train,
      [&](std::span<const Var> v, std::size_t, Rng& rng) {
        return dro_objective(chain, v, draw_batch(p_samples, cfg.train.batch_size, rng), risk, cfg.train.gamma);
      },
      0, monitor);
  chain.set_parameters(params);
  chain.block(0).trained = true;
  out.transported = push_through(chain, p_samples, 0, 1);
  auto mean_of = [](const Tensor& t) {
    double s = 0.0;
    for (std::size_t k = 0; k < t.size(); ++k) s += t[k];
    return s / static_cast<double>(t.size());
  };
  out.risk_before = mean_of(risk(p_samples));
  out.risk_after = mean_of(risk(out.transported));
  out.movement = mean_squared_displacement(p_samples, out.transported);
  out.objective = out.risk_after + out.movement / (2.0 * cfg.train.gamma);
  return out;
}

}  // namespace wflow
