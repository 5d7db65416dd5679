#include "wflow/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include "wflow/datasets.hpp"

namespace wflow {
namespace {

constexpr double kEmaFactor = 0.1;

using Clock = std::chrono::steady_clock;

std::vector<Var> bind_all(Tape& tape, const std::vector<Tensor>& params) {
  std::vector<Var> out;
  out.reserve(params.size());
  for (const Tensor& p : params) out.push_back(tape.parameter(p));
  return out;
}

}  // namespace

void LossTrace::push(std::size_t stage_index, double loss, double ms) {
  double s = loss;
  if (!smoothed.empty() && stage.back() == stage_index) {
    ema = (1.0 - kEmaFactor) * ema + kEmaFactor * loss;
    s = std::min(smoothed.back(), ema);
  } else {
    ema = loss;  // a new stage restarts the average
  }
  stage.push_back(stage_index);
  raw.push_back(loss);
  smoothed.push_back(s);
  wall_ms.push_back(ms);
}

void LossTrace::append(const LossTrace& other) {
  stage.insert(stage.end(), other.stage.begin(), other.stage.end());
  raw.insert(raw.end(), other.raw.begin(), other.raw.end());
  smoothed.insert(smoothed.end(), other.smoothed.begin(), other.smoothed.end());
  wall_ms.insert(wall_ms.end(), other.wall_ms.begin(), other.wall_ms.end());
  ema = other.ema;
}

void write_loss_csv(std::ostream& os, const LossTrace& trace) {
  os << "iteration,stage,loss,smoothed\n";
  for (std::size_t i = 0; i < trace.size(); ++i) {
    os << i << ',' << trace.stage[i] << ',' << format_double(trace.raw[i]) << ',' << format_double(trace.smoothed[i])
       << '\n';
  }
}

void write_timing_csv(std::ostream& os, const LossTrace& trace) {
  os << "iteration,stage,wall_ms\n";
  for (std::size_t i = 0; i < trace.size(); ++i) {
    os << i << ',' << trace.stage[i] << ',' << format_double(std::round(trace.wall_ms[i] * 1000.0) / 1000.0) << '\n';
  }
}

Tensor draw_batch(const Tensor& data, std::size_t batch, Rng& rng) {
  const std::size_t n = data.rows();
  if (batch >= n) return data;
  // Partial Fisher-Yates over an index vector.
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < batch; ++i) std::swap(idx[i], idx[i + rng.index(n - i)]);
  idx.resize(batch);
  return gather_rows(data, idx);
}

LossTrace minimize(std::vector<Tensor>& params, const TrainConfig& cfg, const BatchObjective& objective,
                   std::size_t stage, const TraceMonitor& monitor) {
  cfg.validate();
  Optimizer opt(cfg.optimizer, cfg.learn_rate);
  const Rng stage_rng = Rng(cfg.seed).derive(stage);
  LossTrace trace;
  const auto t0 = Clock::now();
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    Rng rng = stage_rng.derive(it);
    Tape tape;
    const std::vector<Var> bound = bind_all(tape, params);
    double value = 0.0;
    std::vector<Tensor> grads;
    try {
      Var loss = objective(bound, it, rng);
      value = loss.value().item();
      if (!std::isfinite(value)) throw NumericError("non-finite loss");
      grads = tape.grad(loss, Tensor::scalar(1.0));
      for (const Tensor& g : grads) require_finite(g, "gradient");
    } catch (const NumericError& e) {
      throw TrainingDiverged("training diverged at iteration " + std::to_string(it) + " (stage " +
                                 std::to_string(stage) + "): " + e.what(),
                             trace);
    }
    opt.set_learn_rate(cfg.learn_rate_at(it));
    opt.step(params, grads);
    const double ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    trace.push(stage, value, ms);
    if (monitor) monitor(trace);
  }
  return trace;
}

LossTrace train_cnf(FlowChain& chain, const Tensor& data, const TrainConfig& cfg, const DivergenceEstimator& est) {
  cfg.validate(data.rows());
  if (data.cols() != chain.dim()) throw ShapeError("train_cnf: data dimension does not match chain");
  std::vector<Tensor> params = chain.parameters();
  const FlowChain& view = chain;
  LossTrace trace = minimize(params, cfg, [&](std::span<const Var> p, std::size_t, Rng& rng) {
    const Tensor batch = draw_batch(data, cfg.batch_size, rng);
    const std::vector<DivergencePlan> plans = make_plans(view, est, batch.rows(), rng);
    return nll_objective(view, p, batch, plans);
  });
  chain.set_parameters(params);
  for (std::size_t n = 0; n < chain.size(); ++n) chain.block(n).trained = true;
  return trace;
}

LossTrace train_jko_block(FlowChain& chain, std::size_t n, const Tensor& pushed, const TrainConfig& cfg,
                          const DivergenceEstimator& est) {
  cfg.validate(pushed.rows());
  if (n >= chain.size()) throw std::out_of_range("train_jko_block: block index out of range");
  for (std::size_t k = 0; k < n; ++k) {
    if (!chain.block(k).trained) throw std::logic_error("train_jko_block: earlier blocks must be trained first");
  }
  FlowBlock& block = chain.block(n);
  std::vector<Tensor> params = block.field.parameters();
  const AnalyticDensity& target = chain.base();
  LossTrace trace = minimize(
      params, cfg,
      [&](std::span<const Var> p, std::size_t, Rng& rng) {
        const Tensor batch = draw_batch(pushed, cfg.batch_size, rng);
        const DivergencePlan plan = DivergencePlan::make(est, batch.rows(), chain.dim(), rng);
        return jko_objective(block, p, batch, cfg.gamma, target, plan);
      },
      n);
  block.field.set_parameters(params);
  block.trained = true;
  return trace;
}

ProgressiveResult train_jko(FlowChain& chain, const Tensor& data, const TrainConfig& cfg,
                            const DivergenceEstimator& est) {
  ProgressiveResult out;
  out.ensembles.push_back(data);
  for (std::size_t n = 0; n < chain.size(); ++n) {
    out.trace.append(train_jko_block(chain, n, out.ensembles.back(), cfg, est));
    out.ensembles.push_back(push_through(chain, out.ensembles.back(), n, n + 1));
  }
  return out;
}

LossTrace train_fm(FlowChain& chain, const Tensor& data, const Tensor& noise, const Interpolant& interp,
                   const TrainConfig& cfg, std::size_t time_draws) {
  cfg.validate(std::min(data.rows(), noise.rows()));
  if (data.cols() != chain.dim() || noise.cols() != chain.dim()) throw ShapeError("train_fm: dimension mismatch");
  LossTrace trace;
  const double n_blocks = static_cast<double>(chain.size());
  for (std::size_t n = 0; n < chain.size(); ++n) {
    FlowBlock& block = chain.block(n);
    std::vector<Tensor> params = block.field.parameters();
    const double s_lo = static_cast<double>(n) / n_blocks;
    const double s_hi = n + 1 == chain.size() ? 1.0 : static_cast<double>(n + 1) / n_blocks;
    trace.append(minimize(
        params, cfg,
        [&](std::span<const Var> p, std::size_t, Rng& rng) {
          const Tensor x0 = draw_batch(data, cfg.batch_size, rng);
          const Tensor x1 = draw_batch(noise, cfg.batch_size, rng);
          const FmBatch batch = make_fm_batch(block.field, interp, x0, x1, time_draws, rng, s_lo, s_hi);
          return fm_objective(block.field, p, batch);
        },
        n));
    block.field.set_parameters(params);
    block.trained = true;
  }
  return trace;
}

GammaSchedule parse_gamma_schedule(std::string_view name) {
  if (name == "constant") return GammaSchedule::constant;
  if (name == "geometric") return GammaSchedule::geometric;
  throw std::invalid_argument("unknown gamma schedule '" + std::string(name) + "' (expected constant or geometric)");
}

std::string_view gamma_schedule_name(GammaSchedule s) {
  return s == GammaSchedule::constant ? "constant" : "geometric";
}

std::vector<double> make_gamma_schedule(GammaSchedule kind, double gamma0, double ratio, std::size_t count) {
  if (!(gamma0 >= 0)) throw std::invalid_argument("OU step must be non-negative");
  if (kind == GammaSchedule::geometric && !(ratio > 0)) throw std::invalid_argument("geometric ratio must be positive");
  std::vector<double> out;
  double g = gamma0;
  for (std::size_t n = 0; n < count; ++n) {
    out.push_back(g);
    if (kind == GammaSchedule::geometric) g *= ratio;
  }
  return out;
}

ProgressiveResult train_local_fm(FlowChain& chain, const Tensor& data, std::span<const double> gammas,
                                 const TrainConfig& cfg, std::size_t time_draws) {
  if (gammas.size() != chain.size()) throw std::invalid_argument("train_local_fm: need one OU step per block");
  cfg.validate(data.rows());
  const Interpolant interp{InterpolantKind::linear};
  ProgressiveResult out;
  out.ensembles.push_back(data);
  for (std::size_t n = 0; n < chain.size(); ++n) {
    FlowBlock& block = chain.block(n);
    const Tensor& current = out.ensembles.back();
    std::vector<Tensor> params = block.field.parameters();
    out.trace.append(minimize(
        params, cfg,
        [&](std::span<const Var> p, std::size_t, Rng& rng) {
          const Tensor xl = draw_batch(current, cfg.batch_size, rng);
          auto [x_l, x_r] = make_local_fm_targets(xl, gammas[n], rng);
          const FmBatch batch = make_fm_batch(block.field, interp, x_l, x_r, time_draws, rng);
          return fm_objective(block.field, p, batch);
        },
        n));
    block.field.set_parameters(params);
    block.trained = true;
    out.ensembles.push_back(push_through(chain, current, n, n + 1));
  }
  return out;
}

}  // namespace wflow
