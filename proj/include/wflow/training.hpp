#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wflow/errors.hpp"
#include "wflow/flow_chain.hpp"
#include "wflow/losses.hpp"
#include "wflow/optimizer.hpp"

namespace wflow {

/// Per-iteration losses. `smoothed` is the running minimum of an exponential
/// moving average (factor 0.1), so it never increases within a stage.
struct LossTrace {
  std::vector<std::size_t> stage;
  std::vector<double> raw;
  std::vector<double> smoothed;
  std::vector<double> wall_ms;
  double ema = 0.0;  // current moving average of the last stage

  void push(std::size_t stage_index, double loss, double ms);
  void append(const LossTrace& other);
  std::size_t size() const { return raw.size(); }
  bool empty() const { return raw.empty(); }
};

/// Columns: iteration, stage, loss, smoothed. Reproducible for a fixed seed.
void write_loss_csv(std::ostream& os, const LossTrace& trace);
/// Columns: iteration, stage, wall_ms (cumulative).
void write_timing_csv(std::ostream& os, const LossTrace& trace);

/// Raised when the loss turns non-finite; carries the trace so far.
class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(const std::string& what, LossTrace trace) : NumericError(what), trace_(std::move(trace)) {}
  const LossTrace& trace() const { return trace_; }

 private:
  LossTrace trace_;
};

/// Builds the minibatch loss for one iteration; `rng` is keyed by the iteration.
using BatchObjective = std::function<Var(std::span<const Var> params, std::size_t iteration, Rng& rng)>;
/// Called after every step with the trace so far; may throw to abort.
using TraceMonitor = std::function<void(const LossTrace&)>;

/// Generic loop: cfg.iterations optimizer steps on `params`.
LossTrace minimize(std::vector<Tensor>& params, const TrainConfig& cfg, const BatchObjective& objective,
                   std::size_t stage = 0, const TraceMonitor& monitor = {});

/// Random minibatch of rows (without replacement); the whole set when batch >= rows.
Tensor draw_batch(const Tensor& data, std::size_t batch, Rng& rng);

/// End-to-end maximum likelihood over every block.
LossTrace train_cnf(FlowChain& chain, const Tensor& data, const TrainConfig& cfg, const DivergenceEstimator& est);

/// One JKO step for block n; `pushed` holds the particles after blocks < n.
/// Only block n changes; the potential is that of the chain's base density.
LossTrace train_jko_block(FlowChain& chain, std::size_t n, const Tensor& pushed, const TrainConfig& cfg,
                          const DivergenceEstimator& est);

struct ProgressiveResult {
  LossTrace trace;
  /// ensembles[0] is the input; ensembles[n + 1] the particles after block n.
  std::vector<Tensor> ensembles;
};

/// Progressive JKO training: block after block, particles pushed once between.
ProgressiveResult train_jko(FlowChain& chain, const Tensor& data, const TrainConfig& cfg,
                            const DivergenceEstimator& est);

/// Global flow matching from data (s = 0) to noise (s = 1), independent
/// coupling by shuffling. Block n regresses on s in [n/N, (n+1)/N].
LossTrace train_fm(FlowChain& chain, const Tensor& data, const Tensor& noise, const Interpolant& interp,
                   const TrainConfig& cfg, std::size_t time_draws);

enum class GammaSchedule : std::uint8_t { constant, geometric };
GammaSchedule parse_gamma_schedule(std::string_view name);
std::string_view gamma_schedule_name(GammaSchedule s);
/// gamma_n = gamma0 (constant) or gamma0 * ratio^n (geometric), n = 0..count-1.
std::vector<double> make_gamma_schedule(GammaSchedule kind, double gamma0, double ratio, std::size_t count);

/// Local flow matching: block n learns the OU step of length gammas[n] from
/// the current particles, then the particles are pushed through it.
ProgressiveResult train_local_fm(FlowChain& chain, const Tensor& data, std::span<const double> gammas,
                                 const TrainConfig& cfg, std::size_t time_draws);

}  // namespace wflow
