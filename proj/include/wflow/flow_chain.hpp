#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "wflow/density.hpp"
#include "wflow/ensemble.hpp"
#include "wflow/odeint.hpp"
#include "wflow/velocity_field.hpp"

namespace wflow {

struct FlowBlock {
  VelocityField field;
  IntegratorConfig integrator;
  bool trained = false;
};

struct ChainArchitecture {
  std::size_t dim = 2;
  std::size_t blocks = 1;
  double block_length = 1.0;
  std::vector<std::size_t> hidden = {64, 64};
  Activation activation = Activation::tanh;
  Scheme scheme = Scheme::rk4;
  std::uint32_t steps = 32;
};

/// Ordered blocks covering [0, T]. Block order is data -> noise: the forward
/// map pushes data toward the base density q and the inverse map generates.
class FlowChain {
 public:
  FlowChain() = default;
  FlowChain(std::vector<FlowBlock> blocks, AnalyticDensity base);

  /// Near-identity chain; block n is active on [n L, (n + 1) L] and every
  /// field sees time normalized by the total horizon.
  static FlowChain make(const ChainArchitecture& arch, AnalyticDensity base, std::uint64_t seed);

  std::size_t dim() const { return blocks_.front().field.dim(); }
  std::size_t size() const { return blocks_.size(); }
  double horizon() const { return blocks_.back().field.interval().end; }
  const std::vector<FlowBlock>& blocks() const { return blocks_; }
  FlowBlock& block(std::size_t n) { return blocks_.at(n); }
  const FlowBlock& block(std::size_t n) const { return blocks_.at(n); }
  const AnalyticDensity& base() const { return base_; }
  void set_base(AnalyticDensity base);

  /// All parameter tensors, block by block.
  std::vector<Tensor> parameters() const;
  void set_parameters(std::span<const Tensor> params);
  /// Index of the first tensor of block n within parameters(); offsets[size()] = total.
  std::vector<std::size_t> parameter_offsets() const;

 private:
  void validate() const;

  std::vector<FlowBlock> blocks_;
  AnalyticDensity base_;
};

/// Forward pass of a single block with log-det; params bound per block.
template <typename T>
AugmentedState<T> block_forward(const FlowBlock& block, std::span<const T> params, const T& x,
                                const DivergencePlan* plan, Direction dir = Direction::forward) {
  if (plan) return integrate_field_augmented<T>(block.field, params, x, block.integrator, *plan, dir);
  T end = integrate_field<T>(block.field, params, x, block.integrator, dir);
  return AugmentedState<T>{end, constant_like(x, Tensor::zeros(value_of(x).rows(), 1)), x};
}

/// log p(x) = log q(F(x)) + sum over blocks of the divergence integral, with
/// all chain parameters bound as `params` (layout of FlowChain::parameters()).
template <typename T>
T chain_log_density(const FlowChain& chain, std::span<const T> params, const T& x,
                    const std::vector<DivergencePlan>& plans) {
  const std::vector<std::size_t> offsets = chain.parameter_offsets();
  T z = x;
  T logdet = constant_like(x, Tensor::zeros(value_of(x).rows(), 1));
  for (std::size_t n = 0; n < chain.size(); ++n) {
    auto block_params = params.subspan(offsets[n], offsets[n + 1] - offsets[n]);
    AugmentedState<T> s = block_forward<T>(chain.block(n), block_params, z, &plans.at(n));
    z = s.x;
    logdet = add(logdet, s.logdet);
  }
  return add(chain.base().log_pdf(z), logdet);
}

/// Fresh divergence plans (one per block) for a batch of `rows` points.
std::vector<DivergencePlan> make_plans(const FlowChain& chain, const DivergenceEstimator& est, std::size_t rows,
                                       Rng& rng);

/// Pushes particles data -> noise. A present log-density accumulator is
/// advanced with the change-of-variables formula.
ParticleEnsemble forward_map(const FlowChain& chain, const ParticleEnsemble& ensemble);
ParticleEnsemble forward_map(const FlowChain& chain, const ParticleEnsemble& ensemble,
                             const DivergenceEstimator& est, Rng& rng);
/// Pulls particles noise -> data by reverse-time integration, blocks reversed.
ParticleEnsemble inverse_map(const FlowChain& chain, const ParticleEnsemble& ensemble);
ParticleEnsemble inverse_map(const FlowChain& chain, const ParticleEnsemble& ensemble,
                             const DivergenceEstimator& est, Rng& rng);

/// Applies blocks [first, last) forward.
Tensor push_through(const FlowChain& chain, const Tensor& x, std::size_t first, std::size_t last);

/// log p(x) per row (m x 1).
Tensor log_density(const FlowChain& chain, const Tensor& x, const DivergenceEstimator& est, Rng& rng);
double log_density(const FlowChain& chain, std::span<const double> x, const DivergenceEstimator& est, Rng& rng);

/// Draws z ~ q and maps it through the inverse chain.
ParticleEnsemble sample(const FlowChain& chain, std::size_t n, Rng& rng);

inline constexpr std::uint16_t kCheckpointVersion = 1;

void save_checkpoint(const FlowChain& chain, std::ostream& os);
void save_checkpoint(const FlowChain& chain, const std::string& path);
/// Throws FormatError on bad magic, unsupported version, truncation or CRC mismatch.
FlowChain load_checkpoint(std::istream& is);
FlowChain load_checkpoint(const std::string& path);

}  // namespace wflow
