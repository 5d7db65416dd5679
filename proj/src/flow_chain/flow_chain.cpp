#include "wflow/flow_chain.hpp"

#include <cmath>
#include <string>

#include "wflow/errors.hpp"

namespace wflow {

FlowChain::FlowChain(std::vector<FlowBlock> blocks, AnalyticDensity base)
    : blocks_(std::move(blocks)), base_(std::move(base)) {
  validate();
}

void FlowChain::validate() const {
  if (blocks_.empty()) throw std::invalid_argument("flow chain needs at least one block");
  const std::size_t d = blocks_.front().field.dim();
  if (std::abs(blocks_.front().field.interval().begin) > 1e-12) {
    throw std::invalid_argument("flow chain must start at time 0");
  }
  for (std::size_t n = 0; n < blocks_.size(); ++n) {
    const FlowBlock& b = blocks_[n];
    if (b.field.dim() != d) throw ShapeError("flow chain blocks disagree on dimension");
    b.integrator.validate();
    if (b.integrator.interval.begin != b.field.interval().begin ||
        b.integrator.interval.end != b.field.interval().end) {
      throw std::invalid_argument("block " + std::to_string(n) + ": integrator interval differs from field interval");
    }
    if (n > 0 && b.field.interval().begin != blocks_[n - 1].field.interval().end) {
      throw std::invalid_argument("block " + std::to_string(n) + ": intervals must be contiguous");
    }
  }
  if (!base_.is_potential() && base_.dim() != d) throw ShapeError("base density dimension differs from chain");
}

FlowChain FlowChain::make(const ChainArchitecture& arch, AnalyticDensity base, std::uint64_t seed) {
  if (arch.blocks == 0) throw std::invalid_argument("chain needs at least one block");
  if (!(arch.block_length > 0)) throw std::invalid_argument("block length must be positive");
  const double horizon = arch.block_length * static_cast<double>(arch.blocks);
  std::vector<FlowBlock> blocks;
  for (std::size_t n = 0; n < arch.blocks; ++n) {
    TimeInterval iv{arch.block_length * static_cast<double>(n), arch.block_length * static_cast<double>(n + 1)};
    if (n + 1 == arch.blocks) iv.end = horizon;
    VelocityField f =
        init_near_identity(arch.dim, arch.hidden, Rng::mix(seed + n), iv, horizon, arch.activation);
    blocks.push_back(FlowBlock{std::move(f), IntegratorConfig{arch.scheme, arch.steps, iv}, false});
  }
  return FlowChain(std::move(blocks), std::move(base));
}

void FlowChain::set_base(AnalyticDensity base) {
  base_ = std::move(base);
  validate();
}

std::vector<Tensor> FlowChain::parameters() const {
  std::vector<Tensor> out;
  for (const auto& b : blocks_) {
    auto p = b.field.parameters();
    out.insert(out.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
  }
  return out;
}

void FlowChain::set_parameters(std::span<const Tensor> params) {
  const auto offsets = parameter_offsets();
  if (params.size() != offsets.back()) throw ShapeError("FlowChain::set_parameters: wrong tensor count");
  for (std::size_t n = 0; n < blocks_.size(); ++n) {
    blocks_[n].field.set_parameters(params.subspan(offsets[n], offsets[n + 1] - offsets[n]));
  }
}

std::vector<std::size_t> FlowChain::parameter_offsets() const {
  std::vector<std::size_t> offsets{0};
  for (const auto& b : blocks_) offsets.push_back(offsets.back() + 2 * b.field.net().layers().size());
  return offsets;
}

std::vector<DivergencePlan> make_plans(const FlowChain& chain, const DivergenceEstimator& est, std::size_t rows,
                                       Rng& rng) {
  std::vector<DivergencePlan> plans;
  for (std::size_t n = 0; n < chain.size(); ++n) plans.push_back(DivergencePlan::make(est, rows, chain.dim(), rng));
  return plans;
}

namespace {

ParticleEnsemble map_blocks(const FlowChain& chain, const ParticleEnsemble& ensemble, Direction dir,
                            const DivergenceEstimator& est, Rng& rng) {
  if (ensemble.dim() != chain.dim()) {
    throw ShapeError("ensemble dimension " + std::to_string(ensemble.dim()) + " does not match chain dimension " +
                     std::to_string(chain.dim()));
  }
  ParticleEnsemble out = ensemble;
  const std::size_t n_blocks = chain.size();
  for (std::size_t k = 0; k < n_blocks; ++k) {
    const std::size_t n = dir == Direction::forward ? k : n_blocks - 1 - k;
    const FlowBlock& block = chain.block(n);
    const std::vector<Tensor> params = block.field.parameters();
    if (out.log_density) {
      const DivergencePlan plan = DivergencePlan::make(est, out.size(), chain.dim(), rng);
      AugmentedState<Tensor> s = block_forward<Tensor>(block, params, out.positions, &plan, dir);
      out.positions = std::move(s.x);
      // Both directions: log p(new) = log p(old) - (signed divergence integral).
      out.log_density = sub(*out.log_density, s.logdet);
    } else {
      out.positions = integrate_field<Tensor>(block.field, params, out.positions, block.integrator, dir);
    }
  }
  return out;
}

}  // namespace

ParticleEnsemble forward_map(const FlowChain& chain, const ParticleEnsemble& ensemble) {
  Rng rng(0);
  return map_blocks(chain, ensemble, Direction::forward, DivergenceEstimator::default_for(chain.dim()), rng);
}

ParticleEnsemble forward_map(const FlowChain& chain, const ParticleEnsemble& ensemble,
                             const DivergenceEstimator& est, Rng& rng) {
  return map_blocks(chain, ensemble, Direction::forward, est, rng);
}

ParticleEnsemble inverse_map(const FlowChain& chain, const ParticleEnsemble& ensemble) {
  Rng rng(0);
  return map_blocks(chain, ensemble, Direction::reverse, DivergenceEstimator::default_for(chain.dim()), rng);
}

ParticleEnsemble inverse_map(const FlowChain& chain, const ParticleEnsemble& ensemble,
                             const DivergenceEstimator& est, Rng& rng) {
  return map_blocks(chain, ensemble, Direction::reverse, est, rng);
}

Tensor push_through(const FlowChain& chain, const Tensor& x, std::size_t first, std::size_t last) {
  if (last > chain.size() || first > last) throw std::out_of_range("push_through: bad block range");
  Tensor z = x;
  for (std::size_t n = first; n < last; ++n) {
    const FlowBlock& b = chain.block(n);
    z = integrate(b.field, z, b.integrator, Direction::forward);
  }
  return z;
}

Tensor log_density(const FlowChain& chain, const Tensor& x, const DivergenceEstimator& est, Rng& rng) {
  if (!x.all_finite()) throw NumericError("log_density: non-finite input point");
  const std::vector<DivergencePlan> plans = make_plans(chain, est, x.rows(), rng);
  const std::vector<Tensor> params = chain.parameters();
  Tensor out = chain_log_density<Tensor>(chain, params, x, plans);
  require_finite(out, "log_density");
  return out;
}

double log_density(const FlowChain& chain, std::span<const double> x, const DivergenceEstimator& est, Rng& rng) {
  return log_density(chain, Tensor::row(x), est, rng).item();
}

ParticleEnsemble sample(const FlowChain& chain, std::size_t n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("sample: n must be at least 1");
  ParticleEnsemble z(chain.base().sample(n, rng));
  return inverse_map(chain, z);
}

}  // namespace wflow
