#pragma once

#include <cstddef>
#include <optional>

#include "wflow/tensor.hpp"

namespace wflow {

/// m particles in R^d, optionally with a per-particle log-density accumulator.
struct ParticleEnsemble {
  Tensor positions;  // m x d
  std::optional<Tensor> log_density;  // m x 1

  ParticleEnsemble() = default;
  explicit ParticleEnsemble(Tensor x) : positions(std::move(x)) {}

  std::size_t size() const { return positions.rows(); }
  std::size_t dim() const { return positions.cols(); }
};

}  // namespace wflow
