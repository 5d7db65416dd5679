#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "wflow/tape.hpp"

namespace wflow {

/// Builds a scalar (1x1) loss on `tape` from parameter handles bound in the
/// same order as the tensors handed to check_gradient_fd.
using LossBuilder = std::function<Var(Tape& tape, std::span<const Var> params)>;

struct GradCheckReport {
  bool pass = false;
  double max_rel_error = 0.0;
  std::size_t parameter_count = 0;
  std::size_t worst_tensor = 0;
  std::size_t worst_entry = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  /// Tape gradient is ~0 where central differences see a jump.
  bool nondifferentiable_suspect = false;
  std::string message;
};

/// Compares the tape gradient against central differences with step
/// h = 1e-5 * (1 + |p|). Relative error per entry is |g - fd| / max(|g|, |fd|, floor)
/// with floor = 1e-4 * max(1, |loss|), so vanishing components are judged absolutely.
/// Throws NumericError if the loss is non-finite at a perturbed point.
GradCheckReport check_gradient_fd(const LossBuilder& loss, const std::vector<Tensor>& params, double rel_tol);

}  // namespace wflow
