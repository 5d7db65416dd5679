#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "wflow/tensor.hpp"

namespace wflow {

enum class OptimizerKind : std::uint8_t { adam, sgd };

std::string_view optimizer_name(OptimizerKind k);
OptimizerKind parse_optimizer(std::string_view name);

/// constant: lr throughout. cosine: lr * (1 + cos(pi k / K)) / 2 at step k of K.
enum class LrSchedule : std::uint8_t { constant, cosine };

std::string_view lr_schedule_name(LrSchedule s);
LrSchedule parse_lr_schedule(std::string_view name);

struct TrainConfig {
  double learn_rate = 1e-3;
  std::size_t batch_size = 256;
  std::size_t iterations = 500;
  std::uint64_t seed = 0;
  double gamma = 1.0;
  OptimizerKind optimizer = OptimizerKind::adam;
  LrSchedule schedule = LrSchedule::constant;

  /// Learning rate for step `it` (0-based) of cfg.iterations.
  double learn_rate_at(std::size_t it) const;

  /// dataset_size == 0 skips the batch-size check.
  void validate(std::size_t dataset_size = 0) const;
};

/// Adam (0.9, 0.999, 1e-8) or plain SGD over a fixed list of tensors.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learn_rate);

  void step(std::span<Tensor> params, std::span<const Tensor> grads);
  std::size_t steps() const { return t_; }
  double learn_rate() const { return lr_; }
  void set_learn_rate(double lr);

  static constexpr double beta1 = 0.9;
  static constexpr double beta2 = 0.999;
  static constexpr double eps = 1e-8;

 private:
  OptimizerKind kind_;
  double lr_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace wflow
