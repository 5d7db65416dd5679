#include "wflow/optimizer.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "wflow/errors.hpp"

namespace wflow {

std::string_view optimizer_name(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "adam") return OptimizerKind::adam;
  if (name == "sgd") return OptimizerKind::sgd;
  throw std::invalid_argument("unknown optimizer '" + std::string(name) + "' (expected adam or sgd)");
}

void TrainConfig::validate(std::size_t dataset_size) const {
  if (!(learn_rate > 0) || !std::isfinite(learn_rate)) throw std::invalid_argument("learn_rate must be positive");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be at least 1");
  if (!(gamma > 0) || !std::isfinite(gamma)) throw std::invalid_argument("gamma must be positive");
  if (dataset_size > 0 && batch_size > dataset_size) {
    throw std::invalid_argument("batch_size " + std::to_string(batch_size) + " exceeds dataset size " +
                                std::to_string(dataset_size));
  }
}
std::string_view lr_schedule_name(LrSchedule s) { return s == LrSchedule::constant ? "constant" : "cosine"; }

LrSchedule parse_lr_schedule(std::string_view name) {
  if (name == "constant") return LrSchedule::constant;
  if (name == "cosine") return LrSchedule::cosine;
  throw std::invalid_argument("unknown lr schedule '" + std::string(name) + "' (expected constant or cosine)");
}

double TrainConfig::learn_rate_at(std::size_t it) const {
  if (schedule == LrSchedule::constant || iterations == 0) return learn_rate;
  const double frac = static_cast<double>(it) / static_cast<double>(iterations);
  return learn_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

Optimizer::Optimizer(OptimizerKind kind, double learn_rate) : kind_(kind), lr_(learn_rate) {
  if (!(learn_rate > 0)) throw std::invalid_argument("learn_rate must be positive");
}

void Optimizer::set_learn_rate(double lr) {
  if (!(lr >= 0) || !std::isfinite(lr)) throw std::invalid_argument("learn_rate must be non-negative");
  lr_ = lr;
}

void Optimizer::step(std::span<Tensor> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size()) throw ShapeError("optimizer: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].same_shape(grads[i])) throw ShapeError("optimizer: gradient shape mismatch at tensor " + std::to_string(i));
  }
  ++t_;
  if (kind_ == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i].matrix() -= lr_ * grads[i].matrix();
    return;
  }
  if (m_.empty()) {
    for (const Tensor& p : params) {
      m_.push_back(Tensor::zeros(p.rows(), p.cols()));
      v_.push_back(Tensor::zeros(p.rows(), p.cols()));
    }
  }
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].data();
    auto g = grads[i].data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
      v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
      p[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps);
    }
  }
}

}  // namespace wflow
