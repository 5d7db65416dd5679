#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>

#include "wflow/errors.hpp"
#include "wflow/velocity_field.hpp"

namespace wflow {

enum class Scheme : std::uint8_t { euler = 0, rk4 = 1 };
enum class Direction : std::uint8_t { forward, reverse };

std::string_view scheme_name(Scheme s);
Scheme parse_scheme(std::string_view name);

struct IntegratorConfig {
  Scheme scheme = Scheme::rk4;
  std::uint32_t steps = 32;
  TimeInterval interval;

  double step() const { return interval.length() / static_cast<double>(steps); }
  void validate() const;
};

/// State carried through a block: position, running integral of the
/// divergence along the direction of integration, and the entry point.
template <typename T>
struct AugmentedState {
  T x;
  T logdet;  // m x 1
  T start;
};

namespace detail {

template <typename T, typename Step>
void run_steps(const IntegratorConfig& cfg, Direction dir, Step&& step) {
  cfg.validate();
  const double h = cfg.step();
  const double signed_h = dir == Direction::forward ? h : -h;
  const double t0 = dir == Direction::forward ? cfg.interval.begin : cfg.interval.end;
  for (std::uint32_t i = 0; i < cfg.steps; ++i) {
    const double t = t0 + signed_h * static_cast<double>(i);
    try {
      step(t, signed_h);
    } catch (const NumericError& e) {
      throw NumericError("integration step " + std::to_string(i) + " at t=" + std::to_string(t) + ": " + e.what());
    }
  }
}

template <typename T>
T combine_rk4(const T& y, const T& k1, const T& k2, const T& k3, const T& k4, double h) {
  T inner = add(add(k1, scale(k2, 2.0)), add(scale(k3, 2.0), k4));
  return add(y, scale(inner, h / 6.0));
}

}  // namespace detail

/// Fixed-step solution of dx/dt = v(x, t) across cfg.interval. `velocity` is
/// a callable (const T& x, double t) -> T. Reverse direction starts at the
/// interval end with a negated step.
template <typename T, typename Velocity>
T integrate_with(Velocity&& velocity, T x, const IntegratorConfig& cfg, Direction dir) {
  detail::run_steps<T>(cfg, dir, [&](double t, double h) {
    if (cfg.scheme == Scheme::euler) {
      x = add(x, scale(velocity(x, t), h));
      return;
    }
    T k1 = velocity(x, t);
    T k2 = velocity(add(x, scale(k1, h / 2)), t + h / 2);
    T k3 = velocity(add(x, scale(k2, h / 2)), t + h / 2);
    T k4 = velocity(add(x, scale(k3, h)), t + h);
    x = detail::combine_rk4(x, k1, k2, k3, k4, h);
  });
  return x;
}

/// Joint integration of position and divergence; `field` is a callable
/// (const T& x, double t) -> FieldEval<T> with the divergence populated.
template <typename T, typename Field>
AugmentedState<T> integrate_augmented_with(Field&& field, T x0, const IntegratorConfig& cfg, Direction dir) {
  const std::size_t m = value_of(x0).rows();
  AugmentedState<T> s{x0, constant_like(x0, Tensor::zeros(m, 1)), x0};
  auto eval = [&](const T& x, double t) {
    FieldEval<T> e = field(x, t);
    return std::make_pair(std::move(e.velocity), std::move(*e.divergence));
  };
  detail::run_steps<T>(cfg, dir, [&](double t, double h) {
    if (cfg.scheme == Scheme::euler) {
      auto [v, div] = eval(s.x, t);
      s.x = add(s.x, scale(v, h));
      s.logdet = add(s.logdet, scale(div, h));
      return;
    }
    auto [v1, d1] = eval(s.x, t);
    auto [v2, d2] = eval(add(s.x, scale(v1, h / 2)), t + h / 2);
    auto [v3, d3] = eval(add(s.x, scale(v2, h / 2)), t + h / 2);
    auto [v4, d4] = eval(add(s.x, scale(v3, h)), t + h);
    s.x = detail::combine_rk4(s.x, v1, v2, v3, v4, h);
    s.logdet = detail::combine_rk4(s.logdet, d1, d2, d3, d4, h);
  });
  return s;
}

/// Integrates a velocity field (bound as `params`) over cfg.interval.
template <typename T>
T integrate_field(const VelocityField& field, std::span<const T> params, const T& x0, const IntegratorConfig& cfg,
                  Direction dir) {
  if (!field.interval().contains(cfg.interval)) throw std::out_of_range("integrator interval exceeds field interval");
  return integrate_with<T>(
      [&](const T& x, double t) { return evaluate_field<T>(field, params, x, t, nullptr).velocity; }, x0, cfg, dir);
}

template <typename T>
AugmentedState<T> integrate_field_augmented(const VelocityField& field, std::span<const T> params, const T& x0,
                                            const IntegratorConfig& cfg, const DivergencePlan& plan, Direction dir) {
  if (!field.interval().contains(cfg.interval)) throw std::out_of_range("integrator interval exceeds field interval");
  return integrate_augmented_with<T>(
      [&](const T& x, double t) { return evaluate_field<T>(field, params, x, t, &plan); }, x0, cfg, dir);
}

/// Eager endpoint of the flow of `field` started at the rows of x0.
Tensor integrate(const VelocityField& field, const Tensor& x0, const IntegratorConfig& cfg,
                 Direction dir = Direction::forward);

/// Eager augmented integration; probes (Hutchinson) are drawn once from rng.
AugmentedState<Tensor> integrate_augmented(const VelocityField& field, const Tensor& x0, const IntegratorConfig& cfg,
                                           const DivergenceEstimator& est, Rng& rng,
                                           Direction dir = Direction::forward);

/// Mean squared displacement (1/m) sum ||x_end - x_start||^2.
double mean_squared_displacement(const Tensor& start, const Tensor& end);

}  // namespace wflow
