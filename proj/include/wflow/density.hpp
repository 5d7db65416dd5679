#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "wflow/kernels.hpp"
#include "wflow/rng.hpp"
#include "wflow/tape.hpp"

namespace wflow {

/// Multivariate normal with full covariance.
class Gaussian {
 public:
  Gaussian() = default;
  Gaussian(Eigen::VectorXd mean, Eigen::MatrixXd cov);
  static Gaussian isotropic(Eigen::VectorXd mean, double variance);
  static Gaussian standard(std::size_t dim);

  std::size_t dim() const { return static_cast<std::size_t>(mean_.size()); }
  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::MatrixXd& cov() const { return cov_; }
  const Eigen::MatrixXd& chol() const { return chol_; }
  /// Affine whitening z = L^{-1}(x - mu) expressed as x W^T + b.
  const Tensor& whiten_weight() const { return whiten_w_; }
  const Tensor& whiten_bias() const { return whiten_b_; }
  /// -d/2 log(2 pi) - log det L.
  double log_norm() const { return log_norm_; }

 private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd cov_;
  Eigen::MatrixXd chol_;
  Tensor whiten_w_;
  Tensor whiten_b_;
  double log_norm_ = 0.0;
};

struct Mixture {
  std::vector<double> weights;
  std::vector<Gaussian> components;
};

/// Unnormalized density exp(-V) known only through its potential.
struct Potential {
  std::size_t dim = 0;
  std::string name;
  std::function<Tensor(const Tensor&)> value;  // m x d -> m x 1
  std::function<Var(const Var&)> value_on_tape;
};

/// Density with exact log-pdf, sampler and (where closed-form) score.
class AnalyticDensity {
 public:
  using Kind = std::variant<Gaussian, Mixture, Potential>;

  AnalyticDensity() = default;
  explicit AnalyticDensity(Gaussian g);
  explicit AnalyticDensity(Mixture m);
  explicit AnalyticDensity(Potential p);

  static AnalyticDensity standard_normal(std::size_t dim) { return AnalyticDensity(Gaussian::standard(dim)); }

  const Kind& kind() const { return kind_; }
  bool is_gaussian() const { return std::holds_alternative<Gaussian>(kind_); }
  bool is_mixture() const { return std::holds_alternative<Mixture>(kind_); }
  bool is_potential() const { return std::holds_alternative<Potential>(kind_); }
  const Gaussian& gaussian() const { return std::get<Gaussian>(kind_); }
  const Mixture& mixture() const { return std::get<Mixture>(kind_); }
  std::size_t dim() const;

  /// log p per row (m x 1). Potentials return -V (unnormalized).
  Tensor log_pdf(const Tensor& x) const { return log_pdf_of<Tensor>(x); }
  Var log_pdf(const Var& x) const { return log_pdf_of<Var>(x); }
  double log_pdf_point(std::span<const double> x) const;

  /// Potential V with p = exp(-V) / Z, per row. Gaussians drop the
  /// normalizer (V = |L^-1 (x - mu)|^2 / 2); mixtures use -log p.
  Tensor potential(const Tensor& x) const;
  Var potential(const Var& x) const;

  Tensor sample(std::size_t n, Rng& rng) const;
  /// grad log p per row (m x d); throws for potentials.
  Tensor score(const Tensor& x) const;

  Eigen::VectorXd mean() const;
  Eigen::MatrixXd covariance() const;

  /// Density of a * X + shift when X has this density.
  AnalyticDensity affine_transformed(double a, const Eigen::VectorXd& shift) const;

 private:
  template <typename T>
  T log_pdf_of(const T& x) const;

  Kind kind_;
};

template <typename T>
T gaussian_log_pdf(const Gaussian& g, const T& x) {
  T z = affine(x, constant_like(x, g.whiten_weight()), constant_like(x, g.whiten_bias()));
  return add_scalar(scale(row_sum(square(z)), -0.5), g.log_norm());
}

/// Potential of the standard normal, ||x||^2 / 2 per row.
template <typename T>
T half_squared_norm(const T& x) {
  return scale(row_sum(square(x)), 0.5);
}

}  // namespace wflow
