#include "wflow/density.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "wflow/errors.hpp"

namespace wflow {

Gaussian::Gaussian(Eigen::VectorXd mean, Eigen::MatrixXd cov) : mean_(std::move(mean)), cov_(std::move(cov)) {
  const auto d = mean_.size();
  if (d == 0 || cov_.rows() != d || cov_.cols() != d) throw ShapeError("Gaussian: mean/covariance size mismatch");
  Eigen::LLT<Eigen::MatrixXd> llt(cov_);
  if (llt.info() != Eigen::Success) throw std::invalid_argument("Gaussian: covariance is not positive definite");
  chol_ = llt.matrixL();
  const Eigen::MatrixXd l_inv =
      chol_.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(d, d));
  whiten_w_ = Tensor::zeros(static_cast<std::size_t>(d), static_cast<std::size_t>(d));
  whiten_b_ = Tensor::zeros(1, static_cast<std::size_t>(d));
  const Eigen::VectorXd shift = -(l_inv * mean_);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) whiten_w_(i, j) = l_inv(i, j);
    whiten_b_(0, i) = shift(i);
  }
  log_norm_ = -0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi) -
              chol_.diagonal().array().log().sum();
}

Gaussian Gaussian::isotropic(Eigen::VectorXd mean, double variance) {
  const auto d = mean.size();
  return Gaussian(std::move(mean), variance * Eigen::MatrixXd::Identity(d, d));
}

Gaussian Gaussian::standard(std::size_t dim) {
  return isotropic(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim)), 1.0);
}

AnalyticDensity::AnalyticDensity(Gaussian g) : kind_(std::move(g)) {}

AnalyticDensity::AnalyticDensity(Mixture m) {
  if (m.components.empty() || m.components.size() != m.weights.size()) {
    throw std::invalid_argument("mixture: weights and components must be nonempty and equal in number");
  }
  const double total = std::accumulate(m.weights.begin(), m.weights.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("mixture: weights must sum to 1");
  for (double w : m.weights) {
    if (!(w > 0)) throw std::invalid_argument("mixture: weights must be positive");
  }
  for (const auto& c : m.components) {
    if (c.dim() != m.components.front().dim()) throw ShapeError("mixture: component dimensions differ");
  }
  kind_ = std::move(m);
}

AnalyticDensity::AnalyticDensity(Potential p) {
  if (!p.value || p.dim == 0) throw std::invalid_argument("potential density needs a dimension and a value function");
  kind_ = std::move(p);
}

std::size_t AnalyticDensity::dim() const {
  return std::visit(
      [](const auto& k) -> std::size_t {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, Gaussian>) return k.dim();
        else if constexpr (std::is_same_v<K, Mixture>) return k.components.front().dim();
        else return k.dim;
      },
      kind_);
}

template <typename T>
T AnalyticDensity::log_pdf_of(const T& x) const {
  if (value_of(x).cols() != dim()) throw ShapeError("log_pdf: point dimension does not match density");
  if (const auto* g = std::get_if<Gaussian>(&kind_)) return gaussian_log_pdf(*g, x);
  if (const auto* p = std::get_if<Potential>(&kind_)) {
    if constexpr (std::is_same_v<T, Var>) {
      if (!p->value_on_tape) throw std::logic_error("potential '" + p->name + "' is not differentiable on a tape");
      return scale(p->value_on_tape(x), -1.0);
    } else {
      return scale(p->value(x), -1.0);
    }
  }
  const Mixture& mix = std::get<Mixture>(kind_);
  std::vector<T> terms;
  terms.reserve(mix.components.size());
  for (const auto& c : mix.components) terms.push_back(gaussian_log_pdf(c, x));
  // log-sum-exp against a per-row maximum held constant.
  const std::size_t m = value_of(x).rows();
  Tensor row_max = Tensor::filled(m, 1, -std::numeric_limits<double>::infinity());
  for (const auto& t : terms) {
    const Tensor& v = value_of(t);
    for (std::size_t i = 0; i < m; ++i) row_max(i, 0) = std::max(row_max(i, 0), v(i, 0));
  }
  T shift = constant_like(x, row_max);
  T acc = scale(exp(sub(terms[0], shift)), mix.weights[0]);
  for (std::size_t k = 1; k < terms.size(); ++k) acc = add(acc, scale(exp(sub(terms[k], shift)), mix.weights[k]));
  return add(log(acc), shift);
}

template Tensor AnalyticDensity::log_pdf_of<Tensor>(const Tensor&) const;
template Var AnalyticDensity::log_pdf_of<Var>(const Var&) const;

double AnalyticDensity::log_pdf_point(std::span<const double> x) const {
  return log_pdf(Tensor::row(x)).item();
}

Tensor AnalyticDensity::potential(const Tensor& x) const {
  if (const auto* p = std::get_if<Potential>(&kind_)) return p->value(x);
  if (const auto* g = std::get_if<Gaussian>(&kind_)) return add_scalar(scale(log_pdf(x), -1.0), g->log_norm());
  return scale(log_pdf(x), -1.0);
}

Var AnalyticDensity::potential(const Var& x) const {
  if (const auto* p = std::get_if<Potential>(&kind_)) {
    if (!p->value_on_tape) throw std::logic_error("potential '" + p->name + "' is not differentiable on a tape");
    return p->value_on_tape(x);
  }
  if (const auto* g = std::get_if<Gaussian>(&kind_)) return add_scalar(scale(log_pdf(x), -1.0), g->log_norm());
  return scale(log_pdf(x), -1.0);
}

namespace {

void sample_gaussian_into(const Gaussian& g, Rng& rng, std::span<double> out) {
  const auto d = static_cast<Eigen::Index>(g.dim());
  Eigen::VectorXd z(d);
  for (Eigen::Index j = 0; j < d; ++j) z(j) = rng.normal();
  const Eigen::VectorXd x = g.mean() + g.chol() * z;
  for (Eigen::Index j = 0; j < d; ++j) out[static_cast<std::size_t>(j)] = x(j);
}

}  // namespace

Tensor AnalyticDensity::sample(std::size_t n, Rng& rng) const {
  if (is_potential()) throw std::logic_error("no exact sampler for a potential-only density");
  const std::size_t d = dim();
  Tensor out = Tensor::zeros(n, d);
  if (const auto* g = std::get_if<Gaussian>(&kind_)) {
    for (std::size_t i = 0; i < n; ++i) sample_gaussian_into(*g, rng, out.row_span(i));
    return out;
  }
  const Mixture& mix = std::get<Mixture>(kind_);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform();
    std::size_t k = 0;
    double cum = mix.weights[0];
    while (u >= cum && k + 1 < mix.weights.size()) cum += mix.weights[++k];
    sample_gaussian_into(mix.components[k], rng, out.row_span(i));
  }
  return out;
}

Tensor AnalyticDensity::score(const Tensor& x) const {
  if (is_potential()) throw std::logic_error("score not available in closed form for a potential");
  const std::size_t m = x.rows();
  const std::size_t d = dim();
  auto component_score = [&](const Gaussian& g) {
    const Eigen::MatrixXd prec = g.cov().inverse();
    Tensor s = Tensor::zeros(m, d);
    for (std::size_t i = 0; i < m; ++i) {
      Eigen::VectorXd xi = Eigen::Map<const Eigen::VectorXd>(x.row_span(i).data(), static_cast<Eigen::Index>(d));
      Eigen::VectorXd si = -prec * (xi - g.mean());
      for (std::size_t j = 0; j < d; ++j) s(i, j) = si(static_cast<Eigen::Index>(j));
    }
    return s;
  };
  if (const auto* g = std::get_if<Gaussian>(&kind_)) return component_score(*g);
  const Mixture& mix = std::get<Mixture>(kind_);
  const Tensor total = log_pdf(x);
  Tensor out = Tensor::zeros(m, d);
  for (std::size_t k = 0; k < mix.components.size(); ++k) {
    const Tensor lk = gaussian_log_pdf(mix.components[k], x);
    const Tensor sk = component_score(mix.components[k]);
    for (std::size_t i = 0; i < m; ++i) {
      const double resp = mix.weights[k] * std::exp(lk(i, 0) - total(i, 0));
      for (std::size_t j = 0; j < d; ++j) out(i, j) += resp * sk(i, j);
    }
  }
  return out;
}

Eigen::VectorXd AnalyticDensity::mean() const {
  if (const auto* g = std::get_if<Gaussian>(&kind_)) return g->mean();
  if (is_potential()) throw std::logic_error("moments unavailable for a potential-only density");
  const Mixture& mix = std::get<Mixture>(kind_);
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim()));
  for (std::size_t k = 0; k < mix.components.size(); ++k) mu += mix.weights[k] * mix.components[k].mean();
  return mu;
}

Eigen::MatrixXd AnalyticDensity::covariance() const {
  if (const auto* g = std::get_if<Gaussian>(&kind_)) return g->cov();
  if (is_potential()) throw std::logic_error("moments unavailable for a potential-only density");
  const Mixture& mix = std::get<Mixture>(kind_);
  const Eigen::VectorXd mu = mean();
  const auto d = static_cast<Eigen::Index>(dim());
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
  for (std::size_t k = 0; k < mix.components.size(); ++k) {
    const Eigen::VectorXd dm = mix.components[k].mean() - mu;
    cov += mix.weights[k] * (mix.components[k].cov() + dm * dm.transpose());
  }
  return cov;
}

AnalyticDensity AnalyticDensity::affine_transformed(double a, const Eigen::VectorXd& shift) const {
  if (a == 0.0) throw std::invalid_argument("affine_transformed: zero scale");
  if (shift.size() != static_cast<Eigen::Index>(dim())) throw ShapeError("affine_transformed: shift dimension");
  auto map = [&](const Gaussian& g) { return Gaussian(a * g.mean() + shift, a * a * g.cov()); };
  if (const auto* g = std::get_if<Gaussian>(&kind_)) return AnalyticDensity(map(*g));
  if (is_potential()) throw std::logic_error("affine_transformed: unsupported for potentials");
  Mixture mix = std::get<Mixture>(kind_);
  for (auto& c : mix.components) c = map(c);
  return AnalyticDensity(std::move(mix));
}

}  // namespace wflow
