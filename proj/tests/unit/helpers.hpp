#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "wflow/flow_chain.hpp"
#include "wflow/velocity_field.hpp"

namespace wflow::testing {

/// Field v(x, t) = A x + c * t/scale + b as a single identity layer.
inline VelocityField affine_field(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, TimeInterval iv = {0.0, 1.0},
                                  double time_scale = 1.0, const Eigen::VectorXd& c = Eigen::VectorXd()) {
  const auto d = a.rows();
  DenseLayer layer;
  layer.weight = Tensor::zeros(static_cast<std::size_t>(d), static_cast<std::size_t>(d + 1));
  layer.bias = Tensor::zeros(1, static_cast<std::size_t>(d));
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) layer.weight(i, j) = a(i, j);
    if (c.size() == d) layer.weight(i, d) = c(i);
    layer.bias(0, i) = b(i);
  }
  layer.activation = Activation::identity;
  return VelocityField(static_cast<std::size_t>(d), Mlp({layer}), iv, time_scale);
}

inline FlowBlock make_block(VelocityField f, std::uint32_t steps = 32, Scheme scheme = Scheme::rk4) {
  const TimeInterval iv = f.interval();
  return FlowBlock{std::move(f), IntegratorConfig{scheme, steps, iv}, false};
}

/// Chain of time-constant affine blocks on [n, n + 1].
inline FlowChain affine_chain(const std::vector<Eigen::MatrixXd>& as, const std::vector<Eigen::VectorXd>& bs,
                              AnalyticDensity base, std::uint32_t steps = 32) {
  std::vector<FlowBlock> blocks;
  for (std::size_t n = 0; n < as.size(); ++n) {
    TimeInterval iv{static_cast<double>(n), static_cast<double>(n + 1)};
    blocks.push_back(make_block(affine_field(as[n], bs[n], iv, static_cast<double>(as.size())), steps));
  }
  return FlowChain(std::move(blocks), std::move(base));
}

/// Random field with a non-zero output layer.
inline VelocityField random_field(std::size_t d, std::vector<std::size_t> widths, std::uint64_t seed,
                                  double output_scale = 1.0, TimeInterval iv = {0.0, 1.0}) {
  Mlp net = Mlp::init(d + 1, widths, d, Activation::tanh, seed, false);
  for (double& w : net.layers().back().weight.data()) w *= output_scale;
  return VelocityField(d, std::move(net), iv, iv.end);
}

/// Closed-form KL(N(m0, S0) || N(m1, S1)).
inline double gaussian_kl(const Eigen::VectorXd& m0, const Eigen::MatrixXd& s0, const Eigen::VectorXd& m1,
                          const Eigen::MatrixXd& s1) {
  const double d = static_cast<double>(m0.size());
  const Eigen::MatrixXd s1_inv = s1.inverse();
  const Eigen::VectorXd dm = m1 - m0;
  return 0.5 * ((s1_inv * s0).trace() + dm.dot(s1_inv * dm) - d + std::log(s1.determinant() / s0.determinant()));
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a[k] - b[k]));
  return m;
}

}  // namespace wflow::testing
