#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "wflow/density.hpp"
#include "wflow/flow_chain.hpp"
#include "wflow/rng.hpp"
#include "wflow/tensor.hpp"

namespace wflow {

struct MetricReport {
  std::string name;
  double value = 0.0;
  std::vector<std::size_t> sample_sizes;
  std::uint64_t seed = 0;
  std::map<std::string, double> details;  // se, bandwidth, null_sd, ...
  std::vector<std::string> flags;
  std::vector<std::pair<std::string, std::string>> config;  // echo, in insertion order

  bool flagged(const std::string& f) const;
  nlohmann::ordered_json to_json() const;
};

/// -(1/m) sum log_density(x_i) under the chain.
MetricReport nll_eval(const FlowChain& chain, const Tensor& test, const DivergenceEstimator& est, Rng& rng);

/// Frechet distance between the Gaussian moment fits of two ensembles. Flags
/// "clamped" when a covariance is rank deficient.
MetricReport gauss_fid(const Tensor& a, const Tensor& b);

/// Exact W2 between equal-size ensembles via optimal assignment; m <= 512.
MetricReport w2_exact(const Tensor& a, const Tensor& b);
constexpr std::size_t w2_max_particles = 512;

/// Minimum-cost perfect assignment on a square cost matrix. Fills
/// `row_to_col` when given. O(n^3).
double min_cost_assignment(const Eigen::MatrixXd& cost, std::vector<std::size_t>* row_to_col = nullptr);

struct MmdBandwidth {
  std::optional<double> fixed;  // empty: median heuristic
};

/// Unbiased MMD^2 with an RBF kernel exp(-|x-y|^2 / (2 h^2)). With
/// permutations > 0 also reports the permutation-null mean and sd.
MetricReport mmd_rbf(const Tensor& a, const Tensor& b, MmdBandwidth bw = {}, std::size_t permutations = 0,
                     Rng* rng = nullptr);

using LogDensityFn = std::function<Tensor(const Tensor&)>;

/// (1/m) sum (log p - log q) over samples of p with its standard error.
/// Non-finite terms are skipped and counted; more than 0.1% aborts.
MetricReport kl_mc(const LogDensityFn& log_p, const LogDensityFn& log_q, const Tensor& samples_of_p);

/// KL(N(mu_hat, Sigma_hat) || q) for the moment fit of x.
double gaussian_fit_kl(const Tensor& x, const Gaussian& q);

/// KL(N(m0, S0) || N(m1, S1)).
double gaussian_kl(const Eigen::VectorXd& m0, const Eigen::MatrixXd& s0, const Eigen::VectorXd& m1,
                   const Eigen::MatrixXd& s1);

Eigen::VectorXd sample_mean(const Tensor& x);
Eigen::MatrixXd sample_cov(const Tensor& x);

}  // namespace wflow
