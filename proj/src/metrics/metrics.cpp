#include "wflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "wflow/errors.hpp"

namespace wflow {

namespace {

using Matrix = Eigen::MatrixXd;

Matrix as_matrix(const Tensor& x) { return x.matrix(); }

// |a_i - b_j|^2 for all pairs.
Matrix sq_dists(const Matrix& a, const Matrix& b) {
  const Eigen::VectorXd na = a.rowwise().squaredNorm(), nb = b.rowwise().squaredNorm();
  Matrix d = (-2.0 * a * b.transpose()).colwise() + na;
  d.rowwise() += nb.transpose();
  return d.cwiseMax(0.0);
}

// Symmetric PSD square root with eigenvalues clamped at zero.
Matrix psd_sqrt(const Matrix& s, bool* clamped) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(s);
  Eigen::VectorXd lam = es.eigenvalues();
  const double tol = 1e-12 * std::max(1.0, lam.cwiseAbs().maxCoeff());
  for (Eigen::Index k = 0; k < lam.size(); ++k) {
    if (lam(k) <= tol) {
      *clamped = true;
      lam(k) = std::max(lam(k), 0.0);
    }
  }
  return es.eigenvectors() * lam.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

void require_rows(const Tensor& x, std::size_t n, const char* what) {
  if (x.rows() < n) {
    std::ostringstream msg;
    msg << what << ": need at least " << n << " particles, got " << x.rows();
    throw std::invalid_argument(msg.str());
  }
}

}  // namespace

bool MetricReport::flagged(const std::string& f) const {
  return std::find(flags.begin(), flags.end(), f) != flags.end();
}

nlohmann::ordered_json MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["name"] = name;
  j["value"] = value;
  j["sample_sizes"] = sample_sizes;
  j["seed"] = seed;
  nlohmann::ordered_json d = nlohmann::ordered_json::object();
  for (const auto& [k, v] : details) d[k] = v;
  j["details"] = d;
  j["flags"] = flags;
  nlohmann::ordered_json c = nlohmann::ordered_json::object();
  for (const auto& [k, v] : config) c[k] = v;
  j["config"] = c;
  return j;
}

Eigen::VectorXd sample_mean(const Tensor& x) {
  require_rows(x, 1, "sample_mean");
  return as_matrix(x).colwise().mean().transpose();
}

Eigen::MatrixXd sample_cov(const Tensor& x) {
  require_rows(x, 2, "sample_cov");
  const Matrix m = as_matrix(x);
  const Matrix c = m.rowwise() - m.colwise().mean();
  return (c.transpose() * c) / static_cast<double>(m.rows() - 1);
}

MetricReport nll_eval(const FlowChain& chain, const Tensor& test, const DivergenceEstimator& est, Rng& rng) {
  require_rows(test, 1, "nll_eval");
  if (test.cols() != chain.dim()) throw ShapeError("nll_eval: dimension mismatch");
  const Tensor lp = log_density(chain, test, est, rng);
  double s = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < lp.rows(); ++i) {
    const double v = lp(i, 0);
    if (!std::isfinite(v)) {
      std::ostringstream msg;
      msg << "nll_eval: non-finite log-density at test point " << i;
      throw NumericError(msg.str());
    }
    s += v;
    s2 += v * v;
  }
  const double m = static_cast<double>(lp.rows());
  MetricReport r;
  r.name = "nll";
  r.value = -s / m;
  r.sample_sizes = {lp.rows()};
  r.seed = rng.seed();
  if (lp.rows() > 1) r.details["se"] = std::sqrt(std::max(0.0, (s2 - s * s / m) / (m - 1)) / m);
  r.flags.push_back("test-set-disjointness-unchecked");
  return r;
}

MetricReport gauss_fid(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) throw ShapeError("gauss_fid: dimension mismatch");
  require_rows(a, a.cols() + 1, "gauss_fid");
  require_rows(b, b.cols() + 1, "gauss_fid");
  const Eigen::VectorXd mu_a = sample_mean(a), mu_b = sample_mean(b);
  const Matrix sa = sample_cov(a), sb = sample_cov(b);
  bool clamped = false;
  const Matrix ra = psd_sqrt(sa, &clamped);
  const Matrix inner = ra * sb * ra;
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  double tr_sqrt = 0.0;
  const double tol = 1e-12 * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  for (Eigen::Index k = 0; k < es.eigenvalues().size(); ++k) {
    const double lam = es.eigenvalues()(k);
    if (lam <= tol) clamped = true;
    tr_sqrt += std::sqrt(std::max(lam, 0.0));
  }
  // sb rank deficiency shows up in the product only when sa is full rank.
  bool sb_clamped = false;
  psd_sqrt(sb, &sb_clamped);
  clamped = clamped || sb_clamped;

  MetricReport r;
  r.name = "gauss_fid";
  r.value = std::max(0.0, (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_sqrt);
  r.sample_sizes = {a.rows(), b.rows()};
  if (clamped) r.flags.push_back("clamped");
  return r;
}

MetricReport w2_exact(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) {
    std::ostringstream msg;
    msg << "w2_exact: particle counts differ (" << a.rows() << " vs " << b.rows() << ")";
    throw ShapeError(msg.str());
  }
  if (a.cols() != b.cols()) throw ShapeError("w2_exact: dimension mismatch");
  require_rows(a, 1, "w2_exact");
  if (a.rows() > w2_max_particles) {
    std::ostringstream msg;
    msg << "w2_exact: at most " << w2_max_particles << " particles, got " << a.rows();
    throw std::invalid_argument(msg.str());
  }
  const double total = min_cost_assignment(sq_dists(as_matrix(a), as_matrix(b)));
  MetricReport r;
  r.name = "w2_exact";
  r.value = std::sqrt(std::max(0.0, total / static_cast<double>(a.rows())));
  r.sample_sizes = {a.rows(), b.rows()};
  r.details["min_mean_cost"] = total / static_cast<double>(a.rows());
  return r;
}

namespace {

// Unbiased MMD^2 from the pooled kernel matrix; the first `na` indices of
// `idx` form sample a.
double mmd_from_kernel(const Matrix& k, const std::vector<std::size_t>& idx, std::size_t na) {
  const std::size_t n = idx.size(), nb = n - na;
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = k(idx[i], idx[j]);
      if (j < na) saa += v;
      else if (i >= na) sbb += v;
      else sab += v;
    }
  }
  return 2.0 * saa / (double(na) * double(na - 1)) + 2.0 * sbb / (double(nb) * double(nb - 1)) -
         2.0 * sab / (double(na) * double(nb));
}

}  // namespace

MetricReport mmd_rbf(const Tensor& a, const Tensor& b, MmdBandwidth bw, std::size_t permutations, Rng* rng) {
  if (a.cols() != b.cols()) throw ShapeError("mmd_rbf: dimension mismatch");
  require_rows(a, 2, "mmd_rbf");
  require_rows(b, 2, "mmd_rbf");
  if (permutations > 0 && !rng) throw std::invalid_argument("mmd_rbf: permutation null needs an rng");
  const std::size_t na = a.rows(), n = na + b.rows();
  Matrix pooled(n, a.cols());
  pooled << as_matrix(a), as_matrix(b);
  const Matrix d2 = sq_dists(pooled, pooled);

  MetricReport r;
  r.name = "mmd_rbf";
  r.sample_sizes = {a.rows(), b.rows()};
  double h = 0.0;
  if (bw.fixed) {
    if (!(*bw.fixed > 0)) throw std::invalid_argument("mmd_rbf: bandwidth must be positive");
    h = *bw.fixed;
  } else {
    std::vector<double> dist;
    dist.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) dist.push_back(std::sqrt(d2(i, j)));
    auto mid = dist.begin() + static_cast<std::ptrdiff_t>(dist.size() / 2);
    std::nth_element(dist.begin(), mid, dist.end());
    h = *mid;
    if (!(h > 0)) {
      h = 1.0;
      r.flags.push_back("bandwidth-fallback");
    }
  }
  r.details["bandwidth"] = h;
  const Matrix k = (-d2 / (2.0 * h * h)).array().exp().matrix();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  r.value = mmd_from_kernel(k, idx, na);
  if (permutations > 0) {
    double s = 0.0, s2 = 0.0;
    std::size_t exceed = 0;
    for (std::size_t p = 0; p < permutations; ++p) {
      const double v = mmd_from_kernel(k, rng->permutation(n), na);
      s += v;
      s2 += v * v;
      exceed += v >= r.value;
    }
    const double m = static_cast<double>(permutations);
    r.details["null_mean"] = s / m;
    r.details["null_sd"] = permutations > 1 ? std::sqrt(std::max(0.0, (s2 - s * s / m) / (m - 1))) : 0.0;
    r.details["p_value"] = (1.0 + double(exceed)) / (1.0 + m);
    r.details["permutations"] = m;
    r.seed = rng->seed();
  }
  return r;
}

MetricReport kl_mc(const LogDensityFn& log_p, const LogDensityFn& log_q, const Tensor& samples_of_p) {
  require_rows(samples_of_p, 2, "kl_mc");
  const Tensor lp = log_p(samples_of_p), lq = log_q(samples_of_p);
  const std::size_t m = samples_of_p.rows();
  if (lp.rows() != m || lq.rows() != m || lp.cols() != 1 || lq.cols() != 1) {
    throw ShapeError("kl_mc: log-densities must return one value per sample");
  }
  double s = 0.0, s2 = 0.0;
  std::size_t bad = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double t = lp(i, 0) - lq(i, 0);
    if (!std::isfinite(t)) {
      ++bad;
      continue;
    }
    s += t;
    s2 += t * t;
  }
  if (double(bad) > 1e-3 * double(m)) {
    std::ostringstream msg;
    msg << "kl_mc: " << bad << " of " << m << " log-ratio terms are non-finite";
    throw NumericError(msg.str());
  }
  const double n = static_cast<double>(m - bad);
  MetricReport r;
  r.name = "kl_mc";
  r.value = s / n;
  r.sample_sizes = {m};
  r.details["se"] = std::sqrt(std::max(0.0, (s2 - s * s / n) / (n - 1)) / n);
  r.details["nonfinite"] = static_cast<double>(bad);
  if (bad > 0) r.flags.push_back("nonfinite-terms-skipped");
  return r;
}

double gaussian_kl(const Eigen::VectorXd& m0, const Eigen::MatrixXd& s0, const Eigen::VectorXd& m1,
                   const Eigen::MatrixXd& s1) {
  const Eigen::LLT<Matrix> l0(s0), l1(s1);
  if (l0.info() != Eigen::Success || l1.info() != Eigen::Success) {
    throw NumericError("gaussian_kl: covariance is not positive definite");
  }
  const double d = static_cast<double>(m0.size());
  const Eigen::VectorXd dm = m1 - m0;
  const double logdet0 = 2.0 * l0.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double logdet1 = 2.0 * l1.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return 0.5 * ((l1.solve(s0)).trace() + dm.dot(l1.solve(dm)) - d + logdet1 - logdet0);
}

double gaussian_fit_kl(const Tensor& x, const Gaussian& q) {
  if (x.cols() != q.dim()) throw ShapeError("gaussian_fit_kl: dimension mismatch");
  return gaussian_kl(sample_mean(x), sample_cov(x), q.mean(), q.cov());
}

}  // namespace wflow
