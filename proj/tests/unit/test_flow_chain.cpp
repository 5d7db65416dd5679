#include <cmath>
#include <numbers>
#include <sstream>

#include <gtest/gtest.h>
#include <unsupported/Eigen/MatrixFunctions>

#include "helpers.hpp"
#include "wflow/datasets.hpp"
#include "wflow/errors.hpp"
#include "wflow/flow_chain.hpp"

using namespace wflow;
using wflow::testing::affine_chain;
using wflow::testing::gaussian_kl;
using wflow::testing::make_block;
using wflow::testing::max_abs_diff;
using wflow::testing::random_field;

namespace {

Eigen::MatrixXd mat1(double v) { return Eigen::MatrixXd::Constant(1, 1, v); }
Eigen::VectorXd vec1(double v) { return Eigen::VectorXd::Constant(1, v); }

FlowChain scaling_chain() { return affine_chain({mat1(-1.0)}, {vec1(0.0)}, AnalyticDensity::standard_normal(1), 64); }

// Exact flow of x' = A x + b over unit time: x -> M x + c via the augmented
// matrix exponential.
std::pair<Eigen::MatrixXd, Eigen::VectorXd> affine_flow(const Eigen::MatrixXd& a, const Eigen::VectorXd& b) {
  const auto d = a.rows();
  Eigen::MatrixXd aug = Eigen::MatrixXd::Zero(d + 1, d + 1);
  aug.topLeftCorner(d, d) = a;
  aug.topRightCorner(d, 1) = b;
  const Eigen::MatrixXd e = aug.exp();
  return {e.topLeftCorner(d, d), e.topRightCorner(d, 1)};
}

// Random chain with small non-zero weights and contiguous unit blocks.
FlowChain random_chain(std::size_t d, std::size_t n_blocks, std::uint64_t seed, AnalyticDensity base) {
  std::vector<FlowBlock> blocks;
  for (std::size_t n = 0; n < n_blocks; ++n) {
    VelocityField f = random_field(d, {8}, seed + n, 0.5, {double(n), double(n + 1)});
    blocks.push_back(make_block(std::move(f), 32));
  }
  return FlowChain(std::move(blocks), std::move(base));
}

}  // namespace

TEST(FlowChain, MakeBuildsContiguousNearIdentityBlocks) {
  ChainArchitecture arch;
  arch.dim = 2;
  arch.blocks = 3;
  arch.block_length = 0.5;
  arch.hidden = {8};
  FlowChain chain = FlowChain::make(arch, AnalyticDensity::standard_normal(2), 4);
  ASSERT_EQ(chain.size(), 3u);
  EXPECT_DOUBLE_EQ(chain.horizon(), 1.5);
  for (std::size_t n = 0; n < 3; ++n) {
    EXPECT_DOUBLE_EQ(chain.block(n).field.interval().begin, 0.5 * n);
    EXPECT_DOUBLE_EQ(chain.block(n).integrator.interval.end, 0.5 * (n + 1));
  }
  Rng rng(1);
  const Tensor x = rng.normal_tensor(10, 2);
  EXPECT_EQ(forward_map(chain, ParticleEnsemble(x)).positions, x);
  EXPECT_EQ(inverse_map(chain, ParticleEnsemble(x)).positions, x);
  EXPECT_EQ(chain.parameter_offsets().back(), chain.parameters().size());
}

TEST(FlowChain, RejectsGapsAndMismatchedDimensions) {
  std::vector<FlowBlock> gap;
  gap.push_back(make_block(random_field(2, {4}, 1, 1.0, {0.0, 1.0})));
  gap.push_back(make_block(random_field(2, {4}, 2, 1.0, {1.5, 2.0})));
  EXPECT_THROW(FlowChain(gap, AnalyticDensity::standard_normal(2)), std::invalid_argument);

  std::vector<FlowBlock> late;
  late.push_back(make_block(random_field(2, {4}, 1, 1.0, {0.5, 1.0})));
  EXPECT_THROW(FlowChain(late, AnalyticDensity::standard_normal(2)), std::invalid_argument);

  std::vector<FlowBlock> dims;
  dims.push_back(make_block(random_field(2, {4}, 1, 1.0, {0.0, 1.0})));
  dims.push_back(make_block(random_field(3, {4}, 2, 1.0, {1.0, 2.0})));
  EXPECT_THROW(FlowChain(dims, AnalyticDensity::standard_normal(2)), ShapeError);

  FlowChain ok = random_chain(2, 1, 3, AnalyticDensity::standard_normal(2));
  EXPECT_THROW(forward_map(ok, ParticleEnsemble(Tensor::zeros(3, 3))), ShapeError);
}

TEST(ForwardMap, ScalingBlock) {
  FlowChain chain = scaling_chain();
  const Tensor x = Tensor::from_rows(3, 1, {1.0, -2.0, 0.5});
  const Tensor y = forward_map(chain, ParticleEnsemble(x)).positions;
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(y(i, 0), x(i, 0) * std::exp(-1.0), 1e-9);
  const Tensor back = inverse_map(chain, ParticleEnsemble(x)).positions;
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(back(i, 0), x(i, 0) * std::exp(1.0), 1e-8);
}

TEST(ForwardMap, RoundTripOnRandomChains) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    FlowChain chain = random_chain(2, 3, 10 * seed, AnalyticDensity::standard_normal(2));
    Rng rng(seed);
    const Tensor x = rng.normal_tensor(40, 2);
    const ParticleEnsemble y = forward_map(chain, ParticleEnsemble(x));
    EXPECT_EQ(y.size(), x.rows());
    EXPECT_GT(max_abs_diff(x, y.positions), 0.05);
    EXPECT_LE(max_abs_diff(inverse_map(chain, y).positions, x), 1e-6) << "seed " << seed;
    EXPECT_LE(max_abs_diff(forward_map(chain, inverse_map(chain, ParticleEnsemble(x))).positions, x), 1e-6);
  }
}

TEST(ForwardMap, LogDensityAccumulatorFollowsChangeOfVariables) {
  FlowChain chain = scaling_chain();
  ParticleEnsemble e(Tensor::from_rows(2, 1, {0.3, -0.7}));
  e.log_density = Tensor::from_rows(2, 1, {-1.0, -2.0});
  Rng rng(0);
  // Pushforward density: log p_Y(y) = log p_X(x) - log|det dF|, det = e^{-1}.
  const ParticleEnsemble y = forward_map(chain, e, DivergenceEstimator::exact(), rng);
  ASSERT_TRUE(y.log_density.has_value());
  EXPECT_NEAR((*y.log_density)(0, 0), 0.0, 1e-6);
  EXPECT_NEAR((*y.log_density)(1, 0), -1.0, 1e-6);
  const ParticleEnsemble back = inverse_map(chain, y, DivergenceEstimator::exact(), rng);
  EXPECT_LE(max_abs_diff(*back.log_density, *e.log_density), 1e-9);
}

TEST(PushThrough, MatchesBlockRanges) {
  FlowChain chain = random_chain(2, 3, 7, AnalyticDensity::standard_normal(2));
  Rng rng(2);
  const Tensor x = rng.normal_tensor(5, 2);
  const Tensor mid = push_through(chain, x, 0, 2);
  EXPECT_EQ(push_through(chain, mid, 2, 3), forward_map(chain, ParticleEnsemble(x)).positions);
  EXPECT_EQ(push_through(chain, x, 1, 1), x);
}

TEST(LogDensity, IdentityChainIsBaseDensity) {
  ChainArchitecture arch;
  arch.hidden = {4};
  FlowChain chain = FlowChain::make(arch, AnalyticDensity::standard_normal(2), 0);
  Rng rng(0);
  const std::vector<double> origin{0.0, 0.0};
  EXPECT_NEAR(log_density(chain, origin, DivergenceEstimator::exact(), rng), -std::log(2 * std::numbers::pi), 1e-14);
}

TEST(LogDensity, ScalingBlockAtOrigin) {
  FlowChain chain = scaling_chain();
  Rng rng(0);
  const std::vector<double> origin{0.0};
  EXPECT_NEAR(log_density(chain, origin, DivergenceEstimator::exact(), rng),
              -0.5 * std::log(2 * std::numbers::pi) - 1.0, 1e-9);
}

TEST(LogDensity, AffineChainMatchesClosedFormPushforward) {
  Eigen::MatrixXd a0(2, 2), a1(2, 2);
  a0 << -0.4, 0.3, -0.2, 0.1;
  a1 << 0.2, -0.5, 0.6, -0.3;
  Eigen::VectorXd b0(2), b1(2);
  b0 << 0.5, -0.2;
  b1 << -0.1, 0.4;
  FlowChain chain = affine_chain({a0, a1}, {b0, b1}, AnalyticDensity::standard_normal(2));
  auto [m0, c0] = affine_flow(a0, b0);
  auto [m1, c1] = affine_flow(a1, b1);
  const Eigen::MatrixXd m = m1 * m0;
  const Eigen::VectorXd c = m1 * c0 + c1;
  // F(x) = M x + c pushes p to N(0, I), so p = N(-M^-1 c, M^-1 M^-T).
  const Eigen::MatrixXd mi = m.inverse();
  Gaussian p(-mi * c, mi * mi.transpose());
  Rng rng(3);
  const Tensor x = rng.normal_tensor(20, 2);
  const Tensor lp = log_density(chain, x, DivergenceEstimator::exact(), rng);
  const Tensor oracle = AnalyticDensity(p).log_pdf(x);
  EXPECT_LE(max_abs_diff(lp, oracle), 1e-4);
}

TEST(LogDensity, HutchinsonIsUnbiasedOnAffineChain) {
  Eigen::MatrixXd a(3, 3);
  a << -0.3, 0.4, 0.1, 0.2, -0.1, -0.3, 0.0, 0.5, 0.2;
  FlowChain chain = affine_chain({a}, {Eigen::VectorXd::Zero(3)}, AnalyticDensity::standard_normal(3), 8);
  Rng rng(5);
  const Tensor x = Tensor::zeros(4000, 3);
  const Tensor exact = log_density(chain, x, DivergenceEstimator::exact(), rng);
  const Tensor est = log_density(chain, x, DivergenceEstimator::hutchinson(1), rng);
  double diff = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double e = est(i, 0) - exact(i, 0);
    diff += e;
    sq += e * e;
  }
  const double n = static_cast<double>(x.rows());
  const double se = std::sqrt((sq / n - std::pow(diff / n, 2)) / n);
  EXPECT_LT(std::abs(diff / n), 3 * se + 1e-12);
}

TEST(LogDensity, DataProcessingEqualityForAffineChain) {
  Eigen::MatrixXd a0(2, 2), a1(2, 2);
  a0 << 0.3, -0.7, 0.4, -0.2;
  a1 << -0.6, 0.1, 0.2, 0.5;
  Eigen::VectorXd b0(2), b1(2);
  b0 << 1.0, 0.0;
  b1 << -0.5, 0.3;
  FlowChain chain = affine_chain({a0, a1}, {b0, b1}, AnalyticDensity::standard_normal(2), 16);
  // Read the affine map off the integrated chain.
  const Tensor probe = Tensor::from_rows(3, 2, {0, 0, 1, 0, 0, 1});
  const Tensor img = forward_map(chain, ParticleEnsemble(probe)).positions;
  Eigen::Vector2d c(img(0, 0), img(0, 1));
  Eigen::Matrix2d m;
  m << img(1, 0) - c(0), img(2, 0) - c(0), img(1, 1) - c(1), img(2, 1) - c(1);

  Eigen::Vector2d mp(1.0, -0.5), mq(-0.3, 0.8);
  Eigen::Matrix2d sp, sq;
  sp << 1.5, 0.3, 0.3, 0.7;
  sq << 0.8, -0.2, -0.2, 1.2;
  const double before = gaussian_kl(mp, sp, mq, sq);
  const double after = gaussian_kl(m * mp + c, m * sp * m.transpose(), m * mq + c, m * sq * m.transpose());
  EXPECT_NEAR(after / before, 1.0, 1e-6);
}

TEST(LogDensity, NormalizesOnOneDimensionalGrid) {
  FlowChain chain = random_chain(1, 2, 91, AnalyticDensity::standard_normal(1));
  const std::size_t n = 4001;
  const double lo = -12.0, hi = 12.0, h = (hi - lo) / (n - 1);
  Tensor grid = Tensor::zeros(n, 1);
  for (std::size_t i = 0; i < n; ++i) grid(i, 0) = lo + h * i;
  Rng rng(0);
  const Tensor lp = log_density(chain, grid, DivergenceEstimator::exact(), rng);
  double mass = 0.0;
  for (std::size_t i = 0; i < n; ++i) mass += std::exp(lp(i, 0)) * h;
  EXPECT_NEAR(mass, 1.0, 0.02);
}

TEST(LogDensity, NormalizesOnTwoDimensionalGrid) {
  FlowChain chain = random_chain(2, 2, 17, AnalyticDensity::standard_normal(2));
  const std::size_t n = 121;
  const double lo = -7.0, hi = 7.0, h = (hi - lo) / (n - 1);
  Tensor grid = Tensor::zeros(n * n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      grid(i * n + j, 0) = lo + h * i;
      grid(i * n + j, 1) = lo + h * j;
    }
  }
  Rng rng(0);
  const Tensor lp = log_density(chain, grid, DivergenceEstimator::exact(), rng);
  double mass = 0.0;
  for (std::size_t k = 0; k < grid.rows(); ++k) mass += std::exp(lp(k, 0)) * h * h;
  EXPECT_NEAR(mass, 1.0, 0.02);
}

TEST(Sample, IdentityChainIsStandardNormal) {
  ChainArchitecture arch;
  arch.hidden = {4};
  FlowChain chain = FlowChain::make(arch, AnalyticDensity::standard_normal(2), 0);
  Rng rng(12);
  const std::size_t n = 100000;
  const Eigen::MatrixXd x = sample(chain, n, rng).positions.matrix();
  const Eigen::RowVectorXd mu = x.colwise().mean();
  EXPECT_LE(mu.cwiseAbs().maxCoeff(), 4.0 / std::sqrt(double(n)));
  const Eigen::MatrixXd c = (x.rowwise() - mu).transpose() * (x.rowwise() - mu) / (n - 1.0);
  EXPECT_LE((c - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff(), 0.02);
}

TEST(Sample, DeterministicGivenSeed) {
  FlowChain chain = random_chain(2, 2, 5, AnalyticDensity::standard_normal(2));
  Rng a(9), b(9);
  EXPECT_EQ(sample(chain, 50, a).positions, sample(chain, 50, b).positions);
}

TEST(Sample, ScalingBlockVarianceIsESquared) {
  FlowChain chain = scaling_chain();
  Rng rng(4);
  const std::size_t n = 200000;
  const Tensor x = sample(chain, n, rng).positions;
  double s = 0.0, ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    s += x(i, 0);
    ss += x(i, 0) * x(i, 0);
  }
  const double var = ss / n - std::pow(s / n, 2);
  // sd of the sample variance is e^2 sqrt(2/n) ~ 0.023.
  EXPECT_NEAR(var, std::exp(2.0), 0.1);
}

namespace {

std::string checkpoint_bytes(const FlowChain& chain) {
  std::ostringstream os;
  save_checkpoint(chain, os);
  return os.str();
}

FlowChain load_bytes(const std::string& bytes) {
  std::istringstream is(bytes);
  return load_checkpoint(is);
}

std::string error_of(const std::string& bytes) {
  try {
    load_bytes(bytes);
  } catch (const FormatError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitIdentical) {
  FlowChain chain = random_chain(2, 3, 33, fig10_q());
  chain.block(1).trained = true;
  const FlowChain back = load_bytes(checkpoint_bytes(chain));
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back.parameters(), chain.parameters());
  for (std::size_t n = 0; n < 3; ++n) {
    EXPECT_EQ(back.block(n).integrator.steps, chain.block(n).integrator.steps);
    EXPECT_EQ(back.block(n).integrator.scheme, chain.block(n).integrator.scheme);
    EXPECT_EQ(back.block(n).field.interval().begin, chain.block(n).field.interval().begin);
    EXPECT_EQ(back.block(n).field.time_scale(), chain.block(n).field.time_scale());
    EXPECT_EQ(back.block(n).trained, chain.block(n).trained);
  }
  Rng rng(1);
  const Tensor x = rng.normal_tensor(10, 2);
  EXPECT_EQ(forward_map(back, ParticleEnsemble(x)).positions, forward_map(chain, ParticleEnsemble(x)).positions);
  EXPECT_EQ(back.base().log_pdf(x), chain.base().log_pdf(x));
  EXPECT_EQ(checkpoint_bytes(back), checkpoint_bytes(chain));
}

TEST(Checkpoint, GaussianBaseRoundTrip) {
  Eigen::MatrixXd cov(2, 2);
  cov << 2.0, 0.3, 0.3, 0.5;
  FlowChain chain = random_chain(2, 1, 3, AnalyticDensity(Gaussian(Eigen::Vector2d(1.0, -1.0), cov)));
  const FlowChain back = load_bytes(checkpoint_bytes(chain));
  EXPECT_EQ(back.base().gaussian().cov(), cov);
}

TEST(Checkpoint, FileRoundTrip) {
  FlowChain chain = random_chain(1, 2, 8, AnalyticDensity::standard_normal(1));
  const std::string path = ::testing::TempDir() + "/wflow_chain.wflw";
  save_checkpoint(chain, path);
  EXPECT_EQ(load_checkpoint(path).parameters(), chain.parameters());
  EXPECT_THROW(load_checkpoint(path + ".missing"), FormatError);
}

TEST(Checkpoint, CorruptedByteFailsChecksum) {
  std::string bytes = checkpoint_bytes(random_chain(2, 2, 1, AnalyticDensity::standard_normal(2)));
  bytes[bytes.size() / 2] ^= 0x10;
  EXPECT_NE(error_of(bytes).find("checksum"), std::string::npos) << error_of(bytes);
}

TEST(Checkpoint, FutureVersionRejected) {
  std::string bytes = checkpoint_bytes(random_chain(2, 1, 1, AnalyticDensity::standard_normal(2)));
  bytes[4] = static_cast<char>(kCheckpointVersion + 1);
  EXPECT_NE(error_of(bytes).find("unsupported checkpoint version 2"), std::string::npos) << error_of(bytes);
}

TEST(Checkpoint, TruncationAndBadMagicRejected) {
  const std::string bytes = checkpoint_bytes(random_chain(2, 1, 1, AnalyticDensity::standard_normal(2)));
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{9}, bytes.size() / 2, bytes.size() - 1}) {
    EXPECT_FALSE(error_of(bytes.substr(0, cut)).empty()) << "cut " << cut;
  }
  std::string magic = bytes;
  magic[0] = 'X';
  EXPECT_NE(error_of(magic).find("bad magic"), std::string::npos);
  EXPECT_NE(error_of(bytes + "junk").find("trailing"), std::string::npos);
}
