#include <cmath>
#include <numbers>
#include <sstream>

#include <gtest/gtest.h>

#include "helpers.hpp"
#include "wflow/gradcheck.hpp"
#include "wflow/losses.hpp"
#include "wflow/training.hpp"

using namespace wflow;
using wflow::testing::affine_field;
using wflow::testing::make_block;
using wflow::testing::max_abs_diff;
using wflow::testing::random_field;

namespace {

const double kLog2Pi = std::log(2 * std::numbers::pi);

FlowChain identity_chain(std::size_t d, std::size_t blocks = 1) {
  ChainArchitecture arch;
  arch.dim = d;
  arch.blocks = blocks;
  arch.hidden = {4};
  arch.steps = 8;
  return FlowChain::make(arch, AnalyticDensity::standard_normal(d), 1);
}

FlowChain small_chain(std::size_t d, std::size_t blocks, std::size_t width, std::uint32_t steps, std::uint64_t seed) {
  ChainArchitecture arch;
  arch.dim = d;
  arch.blocks = blocks;
  arch.hidden = {width};
  arch.steps = steps;
  return FlowChain::make(arch, AnalyticDensity::standard_normal(d), seed);
}

// Mean and variance of a 1D sample.
std::pair<double, double> moments(const Tensor& x) {
  double s = 0, ss = 0;
  const double n = static_cast<double>(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    s += x(i, 0);
    ss += x(i, 0) * x(i, 0);
  }
  return {s / n, ss / n - (s / n) * (s / n)};
}

// KL(N(m, v) || N(0, 1)).
double kl_to_standard(double m, double v) { return 0.5 * (v + m * m - 1.0 - std::log(v)); }

}  // namespace

TEST(Interpolant, EndpointIdentities) {
  Rng rng(1);
  const Tensor x0 = rng.normal_tensor(6, 3), x1 = rng.normal_tensor(6, 3);
  for (InterpolantKind k : {InterpolantKind::linear, InterpolantKind::trig}) {
    Interpolant in{k};
    EXPECT_LE(max_abs_diff(in.at(x0, x1, Tensor::zeros(6, 1)), x0), 1e-15);
    EXPECT_LE(max_abs_diff(in.at(x0, x1, Tensor::filled(6, 1, 1.0)), x1), 1e-15);
  }
}

TEST(Interpolant, RateIsTimeDerivative) {
  Rng rng(2);
  const Tensor x0 = rng.normal_tensor(4, 2), x1 = rng.normal_tensor(4, 2);
  const Tensor s = Tensor::from_rows(4, 1, {0.1, 0.35, 0.6, 0.95});
  for (InterpolantKind k : {InterpolantKind::linear, InterpolantKind::trig}) {
    Interpolant in{k};
    const double h = 1e-6;
    Tensor sp = s, sm = s;
    for (std::size_t i = 0; i < 4; ++i) {
      sp(i, 0) += h;
      sm(i, 0) -= h;
    }
    const Tensor fd = scale(sub(in.at(x0, x1, sp), in.at(x0, x1, sm)), 1.0 / (2 * h));
    EXPECT_LE(max_abs_diff(fd, in.rate(x0, x1, s)), 1e-8);
  }
  EXPECT_EQ(parse_interpolant("trig"), InterpolantKind::trig);
  EXPECT_THROW(parse_interpolant("cubic"), std::invalid_argument);
}

TEST(NllLoss, IdentityChainAtOrigin) {
  for (std::size_t d : {1u, 2u, 5u}) {
    Rng rng(0);
    const LossEval l = nll_loss(identity_chain(d), Tensor::zeros(7, d), DivergenceEstimator::exact(), rng);
    EXPECT_NEAR(l.value, 0.5 * d * kLog2Pi, 1e-13);
  }
}

TEST(NllLoss, IdentityChainAtPlusMinusOne) {
  Rng rng(0);
  const LossEval l = nll_loss(identity_chain(1), Tensor::from_rows(2, 1, {1.0, -1.0}), DivergenceEstimator::exact(), rng);
  EXPECT_NEAR(l.value, 0.5 * kLog2Pi + 0.5, 1e-13);
}

TEST(NllLoss, GradientPassesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    // d = 2, two blocks of width 5: 2 * (15 + 5 + 10 + 2) = 64 parameters.
    std::vector<FlowBlock> blocks;
    for (std::size_t n = 0; n < 2; ++n) {
      blocks.push_back(make_block(random_field(2, {5}, seed * 7 + n, 0.5, {double(n), double(n + 1)}), 6));
    }
    FlowChain chain(std::move(blocks), AnalyticDensity::standard_normal(2));
    Rng rng(seed);
    const Tensor batch = rng.normal_tensor(6, 2);
    const auto plans = make_plans(chain, DivergenceEstimator::exact(), batch.rows(), rng);
    auto loss = [&](Tape&, std::span<const Var> p) { return nll_objective(chain, p, batch, plans); };
    const auto params = chain.parameters();
    std::size_t count = 0;
    for (const Tensor& t : params) count += t.size();
    EXPECT_LE(count, 200u);
    auto r = check_gradient_fd(loss, params, 1e-4);
    EXPECT_TRUE(r.pass) << "seed " << seed << ": " << r.message;
  }
}

TEST(NllLoss, HutchinsonGradientPassesFiniteDifferences) {
  FlowBlock block = make_block(random_field(3, {4}, 5, 0.5), 6);
  FlowChain chain({block}, AnalyticDensity::standard_normal(3));
  Rng rng(3);
  const Tensor batch = rng.normal_tensor(5, 3);
  const auto plans = make_plans(chain, DivergenceEstimator::hutchinson(2), batch.rows(), rng);
  auto loss = [&](Tape&, std::span<const Var> p) { return nll_objective(chain, p, batch, plans); };
  auto r = check_gradient_fd(loss, chain.parameters(), 1e-4);
  EXPECT_TRUE(r.pass) << r.message;
}

TEST(JkoLoss, ZeroBlockOnStandardNormal) {
  FlowChain chain = identity_chain(2);
  Rng rng(4);
  const std::size_t m = 40000;
  const Tensor x = rng.normal_tensor(m, 2);
  JkoTerms terms;
  const LossEval l = jko_block_loss(chain.block(0), x, 1.0, chain.base(), DivergenceEstimator::exact(), rng, &terms);
  // |x|^2 / 2 ~ Exp(1) for d = 2, so the standard error is 1/sqrt(m).
  EXPECT_NEAR(l.value, 1.0, 4.0 / std::sqrt(double(m)));
  EXPECT_EQ(terms.movement, 0.0);
  EXPECT_EQ(terms.divergence, 0.0);
  EXPECT_DOUBLE_EQ(terms.potential, l.value);
}

TEST(JkoLoss, LargeGammaLeavesKlPartOnly) {
  FlowBlock block = make_block(random_field(2, {6}, 9, 0.5), 8);
  Rng rng(5);
  const Tensor x = rng.normal_tensor(50, 2);
  const AnalyticDensity q = AnalyticDensity::standard_normal(2);
  JkoTerms terms;
  Rng r1(0);
  const LossEval l = jko_block_loss(block, x, 1e12, q, DivergenceEstimator::exact(), r1, &terms);
  EXPECT_GT(terms.movement, 1e-3);
  EXPECT_NEAR(l.value, terms.potential - terms.divergence, 1e-10);
  Rng r2(0);
  const LossEval small = jko_block_loss(block, x, 0.5, q, DivergenceEstimator::exact(), r2);
  EXPECT_NEAR(small.value, terms.potential - terms.divergence + terms.movement, 1e-10);
}

TEST(JkoLoss, RejectsNonPositiveGamma) {
  FlowChain chain = identity_chain(2);
  Rng rng(0);
  EXPECT_THROW(jko_block_loss(chain.block(0), Tensor::zeros(3, 2), 0.0, chain.base(), DivergenceEstimator::exact(), rng),
               std::invalid_argument);
  EXPECT_THROW(jko_block_loss(chain.block(0), Tensor::zeros(3, 2), -1.0, chain.base(), DivergenceEstimator::exact(), rng),
               std::invalid_argument);
}

TEST(JkoLoss, GradientPassesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    FlowBlock block = make_block(random_field(2, {6}, 40 + seed, 0.5), 6);
    Rng rng(seed);
    const Tensor x = add_scalar(rng.normal_tensor(6, 2), 1.0);
    const DivergencePlan plan = DivergencePlan::make(DivergenceEstimator::exact(), 6, 2, rng);
    const AnalyticDensity q = AnalyticDensity::standard_normal(2);
    auto loss = [&](Tape&, std::span<const Var> p) { return jko_objective(block, p, x, 0.7, q, plan); };
    auto r = check_gradient_fd(loss, block.field.parameters(), 1e-4);
    EXPECT_TRUE(r.pass) << "seed " << seed << ": " << r.message;
  }
}

TEST(JkoTraining, SingleBlockReducesGaussianKl) {
  FlowChain chain = small_chain(1, 1, 16, 8, 3);
  Rng rng(11);
  const Tensor data = scale(rng.normal_tensor(4000, 1), 2.0);
  TrainConfig cfg;
  cfg.learn_rate = 5e-3;
  cfg.batch_size = 256;
  cfg.iterations = 300;
  cfg.gamma = 1.0;
  cfg.seed = 1;
  const ProgressiveResult res = train_jko(chain, data, cfg, DivergenceEstimator::exact());
  const double kl0 = 0.5 * (4.0 - 1.0 - std::log(4.0));
  EXPECT_NEAR(kl0, 0.8069, 1e-4);
  auto [m, v] = moments(res.ensembles[1]);
  EXPECT_LT(kl_to_standard(m, v), kl0) << "mean " << m << " var " << v;
}

TEST(JkoTraining, GaussianKlDescendsOverSixBlocks) {
  FlowChain chain = small_chain(1, 6, 12, 8, 5);
  Rng rng(12);
  Tensor data = add_scalar(scale(rng.normal_tensor(3000, 1), 0.5), 3.0);
  TrainConfig cfg;
  cfg.learn_rate = 5e-3;
  cfg.batch_size = 256;
  cfg.iterations = 200;
  cfg.gamma = 1.0;
  cfg.seed = 2;
  const ProgressiveResult res = train_jko(chain, data, cfg, DivergenceEstimator::exact());
  ASSERT_EQ(res.ensembles.size(), 7u);
  std::vector<double> kl;
  for (const Tensor& e : res.ensembles) {
    auto [m, v] = moments(e);
    kl.push_back(kl_to_standard(m, v));
  }
  for (std::size_t n = 1; n < kl.size(); ++n) EXPECT_LE(kl[n], kl[n - 1] + 0.05) << "block " << n;
  EXPECT_LT(kl.back(), 0.25 * kl.front());
}

TEST(JkoTraining, ProgressiveTrainingLeavesEarlierBlocksUntouched) {
  FlowChain chain = small_chain(2, 3, 6, 4, 7);
  Rng rng(3);
  const Tensor data = add_scalar(rng.normal_tensor(300, 2), 1.5);
  TrainConfig cfg;
  cfg.learn_rate = 1e-2;
  cfg.batch_size = 64;
  cfg.iterations = 10;
  EXPECT_THROW(train_jko_block(chain, 1, data, cfg, DivergenceEstimator::exact()), std::logic_error);
  train_jko_block(chain, 0, data, cfg, DivergenceEstimator::exact());
  const std::vector<Tensor> block0 = chain.block(0).field.parameters();
  const std::vector<Tensor> block2 = chain.block(2).field.parameters();
  const Tensor pushed = push_through(chain, data, 0, 1);
  train_jko_block(chain, 1, pushed, cfg, DivergenceEstimator::exact());
  EXPECT_EQ(chain.block(0).field.parameters(), block0);
  EXPECT_EQ(chain.block(2).field.parameters(), block2);
  EXPECT_TRUE(chain.block(1).trained);
  EXPECT_FALSE(chain.block(2).trained);
}

TEST(JkoTraining, StrongerMovementPenaltyShrinksDisplacement) {
  // Average over seeds of (1/m) sum |x(t1) - x(t0)|^2 for gamma = 10, 1, 0.1.
  std::vector<double> disp;
  for (double gamma : {10.0, 1.0, 0.1}) {
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      FlowChain chain = small_chain(1, 1, 8, 4, 20 + seed);
      Rng rng(100 + seed);
      const Tensor data = add_scalar(rng.normal_tensor(1000, 1), 2.0);
      TrainConfig cfg;
      cfg.learn_rate = 1e-2;
      cfg.batch_size = 128;
      cfg.iterations = 150;
      cfg.gamma = gamma;
      cfg.seed = seed;
      const ProgressiveResult res = train_jko(chain, data, cfg, DivergenceEstimator::exact());
      total += mean_squared_displacement(res.ensembles[0], res.ensembles[1]);
    }
    disp.push_back(total / 5.0);
  }
  EXPECT_GE(disp[0], disp[1]);
  EXPECT_GE(disp[1], disp[2]);
}

TEST(FmLoss, ExactConstantFieldHasZeroLoss) {
  const Tensor x0 = Tensor::from_rows(1, 2, {0.5, -1.0});
  const Tensor x1 = Tensor::from_rows(1, 2, {2.0, 1.0});
  Eigen::VectorXd b(2);
  b << 1.5, 2.0;
  VelocityField f = affine_field(Eigen::MatrixXd::Zero(2, 2), b);
  Rng rng(0);
  EXPECT_NEAR(fm_loss(f, Interpolant{}, x0, x1, 16, rng).value, 0.0, 1e-28);
}

TEST(FmLoss, ZeroFieldGivesSquaredGap) {
  const Tensor x0 = Tensor::from_rows(1, 2, {0.5, -1.0});
  const Tensor x1 = Tensor::from_rows(1, 2, {2.0, 1.0});
  VelocityField f = init_near_identity(2, std::vector<std::size_t>{4}, 0);
  Rng rng(0);
  EXPECT_NEAR(fm_loss(f, Interpolant{}, x0, x1, 16, rng).value, 1.5 * 1.5 + 2.0 * 2.0, 1e-12);
}

TEST(FmLoss, BatchTimesAreStratifiedAndMapped) {
  VelocityField f = init_near_identity(1, std::vector<std::size_t>{4}, 0, {2.0, 4.0}, 4.0);
  Rng rng(3);
  const Tensor x0 = Tensor::zeros(1, 1), x1 = Tensor::filled(1, 1, 1.0);
  const FmBatch b = make_fm_batch(f, Interpolant{}, x0, x1, 8, rng, 0.5, 1.0);
  ASSERT_EQ(b.times.rows(), 8u);
  for (std::size_t k = 0; k < 8; ++k) {
    EXPECT_GE(b.times(k, 0), 2.0);
    EXPECT_LE(b.times(k, 0), 4.0);
    // Every stratum of [2, 4] gets exactly one draw.
    EXPECT_EQ(static_cast<std::size_t>(std::floor((b.times(k, 0) - 2.0) / 0.25)), k);
    // Rate in s is 1; s spans 0.5 over a block of length 2.
    EXPECT_NEAR(b.targets(k, 0), 0.25, 1e-15);
    EXPECT_NEAR(b.points(k, 0), 0.5 + 0.5 * (b.times(k, 0) - 2.0) / 2.0, 1e-15);
  }
  EXPECT_THROW(make_fm_batch(f, Interpolant{}, Tensor::zeros(0, 1), Tensor::zeros(0, 1), 8, rng), std::invalid_argument);
}

namespace {

// Marginal velocity of the linear interpolant between two independent
// N(0, 1) samples: E[x1 - x0 | (1 - t) x0 + t x1 = x].
double oracle_velocity(double x, double t) { return (2 * t - 1) / ((1 - t) * (1 - t) + t * t) * x; }

}  // namespace

TEST(FmOracle, ClosedFormMatchesMonteCarloBinning) {
  Rng rng(8);
  const std::size_t n = 400000;
  for (double t : {0.2, 0.5, 0.8}) {
    // Bin I_t on [0.9, 1.1] and average x1 - x0 there.
    double sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double x0 = rng.normal(), x1 = rng.normal();
      const double x = (1 - t) * x0 + t * x1;
      if (x > 0.9 && x < 1.1) {
        sum += x1 - x0;
        ++hits;
      }
    }
    EXPECT_NEAR(sum / hits, oracle_velocity(1.0, t), 0.05) << "t " << t;
  }
}

TEST(FmTraining, LearnsMarginalVelocityOfGaussianPair) {
  FlowChain chain = small_chain(1, 1, 32, 8, 4);
  Rng rng(9);
  const Tensor data = rng.normal_tensor(20000, 1);
  const Tensor noise = rng.normal_tensor(20000, 1);
  TrainConfig cfg;
  cfg.learn_rate = 3e-3;
  cfg.batch_size = 256;
  cfg.iterations = 1500;
  cfg.seed = 3;
  train_fm(chain, data, noise, Interpolant{}, cfg, 4);
  // rho_t-weighted L2 gap on a time grid, x ~ N(0, (1 - t)^2 + t^2).
  const VelocityField& f = chain.block(0).field;
  Rng eval_rng(10);
  double gap = 0.0;
  const int n_t = 20;
  for (int k = 0; k < n_t; ++k) {
    const double t = (k + 0.5) / n_t;
    const double sd = std::sqrt((1 - t) * (1 - t) + t * t);
    const Tensor x = scale(eval_rng.normal_tensor(2000, 1), sd);
    const Tensor v = eval_velocity(f, x, t);
    double acc = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) acc += std::pow(v(i, 0) - oracle_velocity(x(i, 0), t), 2);
    gap += acc / x.rows() / n_t;
  }
  EXPECT_LE(gap, 0.05);
}

TEST(FmLoss, LossDifferenceEqualsGapDifference) {
  // Candidates v_i(x, t) = a_i x + c_i t; the gap to the oracle is closed form:
  // int_0^1 (a - k(t))^2 s(t)^2 + c^2 t^2 dt with k the oracle slope.
  const double a1 = 0.3, c1 = 0.5, a2 = -0.4, c2 = -0.2;
  VelocityField f1 = affine_field(Eigen::MatrixXd::Constant(1, 1, a1), Eigen::VectorXd::Zero(1), {0.0, 1.0}, 1.0,
                                  Eigen::VectorXd::Constant(1, c1));
  VelocityField f2 = affine_field(Eigen::MatrixXd::Constant(1, 1, a2), Eigen::VectorXd::Zero(1), {0.0, 1.0}, 1.0,
                                  Eigen::VectorXd::Constant(1, c2));
  auto gap = [](double a, double c) {
    const int n = 20000;
    double g = 0.0;
    for (int k = 0; k < n; ++k) {
      const double t = (k + 0.5) / n;
      const double s2 = (1 - t) * (1 - t) + t * t;
      const double slope = (2 * t - 1) / s2;
      g += ((a - slope) * (a - slope) * s2 + c * c * t * t) / n;
    }
    return g;
  };
  Rng rng(13);
  const std::size_t m = 50000;
  const Tensor x0 = rng.normal_tensor(m, 1), x1 = rng.normal_tensor(m, 1);
  const FmBatch b = make_fm_batch(f1, Interpolant{}, x0, x1, 1, rng);
  const Tensor v1 = evaluate_field_rows<Tensor>(f1, f1.parameters(), b.points, b.times, nullptr).velocity;
  const Tensor v2 = evaluate_field_rows<Tensor>(f2, f2.parameters(), b.points, b.times, nullptr).velocity;
  double s = 0.0, ss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double d = std::pow(v1(i, 0) - b.targets(i, 0), 2) - std::pow(v2(i, 0) - b.targets(i, 0), 2);
    s += d;
    ss += d * d;
  }
  const double mean = s / m;
  const double se = std::sqrt((ss / m - mean * mean) / m);
  EXPECT_NEAR(mean, gap(a1, c1) - gap(a2, c2), 3 * se) << "se " << se;
}

TEST(LocalFmTargets, ZeroStepIsIdentity) {
  Rng rng(1);
  const Tensor x = rng.normal_tensor(10, 2);
  auto [xl, xr] = make_local_fm_targets(x, 0.0, rng);
  EXPECT_EQ(xl, x);
  EXPECT_EQ(xr, x);
  EXPECT_THROW(make_local_fm_targets(x, -0.1, rng), std::invalid_argument);
}

TEST(LocalFmTargets, Ln2StepCoefficients) {
  EXPECT_NEAR(std::exp(-std::log(2.0)), 0.5, 1e-15);
  EXPECT_NEAR(std::sqrt(1 - std::exp(-2 * std::log(2.0))), 0.866025, 1e-6);
  // Regression of x_r on x_l recovers 0.5, residual variance 0.75.
  Rng rng(2);
  const std::size_t m = 200000;
  const Tensor x = scale(rng.normal_tensor(m, 1), 2.0);
  auto [xl, xr] = make_local_fm_targets(x, std::log(2.0), rng);
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < m; ++i) {
    sxy += xl(i, 0) * xr(i, 0);
    sxx += xl(i, 0) * xl(i, 0);
  }
  const double slope = sxy / sxx;
  EXPECT_NEAR(slope, 0.5, 0.005);
  Tensor resid = xr;
  for (std::size_t i = 0; i < m; ++i) resid(i, 0) -= 0.5 * xl(i, 0);
  auto [rm, rv] = moments(resid);
  EXPECT_NEAR(rm, 0.0, 0.01);
  EXPECT_NEAR(rv, 0.75, 0.01);
}

TEST(LocalFmTargets, LongStepForgetsStart) {
  Rng rng(3);
  const std::size_t m = 100000;
  const Tensor x = add_scalar(rng.normal_tensor(m, 2), 5.0);
  auto [xl, xr] = make_local_fm_targets(x, 10.0, rng);
  const Eigen::MatrixXd r = xr.matrix();
  const Eigen::RowVectorXd mu = r.colwise().mean();
  EXPECT_LE(mu.cwiseAbs().maxCoeff(), 0.02);
  const Eigen::MatrixXd c = (r.rowwise() - mu).transpose() * (r.rowwise() - mu) / (m - 1.0);
  EXPECT_LE((c - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff(), 0.02);
}

TEST(Optimizer, AdamZeroGradientLeavesParameters) {
  Rng rng(0);
  std::vector<Tensor> p{rng.normal_tensor(3, 2)};
  const std::vector<Tensor> before = p;
  Optimizer opt(OptimizerKind::adam, 0.1);
  const std::vector<Tensor> g{Tensor::zeros(3, 2)};
  for (int k = 0; k < 3; ++k) opt.step(p, g);
  EXPECT_EQ(p, before);
}

TEST(Optimizer, AdamFirstStepIsLearnRate) {
  for (double g_scale : {1e-3, 1.0, 1e3}) {
    std::vector<Tensor> p{Tensor::from_rows(1, 3, {0.0, 1.0, -2.0})};
    const Tensor start = p[0];
    Optimizer opt(OptimizerKind::adam, 0.01);
    const std::vector<Tensor> g{Tensor::from_rows(1, 3, {g_scale, -2 * g_scale, 0.5 * g_scale})};
    opt.step(p, g);
    // Bias-corrected moments give m/sqrt(v) = sign(g), so the step is lr g / (|g| + eps).
    for (std::size_t j = 0; j < 3; ++j) {
      const double gj = g[0](0, j);
      EXPECT_NEAR(p[0](0, j) - start(0, j), -0.01 * gj / (std::abs(gj) + 1e-8), 1e-15);
      EXPECT_NEAR(std::abs(p[0](0, j) - start(0, j)), 0.01, 1e-6);
    }
  }
}

TEST(Optimizer, SgdStepIsScaledGradient) {
  std::vector<Tensor> p{Tensor::from_rows(1, 2, {1.0, 2.0})};
  Optimizer opt(OptimizerKind::sgd, 0.5);
  opt.step(p, std::vector<Tensor>{Tensor::from_rows(1, 2, {2.0, -4.0})});
  EXPECT_EQ(p[0], Tensor::from_rows(1, 2, {0.0, 4.0}));
  EXPECT_THROW(opt.step(p, std::vector<Tensor>{Tensor::zeros(2, 2)}), ShapeError);
}

TEST(TrainConfig, CosineScheduleEndpoints) {
  TrainConfig cfg;
  cfg.learn_rate = 0.2;
  cfg.iterations = 100;
  EXPECT_DOUBLE_EQ(cfg.learn_rate_at(37), 0.2);
  cfg.schedule = LrSchedule::cosine;
  EXPECT_DOUBLE_EQ(cfg.learn_rate_at(0), 0.2);
  EXPECT_NEAR(cfg.learn_rate_at(50), 0.1, 1e-15);
  EXPECT_NEAR(cfg.learn_rate_at(100), 0.0, 1e-15);
  for (std::size_t it = 1; it < 100; ++it) EXPECT_LT(cfg.learn_rate_at(it), cfg.learn_rate_at(it - 1));
  EXPECT_EQ(parse_lr_schedule("cosine"), LrSchedule::cosine);
  EXPECT_THROW(parse_lr_schedule("linear"), std::invalid_argument);
}

TEST(TrainConfig, Validation) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate(1000));
  cfg.gamma = 0.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg.gamma = 1.0;
  cfg.batch_size = 2000;
  EXPECT_THROW(cfg.validate(1000), std::invalid_argument);
  cfg.batch_size = 10;
  cfg.learn_rate = -1.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  EXPECT_EQ(parse_optimizer("sgd"), OptimizerKind::sgd);
  EXPECT_THROW(parse_optimizer("rmsprop"), std::invalid_argument);
}

TEST(Minimize, ZeroIterationsLeavesSubjectUnchanged) {
  FlowChain chain = small_chain(2, 1, 4, 4, 1);
  const auto before = chain.parameters();
  TrainConfig cfg;
  cfg.iterations = 0;
  cfg.batch_size = 10;
  Rng rng(0);
  const LossTrace trace = train_cnf(chain, rng.normal_tensor(20, 2), cfg, DivergenceEstimator::exact());
  EXPECT_TRUE(trace.empty());
  EXPECT_EQ(chain.parameters(), before);
}

TEST(Minimize, DeterministicGivenSeed) {
  Rng rng(0);
  const Tensor data = add_scalar(rng.normal_tensor(200, 2), 0.5);
  TrainConfig cfg;
  cfg.iterations = 5;
  cfg.batch_size = 32;
  cfg.seed = 17;
  FlowChain a = small_chain(2, 2, 4, 4, 1), b = small_chain(2, 2, 4, 4, 1);
  const LossTrace ta = train_cnf(a, data, cfg, DivergenceEstimator::hutchinson(1));
  const LossTrace tb = train_cnf(b, data, cfg, DivergenceEstimator::hutchinson(1));
  EXPECT_EQ(a.parameters(), b.parameters());
  EXPECT_EQ(ta.raw, tb.raw);
  EXPECT_NE(a.parameters(), small_chain(2, 2, 4, 4, 1).parameters());
}

TEST(Minimize, SmoothedTraceNeverIncreasesWithinStage) {
  std::vector<Tensor> p{Tensor::from_rows(1, 2, {3.0, -2.0})};
  TrainConfig cfg;
  cfg.iterations = 200;
  cfg.learn_rate = 0.05;
  auto objective = [](std::span<const Var> v, std::size_t, Rng& rng) {
    // Noisy quadratic so the raw trace is not monotone.
    return add_scalar(sum(square(v[0])), 0.5 * rng.normal());
  };
  const LossTrace trace = minimize(p, cfg, objective);
  ASSERT_EQ(trace.size(), 200u);
  bool raw_increases = false;
  for (std::size_t k = 1; k < trace.size(); ++k) {
    EXPECT_LE(trace.smoothed[k], trace.smoothed[k - 1]);
    raw_increases |= trace.raw[k] > trace.raw[k - 1];
  }
  EXPECT_TRUE(raw_increases);
  EXPECT_LT(std::abs(p[0](0, 0)), 0.1);
}

TEST(Minimize, NonFiniteLossAbortsWithTrace) {
  std::vector<Tensor> p{Tensor::scalar(1.0)};
  TrainConfig cfg;
  cfg.iterations = 10;
  auto objective = [](std::span<const Var> v, std::size_t it, Rng&) {
    return it < 3 ? square(v[0]) : log(scale(square(v[0]), 0.0));
  };
  try {
    minimize(p, cfg, objective);
    FAIL() << "expected TrainingDiverged";
  } catch (const TrainingDiverged& e) {
    EXPECT_EQ(e.trace().size(), 3u);
    EXPECT_NE(std::string(e.what()).find("iteration 3"), std::string::npos) << e.what();
  }
}

TEST(LossTrace, CsvHasOneRowPerIteration) {
  LossTrace trace;
  trace.push(0, 2.0, 1.0);
  trace.push(0, 1.0, 2.0);
  trace.push(1, 5.0, 3.0);
  std::ostringstream os;
  write_loss_csv(os, trace);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "iteration,stage,loss,smoothed");
  int rows = 0;
  std::string last;
  while (std::getline(is, line)) {
    ++rows;
    last = line;
  }
  EXPECT_EQ(rows, 3);
  EXPECT_EQ(last, "2,1,5,5");
  // Wall time lives in its own file so the loss file is reproducible.
  std::ostringstream timing;
  write_timing_csv(timing, trace);
  EXPECT_EQ(timing.str(), "iteration,stage,wall_ms\n0,0,1\n1,0,2\n2,1,3\n");
  // Smoothing restarts at a new stage.
  EXPECT_EQ(trace.smoothed[2], 5.0);
}

TEST(GammaSchedule, ConstantAndGeometric) {
  EXPECT_EQ(make_gamma_schedule(GammaSchedule::constant, 0.25, 2.0, 3), (std::vector<double>{0.25, 0.25, 0.25}));
  EXPECT_EQ(make_gamma_schedule(GammaSchedule::geometric, 0.25, 2.0, 3), (std::vector<double>{0.25, 0.5, 1.0}));
  EXPECT_EQ(parse_gamma_schedule("geometric"), GammaSchedule::geometric);
  EXPECT_THROW(parse_gamma_schedule("linear"), std::invalid_argument);
}

TEST(LocalFmTraining, BlocksAreTrainedInOrderAndPushed) {
  FlowChain chain = small_chain(2, 2, 6, 4, 3);
  Rng rng(4);
  const Tensor data = add_scalar(rng.normal_tensor(300, 2), 2.0);
  TrainConfig cfg;
  cfg.iterations = 30;
  cfg.batch_size = 64;
  cfg.learn_rate = 1e-2;
  const std::vector<double> gammas{0.5, 0.5};
  const ProgressiveResult res = train_local_fm(chain, data, gammas, cfg, 2);
  ASSERT_EQ(res.ensembles.size(), 3u);
  EXPECT_EQ(res.ensembles[1], push_through(chain, data, 0, 1));
  EXPECT_EQ(res.ensembles[2], push_through(chain, res.ensembles[1], 1, 2));
  // The OU step contracts toward the origin, so the mean moves inward.
  auto mean0 = res.ensembles[0].matrix().colwise().mean().norm();
  auto mean2 = res.ensembles[2].matrix().colwise().mean().norm();
  EXPECT_LT(mean2, mean0);
  EXPECT_EQ(res.trace.stage.back(), 1u);
}
