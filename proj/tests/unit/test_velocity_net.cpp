#include <cmath>

#include <gtest/gtest.h>

#include "helpers.hpp"
#include "wflow/gradcheck.hpp"
#include "wflow/odeint.hpp"
#include "wflow/velocity_field.hpp"

using namespace wflow;
using wflow::testing::affine_field;
using wflow::testing::random_field;

TEST(InitNearIdentity, VelocityIsZero) {
  VelocityField f = init_near_identity(3, std::vector<std::size_t>{16, 16}, 4);
  Rng rng(1);
  const Tensor x = rng.normal_tensor(5, 3);
  for (double t : {0.0, 0.3, 1.0}) EXPECT_EQ(eval_velocity(f, x, t), Tensor::zeros(5, 3));
}

TEST(InitNearIdentity, BlockMapIsIdentity) {
  VelocityField f = init_near_identity(2, std::vector<std::size_t>{8}, 2);
  Rng rng(3);
  const Tensor x = rng.normal_tensor(7, 2);
  EXPECT_EQ(integrate(f, x, IntegratorConfig{Scheme::rk4, 16, {0.0, 1.0}}), x);
}

TEST(InitNearIdentity, SameSeedSameParameters) {
  auto a = init_near_identity(2, std::vector<std::size_t>{8, 8}, 42).parameters();
  auto b = init_near_identity(2, std::vector<std::size_t>{8, 8}, 42).parameters();
  auto c = init_near_identity(2, std::vector<std::size_t>{8, 8}, 43).parameters();
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(InitNearIdentity, HiddenScaleAndZeroOutput) {
  VelocityField f = init_near_identity(2, std::vector<std::size_t>{64, 64}, 9);
  const auto& layers = f.net().layers();
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layers[l].weight.cols()));
    for (double w : layers[l].weight.data()) EXPECT_LE(std::abs(w), bound);
  }
  for (double w : layers.back().weight.data()) EXPECT_EQ(w, 0.0);
  for (double w : layers.back().bias.data()) EXPECT_EQ(w, 0.0);
}

TEST(InitNearIdentity, RejectsZeroDimension) {
  EXPECT_THROW(init_near_identity(0, std::vector<std::size_t>{8}, 1), ShapeError);
}

TEST(EvalVelocity, AffineLayerByHand) {
  Eigen::MatrixXd a(2, 2);
  a << 1, 2, 3, 4;
  Eigen::VectorXd c(2);
  c << 0.5, -1.0;
  VelocityField f = affine_field(a, Eigen::VectorXd::Zero(2), {0.0, 2.0}, 2.0, c);
  const Tensor x = Tensor::from_rows(1, 2, {1.0, -1.0});
  const Tensor v = eval_velocity(f, x, 1.0);  // t~ = 0.5
  EXPECT_DOUBLE_EQ(v(0, 0), 1 - 2 + 0.5 * 0.5);
  EXPECT_DOUBLE_EQ(v(0, 1), 3 - 4 - 1.0 * 0.5);
}

TEST(EvalVelocity, BatchEqualsStackedPoints) {
  VelocityField f = random_field(3, {8, 8}, 5);
  Rng rng(2);
  const Tensor x = rng.normal_tensor(6, 3);
  const Tensor batch = eval_velocity(f, x, 0.4);
  for (std::size_t i = 0; i < 6; ++i) {
    const Tensor vi = eval_velocity(f, take_rows(x, i, 1), 0.4);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(vi(0, j), batch(i, j), 1e-15);
  }
}

TEST(EvalVelocity, DimensionMismatchThrows) {
  VelocityField f = random_field(2, {4}, 1);
  EXPECT_THROW(eval_velocity(f, Tensor::zeros(3, 3), 0.5), ShapeError);
  EXPECT_THROW(eval_velocity(f, Tensor::zeros(3, 2), 1.5), std::out_of_range);
}

TEST(EvalVelocity, ContinuousInTime) {
  VelocityField f = random_field(2, {16}, 8);
  const Tensor x = Tensor::from_rows(1, 2, {0.3, -0.2});
  double prev = eval_velocity(f, x, 0.0)(0, 0);
  for (int k = 1; k <= 1000; ++k) {
    const double v = eval_velocity(f, x, k / 1000.0)(0, 0);
    EXPECT_LT(std::abs(v - prev), 5e-3);
    prev = v;
  }
}

TEST(EvalVelocity, DifferentiableInXAndTheta) {
  VelocityField f = random_field(2, {6}, 13);
  Rng rng(4);
  const Tensor x0 = rng.normal_tensor(3, 2);
  const auto acts = f.net().activations();
  std::vector<Tensor> params = f.parameters();
  params.push_back(x0);
  auto loss = [&](Tape&, std::span<const Var> p) {
    const std::size_t np = p.size() - 1;
    Var v = evaluate_field<Var>(f, p.first(np), p[np], 0.3, nullptr).velocity;
    return mean(square(v));
  };
  auto r = check_gradient_fd(loss, params, 1e-4);
  EXPECT_TRUE(r.pass) << r.message;
}

TEST(Divergence, ScaledIdentity) {
  VelocityField f = affine_field(3.0 * Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Zero(2));
  Rng rng(0);
  const Tensor div = divergence(f, Tensor::from_rows(2, 2, {1, 2, -3, 0.5}), 0.5, DivergenceEstimator::exact(), rng);
  EXPECT_NEAR(div(0, 0), 6.0, 1e-14);
  EXPECT_NEAR(div(1, 0), 6.0, 1e-14);
}

TEST(Divergence, TracelessField) {
  Eigen::MatrixXd a(2, 2);
  a << 0.5, 0, 0, -0.5;
  VelocityField f = affine_field(a, Eigen::VectorXd::Zero(2));
  Rng rng(0);
  EXPECT_NEAR(divergence(f, Tensor::from_rows(1, 2, {4, -1}), 0.0, DivergenceEstimator::exact(), rng).item(), 0.0,
              1e-15);
}

TEST(Divergence, HutchinsonWithinThreeStandardErrors) {
  Eigen::MatrixXd a(3, 3);
  a << 1.0, 0.7, -0.4, 0.2, 2.0, 1.1, 0.5, -0.3, 3.0;  // trace 6
  VelocityField f = affine_field(a, Eigen::VectorXd::Zero(3));
  // Var(e^T A e) for Rademacher e = sum_{i<j} (A_ij + A_ji)^2.
  double var = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j) var += std::pow(a(i, j) + a(j, i), 2);
  const std::size_t k = 10000;
  Rng rng(17);
  const double est = divergence(f, Tensor::from_rows(1, 3, {0.1, 0.2, 0.3}), 0.5,
                                DivergenceEstimator::hutchinson(k), rng)
                         .item();
  EXPECT_LT(std::abs(est - 6.0), 3.0 * std::sqrt(var / static_cast<double>(k)));
}

TEST(Divergence, HutchinsonMatchesExactOnRandomLinearFields) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const Eigen::MatrixXd a = Eigen::MatrixXd::Random(4, 4);
    VelocityField f = affine_field(a, Eigen::VectorXd::Zero(4));
    double var = 0.0;
    for (int i = 0; i < 4; ++i)
      for (int j = i + 1; j < 4; ++j) var += std::pow(a(i, j) + a(j, i), 2);
    const Tensor x = rng.normal_tensor(1, 4);
    const double exact = divergence(f, x, 0.0, DivergenceEstimator::exact(), rng).item();
    const double est = divergence(f, x, 0.0, DivergenceEstimator::hutchinson(10000), rng).item();
    EXPECT_NEAR(exact, a.trace(), 1e-13);
    EXPECT_LT(std::abs(est - exact), 3.0 * std::sqrt(var / 1e4) + 1e-12) << "seed " << seed;
  }
}

TEST(Divergence, ExactMatchesFiniteDifferenceTrace) {
  for (std::size_t d : {1u, 2u, 5u, 8u}) {
    VelocityField f = random_field(d, {12, 12}, 100 + d);
    Rng rng(d);
    const Tensor x = rng.normal_tensor(4, d);
    const double t = 0.37;
    const Tensor div = divergence(f, x, t, DivergenceEstimator::exact(), rng);
    for (std::size_t i = 0; i < 4; ++i) {
      double trace = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double h = 1e-5;
        Tensor xp = take_rows(x, i, 1), xm = take_rows(x, i, 1);
        xp(0, j) += h;
        xm(0, j) -= h;
        trace += (eval_velocity(f, xp, t)(0, j) - eval_velocity(f, xm, t)(0, j)) / (2 * h);
      }
      EXPECT_NEAR(div(i, 0), trace, 1e-5 * std::max(1.0, std::abs(trace))) << "d=" << d;
    }
  }
}

TEST(Divergence, ZeroProbesRejected) {
  VelocityField f = random_field(2, {4}, 1);
  Rng rng(0);
  EXPECT_THROW(divergence(f, Tensor::zeros(1, 2), 0.0, DivergenceEstimator::hutchinson(0), rng),
               std::invalid_argument);
}

TEST(Divergence, DefaultEstimatorSwitchesAtDimensionEight) {
  EXPECT_EQ(DivergenceEstimator::default_for(8).mode, DivergenceEstimator::Mode::exact);
  const auto hi = DivergenceEstimator::default_for(9);
  EXPECT_EQ(hi.mode, DivergenceEstimator::Mode::hutchinson);
  EXPECT_EQ(hi.probes, 8u);
}

TEST(Divergence, GradientThroughDivergencePassesFd) {
  VelocityField f = random_field(2, {5}, 21);
  Rng rng(8);
  const Tensor x = rng.normal_tensor(3, 2);
  const DivergencePlan plan = DivergencePlan::make(DivergenceEstimator::exact(), 3, 2, rng);
  auto loss = [&](Tape& tape, std::span<const Var> p) {
    auto e = evaluate_field<Var>(f, p, tape.constant(x), 0.6, &plan);
    return mean(square(*e.divergence));
  };
  auto r = check_gradient_fd(loss, f.parameters(), 1e-4);
  EXPECT_TRUE(r.pass) << r.message;
}
