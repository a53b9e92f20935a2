#include <gtest/gtest.h>

#include <cmath>

#include "kuda/objectives.hpp"
#include "kuda/rng.hpp"

using namespace kuda;

TEST(Nce, ConstantScoresGiveLogN) {
  EXPECT_NEAR(nce_from_scores(Tensor::filled({4, 4}, -0.3)).item(), std::log(4.0), 1e-12);
}

TEST(Nce, PerfectAlignmentLimitIsZero) {
  std::vector<double> s(9, -50.0);
  for (int i = 0; i < 3; ++i) s[i * 4] = 50.0;
  EXPECT_NEAR(nce_from_scores(Tensor::from({3, 3}, s)).item(), 0.0, 1e-12);
}

TEST(Nce, RandomMatrixMatchesEnumeration) {
  Rng rng = make_rng(2, "nce");
  std::vector<double> s(9);
  for (auto& v : s) v = uniform(rng, -2, 2);
  double expect = 0.0;
  for (int i = 0; i < 3; ++i) {
    double z = 0.0;
    for (int j = 0; j < 3; ++j) z += std::exp(s[i * 3 + j]);
    expect -= std::log(std::exp(s[i * 3 + i]) / z) / 3.0;
  }
  EXPECT_NEAR(nce_from_scores(Tensor::from({3, 3}, s)).item(), expect, 1e-12);
}

TEST(Nce, InvariantToPermutingNegatives) {
  const std::vector<double> a{1.0, 0.2, -0.5, 0.3, 2.0, 0.1, -1.0, 0.4, 0.9};
  const std::vector<double> b{1.0, -0.5, 0.2, 0.1, 2.0, 0.3, 0.4, -1.0, 0.9};
  EXPECT_NEAR(nce_from_scores(Tensor::from({3, 3}, a)).item(), nce_from_scores(Tensor::from({3, 3}, b)).item(), 1e-12);
}

TEST(Nce, NeedsNegatives) {
  EXPECT_THROW(nce_from_scores(Tensor::zeros({1, 1})), std::invalid_argument);
  EXPECT_THROW(nce_correlation(Tensor::zeros({1, 3}), Tensor::zeros({1, 3}), Tensor::zeros({3, 3})), std::invalid_argument);
  EXPECT_THROW(nce_from_scores(Tensor::zeros({2, 3})), DimensionError);
}

TEST(Nce, BilinearScoreDefinition) {
  // With W = I the score matrix is F U^T.
  const Tensor f = Tensor::from({2, 2}, {1, 0, 0, 1}), u = Tensor::from({2, 2}, {2, 0, 0, 2});
  const Tensor w = Tensor::from({2, 2}, {1, 0, 0, 1});
  const double expect = -std::log(std::exp(2.0) / (std::exp(2.0) + 1.0));
  EXPECT_NEAR(nce_correlation(f, u, w).item(), expect, 1e-12);
}

TEST(Mae, HandExamples) {
  const std::vector<double> y{1.0, -1.0};
  EXPECT_DOUBLE_EQ(mae_loss(Tensor::zeros({2}), y).item(), 1.0);
  EXPECT_DOUBLE_EQ(mae_loss(Tensor::from({2}, {1.0, -1.0}), y).item(), 0.0);
  const std::vector<double> y3{0.5, -0.2, 0.9};
  EXPECT_DOUBLE_EQ(mae_loss(Tensor::from({3}, {0.1, 0.1, 0.1}), y3).item(),
                   mae_loss(Tensor::from({3}, {0.1, 0.1, 0.1}), std::vector<double>{0.9, 0.5, -0.2}).item());
}

TEST(Mae, Errors) {
  EXPECT_THROW(mae_loss(Tensor::zeros({2}), std::vector<double>{}), std::invalid_argument);
  EXPECT_THROW(mae_loss(Tensor::zeros({2}), std::vector<double>{1.0}), DimensionError);
}

TEST(UnionLoss, WeightedSum) {
  const Tensor reg = Tensor::scalar(0.4), cor = Tensor::scalar(2.0);
  EXPECT_DOUBLE_EQ(union_loss(reg, cor, 0.01).item(), 0.4 + 0.01 * 2.0);
  EXPECT_DOUBLE_EQ(union_loss(reg, cor, 0.0).item(), 0.4);
  EXPECT_DOUBLE_EQ(union_loss(reg, Tensor::scalar(0.0), 1.0).item(), 0.4);
  EXPECT_THROW(union_loss(reg, cor, -0.1), std::invalid_argument);
  for (double a : {0.0, 0.01, 0.1, 1.0}) EXPECT_DOUBLE_EQ(union_loss(reg, cor, a).item(), 0.4 + a * 2.0);
}
