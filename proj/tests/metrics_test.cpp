#include <gtest/gtest.h>

#include "kuda/metrics.hpp"

using namespace kuda;

TEST(Metrics, PerfectPredictor) {
  const std::vector<double> y{-0.9, -0.1, 0.0, 0.4, 1.0};
  const MetricReport r = compute_metrics(y, y, {-1, 1});
  EXPECT_EQ(r.mae, 0.0);
  EXPECT_NEAR(r.corr, 1.0, 1e-12);
  for (double a : {r.acc2_has0, r.acc2_non0, r.acc3, r.acc5, r.acc7, r.f1_has0, r.f1_non0}) EXPECT_EQ(a, 1.0);
}

TEST(Metrics, NegatedPredictionsGiveMinusOneCorrelation) {
  const std::vector<double> y{-0.5, 0.2, 0.9, -0.1}, p{0.5, -0.2, -0.9, 0.1};
  EXPECT_NEAR(compute_metrics(p, y, {-1, 1}).corr, -1.0, 1e-12);
}

TEST(Metrics, ZeroVarianceFlagsCorrelation) {
  const std::vector<double> y{-0.5, 0.2, 0.9}, p{0.3, 0.3, 0.3};
  const auto r = compute_metrics(p, y, {-1, 1});
  EXPECT_EQ(r.corr, 0.0);
  EXPECT_TRUE(r.corr_degenerate);
}

TEST(Metrics, Binning) {
  EXPECT_EQ(bin_class(2.6, {-3, 3}, 7), 6);
  EXPECT_EQ(bin_class(-3.5, {-3, 3}, 7), 0);
  EXPECT_EQ(bin_class(0.0, {-1, 1}, 5), 2);
  EXPECT_EQ(bin_class(0.0, {-3, 3}, 7), 3);
  EXPECT_EQ(bin_class(0.4, {-1, 1}, 3), 1);
  EXPECT_EQ(bin_class(0.6, {-1, 1}, 3), 2);
}

TEST(Metrics, ZeroLabelsInHasZeroAndNonZero) {
  // y = 0 counts as non-negative in has-0 and is dropped from non-0.
  const std::vector<double> y{0.0, 0.5, -0.5}, p{0.1, 0.4, 0.2};
  const auto r = compute_metrics(p, y, {-1, 1});
  EXPECT_DOUBLE_EQ(r.acc2_has0, 2.0 / 3.0);
  EXPECT_EQ(r.non0_count, 2u);
  EXPECT_DOUBLE_EQ(r.acc2_non0, 0.5);
}

TEST(Metrics, WeightedF1HandExample) {
  // truth 1,1,1,0 ; pred 1,0,1,0 -> class1 F1 = 0.8 (support 3), class0 F1 = 2/3 (support 1)
  const std::vector<bool> t{true, true, true, false}, p{true, false, true, false};
  EXPECT_NEAR(weighted_binary_f1(t, p), (0.8 * 3 + 2.0 / 3.0) / 4.0, 1e-12);
}

TEST(Metrics, Errors) {
  EXPECT_THROW(compute_metrics(std::vector<double>{}, std::vector<double>{}, {-1, 1}), std::invalid_argument);
  EXPECT_THROW(compute_metrics(std::vector<double>{1}, std::vector<double>{1, 2}, {-1, 1}), std::invalid_argument);
}

TEST(Metrics, BoundedOutputs) {
  Rng rng = make_rng(1, "metrics");
  std::vector<double> y(300), p(300);
  for (std::size_t i = 0; i < 300; ++i) y[i] = uniform(rng, -3, 3), p[i] = uniform(rng, -4, 4);
  const auto r = compute_metrics(p, y, {-3, 3});
  for (double a : {r.acc2_has0, r.acc2_non0, r.acc3, r.acc5, r.acc7, r.f1_has0, r.f1_non0}) {
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
  }
  EXPECT_GE(r.corr, -1.0);
  EXPECT_LE(r.corr, 1.0);
}
