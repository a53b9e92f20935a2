#include <gtest/gtest.h>

#include <cmath>

#include "kuda/fusion.hpp"

using namespace kuda;

TEST(SentimentRatio, WorkedExampleAgainstDirectEvaluation) {
  const double k = 0.3;
  const PerModality<double> err{0.1, 0.5, 1.0};
  double d[3], z = 0;
  for (int m = 0; m < 3; ++m) z += (d[m] = std::exp(-k * err[m] * err[m]));
  const auto r = sentiment_ratio({0.1 + err[0], 0.1 - err[1], 0.1 + err[2]}, 0.1, k);
  for (int m = 0; m < 3; ++m) EXPECT_NEAR(r.r[m], d[m] / z, 1e-12);
  EXPECT_NEAR(r.r[0], 0.3740, 5e-5);
  EXPECT_NEAR(r.r[1], 0.3480, 5e-5);
  EXPECT_NEAR(r.r[2], 0.2779, 5e-5);
}

TEST(SentimentRatio, EqualErrorsGiveThirds) {
  const auto r = sentiment_ratio({0.4, 0.4, 0.4}, 0.4, 2.0);
  for (double v : r.r) EXPECT_NEAR(v, 1.0 / 3.0, 1e-12);
}

TEST(SentimentRatio, SumsToOneAndStaysInsideUnitInterval) {
  Rng rng = make_rng(4, "ratio");
  for (int i = 0; i < 200; ++i) {
    const auto r = sentiment_ratio({uniform(rng, -3, 3), uniform(rng, -3, 3), uniform(rng, -3, 3)}, uniform(rng, -3, 3),
                                   uniform(rng, 0.1, 5.0));
    EXPECT_NEAR(r.r[0] + r.r[1] + r.r[2], 1.0, 1e-9);
    for (double v : r.r) EXPECT_TRUE(v >= 0.0 && v <= 1.0);
  }
}

TEST(SentimentRatio, StrictlyDecreasesWithError) {
  double prev = 1.0;
  for (double e = 0.0; e <= 2.0; e += 0.25) {
    const double r = sentiment_ratio({e, 0.3, -0.2}, 0.0, 0.5).r[0];
    EXPECT_LT(r, prev);
    prev = r;
  }
}

TEST(SentimentRatio, LargeErrorsDoNotUnderflow) {
  const auto r = sentiment_ratio({100.0, 101.0, 102.0}, 0.0, 5.0);
  EXPECT_NEAR(r.r[0], 1.0, 1e-12);
}

TEST(SentimentRatio, TestModeRefusesLabels) {
  EXPECT_THROW(sentiment_ratio({0, 0, 0}, 0.0, 1.0, RatioMode::test), std::logic_error);
  EXPECT_THROW(sentiment_ratio({0, 0, 0}, 0.0, 0.0), std::invalid_argument);
  const auto t = test_ratio();
  for (double v : t.r) EXPECT_EQ(v, 1.0);
}

namespace {
FusionConfig small_fusion() {
  FusionConfig c;
  c.length = 3, c.width = 8, c.blocks = 2, c.cross_heads = 2, c.self_heads = 2;
  return c;
}
PerModality<Tensor> projected_inputs(std::size_t b, std::size_t t, std::size_t d) {
  Rng rng = make_rng(8, "fusion.inputs");
  PerModality<Tensor> out;
  for (auto& u : out) {
    std::vector<double> v(b * t * d);
    for (auto& x : v) x = normal(rng);
    u = Tensor::from({b, t, d}, v);
  }
  return out;
}
}  // namespace

TEST(Projector, UnifiesLengthAndWidth) {
  Rng rng = make_rng(1, "proj");
  PerModality<Projector> ps{Projector(5, 6, 3, 8, rng), Projector(2, 4, 3, 8, rng), Projector(7, 10, 3, 8, rng)};
  const PerModality<Tensor> u{Tensor::filled({2, 5, 6}, 0.1), Tensor::filled({2, 2, 4}, 0.2), Tensor::filled({2, 7, 10}, 0.3)};
  const SeededFusion s = project_and_seed(u, ps);
  for (const auto& p : s.projected) EXPECT_EQ(p.shape(), (Shape{2, 3, 8}));
  const Tensor sum3 = add(add(s.projected[0], s.projected[1]), s.projected[2]);
  for (std::size_t i = 0; i < sum3.size(); ++i) EXPECT_DOUBLE_EQ(s.initial[i], sum3[i]);
  EXPECT_THROW(ps[0](Tensor::zeros({2, 4, 6})), DimensionError);
}

TEST(DynamicBlock, PreservesShapeAcrossRepeatedApplication) {
  Rng rng = make_rng(1, "dab");
  const FusionConfig cfg = small_fusion();
  const DynamicAttentionBlock block(cfg, rng);
  const auto u = projected_inputs(2, 3, 8);
  Tensor f = Tensor::filled({2, 3, 8}, 0.1);
  for (int n = 0; n < 4; ++n) {
    f = block(f, u, unit_ratios(2));
    EXPECT_EQ(f.shape(), (Shape{2, 3, 8}));
  }
}

TEST(DynamicBlock, TestModeMatchesDoubledInput) {
  // With R = 1, LN(F + 1*F) = LN(2F); LayerNorm absorbs the factor up to eps.
  Rng rng = make_rng(1, "dab");
  const DynamicAttentionBlock block(small_fusion(), rng);
  const auto u = projected_inputs(1, 3, 8);
  const Tensor f0 = add(add(u[0], u[1]), u[2]);
  const Tensor a = block(f0, u, unit_ratios(1));
  const Tensor b = block(f0, u, BatchRatios{{{0.5}, {0.5}, {0.5}}});
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-4);
}

TEST(DynamicBlock, RecordsStochasticCrossAttention) {
  Rng rng = make_rng(1, "dab");
  const DynamicAttentionBlock block(small_fusion(), rng);
  const auto u = projected_inputs(2, 3, 8);
  BlockTrace trace;
  block(Tensor::filled({2, 3, 8}, 0.1), u, unit_ratios(2), &trace);
  for (const auto& rec : trace.cross) {
    ASSERT_EQ(rec.weights.size(), 2u * 2 * 3 * 3);
    for (std::size_t row = 0; row < rec.weights.size() / 3; ++row)
      EXPECT_NEAR(rec.weights[3 * row] + rec.weights[3 * row + 1] + rec.weights[3 * row + 2], 1.0, 1e-9);
  }
}

TEST(DynamicBlock, RejectsShapeAndRatioMismatch) {
  Rng rng = make_rng(1, "dab");
  const DynamicAttentionBlock block(small_fusion(), rng);
  const auto u = projected_inputs(2, 3, 8);
  EXPECT_THROW(block(Tensor::zeros({2, 4, 8}), u, unit_ratios(2)), DimensionError);
  EXPECT_THROW(block(Tensor::zeros({2, 3, 8}), u, unit_ratios(3)), DimensionError);
}

TEST(DynamicBlock, NonFiniteStateFailsWithBlockIndex) {
  Rng rng = make_rng(1, "dab");
  const FusionConfig cfg = small_fusion();
  std::vector<DynamicAttentionBlock> blocks{DynamicAttentionBlock(cfg, rng), DynamicAttentionBlock(cfg, rng)};
  auto u = projected_inputs(1, 3, 8);
  std::vector<double> bad(24, 0.0);
  bad[5] = std::nan("");
  try {
    run_blocks(blocks, Tensor::from({1, 3, 8}, bad), u, unit_ratios(1));
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("block 0"), std::string::npos) << e.what();
  }
}

TEST(BaselineFuse, AdditionAndConcat) {
  const auto u = projected_inputs(1, 3, 8);
  const Tensor a = baseline_fuse(FusionStrategy::addition, u);
  EXPECT_NEAR(a[0], u[0][0] + u[1][0] + u[2][0], 1e-12);
  const PerModality<Tensor> zeros{Tensor::zeros({1, 3, 8}), Tensor::zeros({1, 3, 8}), Tensor::zeros({1, 3, 8})};
  const Tensor z = baseline_fuse(FusionStrategy::addition, zeros);
  for (double v : z.data()) EXPECT_EQ(v, 0.0);
  Rng rng = make_rng(1, "concat");
  const Linear map(24, 8, rng);
  EXPECT_EQ(baseline_fuse(FusionStrategy::concat, u, &map).shape(), (Shape{1, 3, 8}));
  EXPECT_THROW(baseline_fuse(FusionStrategy::concat, u), std::invalid_argument);
  EXPECT_THROW(fusion_strategy_from_name("tensor"), std::invalid_argument);
}
