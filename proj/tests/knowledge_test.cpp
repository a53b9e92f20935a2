#include <gtest/gtest.h>

#include "kuda/knowledge.hpp"

using namespace kuda;

TEST(Adapter, ZeroInitialisedUpLayerLeavesResidualPath) {
  Rng rng = make_rng(3, "adapter");
  const AdapterStack adapter(4, 4, 2, AdapterConfig{}, rng);
  const Tensor input = Tensor::filled({1, 2, 4}, 0.3);
  const Tensor t1 = Tensor::filled({1, 2, 4}, 0.1), t2 = Tensor::filled({1, 2, 4}, -0.2);
  // With zero up-projections each block is z -> z, so K = proj(I) + O1 + O2.
  ParamList ps;
  adapter.collect("a", ps);
  const Tensor& w = ps[0].tensor;
  const Tensor& b = ps[1].tensor;
  const Tensor expect = add(add(linear(input, w, b), t1), t2);
  const Tensor k = adapter(input, {t1, t2});
  for (std::size_t i = 0; i < k.size(); ++i) EXPECT_NEAR(k[i], expect[i], 1e-12);
}

TEST(Adapter, TapCountMustMatchBlocks) {
  Rng rng = make_rng(3, "adapter");
  const AdapterStack adapter(4, 4, 2, AdapterConfig{}, rng);
  EXPECT_THROW(adapter(Tensor::zeros({1, 2, 4}), {Tensor::zeros({1, 2, 4})}), DimensionError);
}

TEST(Adapter, AcceptsNarrowerInput) {
  Rng rng = make_rng(3, "adapter");
  const AdapterStack adapter(3, 4, 1, AdapterConfig{}, rng);
  EXPECT_EQ(adapter(Tensor::zeros({2, 5, 3}), {Tensor::zeros({2, 5, 4})}).shape(), (Shape{2, 5, 4}));
}

TEST(Decoder, OneScorePerSample) {
  Rng rng = make_rng(3, "decoder");
  const SentimentDecoder dec(8, 4, rng);
  EXPECT_EQ(dec(Tensor::filled({3, 5, 8}, 0.2)).shape(), (Shape{3}));
}

TEST(Decoder, ZeroInputGivesFiniteBiasOnlyOutput) {
  Rng rng = make_rng(3, "decoder");
  const SentimentDecoder dec(8, 4, rng);
  const Tensor y = dec(Tensor::zeros({2, 3, 8}));
  EXPECT_DOUBLE_EQ(y[0], y[1]);
}

TEST(Knowledge, EnhancedIsConcatenation) {
  const Tensor k = Tensor::filled({1, 2, 3}, 1.0), h = Tensor::filled({1, 2, 3}, 2.0);
  const Tensor u = knowledge_enhanced(k, h);
  EXPECT_EQ(u.shape(), (Shape{1, 2, 6}));
  EXPECT_DOUBLE_EQ(u[0], 1.0);
  EXPECT_DOUBLE_EQ(u[3], 2.0);
  EXPECT_THROW(knowledge_enhanced(k, Tensor::zeros({1, 3, 3})), DimensionError);
}

TEST(Knowledge, FreezingStopsGradients) {
  Rng rng = make_rng(3, "adapter");
  const AdapterStack adapter(4, 4, 1, AdapterConfig{}, rng);
  ParamList ps;
  adapter.collect("a", ps);
  set_frozen(ps, true);
  Tensor x = Tensor::filled({1, 2, 4}, 0.5, true);
  sum(adapter(x, {Tensor::zeros({1, 2, 4})})).backward();
  for (const auto& p : ps) EXPECT_FALSE(p.tensor.has_grad()) << p.name;
  EXPECT_TRUE(x.has_grad());
}
