#include <gtest/gtest.h>

#include "kuda/ops.hpp"

using namespace kuda;

TEST(Tensor, RejectsBadShapes) {
  EXPECT_THROW(Tensor::zeros({}), DimensionError);
  EXPECT_THROW(Tensor::zeros({2, 0}), DimensionError);
  EXPECT_THROW(Tensor::zeros({1, 2, 3, 4}), DimensionError);
  EXPECT_THROW(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
}

TEST(Tensor, ItemRequiresScalar) {
  EXPECT_DOUBLE_EQ(Tensor::scalar(2.5).item(), 2.5);
  EXPECT_THROW(Tensor::zeros({2}).item(), DimensionError);
}

TEST(Tensor, BackwardOnNonScalarThrows) {
  Tensor x = Tensor::filled({3}, 1.0, true);
  EXPECT_THROW(scale(x, 2.0).backward(), GraphError);
}

TEST(Tensor, BackwardTwiceThrows) {
  Tensor x = Tensor::filled({3}, 1.0, true);
  Tensor loss = sum(mul(x, x));
  loss.backward();
  EXPECT_THROW(loss.backward(), GraphError);
}

TEST(Tensor, BackwardOnDetachedThrows) {
  Tensor x = Tensor::filled({3}, 1.0, true);
  EXPECT_THROW(sum(x).detach().backward(), GraphError);
}

TEST(Tensor, GradientsAccumulateAcrossLosses) {
  Tensor x = Tensor::from({2}, {1.0, -2.0}, true);
  sum(scale(x, 3.0)).backward();
  sum(scale(x, 2.0)).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 5.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 5.0);
  x.zero_grad();
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.0);
}

TEST(Tensor, BackwardIsLinearInTheLoss) {
  Tensor x = Tensor::from({3}, {0.3, -0.2, 1.1}, true);
  sum(exp(x)).backward();
  std::vector<double> g1(x.grad().begin(), x.grad().end());
  x.zero_grad();
  scale(sum(exp(x)), 4.0).backward();
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(x.grad()[i], 4.0 * g1[i], 1e-12);
}

TEST(Tensor, NoGradGuardSkipsRecording) {
  Tensor x = Tensor::filled({2}, 1.0, true);
  Tensor y;
  {
    NoGradGuard g;
    y = mul(x, x);
  }
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(mul(x, x).requires_grad());
}

TEST(Tensor, FrozenLeafReceivesNoGradient) {
  Tensor w = Tensor::filled({2}, 1.0, true);
  Tensor frozen = Tensor::filled({2}, 2.0, true);
  frozen.set_requires_grad(false);
  sum(mul(w, frozen)).backward();
  EXPECT_FALSE(frozen.has_grad());
  EXPECT_DOUBLE_EQ(w.grad()[0], 2.0);
}

TEST(Tensor, OnlyLeavesAreMutable) {
  Tensor x = Tensor::filled({2}, 1.0, true);
  Tensor y = scale(x, 2.0);
  EXPECT_THROW(y.mutable_data(), GraphError);
  EXPECT_NO_THROW(x.mutable_data());
}

TEST(Tensor, SharedSubexpressionGetsBothPaths) {
  Tensor x = Tensor::scalar(3.0, true);
  Tensor y = mul(x, x);
  sum(add(y, y)).backward();  // d/dx 2x^2 = 4x
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
}
