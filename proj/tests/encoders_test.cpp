#include <gtest/gtest.h>

#include "kuda/encoders.hpp"

using namespace kuda;

namespace {
EncoderConfig text_config() {
  EncoderConfig c;
  c.width = 8, c.layers = 3, c.heads = 2, c.taps = {1, 3}, c.vocab_size = 10, c.max_length = 6;
  c.positions = PositionEncoding::learned;
  return c;
}
ModalityBatch tokens(std::size_t batch, std::size_t length) {
  ModalityBatch b{batch, length, {}, {}};
  for (std::size_t i = 0; i < batch * length; ++i) b.ids.push_back(static_cast<int>(i % 10));
  return b;
}
}  // namespace

TEST(Encoder, TextShapesAndTaps) {
  Rng rng = make_rng(1, "enc");
  const ModalityEncoder enc(Modality::text, text_config(), rng);
  const EncoderOutput out = enc(tokens(2, 5));
  EXPECT_EQ(out.hidden.shape(), (Shape{2, 5, 8}));
  EXPECT_EQ(out.input.shape(), (Shape{2, 5, 8}));
  ASSERT_EQ(out.taps.size(), 2u);
  // The last tap is the last layer.
  EXPECT_EQ(std::vector<double>(out.taps[1].data().begin(), out.taps[1].data().end()),
            std::vector<double>(out.hidden.data().begin(), out.hidden.data().end()));
}

TEST(Encoder, FeatureModalityUsesRawInput) {
  EncoderConfig c;
  c.width = 4, c.layers = 2, c.heads = 2, c.input_dim = 3;
  Rng rng = make_rng(1, "enc");
  const ModalityEncoder enc(Modality::vision, c, rng);
  ModalityBatch b{2, 3, {}, Tensor::filled({2, 3, 3}, 0.5)};
  const EncoderOutput out = enc(b);
  EXPECT_EQ(out.hidden.shape(), (Shape{2, 3, 4}));
  EXPECT_EQ(out.input.shape(), (Shape{2, 3, 3}));
  EXPECT_EQ(out.taps.size(), 2u);  // empty tap list means every layer
}

TEST(Encoder, DeterministicForSeed) {
  Rng r1 = make_rng(5, "enc"), r2 = make_rng(5, "enc");
  const ModalityEncoder a(Modality::text, text_config(), r1), b(Modality::text, text_config(), r2);
  const auto x = a(tokens(1, 4)).hidden, y = b(tokens(1, 4)).hidden;
  EXPECT_EQ(std::vector<double>(x.data().begin(), x.data().end()), std::vector<double>(y.data().begin(), y.data().end()));
}

TEST(Encoder, RejectsTooLongSequence) {
  Rng rng = make_rng(1, "enc");
  const ModalityEncoder enc(Modality::text, text_config(), rng);
  EXPECT_THROW(enc(tokens(1, 7)), DimensionError);
}

TEST(Encoder, RejectsWrongFeatureWidth) {
  EncoderConfig c;
  c.width = 4, c.heads = 2;
  Rng rng = make_rng(1, "enc");
  const ModalityEncoder enc(Modality::audio, c, rng);
  EXPECT_THROW(enc(ModalityBatch{1, 2, {}, Tensor::zeros({1, 2, 5})}), DimensionError);
}

TEST(Encoder, RejectsNonFiniteFeatures) {
  EncoderConfig c;
  c.width = 4, c.heads = 2;
  Rng rng = make_rng(1, "enc");
  const ModalityEncoder enc(Modality::audio, c, rng);
  EXPECT_THROW(enc(ModalityBatch{1, 1, {}, Tensor::from({1, 1, 4}, {0, NAN, 0, 0})}), NumericalError);
}

TEST(Encoder, ConfigValidation) {
  EncoderConfig c = text_config();
  c.taps = {0};
  EXPECT_THROW(c.validate("text"), std::invalid_argument);
  c.taps = {3, 2};
  EXPECT_THROW(c.validate("text"), std::invalid_argument);
  c.taps = {4};
  EXPECT_THROW(c.validate("text"), std::invalid_argument);
  c = text_config();
  c.heads = 3;
  EXPECT_THROW(c.validate("text"), std::invalid_argument);
}

TEST(Encoder, SinusoidalTableFirstRow) {
  const Tensor pe = sinusoidal_positions(3, 4);
  EXPECT_DOUBLE_EQ(pe[0], 0.0);  // sin(0)
  EXPECT_DOUBLE_EQ(pe[1], 1.0);  // cos(0)
}

TEST(Attention, RowsAreStochasticAndPartitionIsRecorded) {
  Rng rng = make_rng(2, "attn");
  const MultiHeadAttention mha(4, 2, rng);
  AttentionRecord rec;
  mha(Tensor::filled({2, 3, 4}, 0.1), Tensor::filled({2, 5, 4}, -0.2), &rec);
  EXPECT_EQ(rec.weights.size(), 2u * 2 * 3 * 5);
  EXPECT_EQ(rec.log_partition.size(), 2u * 2 * 3);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t i = 0; i < 3; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 5; ++j) s += rec.weight(b, h, i, j);
        EXPECT_NEAR(s, 1.0, 1e-12);
      }
}

TEST(Attention, WidthMustSplitAcrossHeads) {
  Rng rng = make_rng(2, "attn");
  EXPECT_THROW(MultiHeadAttention(6, 4, rng), DimensionError);
}
