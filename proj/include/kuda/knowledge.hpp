// Sentiment-knowledge injection: adapter stack over encoder taps, the
// knowledge-enhanced representation U = [K ; H], and unimodal decoders.
#pragma once

#include <string>
#include <vector>

#include "kuda/encoders.hpp"

namespace kuda {

enum class TapCombine { add, average };

struct AdapterConfig {
  std::size_t bottleneck = 0;  // 0 -> width / 2
  TapCombine combine = TapCombine::add;
};

inline void set_frozen(const ParamList& params, bool frozen) {
  for (auto p : params) p.tensor.set_requires_grad(!frozen);
}

/// Stacked bottleneck blocks. Block 1 reads proj(I) combined with tap 1; block i
/// reads block i-1's output combined with tap i. Each block is z + Up(GELU(Down(z))).
class AdapterStack {
 public:
  AdapterStack() = default;
  AdapterStack(std::size_t input_width, std::size_t width, std::size_t blocks, const AdapterConfig& cfg, Rng& rng)
      : combine_(cfg.combine) {
    if (blocks == 0) throw std::invalid_argument("adapter stack needs at least one block");
    const std::size_t bn = cfg.bottleneck ? cfg.bottleneck : std::max<std::size_t>(1, width / 2);
    input_projection_ = Linear(input_width, width, rng);
    for (std::size_t i = 0; i < blocks; ++i) blocks_.push_back({Linear(width, bn, rng), Linear(bn, width, rng, true)});
  }

  std::size_t block_count() const { return blocks_.size(); }

  /// K_m from the modality input and its encoder taps.
  Tensor operator()(const Tensor& input, const std::vector<Tensor>& taps) const {
    if (taps.size() != blocks_.size())
      throw DimensionError("adapter: " + std::to_string(taps.size()) + " taps for " + std::to_string(blocks_.size()) +
                           " blocks");
    Tensor x = input_projection_(input);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      Tensor z = add(x, taps[i]);
      if (combine_ == TapCombine::average) z = scale(z, 0.5);
      x = add(z, blocks_[i].up(gelu(blocks_[i].down(z))));
    }
    return x;
  }

  void collect(const std::string& prefix, ParamList& out) const {
    input_projection_.collect(prefix + ".input_projection", out);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      blocks_[i].down.collect(prefix + ".block" + std::to_string(i) + ".down", out);
      blocks_[i].up.collect(prefix + ".block" + std::to_string(i) + ".up", out);
    }
  }

 private:
  struct Block {
    Linear down, up;
  };
  TapCombine combine_ = TapCombine::add;
  Linear input_projection_;
  std::vector<Block> blocks_;
};

/// Mean-pools U over length, then a 2-hidden-layer ReLU MLP to one score per sample.
class SentimentDecoder {
 public:
  SentimentDecoder() = default;
  SentimentDecoder(std::size_t in, std::size_t hidden, Rng& rng)
      : first_(in, hidden, rng), second_(hidden, hidden, rng), head_(hidden, 1, rng) {}

  /// U: [B, T, 2d] -> [B].
  Tensor operator()(const Tensor& u) const {
    const Tensor pooled = mean_axis(u, 1);
    const Tensor y = head_(relu(second_(relu(first_(pooled)))));
    return reshape(y, {u.dim(0)});
  }

  void collect(const std::string& prefix, ParamList& out) const {
    first_.collect(prefix + ".hidden0", out);
    second_.collect(prefix + ".hidden1", out);
    head_.collect(prefix + ".head", out);
  }

 private:
  Linear first_, second_, head_;
};

/// Knowledge-enhanced representation: [K ; H] along the feature axis.
inline Tensor knowledge_enhanced(const Tensor& knowledge, const Tensor& hidden) {
  if (knowledge.shape() != hidden.shape())
    throw DimensionError("knowledge/hidden shape mismatch " + shape_str(knowledge.shape()) + " vs " +
                         shape_str(hidden.shape()));
  return concat({knowledge, hidden}, knowledge.rank() - 1);
}

struct KnowledgeBundle {
  Tensor hidden;     // H_m
  Tensor knowledge;  // K_m
  Tensor enhanced;   // U_m
  Tensor score;      // raw unimodal prediction, [B]
};

}  // namespace kuda
