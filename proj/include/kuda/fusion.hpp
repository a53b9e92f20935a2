// Sentiment ratios, length/width unification, dynamic attention blocks and the
// addition/concatenation fusers they are compared against.
#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "kuda/modality.hpp"
#include "kuda/nn.hpp"

namespace kuda {

enum class RatioMode { train, test };

struct SentimentRatio {
  PerModality<double> r{1.0, 1.0, 1.0};
  double k = 1.0;
  RatioMode mode = RatioMode::test;
};

/// Training-time ratios: D_m = exp(-k |yhat_m - y|^2), R_m = D_m / sum D.
/// Reads the ground-truth label, so it refuses to run in test mode.
inline SentimentRatio sentiment_ratio(const PerModality<double>& y_hat, double y, double k,
                                      RatioMode mode = RatioMode::train) {
  if (mode != RatioMode::train) throw std::logic_error("sentiment_ratio: the test path must not read labels");
  if (!(k > 0.0)) throw std::invalid_argument("sentiment_ratio: slope k must be positive");
  PerModality<double> e{};
  for (std::size_t m = 0; m < 3; ++m) e[m] = k * (y_hat[m] - y) * (y_hat[m] - y);
  // Shifting by the smallest exponent leaves R unchanged and keeps the sum away from underflow.
  const double lo = *std::min_element(e.begin(), e.end());
  SentimentRatio out;
  out.k = k;
  out.mode = RatioMode::train;
  double z = 0.0;
  for (std::size_t m = 0; m < 3; ++m) z += (out.r[m] = std::exp(-(e[m] - lo)));
  for (auto& v : out.r) v /= z;
  return out;
}

/// Test-time ratios are fixed to exactly 1 per modality.
inline SentimentRatio test_ratio(double k = 1.0) { return SentimentRatio{{1.0, 1.0, 1.0}, k, RatioMode::test}; }

/// Per-sample ratios for a batch, laid out per modality.
using BatchRatios = PerModality<std::vector<double>>;

inline BatchRatios unit_ratios(std::size_t batch) {
  return {std::vector<double>(batch, 1.0), std::vector<double>(batch, 1.0), std::vector<double>(batch, 1.0)};
}

/// Two linear maps: length T_m -> T_f, then width 2 d_m -> d_f.
class Projector {
 public:
  Projector() = default;
  Projector(std::size_t in_length, std::size_t in_width, std::size_t out_length, std::size_t out_width, Rng& rng)
      : length_map_(in_length, out_length, rng), width_map_(in_width, out_width, rng) {}

  Tensor operator()(const Tensor& u) const {
    if (u.rank() != 3 || u.dim(1) != length_map_.in_features() || u.dim(2) != width_map_.in_features())
      throw DimensionError("projector expects [B," + std::to_string(length_map_.in_features()) + "," +
                           std::to_string(width_map_.in_features()) + "], got " + shape_str(u.shape()));
    const Tensor along_length = transpose_last2(length_map_(transpose_last2(u)));
    return width_map_(along_length);
  }

  void collect(const std::string& prefix, ParamList& out) const {
    length_map_.collect(prefix + ".length_map", out);
    width_map_.collect(prefix + ".width_map", out);
  }

 private:
  Linear length_map_, width_map_;
};

struct SeededFusion {
  PerModality<Tensor> projected;  // Ubar_m, [B, T_f, d_f]
  Tensor initial;                 // F^0 = sum of Ubar_m
};

inline SeededFusion project_and_seed(const PerModality<Tensor>& enhanced, const PerModality<Projector>& projectors) {
  SeededFusion out;
  for (std::size_t m = 0; m < 3; ++m) out.projected[m] = projectors[m](enhanced[m]);
  for (std::size_t m = 1; m < 3; ++m)
    if (out.projected[m].shape() != out.projected[0].shape())
      throw DimensionError("projected modalities disagree: " + shape_str(out.projected[0].shape()) + " vs " +
                           shape_str(out.projected[m].shape()));
  out.initial = add(add(out.projected[0], out.projected[1]), out.projected[2]);
  return out;
}

enum class BlockNorm { post, pre };

struct FusionConfig {
  std::size_t length = 8;  // T_f
  std::size_t width = 32;  // d_f
  std::size_t blocks = 2;  // L
  std::size_t cross_heads = 4;
  std::size_t self_heads = 4;
  std::size_t ffn_hidden = 0;  // 0 -> 4 * width
  BlockNorm norm = BlockNorm::post;
};

/// Cross-attention records of one block, one per modality branch.
struct BlockTrace {
  PerModality<AttentionRecord> cross;
};

/// One dynamic attention block. Per modality m:
///   Ft_m = LN(F + CAttn_m(F, Ubar_m, Ubar_m))
///   Fm   = LN(Ft_m + R_m * Ft_m)
/// then Ff = F + LN(sum_m Fm), followed by self-attention and a feed-forward,
/// each with a residual and LayerNorm (post-norm by default).
class DynamicAttentionBlock {
 public:
  DynamicAttentionBlock() = default;
  DynamicAttentionBlock(const FusionConfig& cfg, Rng& rng) : norm_(cfg.norm) {
    const std::size_t d = cfg.width;
    for (std::size_t m = 0; m < 3; ++m) {
      cross_[m] = MultiHeadAttention(d, cfg.cross_heads, rng);
      cross_norm_[m] = LayerNorm(d);
      ratio_norm_[m] = LayerNorm(d);
    }
    sum_norm_ = LayerNorm(d);
    self_ = MultiHeadAttention(d, cfg.self_heads, rng);
    self_norm_ = LayerNorm(d);
    ffn_ = FeedForward(d, cfg.ffn_hidden ? cfg.ffn_hidden : 4 * d, rng);
    ffn_norm_ = LayerNorm(d);
  }

  Tensor operator()(const Tensor& prev, const PerModality<Tensor>& projected, const BatchRatios& ratios,
                    BlockTrace* trace = nullptr) const {
    Tensor mixed;
    for (std::size_t m = 0; m < 3; ++m) {
      if (projected[m].shape() != prev.shape())
        throw DimensionError("dynamic attention block: modality " + std::string(name_of(kModalities[m])) + " is " +
                             shape_str(projected[m].shape()) + ", fusion state is " + shape_str(prev.shape()));
      if (ratios[m].size() != prev.dim(0)) throw DimensionError("dynamic attention block: ratio count != batch");
      const Tensor attended = cross_[m](prev, projected[m], trace ? &trace->cross[m] : nullptr);
      const Tensor ft = cross_norm_[m](add(prev, attended));
      const Tensor weighted = mul(expand_per_sample(ratios[m], ft.shape()), ft);
      const Tensor fm = ratio_norm_[m](add(ft, weighted));
      mixed = m == 0 ? fm : add(mixed, fm);
    }
    const Tensor fused = add(prev, sum_norm_(mixed));
    if (norm_ == BlockNorm::post) {
      const Tensor a = self_norm_(add(fused, self_(fused, fused)));
      return ffn_norm_(add(a, ffn_(a)));
    }
    const Tensor n1 = self_norm_(fused);
    const Tensor a = add(fused, self_(n1, n1));
    return add(a, ffn_(ffn_norm_(a)));
  }

  void collect(const std::string& prefix, ParamList& out) const {
    for (std::size_t m = 0; m < 3; ++m) {
      const std::string tag = prefix + "." + std::string(name_of(kModalities[m]));
      cross_[m].collect(tag + ".cross_attention", out);
      cross_norm_[m].collect(tag + ".cross_norm", out);
      ratio_norm_[m].collect(tag + ".ratio_norm", out);
    }
    sum_norm_.collect(prefix + ".sum_norm", out);
    self_.collect(prefix + ".self_attention", out);
    self_norm_.collect(prefix + ".self_norm", out);
    ffn_.collect(prefix + ".ffn", out);
    ffn_norm_.collect(prefix + ".ffn_norm", out);
  }

 private:
  BlockNorm norm_ = BlockNorm::post;
  PerModality<MultiHeadAttention> cross_;
  PerModality<LayerNorm> cross_norm_, ratio_norm_;
  LayerNorm sum_norm_;
  MultiHeadAttention self_;
  LayerNorm self_norm_;
  FeedForward ffn_;
  LayerNorm ffn_norm_;
};

inline void require_finite(const Tensor& t, const std::string& where) {
  for (double v : t.data())
    if (!std::isfinite(v)) throw NumericalError(where + " produced non-finite values");
}

/// Runs F^0 through the stacked blocks; returns F^L.
inline Tensor run_blocks(const std::vector<DynamicAttentionBlock>& blocks, const Tensor& initial,
                         const PerModality<Tensor>& projected, const BatchRatios& ratios,
                         std::vector<BlockTrace>* traces = nullptr) {
  Tensor f = initial;
  if (traces) traces->assign(blocks.size(), {});
  for (std::size_t n = 0; n < blocks.size(); ++n) {
    f = blocks[n](f, projected, ratios, traces ? &(*traces)[n] : nullptr);
    require_finite(f, "dynamic attention block " + std::to_string(n));
  }
  return f;
}

enum class FusionStrategy { dynamic, addition, concat };

inline FusionStrategy fusion_strategy_from_name(std::string_view s) {
  if (s == "dynamic") return FusionStrategy::dynamic;
  if (s == "addition") return FusionStrategy::addition;
  if (s == "concat") return FusionStrategy::concat;
  throw std::invalid_argument("unknown fusion strategy '" + std::string(s) + "'");
}

inline std::string_view name_of(FusionStrategy s) {
  switch (s) {
    case FusionStrategy::dynamic: return "dynamic";
    case FusionStrategy::addition: return "addition";
    case FusionStrategy::concat: return "concat";
  }
  return "?";
}

/// Static fusion baselines. `concat_map` ([3 d_f, d_f]) is required for concat.
inline Tensor baseline_fuse(FusionStrategy strategy, const PerModality<Tensor>& projected,
                            const Linear* concat_map = nullptr) {
  for (std::size_t m = 1; m < 3; ++m)
    if (projected[m].shape() != projected[0].shape())
      throw DimensionError("baseline_fuse: modality shapes disagree " + shape_str(projected[0].shape()) + " vs " +
                           shape_str(projected[m].shape()));
  switch (strategy) {
    case FusionStrategy::addition:
      return add(add(projected[0], projected[1]), projected[2]);
    case FusionStrategy::concat: {
      if (!concat_map) throw std::invalid_argument("baseline_fuse: concat needs a projection back to d_f");
      const std::size_t axis = projected[0].rank() - 1;
      return (*concat_map)(concat({projected[0], projected[1], projected[2]}, axis));
    }
    case FusionStrategy::dynamic:
      break;
  }
  throw std::invalid_argument("baseline_fuse: strategy must be addition or concat");
}

}  // namespace kuda
