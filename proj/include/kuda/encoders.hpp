// Per-modality transformer encoders producing the last-layer states H and
// the tapped intermediate states O that feed the adapters.
#pragma once

#include <string>
#include <vector>

#include "kuda/modality.hpp"
#include "kuda/nn.hpp"

namespace kuda {

enum class PositionEncoding { learned, sinusoidal };

struct EncoderConfig {
  std::size_t width = 32;      // d_m
  std::size_t input_dim = 0;   // raw feature width for vision/audio; 0 -> width
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ffn_hidden = 0;  // 0 -> 4 * width
  std::vector<std::size_t> taps;  // 1-based layer indices, strictly increasing; empty -> every layer
  PositionEncoding positions = PositionEncoding::sinusoidal;
  std::size_t max_length = 64;
  std::size_t vocab_size = 0;  // text only

  std::size_t feature_dim() const { return input_dim ? input_dim : width; }

  std::vector<std::size_t> resolved_taps() const {
    if (!taps.empty()) return taps;
    std::vector<std::size_t> all(layers);
    for (std::size_t i = 0; i < layers; ++i) all[i] = i + 1;
    return all;
  }

  void validate(std::string_view what) const {
    auto fail = [&](const std::string& msg) { throw std::invalid_argument(std::string(what) + " encoder: " + msg); };
    if (width == 0 || layers == 0) fail("width and layer count must be positive");
    if (heads == 0 || width % heads != 0) fail("width " + std::to_string(width) + " not divisible by heads");
    const auto t = resolved_taps();
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (t[i] < 1 || t[i] > layers) fail("tap " + std::to_string(t[i]) + " outside layers 1.." + std::to_string(layers));
      if (i > 0 && t[i] <= t[i - 1]) fail("taps must be strictly increasing");
    }
  }
};

/// A label-free batch of one modality: token ids for text, [B, T, d] features otherwise.
struct ModalityBatch {
  std::size_t batch = 0, length = 0;
  std::vector<int> ids;
  Tensor features;
};

struct EncoderOutput {
  Tensor input;              // I_m: embedded tokens for text, raw features otherwise
  Tensor hidden;             // H_m, last layer
  std::vector<Tensor> taps;  // O_m, one per configured tap
};

class ModalityEncoder {
 public:
  ModalityEncoder() = default;
  ModalityEncoder(Modality modality, EncoderConfig cfg, Rng& rng) : modality_(modality), cfg_(std::move(cfg)) {
    cfg_.validate(name_of(modality_));
    const std::size_t d = cfg_.width;
    if (modality_ == Modality::text) {
      if (cfg_.vocab_size == 0) throw std::invalid_argument("text encoder needs a vocabulary size");
      std::vector<double> emb(cfg_.vocab_size * d);
      for (auto& v : emb) v = 0.1 * normal(rng);
      token_embedding_ = Tensor::from({cfg_.vocab_size, d}, std::move(emb), true);
    } else {
      input_projection_ = Linear(cfg_.feature_dim(), d, rng);
    }
    if (cfg_.positions == PositionEncoding::learned) {
      std::vector<double> pos(cfg_.max_length * d);
      for (auto& v : pos) v = 0.02 * normal(rng);
      position_table_ = Tensor::from({cfg_.max_length, d}, std::move(pos), true);
    } else {
      position_table_ = sinusoidal_positions(cfg_.max_length, d);
    }
    const std::size_t hidden = cfg_.ffn_hidden ? cfg_.ffn_hidden : 4 * d;
    for (std::size_t i = 0; i < cfg_.layers; ++i) layers_.emplace_back(d, cfg_.heads, hidden, rng);
    taps_ = cfg_.resolved_taps();
  }

  Modality modality() const { return modality_; }
  const EncoderConfig& config() const { return cfg_; }
  std::size_t tap_count() const { return taps_.size(); }

  EncoderOutput operator()(const ModalityBatch& in) const {
    if (in.length == 0 || in.batch == 0) throw DimensionError(std::string(name_of(modality_)) + ": empty sequence");
    if (in.length > cfg_.max_length)
      throw DimensionError(std::string(name_of(modality_)) + ": sequence length " + std::to_string(in.length) +
                           " exceeds position table of " + std::to_string(cfg_.max_length));
    EncoderOutput out;
    Tensor x;
    if (modality_ == Modality::text) {
      x = embedding(token_embedding_, in.ids, in.batch, in.length);
    } else {
      const Shape expected{in.batch, in.length, cfg_.feature_dim()};
      if (in.features.shape() != expected)
        throw DimensionError(std::string(name_of(modality_)) + ": expected features " + shape_str(expected) + ", got " +
                             shape_str(in.features.shape()));
      for (double v : in.features.data())
        if (!std::isfinite(v)) throw NumericalError(std::string(name_of(modality_)) + ": non-finite input feature");
      x = input_projection_(in.features);
    }
    x = add(x, tile_batch(slice(position_table_, 0, 0, in.length), in.batch));
    out.input = modality_ == Modality::text ? x : in.features;
    std::size_t next_tap = 0;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      x = layers_[i](x);
      if (next_tap < taps_.size() && taps_[next_tap] == i + 1) {
        out.taps.push_back(x);
        ++next_tap;
      }
    }
    out.hidden = x;
    return out;
  }

  void collect(const std::string& prefix, ParamList& out) const {
    if (modality_ == Modality::text)
      out.push_back({prefix + ".token_embedding", token_embedding_});
    else
      input_projection_.collect(prefix + ".input_projection", out);
    if (cfg_.positions == PositionEncoding::learned) out.push_back({prefix + ".position_embedding", position_table_});
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(prefix + ".layer" + std::to_string(i), out);
  }

 private:
  Modality modality_ = Modality::text;
  EncoderConfig cfg_;
  Tensor token_embedding_;
  Linear input_projection_;
  Tensor position_table_;
  std::vector<EncoderLayer> layers_;
  std::vector<std::size_t> taps_;
};

}  // namespace kuda
