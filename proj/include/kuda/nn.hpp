// Parameterized building blocks shared by the encoders and the fusion stack.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "kuda/ops.hpp"
#include "kuda/rng.hpp"

namespace kuda {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedTensor>;

/// Glorot-uniform [in, out] weight matrix.
inline Tensor glorot(Rng& rng, std::size_t in, std::size_t out) {
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  std::vector<double> w(in * out);
  for (auto& v : w) v = uniform(rng, -a, a);
  return Tensor::from({in, out}, std::move(w), true);
}

struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool zero_init = false)
      : weight(zero_init ? Tensor::zeros({in, out}, true) : glorot(rng, in, out)), bias(Tensor::zeros({out}, true)) {}

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }

  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }

  void collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;
  double eps = kLayerNormEps;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t d, double eps_ = kLayerNormEps)
      : gain(Tensor::filled({d}, 1.0, true)), bias(Tensor::zeros({d}, true)), eps(eps_) {}

  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias, eps); }

  void collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".gain", gain});
    out.push_back({prefix + ".bias", bias});
  }
};

/// Softmax weights captured from one attention call, row-major [B, H, Tq, Tk].
/// `log_partition` holds the per-row log-sum-exp of the scaled scores, [B, H, Tq],
/// which lets callers renormalize several attention calls against each other.
struct AttentionRecord {
  std::size_t batch = 0, heads = 0, query_len = 0, key_len = 0;
  std::vector<double> weights;
  std::vector<double> log_partition;

  double weight(std::size_t b, std::size_t h, std::size_t i, std::size_t j) const {
    return weights[((b * heads + h) * query_len + i) * key_len + j];
  }
  double lse(std::size_t b, std::size_t h, std::size_t i) const { return log_partition[(b * heads + h) * query_len + i]; }
};

/// Scaled dot-product attention, one slice of the model width per head.
struct MultiHeadAttention {
  Linear query, key, value, output;
  std::size_t heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t d_model, std::size_t n_heads, Rng& rng) : heads(n_heads) {
    if (n_heads == 0 || d_model % n_heads != 0)
      throw DimensionError("attention width " + std::to_string(d_model) + " is not divisible into " +
                           std::to_string(n_heads) + " heads");
    query = Linear(d_model, d_model, rng);
    key = Linear(d_model, d_model, rng);
    value = Linear(d_model, d_model, rng);
    output = Linear(d_model, d_model, rng);
  }

  std::size_t width() const { return query.in_features(); }

  Tensor operator()(const Tensor& q_in, const Tensor& kv_in, AttentionRecord* record = nullptr) const {
    return forward(q_in, kv_in, kv_in, record);
  }

  /// q_in: [B,Tq,d] (or [Tq,d]); k_in, v_in: [B,Tk,d]. Returns the shape of q_in.
  Tensor forward(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in, AttentionRecord* record = nullptr) const {
    const bool unbatched = q_in.rank() == 2;
    auto lift = [&](const Tensor& t) { return t.rank() == 2 ? reshape(t, {1, t.dim(0), t.dim(1)}) : t; };
    const Tensor qx = lift(q_in), kx = lift(k_in), vx = lift(v_in);
    if (qx.rank() != 3 || kx.rank() != 3 || vx.rank() != 3 || kx.shape() != vx.shape() || qx.dim(0) != kx.dim(0) ||
        qx.dim(2) != width() || kx.dim(2) != width())
      throw DimensionError("attention: incompatible query " + shape_str(q_in.shape()) + " / key " +
                           shape_str(k_in.shape()) + " / value " + shape_str(v_in.shape()));
    const std::size_t batch = qx.dim(0), tq = qx.dim(1), tk = kx.dim(1), dh = width() / heads;
    const Tensor q = query(qx), k = key(kx), v = value(vx);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    if (record) {
      record->batch = batch;
      record->heads = heads;
      record->query_len = tq;
      record->key_len = tk;
      record->weights.assign(batch * heads * tq * tk, 0.0);
      record->log_partition.assign(batch * heads * tq, 0.0);
    }
    std::vector<Tensor> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      const Tensor qh = slice(q, 2, h * dh, dh);
      const Tensor kh = slice(k, 2, h * dh, dh);
      const Tensor vh = slice(v, 2, h * dh, dh);
      const Tensor scores = scale(bmm(qh, transpose_last2(kh)), inv_sqrt);
      const Tensor attn = softmax(scores, 2);
      if (record) {
        auto s = scores.data();
        auto w = attn.data();
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t i = 0; i < tq; ++i) {
            const double* row = s.data() + (b * tq + i) * tk;
            const double mx = *std::max_element(row, row + tk);
            double z = 0.0;
            for (std::size_t j = 0; j < tk; ++j) {
              z += std::exp(row[j] - mx);
              record->weights[((b * heads + h) * tq + i) * tk + j] = w[(b * tq + i) * tk + j];
            }
            record->log_partition[(b * heads + h) * tq + i] = mx + std::log(z);
          }
      }
      outs.push_back(bmm(attn, vh));
    }
    Tensor merged = heads == 1 ? outs.front() : concat(outs, 2);
    Tensor y = output(merged);
    return unbatched ? reshape(y, {tq, width()}) : y;
  }

  void collect(const std::string& prefix, ParamList& out) const {
    query.collect(prefix + ".query", out);
    key.collect(prefix + ".key", out);
    value.collect(prefix + ".value", out);
    output.collect(prefix + ".output", out);
  }
};

/// Two-layer GELU feed-forward.
struct FeedForward {
  Linear expand_layer, contract_layer;

  FeedForward() = default;
  FeedForward(std::size_t d, std::size_t hidden, Rng& rng) : expand_layer(d, hidden, rng), contract_layer(hidden, d, rng) {}

  Tensor operator()(const Tensor& x) const { return contract_layer(gelu(expand_layer(x))); }

  void collect(const std::string& prefix, ParamList& out) const {
    expand_layer.collect(prefix + ".expand", out);
    contract_layer.collect(prefix + ".contract", out);
  }
};

/// Post-LN transformer encoder layer.
struct EncoderLayer {
  MultiHeadAttention attention;
  LayerNorm attention_norm;
  FeedForward ffn;
  LayerNorm ffn_norm;

  EncoderLayer() = default;
  EncoderLayer(std::size_t d, std::size_t heads, std::size_t ffn_hidden, Rng& rng)
      : attention(d, heads, rng), attention_norm(d), ffn(d, ffn_hidden, rng), ffn_norm(d) {}

  Tensor operator()(const Tensor& x) const {
    const Tensor a = attention_norm(add(x, attention(x, x)));
    return ffn_norm(add(a, ffn(a)));
  }

  void collect(const std::string& prefix, ParamList& out) const {
    attention.collect(prefix + ".attention", out);
    attention_norm.collect(prefix + ".attention_norm", out);
    ffn.collect(prefix + ".ffn", out);
    ffn_norm.collect(prefix + ".ffn_norm", out);
  }
};

/// Fixed sinusoidal position table [length, d].
inline Tensor sinusoidal_positions(std::size_t length, std::size_t d) {
  std::vector<double> pe(length * d);
  for (std::size_t t = 0; t < length; ++t)
    for (std::size_t i = 0; i < d; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      pe[t * d + i] = (i % 2 == 0) ? std::sin(static_cast<double>(t) * freq) : std::cos(static_cast<double>(t) * freq);
    }
  return Tensor::from({length, d}, std::move(pe));
}

/// Broadcasts a [T, d] table over a batch: [B, T, d].
inline Tensor tile_batch(const Tensor& x, std::size_t batch) {
  return expand(reshape(x, {1, x.dim(0), x.dim(1)}), {batch, x.dim(0), x.dim(1)});
}

/// Broadcasts one scalar per batch row over [B, T, d].
inline Tensor expand_per_sample(std::span<const double> per_sample, const Shape& target) {
  const Tensor r = Tensor::from({per_sample.size(), 1, 1}, {per_sample.begin(), per_sample.end()});
  return expand(r, target);
}

}  // namespace kuda
