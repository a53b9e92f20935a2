// The assembled network: encoders + adapters + decoders per modality, the
// projectors, the fusion stack and the output/correlation heads.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "kuda/fusion.hpp"
#include "kuda/knowledge.hpp"
#include "kuda/objectives.hpp"

namespace kuda {

struct ModelConfig {
  PerModality<EncoderConfig> encoders;
  PerModality<std::size_t> lengths{8, 8, 8};  // T_m expected by the projectors
  AdapterConfig adapter;
  std::size_t decoder_hidden = 0;  // 0 -> d_m
  FusionConfig fusion;
  FusionStrategy strategy = FusionStrategy::dynamic;
  std::size_t output_hidden = 0;  // 0 -> d_f
  bool use_adapters = true;       // false: K_m := H_m
  bool use_decoders = true;       // false: no unimodal scores, ratios fixed to 1

  static ModelConfig desk(std::size_t vocab_size) {
    ModelConfig c;
    auto& t = c.encoders[index_of(Modality::text)];
    t.width = 32;
    t.layers = 4;
    t.heads = 4;
    t.taps = {2, 4};
    t.positions = PositionEncoding::learned;
    t.vocab_size = vocab_size;
    auto& v = c.encoders[index_of(Modality::vision)];
    v.width = 16;
    v.layers = 2;
    v.heads = 4;
    auto& a = c.encoders[index_of(Modality::audio)];
    a.width = 24;
    a.layers = 2;
    a.heads = 4;
    c.fusion.length = 8;
    c.fusion.width = 32;
    c.fusion.blocks = 2;
    return c;
  }

  void validate() const {
    for (std::size_t m = 0; m < 3; ++m) {
      encoders[m].validate(name_of(kModalities[m]));
      if (lengths[m] == 0 || lengths[m] > encoders[m].max_length)
        throw std::invalid_argument(std::string(name_of(kModalities[m])) + ": sequence length " +
                                    std::to_string(lengths[m]) + " outside position table");
    }
    if (fusion.length == 0 || fusion.width == 0) throw std::invalid_argument("fusion length/width must be positive");
    if (fusion.width % fusion.cross_heads != 0 || fusion.width % fusion.self_heads != 0)
      throw std::invalid_argument("fusion width not divisible by head count");
  }
};

/// A label-free multimodal batch. Evaluation only ever sees this type.
struct MultimodalBatch {
  std::vector<std::string> ids;
  PerModality<ModalityBatch> inputs;
  std::size_t size() const { return ids.size(); }
};

struct ForwardResult {
  PerModality<KnowledgeBundle> knowledge;
  PerModality<std::vector<double>> scores;  // unimodal predictions (values)
  BatchRatios ratios;
  PerModality<Tensor> projected;  // Ubar_m
  Tensor fused;                   // F^L
  Tensor prediction;              // [B]
  std::vector<BlockTrace> traces;
};

/// Maps unimodal score values to per-sample ratios (train: label-informed).
using RatioSource = std::function<BatchRatios(const PerModality<std::vector<double>>&)>;

class KudaModel {
 public:
  KudaModel() = default;
  KudaModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    for (std::size_t m = 0; m < 3; ++m) {
      const auto& ec = cfg_.encoders[m];
      Rng rng = make_rng(seed, std::string("branch.") + std::string(name_of(kModalities[m])));
      Branch& b = branches_[m];
      b.encoder = ModalityEncoder(kModalities[m], ec, rng);
      if (cfg_.use_adapters) b.adapter = AdapterStack(kModalities[m] == Modality::text ? ec.width : ec.feature_dim(), ec.width,
                                                     b.encoder.tap_count(), cfg_.adapter, rng);
      if (cfg_.use_decoders)
        b.decoder = SentimentDecoder(2 * ec.width, cfg_.decoder_hidden ? cfg_.decoder_hidden : ec.width, rng);
      Rng prng = make_rng(seed, std::string("projector.") + std::string(name_of(kModalities[m])));
      projectors_[m] = Projector(cfg_.lengths[m], 2 * ec.width, cfg_.fusion.length, cfg_.fusion.width, prng);
      Rng nrng = make_rng(seed, std::string("nce.") + std::string(name_of(kModalities[m])));
      nce_maps_[m] = glorot(nrng, cfg_.fusion.width, cfg_.fusion.width);
    }
    Rng frng = make_rng(seed, "fusion");
    if (cfg_.strategy == FusionStrategy::dynamic)
      for (std::size_t n = 0; n < cfg_.fusion.blocks; ++n) blocks_.emplace_back(cfg_.fusion, frng);
    if (cfg_.strategy == FusionStrategy::concat) concat_map_ = Linear(3 * cfg_.fusion.width, cfg_.fusion.width, frng);
    Rng orng = make_rng(seed, "output");
    const std::size_t oh = cfg_.output_hidden ? cfg_.output_hidden : cfg_.fusion.width;
    output_hidden_ = Linear(cfg_.fusion.width, oh, orng);
    output_head_ = Linear(oh, 1, orng);
  }

  const ModelConfig& config() const { return cfg_; }

  /// Encoding with knowledge injection for all three modalities (stage 1 forward).
  PerModality<KnowledgeBundle> encode(const MultimodalBatch& batch) const {
    PerModality<KnowledgeBundle> out;
    for (std::size_t m = 0; m < 3; ++m) {
      const Branch& b = branches_[m];
      const ModalityBatch& in = batch.inputs[m];
      if (in.length != cfg_.lengths[m])
        throw DimensionError(std::string(name_of(kModalities[m])) + ": sequence length " + std::to_string(in.length) +
                             " but model expects " + std::to_string(cfg_.lengths[m]));
      const EncoderOutput enc = b.encoder(in);
      KnowledgeBundle& kb = out[m];
      kb.hidden = enc.hidden;
      kb.knowledge = cfg_.use_adapters ? b.adapter(enc.input, enc.taps) : enc.hidden;
      kb.enhanced = knowledge_enhanced(kb.knowledge, kb.hidden);
      if (cfg_.use_decoders) kb.score = b.decoder(kb.enhanced);
    }
    return out;
  }

  /// Full forward. `ratios` decides R from the unimodal scores.
  ForwardResult forward(const MultimodalBatch& batch, const RatioSource& ratios, bool record_attention = false) const {
    ForwardResult r;
    r.knowledge = encode(batch);
    const std::size_t n = batch.size();
    for (std::size_t m = 0; m < 3; ++m)
      r.scores[m] = cfg_.use_decoders ? std::vector<double>(r.knowledge[m].score.data().begin(), r.knowledge[m].score.data().end())
                                      : std::vector<double>(n, 0.0);
    r.ratios = cfg_.use_decoders ? ratios(r.scores) : unit_ratios(n);
    PerModality<Tensor> enhanced{r.knowledge[0].enhanced, r.knowledge[1].enhanced, r.knowledge[2].enhanced};
    SeededFusion seed = project_and_seed(enhanced, projectors_);
    r.projected = seed.projected;
    switch (cfg_.strategy) {
      case FusionStrategy::dynamic:
        r.fused = run_blocks(blocks_, seed.initial, r.projected, r.ratios, record_attention ? &r.traces : nullptr);
        break;
      case FusionStrategy::addition:
        r.fused = seed.initial;
        break;
      case FusionStrategy::concat:
        r.fused = baseline_fuse(FusionStrategy::concat, r.projected, &concat_map_);
        break;
    }
    const Tensor pooled = mean_axis(r.fused, 1);
    r.prediction = reshape(output_head_(relu(output_hidden_(pooled))), {n});
    return r;
  }

  /// Test-time forward: ratios fixed to 1, no label anywhere on the path.
  ForwardResult predict(const MultimodalBatch& batch, bool record_attention = false) const {
    return forward(batch, [n = batch.size()](const PerModality<std::vector<double>>&) { return unit_ratios(n); },
                   record_attention);
  }

  /// Sum over modalities of InfoNCE between pooled F^L and pooled Ubar_m.
  Tensor correlation_loss(const ForwardResult& r) const {
    const Tensor f = mean_axis(r.fused, 1);
    Tensor total;
    for (std::size_t m = 0; m < 3; ++m) {
      const Tensor l = nce_correlation(f, mean_axis(r.projected[m], 1), nce_maps_[m]);
      total = m == 0 ? l : add(total, l);
    }
    return total;
  }

  ParamList encoder_parameters() const {
    ParamList out;
    for (std::size_t m = 0; m < 3; ++m) branches_[m].encoder.collect(prefix(m) + ".encoder", out);
    return out;
  }

  /// Adapter + decoder parameters: what stage 2 keeps frozen.
  ParamList knowledge_parameters() const {
    ParamList out;
    for (std::size_t m = 0; m < 3; ++m) {
      if (cfg_.use_adapters) branches_[m].adapter.collect(prefix(m) + ".adapter", out);
      if (cfg_.use_decoders) branches_[m].decoder.collect(prefix(m) + ".decoder", out);
    }
    return out;
  }

  ParamList stage1_parameters() const {
    ParamList out = encoder_parameters();
    for (auto& p : knowledge_parameters()) out.push_back(p);
    return out;
  }

  ParamList fusion_parameters() const {
    ParamList out;
    for (std::size_t m = 0; m < 3; ++m) projectors_[m].collect("fusion.projector." + prefix(m), out);
    for (std::size_t n = 0; n < blocks_.size(); ++n) blocks_[n].collect("fusion.block" + std::to_string(n), out);
    if (cfg_.strategy == FusionStrategy::concat) concat_map_.collect("fusion.concat_map", out);
    output_hidden_.collect("output.hidden", out);
    output_head_.collect("output.head", out);
    for (std::size_t m = 0; m < 3; ++m) out.push_back({"correlation." + prefix(m) + ".bilinear", nce_maps_[m]});
    return out;
  }

  ParamList parameters() const {
    ParamList out = stage1_parameters();
    for (auto& p : fusion_parameters()) out.push_back(p);
    return out;
  }

  const std::vector<DynamicAttentionBlock>& blocks() const { return blocks_; }

 private:
  struct Branch {
    ModalityEncoder encoder;
    AdapterStack adapter;
    SentimentDecoder decoder;
  };

  static std::string prefix(std::size_t m) { return std::string(name_of(kModalities[m])); }

  ModelConfig cfg_;
  PerModality<Branch> branches_;
  PerModality<Projector> projectors_;
  std::vector<DynamicAttentionBlock> blocks_;
  Linear concat_map_;
  Linear output_hidden_, output_head_;
  PerModality<Tensor> nce_maps_;
};

}  // namespace kuda
