// Two-stage training, label-free evaluation, attention/feature dumps and the
// ablation switches.
#pragma once

#include <functional>
#include <limits>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "kuda/data.hpp"
#include "kuda/metrics.hpp"
#include "kuda/model.hpp"
#include "kuda/optim.hpp"
#include "kuda/serialize.hpp"

namespace kuda {

enum class Stage { pretrain, downstream };

enum class Ablation { no_KIP, no_Adapter, no_EKI, no_SR, no_DAF, no_CE };

inline constexpr std::array<Ablation, 6> kAblations{Ablation::no_KIP, Ablation::no_Adapter, Ablation::no_EKI,
                                                    Ablation::no_SR,  Ablation::no_DAF,     Ablation::no_CE};

inline std::string_view name_of(Ablation a) {
  switch (a) {
    case Ablation::no_KIP: return "no_KIP";
    case Ablation::no_Adapter: return "no_Adapter";
    case Ablation::no_EKI: return "no_EKI";
    case Ablation::no_SR: return "no_SR";
    case Ablation::no_DAF: return "no_DAF";
    case Ablation::no_CE: return "no_CE";
  }
  return "?";
}

inline Ablation ablation_from_name(std::string_view s) {
  for (Ablation a : kAblations)
    if (name_of(a) == s) return a;
  throw std::invalid_argument("unknown ablation '" + std::string(s) + "'");
}

enum class Profile { desk, paper };

/// Field defaults follow the CH-SIMS settings; `desk()` is the
/// small CPU profile used for the synthetic experiments.
struct TrainConfig {
  Stage stage = Stage::downstream;
  std::size_t batch_size = 32;
  double learning_rate = 3e-5;
  double weight_decay = 0.01;
  double clip_norm = 1.0;
  std::size_t epochs = 50;
  std::size_t pretrain_epochs = 50;
  double k = 0.1;
  double alpha = 0.01;
  std::size_t n_blocks = 3;
  std::size_t d_f = 256;
  std::size_t fusion_length = 8;
  std::vector<std::size_t> taps{3, 6, 9, 11};  // text encoder layers feeding the adapter (1-based)
  std::uint64_t seed = 1;
  std::set<Ablation> ablations;
  LabelRange label_range;

  bool has(Ablation a) const { return ablations.count(a) > 0; }

  static TrainConfig desk() {
    TrainConfig c;
    c.batch_size = 16;
    c.learning_rate = 1e-3;
    c.epochs = 15;
    c.pretrain_epochs = 10;
    c.k = 0.3;
    c.n_blocks = 2;
    c.d_f = 32;
    c.taps = {2, 4};
    return c;
  }

  /// Hyper-parameters reported for the four public benchmarks; `dataset` is one of
  /// ch-sims, ch-simsv2, mosi, mosei.
  static TrainConfig paper(std::string_view dataset) {
    TrainConfig c;
    c.batch_size = 32;
    c.learning_rate = 3e-5;
    c.epochs = 50;
    c.pretrain_epochs = 50;
    c.d_f = 256;
    c.alpha = 0.01;
    if (dataset == "ch-sims") {
      c.taps = {3, 6, 9, 11}, c.n_blocks = 3, c.k = 0.1;
    } else if (dataset == "ch-simsv2") {
      c.taps = {3, 6, 9, 11}, c.n_blocks = 3, c.k = 0.3;
    } else if (dataset == "mosi") {
      c.taps = {6, 9}, c.n_blocks = 2, c.k = 2.0, c.label_range = {-3.0, 3.0};
    } else if (dataset == "mosei") {
      c.taps = {6, 9}, c.n_blocks = 4, c.k = 5.0, c.alpha = 0.1, c.batch_size = 64, c.learning_rate = 4e-5;
      c.label_range = {-3.0, 3.0};
    } else {
      throw std::invalid_argument("unknown paper dataset '" + std::string(dataset) + "'");
    }
    return c;
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
    if (batch_size < 2) fail("batch_size must be at least 2");
    if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
    if (!(weight_decay >= 0.0)) fail("weight_decay must be non-negative");
    if (!(clip_norm > 0.0)) fail("clip_norm must be positive");
    if (!(k > 0.0)) fail("k must be positive");
    if (!(alpha >= 0.0)) fail("alpha must be non-negative");
    if (n_blocks == 0 || d_f == 0 || fusion_length == 0) fail("fusion sizes must be positive");
    if (!(label_range.hi > label_range.lo)) fail("label range is empty");
  }
};

/// Architecture implied by a training config, a profile and the data shapes.
struct DataShape {
  std::size_t vocab_size = 0;
  PerModality<std::size_t> lengths{};
  std::size_t vision_dim = 0, audio_dim = 0;
};

/// All records must share one length per modality and one feature width.
inline DataShape data_shape(const Dataset& ds) {
  if (ds.records.empty()) throw DataError("dataset is empty");
  const SampleRecord& first = ds.records.front();
  DataShape s{ds.vocab_size, {first.text.size(), first.vision.rows, first.audio.rows}, first.vision.cols, first.audio.cols};
  for (const auto& r : ds.records) {
    if (r.text.size() != s.lengths[0] || r.vision.rows != s.lengths[1] || r.audio.rows != s.lengths[2])
      throw DataError("record '" + r.id + "': sequence lengths differ from the first record");
    if (r.vision.cols != s.vision_dim || r.audio.cols != s.audio_dim)
      throw DataError("record '" + r.id + "': feature widths differ from the first record");
    for (int t : r.text)
      if (static_cast<std::size_t>(t) >= s.vocab_size) throw DataError("record '" + r.id + "': token id out of vocabulary");
  }
  return s;
}

inline ModelConfig model_config(const TrainConfig& tc, const DataShape& shape, Profile profile = Profile::desk) {
  ModelConfig c = ModelConfig::desk(shape.vocab_size);
  if (profile == Profile::paper) {
    auto& t = c.encoders[index_of(Modality::text)];
    t.width = 768, t.layers = 12, t.heads = 12;
    for (std::size_t m : {index_of(Modality::vision), index_of(Modality::audio)}) {
      c.encoders[m].width = 64, c.encoders[m].layers = 2, c.encoders[m].heads = 4;
    }
    c.fusion.cross_heads = c.fusion.self_heads = 8;
  }
  c.encoders[index_of(Modality::text)].taps = tc.taps;
  c.encoders[index_of(Modality::vision)].input_dim = shape.vision_dim;
  c.encoders[index_of(Modality::audio)].input_dim = shape.audio_dim;
  for (auto& e : c.encoders) e.max_length = std::max(e.max_length, *std::max_element(shape.lengths.begin(), shape.lengths.end()));
  c.lengths = shape.lengths;
  c.fusion.length = tc.fusion_length;
  c.fusion.width = tc.d_f;
  c.fusion.blocks = tc.n_blocks;
  if (tc.has(Ablation::no_Adapter)) c.use_adapters = false;
  if (tc.has(Ablation::no_EKI)) c.use_adapters = false, c.use_decoders = false;
  if (tc.has(Ablation::no_DAF)) c.strategy = FusionStrategy::addition;
  return c;
}

// ------------------------------------------------------------------ batching

/// Label-free inputs for a group of records.
inline MultimodalBatch make_batch(std::span<const SampleRecord* const> records) {
  if (records.empty()) throw std::invalid_argument("make_batch: no records");
  const std::size_t n = records.size();
  MultimodalBatch b;
  auto& text = b.inputs[index_of(Modality::text)];
  text.batch = n;
  text.length = records[0]->text.size();
  auto features = [&](Modality m, auto get) {
    auto& mb = b.inputs[index_of(m)];
    const FeatureMatrix& f0 = get(*records[0]);
    mb.batch = n;
    mb.length = f0.rows;
    std::vector<double> v;
    v.reserve(n * f0.values.size());
    for (const auto* r : records) {
      const FeatureMatrix& f = get(*r);
      if (f.rows != f0.rows || f.cols != f0.cols) throw DataError("record '" + r->id + "': ragged features in batch");
      v.insert(v.end(), f.values.begin(), f.values.end());
    }
    mb.features = Tensor::from({n, f0.rows, f0.cols}, std::move(v));
  };
  for (const auto* r : records) {
    if (r->text.size() != text.length) throw DataError("record '" + r->id + "': ragged text in batch");
    b.ids.push_back(r->id);
    text.ids.insert(text.ids.end(), r->text.begin(), r->text.end());
  }
  features(Modality::vision, [](const SampleRecord& r) -> const FeatureMatrix& { return r.vision; });
  features(Modality::audio, [](const SampleRecord& r) -> const FeatureMatrix& { return r.audio; });
  return b;
}

struct BatchLabels {
  std::vector<double> multimodal;
  PerModality<std::vector<double>> unimodal;
};

inline BatchLabels batch_labels(std::span<const SampleRecord* const> records, bool need_unimodal) {
  BatchLabels l;
  for (const auto* r : records) {
    l.multimodal.push_back(r->label);
    if (need_unimodal) {
      if (!r->unimodal) throw DataError("record '" + r->id + "' has no unimodal labels");
      for (std::size_t m = 0; m < 3; ++m) l.unimodal[m].push_back((*r->unimodal)[m]);
    }
  }
  return l;
}

inline std::vector<std::vector<const SampleRecord*>> minibatches(std::vector<const SampleRecord*> records,
                                                                 std::size_t batch_size, Rng* shuffle_rng) {
  if (shuffle_rng) shuffle(records.begin(), records.end(), *shuffle_rng);
  std::vector<std::vector<const SampleRecord*>> out;
  for (std::size_t i = 0; i < records.size(); i += batch_size) {
    const std::size_t end = std::min(records.size(), i + batch_size);
    out.emplace_back(records.begin() + static_cast<std::ptrdiff_t>(i), records.begin() + static_cast<std::ptrdiff_t>(end));
  }
  // A trailing singleton has no in-batch negatives; fold it into the previous batch.
  if (out.size() > 1 && out.back().size() == 1) {
    out[out.size() - 2].push_back(out.back().front());
    out.pop_back();
  }
  return out;
}

// ------------------------------------------------------------------ training

/// Receives one JSON object per logged event.
using LogSink = std::function<void(const nlohmann::ordered_json&)>;

struct StageResult {
  std::size_t best_epoch = 0;  // 1-based
  double best_valid_mae = std::numeric_limits<double>::infinity();
  std::vector<double> train_loss;  // per epoch (mean over batches)
  std::vector<double> valid_mae;   // per epoch
  ParamList checkpoint;            // parameter values at the best epoch
};

namespace detail {

inline void emit(const LogSink& log, nlohmann::ordered_json j) {
  if (log) log(j);
}

inline std::vector<const SampleRecord*> require_split(const Dataset& ds, Split s) {
  auto r = ds.split(s);
  if (r.empty()) throw DataError("dataset has no '" + std::string(name_of(s)) + "' records");
  return r;
}

}  // namespace detail

/// Mean over modalities of the unimodal-decoder MAE against y_m.
inline PerModality<double> unimodal_mae(const KudaModel& model, const std::vector<const SampleRecord*>& records,
                                        std::size_t batch_size) {
  NoGradGuard ng;
  PerModality<double> total{};
  for (const auto& group : minibatches(records, batch_size, nullptr)) {
    const auto labels = batch_labels(group, true);
    const auto kb = model.encode(make_batch(group));
    for (std::size_t m = 0; m < 3; ++m) {
      auto s = kb[m].score.data();
      for (std::size_t i = 0; i < group.size(); ++i) total[m] += std::abs(s[i] - labels.unimodal[m][i]);
    }
  }
  for (auto& t : total) t /= static_cast<double>(records.size());
  return total;
}

/// Stage 1: encoders, adapters and decoders fit the unimodal labels (sum of
/// per-modality MAE). The model is left at the best validation epoch; the
/// returned checkpoint holds the encoder, adapter and decoder values.
inline StageResult pretrain_stage(KudaModel& model, const Dataset& ds, const TrainConfig& tc, const LogSink& log = {}) {
  tc.validate();
  if (!model.config().use_decoders) throw std::invalid_argument("pretrain: model has no unimodal decoders");
  for (const auto& r : ds.records)
    if (!r.unimodal) throw DataError("pretrain: record '" + r.id + "' has no unimodal labels");
  const auto train = detail::require_split(ds, Split::train);
  const auto valid = detail::require_split(ds, Split::valid);

  ParamList params = model.stage1_parameters();
  set_frozen(params, false);
  AdamW opt(params, {tc.learning_rate, 0.9, 0.999, 1e-8, tc.weight_decay});
  Rng rng = make_rng(tc.seed, "pretrain.shuffle");
  StageResult res;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= tc.pretrain_epochs; ++epoch) {
    double loss_sum = 0.0;
    const auto groups = minibatches(train, tc.batch_size, &rng);
    for (const auto& group : groups) {
      const auto labels = batch_labels(group, true);
      const auto kb = model.encode(make_batch(group));
      Tensor loss;
      for (std::size_t m = 0; m < 3; ++m) {
        const Tensor l = mae_loss(kb[m].score, labels.unimodal[m]);
        loss = m == 0 ? l : add(loss, l);
      }
      if (!std::isfinite(loss.item())) throw NumericalError("pretrain: non-finite loss at epoch " + std::to_string(epoch));
      opt.zero_grad();
      loss.backward();
      clip_grad_norm(params, tc.clip_norm);
      opt.step();
      loss_sum += loss.item();
      ++step;
    }
    const auto vm = unimodal_mae(model, valid, tc.batch_size);
    const double v = vm[0] + vm[1] + vm[2];
    res.train_loss.push_back(loss_sum / static_cast<double>(groups.size()));
    res.valid_mae.push_back(v);
    if (v < res.best_valid_mae) {
      res.best_valid_mae = v;
      res.best_epoch = epoch;
      res.checkpoint = clone_values(params);
    }
    detail::emit(log, {{"stage", "pretrain"}, {"epoch", epoch}, {"batches", step}, {"train_loss", res.train_loss.back()},
                       {"valid_mae_text", vm[0]}, {"valid_mae_vision", vm[1]}, {"valid_mae_audio", vm[2]},
                       {"valid_mae_sum", v}});
  }
  assign_parameters(params, res.checkpoint);
  return res;
}

/// Test-mode predictions for a record list; labels are never read.
inline std::vector<double> predict_values(const KudaModel& model, const std::vector<const SampleRecord*>& records,
                                          std::size_t batch_size) {
  NoGradGuard ng;
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& group : minibatches(records, batch_size, nullptr)) {
    const auto r = model.predict(make_batch(group));
    for (double v : r.prediction.data()) out.push_back(v);
  }
  return out;
}

inline double split_mae(const KudaModel& model, const std::vector<const SampleRecord*>& records, std::size_t batch_size) {
  const auto p = predict_values(model, records, batch_size);
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - records[i]->label);
  return s / static_cast<double>(p.size());
}

/// Stage 2. With a checkpoint (and without no_KIP) the stage-1 values are loaded
/// and adapters/decoders frozen; everything else trains on MAE + alpha * L_cor,
/// with training-mode ratios from the frozen decoders unless no_SR.
inline StageResult downstream_stage(KudaModel& model, const Dataset& ds, const ParamList* checkpoint,
                                    const TrainConfig& tc, const LogSink& log = {}) {
  tc.validate();
  const auto train = detail::require_split(ds, Split::train);
  const auto valid = detail::require_split(ds, Split::valid);

  const ParamList frozen = model.knowledge_parameters();
  const bool load = checkpoint && !tc.has(Ablation::no_KIP) && model.config().use_decoders;
  if (load) assign_parameters(model.stage1_parameters(), *checkpoint);
  ParamList params = model.parameters();
  set_frozen(params, false);
  if (load) set_frozen(frozen, true);

  const bool use_ratios = model.config().use_decoders && !tc.has(Ablation::no_SR);
  const double alpha = tc.has(Ablation::no_CE) ? 0.0 : tc.alpha;
  AdamW opt(params, {tc.learning_rate, 0.9, 0.999, 1e-8, tc.weight_decay});
  Rng rng = make_rng(tc.seed, "downstream.shuffle");
  StageResult res;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    double loss_sum = 0.0;
    const auto groups = minibatches(train, tc.batch_size, &rng);
    for (const auto& group : groups) {
      const auto labels = batch_labels(group, false);
      RatioSource ratios = [&](const PerModality<std::vector<double>>& scores) {
        const std::size_t n = labels.multimodal.size();
        if (!use_ratios) return unit_ratios(n);
        BatchRatios r{std::vector<double>(n), std::vector<double>(n), std::vector<double>(n)};
        for (std::size_t i = 0; i < n; ++i) {
          const auto sr = sentiment_ratio({scores[0][i], scores[1][i], scores[2][i]}, labels.multimodal[i], tc.k);
          for (std::size_t m = 0; m < 3; ++m) r[m][i] = sr.r[m];
        }
        return r;
      };
      const ForwardResult fr = model.forward(make_batch(group), ratios);
      const Tensor l_reg = mae_loss(fr.prediction, labels.multimodal);
      const Tensor loss = alpha > 0.0 ? union_loss(l_reg, model.correlation_loss(fr), alpha) : l_reg;
      if (!std::isfinite(loss.item())) throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch));
      opt.zero_grad();
      loss.backward();
      clip_grad_norm(params, tc.clip_norm);
      opt.step();
      loss_sum += loss.item();
      ++step;
    }
    const double v = split_mae(model, valid, tc.batch_size);
    res.train_loss.push_back(loss_sum / static_cast<double>(groups.size()));
    res.valid_mae.push_back(v);
    if (v < res.best_valid_mae) {
      res.best_valid_mae = v;
      res.best_epoch = epoch;
      res.checkpoint = clone_values(params);
    }
    detail::emit(log, {{"stage", "train"}, {"epoch", epoch}, {"batches", step}, {"train_loss", res.train_loss.back()},
                       {"valid_mae", v}});
  }
  assign_parameters(params, res.checkpoint);
  return res;
}

// ------------------------------------------------------------------ evaluation

/// Share of cross-attention given to each modality branch when the three
/// branches' scores are normalized jointly, averaged over heads, query rows and
/// blocks. One entry per sample.
inline std::vector<PerModality<double>> joint_attention_mass(const std::vector<BlockTrace>& traces) {
  if (traces.empty()) return {};
  const auto& ref = traces.front().cross[0];
  std::vector<PerModality<double>> out(ref.batch, PerModality<double>{});
  for (const auto& tr : traces)
    for (std::size_t b = 0; b < ref.batch; ++b)
      for (std::size_t h = 0; h < ref.heads; ++h)
        for (std::size_t i = 0; i < ref.query_len; ++i) {
          PerModality<double> l{tr.cross[0].lse(b, h, i), tr.cross[1].lse(b, h, i), tr.cross[2].lse(b, h, i)};
          const double hi = std::max({l[0], l[1], l[2]});
          double z = 0.0;
          for (double v : l) z += std::exp(v - hi);
          for (std::size_t m = 0; m < 3; ++m) out[b][m] += std::exp(l[m] - hi) / z;
        }
  const double denom = static_cast<double>(traces.size() * ref.heads * ref.query_len);
  for (auto& s : out)
    for (auto& v : s) v /= denom;
  return out;
}

struct EvalOptions {
  std::size_t batch_size = 16;
  bool attention = false;  // record per-sample cross-attention
  bool features = false;   // record pooled F^L and Ubar_m
};

struct EvalOutput {
  std::vector<std::string> ids;
  std::vector<double> predictions;
  PerModality<std::vector<double>> unimodal;       // decoder outputs (empty without decoders)
  std::vector<PerModality<double>> attention_mass;  // per sample (dynamic fusion only)
  std::vector<nlohmann::ordered_json> attention;    // one line per sample/block/modality
  std::vector<nlohmann::ordered_json> features;     // one line per sample
};

/// Test-mode forward over the records: ratios fixed to 1, labels untouched.
inline EvalOutput predict_all(const KudaModel& model, const std::vector<const SampleRecord*>& records,
                              const EvalOptions& opt = {}) {
  NoGradGuard ng;
  EvalOutput out;
  const bool dynamic = model.config().strategy == FusionStrategy::dynamic;
  for (const auto& group : minibatches(records, opt.batch_size, nullptr)) {
    const MultimodalBatch batch = make_batch(group);
    const ForwardResult r = model.predict(batch, opt.attention && dynamic);
    const std::size_t n = batch.size();
    const auto pred = r.prediction.data();
    out.ids.insert(out.ids.end(), batch.ids.begin(), batch.ids.end());
    out.predictions.insert(out.predictions.end(), pred.begin(), pred.end());
    if (model.config().use_decoders)
      for (std::size_t m = 0; m < 3; ++m) out.unimodal[m].insert(out.unimodal[m].end(), r.scores[m].begin(), r.scores[m].end());
    if (opt.attention && dynamic) {
      const auto mass = joint_attention_mass(r.traces);
      out.attention_mass.insert(out.attention_mass.end(), mass.begin(), mass.end());
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t blk = 0; blk < r.traces.size(); ++blk)
          for (std::size_t m = 0; m < 3; ++m) {
            const AttentionRecord& rec = r.traces[blk].cross[m];
            nlohmann::json rows = nlohmann::json::array();
            for (std::size_t i = 0; i < rec.query_len; ++i) {
              std::vector<double> row(rec.key_len, 0.0);
              for (std::size_t h = 0; h < rec.heads; ++h)
                for (std::size_t j = 0; j < rec.key_len; ++j) row[j] += rec.weight(b, h, i, j) / static_cast<double>(rec.heads);
              rows.push_back(row);
            }
            out.attention.push_back({{"id", batch.ids[b]},
                                     {"block", blk},
                                     {"modality", name_of(kModalities[m])},
                                     {"ratio", r.ratios[m][b]},
                                     {"joint_mass", mass[b][m]},
                                     {"weights", rows}});
          }
    }
    if (opt.features) {
      const Tensor pooled = mean_axis(r.fused, 1);
      PerModality<Tensor> uni;
      for (std::size_t m = 0; m < 3; ++m) uni[m] = mean_axis(r.projected[m], 1);
      const std::size_t d = pooled.dim(1);
      auto row = [d](const Tensor& t, std::size_t b) {
        return std::vector<double>(t.data().begin() + static_cast<std::ptrdiff_t>(b * d),
                                   t.data().begin() + static_cast<std::ptrdiff_t>((b + 1) * d));
      };
      for (std::size_t b = 0; b < n; ++b)
        out.features.push_back({{"id", batch.ids[b]},
                                {"fused", row(pooled, b)},
                                {"text", row(uni[0], b)},
                                {"vision", row(uni[1], b)},
                                {"audio", row(uni[2], b)}});
    }
  }
  return out;
}

/// Metrics of the model on one split. Labels are joined only after prediction.
inline MetricReport evaluate(const KudaModel& model, const Dataset& ds, Split split, const EvalOptions& opt = {},
                             EvalOutput* details = nullptr) {
  const auto records = detail::require_split(ds, split);
  EvalOutput out = predict_all(model, records, opt);
  std::vector<double> truth;
  for (const auto* r : records) truth.push_back(r->label);
  MetricReport rep = compute_metrics(out.predictions, truth, ds.range);
  if (details) *details = std::move(out);
  return rep;
}

}  // namespace kuda
