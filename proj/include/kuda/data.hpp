// Dataset records, the synthetic generator with per-sample dominant modalities,
// dominance/noise statistics and the JSON Lines dataset format.
//
// Dataset line schema (one object per record):
//   id      string, unique
//   split   "train" | "valid" | "test"
//   text    [int]            token ids, length T_t >= 1
//   vision  [[number]]       T_v rows x d_v columns
//   audio   [[number]]       T_a rows x d_a columns
//   labels  {"multimodal": number, "text": number, "vision": number, "audio": number}
//           unimodal entries are optional as a group; all labels lie in the label range
#pragma once

#include <algorithm>
#include <array>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kuda/modality.hpp"
#include "kuda/rng.hpp"

namespace kuda {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Split { train, valid, test };

inline std::string_view name_of(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "?";
}

inline std::optional<Split> split_from_name(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "valid") return Split::valid;
  if (s == "test") return Split::test;
  return std::nullopt;
}

struct LabelRange {
  double lo = -1.0;
  double hi = 1.0;
  bool contains(double x) const { return x >= lo && x <= hi; }
  double half_width() const { return 0.5 * (hi - lo); }
  double mid() const { return 0.5 * (hi + lo); }
  bool operator==(const LabelRange&) const = default;
};

/// Row-major real matrix.
struct FeatureMatrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> values;
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  bool operator==(const FeatureMatrix&) const = default;
};

struct SampleRecord {
  std::string id;
  Split split = Split::train;
  std::vector<int> text;
  FeatureMatrix vision;
  FeatureMatrix audio;
  std::optional<PerModality<double>> unimodal;  // y_t, y_v, y_a
  double label = 0.0;                           // y
  bool operator==(const SampleRecord&) const = default;
};

struct Dataset {
  LabelRange range;
  std::size_t vocab_size = 0;
  std::vector<SampleRecord> records;

  std::vector<const SampleRecord*> split(Split s) const {
    std::vector<const SampleRecord*> out;
    for (const auto& r : records)
      if (r.split == s) out.push_back(&r);
    return out;
  }
};

// ------------------------------------------------------------------ polarity & dominance

enum class Polarity { negative, neutral, positive };

inline Polarity polarity(double x) { return x > 0.0 ? Polarity::positive : (x < 0.0 ? Polarity::negative : Polarity::neutral); }

/// Modalities whose unimodal label is closest to the multimodal one (ties: all).
inline PerModality<bool> dominant_modalities(const PerModality<double>& unimodal, double label) {
  PerModality<double> gap{};
  for (std::size_t m = 0; m < 3; ++m) gap[m] = std::abs(unimodal[m] - label);
  const double best = *std::min_element(gap.begin(), gap.end());
  return {gap[0] == best, gap[1] == best, gap[2] == best};
}

/// Modalities whose polarity differs from the multimodal polarity; zero is its own polarity.
inline PerModality<bool> noise_modalities(const PerModality<double>& unimodal, double label) {
  const Polarity p = polarity(label);
  return {polarity(unimodal[0]) != p, polarity(unimodal[1]) != p, polarity(unimodal[2]) != p};
}

struct DominanceStats {
  std::size_t samples = 0;
  PerModality<std::size_t> dominant_counts{};
  PerModality<double> dominant_proportion{};
  PerModality<std::size_t> noise_counts{};   // samples in which modality m is a noise modality
  std::size_t noise_samples = 0;             // samples with at least one noise modality
  double noise_proportion = 0.0;
  std::size_t tie_samples = 0;               // samples with more than one dominant modality
  std::size_t unique_dominant_samples = 0;
};

inline DominanceStats dominance_stats(std::span<const SampleRecord> records) {
  DominanceStats s;
  for (const auto& r : records) {
    if (!r.unimodal) throw DataError("record '" + r.id + "' has no unimodal labels");
    const auto dom = dominant_modalities(*r.unimodal, r.label);
    const auto noise = noise_modalities(*r.unimodal, r.label);
    std::size_t nd = 0;
    bool any_noise = false;
    for (std::size_t m = 0; m < 3; ++m) {
      if (dom[m]) ++s.dominant_counts[m], ++nd;
      if (noise[m]) ++s.noise_counts[m], any_noise = true;
    }
    if (nd > 1) ++s.tie_samples;
    if (nd == 1) ++s.unique_dominant_samples;
    if (any_noise) ++s.noise_samples;
    ++s.samples;
  }
  if (s.samples > 0) {
    const double n = static_cast<double>(s.samples);
    for (std::size_t m = 0; m < 3; ++m) s.dominant_proportion[m] = static_cast<double>(s.dominant_counts[m]) / n;
    s.noise_proportion = static_cast<double>(s.noise_samples) / n;
  }
  return s;
}

inline DominanceStats dominance_stats(const Dataset& d) { return dominance_stats(std::span<const SampleRecord>(d.records)); }

// ------------------------------------------------------------------ generator

struct GeneratorConfig {
  std::size_t samples = 3000;
  LabelRange range;
  PerModality<std::size_t> lengths{8, 8, 8};
  std::size_t vision_dim = 16;
  std::size_t audio_dim = 24;
  std::size_t sentiment_buckets = 9;
  std::size_t words_per_bucket = 4;
  std::size_t filler_words = 8;
  std::size_t cue_words = 4;
  std::size_t sentiment_tokens = 4;  // per sentence; the rest are cue/filler tokens
  PerModality<double> dominance{0.5, 0.5, 0.5};  // target marginal P(m dominant)
  double noise_samples = 0.5;    // target fraction of samples with a noise modality
  double dominant_jitter = 0.05; // max |y_m - y| for dominant modalities, in half-widths
  double separation = 0.3;       // min |y_m - y| for the others, in half-widths
  double feature_noise = 0.3;
  double salience = 1.0;         // strength of the "expressiveness" cue on dominant modalities
  std::array<double, 3> split_fractions{0.6, 0.2, 0.2};

  std::size_t vocab_size() const { return filler_words + cue_words + sentiment_buckets * words_per_bucket; }

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("generator: " + m); };
    if (samples == 0) fail("sample count must be positive");
    if (!(range.hi > range.lo)) fail("label range is empty");
    for (double p : dominance)
      if (!(p >= 0.0 && p <= 1.0)) fail("dominance proportions must lie in [0, 1]");
    if (dominance[0] + dominance[1] + dominance[2] < 1.0)
      fail("dominance proportions must sum to at least 1 (every sample has a dominant modality)");
    if (!(noise_samples >= 0.0 && noise_samples <= 1.0)) fail("noise proportion must lie in [0, 1]");
    if (!(dominant_jitter >= 0.0 && dominant_jitter < separation && separation < 1.0))
      fail("need 0 <= dominant_jitter < separation < 1");
    const double s = split_fractions[0] + split_fractions[1] + split_fractions[2];
    if (std::abs(s - 1.0) > 1e-9 || split_fractions[0] <= 0.0) fail("split fractions must be positive and sum to 1");
    for (auto l : lengths)
      if (l == 0) fail("sequence lengths must be positive");
    if (sentiment_tokens == 0 || sentiment_tokens + 2 > lengths[0]) fail("text length must fit the sentiment and cue tokens");
    if (sentiment_buckets < 2 || words_per_bucket == 0 || filler_words == 0 || cue_words == 0) fail("vocabulary too small");
    if (vision_dim < 2 || audio_dim < 2) fail("feature dims must be >= 2");
  }
};

/// Per-modality Bernoulli rates whose conditional (given a nonempty draw)
/// marginals equal the configured dominance targets.
inline PerModality<double> adjusted_dominance_rates(const PerModality<double>& target) {
  PerModality<double> p = target;
  for (int it = 0; it < 10000; ++it) {
    const double nonempty = 1.0 - (1.0 - p[0]) * (1.0 - p[1]) * (1.0 - p[2]);
    PerModality<double> next{};
    double delta = 0.0;
    for (std::size_t m = 0; m < 3; ++m) {
      next[m] = target[m] * nonempty;
      delta = std::max(delta, std::abs(next[m] - p[m]));
    }
    p = next;
    if (delta < 1e-14) break;
  }
  return p;
}

namespace detail {

// Orthonormal pair (sentiment direction, salience direction) in R^d.
inline std::pair<std::vector<double>, std::vector<double>> feature_directions(std::size_t d, Rng& rng) {
  std::vector<double> a(d), b(d);
  for (auto& v : a) v = normal(rng);
  for (auto& v : b) v = normal(rng);
  auto norm = [](std::vector<double>& x) {
    double s = 0.0;
    for (double v : x) s += v * v;
    s = std::sqrt(s);
    for (auto& v : x) v /= s;
  };
  norm(a);
  double dot = 0.0;
  for (std::size_t i = 0; i < d; ++i) dot += a[i] * b[i];
  for (std::size_t i = 0; i < d; ++i) b[i] -= dot * a[i];
  norm(b);
  return {a, b};
}

// Uniform draw from [lo, hi] of the requested polarity, excluding |x - y| < gap.
inline double draw_away_from(Rng& rng, double y, double gap, bool positive, const LabelRange& range) {
  const double lo = positive ? 0.0 : range.lo;
  const double hi = positive ? range.hi : 0.0;
  // Allowed set: [lo, hi] minus (y - gap, y + gap), as up to two intervals.
  std::vector<std::pair<double, double>> parts;
  const double cut_lo = std::max(lo, y - gap), cut_hi = std::min(hi, y + gap);
  if (cut_lo >= cut_hi) {
    parts.emplace_back(lo, hi);
  } else {
    if (cut_lo > lo) parts.emplace_back(lo, cut_lo);
    if (cut_hi < hi) parts.emplace_back(cut_hi, hi);
  }
  double total = 0.0;
  for (auto& [a, b] : parts) total += b - a;
  if (parts.empty() || total <= 0.0) return positive ? hi : lo;
  double u = uniform(rng, 0.0, total);
  for (auto& [a, b] : parts) {
    if (u <= b - a) {
      const double x = a + u;
      // Keep the polarity strict; 0 is its own class.
      return x == 0.0 ? (positive ? 1e-9 : -1e-9) : x;
    }
    u -= b - a;
  }
  return parts.back().second;
}

}  // namespace detail

/// Synthetic multimodal dataset. Per sample: y ~ U(range); a nonempty dominant set
/// whose unimodal labels sit within the jitter of y (shared offset, so ties are exact);
/// the remaining modalities get labels at least `separation` away, with polarity
/// flipped for noise modalities. Features carry y_m along a fixed direction and a
/// salience cue on the dominant modalities; text uses sentiment-indexed vocabulary buckets.
inline Dataset synthesize(const GeneratorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng = make_rng(seed, "synthesize");
  Rng dir_rng = make_rng(seed, "synthesize.directions");
  const auto [va, vb] = detail::feature_directions(cfg.vision_dim, dir_rng);
  const auto [aa, ab] = detail::feature_directions(cfg.audio_dim, dir_rng);

  const auto rates = adjusted_dominance_rates(cfg.dominance);
  // P(at least one non-dominant modality), over the conditioned dominance draw.
  const double p_nonempty = 1.0 - (1.0 - rates[0]) * (1.0 - rates[1]) * (1.0 - rates[2]);
  const double p_all = rates[0] * rates[1] * rates[2] / p_nonempty;
  const double noise_rate = p_all < 1.0 ? std::min(1.0, cfg.noise_samples / (1.0 - p_all)) : 0.0;

  const double hw = cfg.range.half_width();
  const std::size_t filler0 = 0, cue0 = cfg.filler_words, bucket0 = cfg.filler_words + cfg.cue_words;

  Dataset ds;
  ds.range = cfg.range;
  ds.vocab_size = cfg.vocab_size();
  ds.records.reserve(cfg.samples);

  auto make_features = [&](double y_m, bool salient, std::size_t len, std::size_t dim, const std::vector<double>& a,
                           const std::vector<double>& b) {
    FeatureMatrix f{len, dim, std::vector<double>(len * dim)};
    const double s = (y_m - cfg.range.mid()) / hw;
    const double cue = cfg.salience * (salient ? uniform(rng, 0.7, 1.3) : uniform(rng, -0.3, 0.3));
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t j = 0; j < dim; ++j)
        f.values[t * dim + j] = s * a[j] + cue * b[j] + cfg.feature_noise * normal(rng);
    return f;
  };

  for (std::size_t i = 0; i < cfg.samples; ++i) {
    SampleRecord r;
    std::ostringstream id;
    id << "s" << std::setw(5) << std::setfill('0') << i;
    r.id = id.str();
    double y = uniform(rng, cfg.range.lo, cfg.range.hi);
    while (y == 0.0) y = uniform(rng, cfg.range.lo, cfg.range.hi);
    r.label = y;

    PerModality<bool> dominant{};
    do {
      for (std::size_t m = 0; m < 3; ++m) dominant[m] = uniform(rng, 0.0, 1.0) < rates[m];
    } while (!dominant[0] && !dominant[1] && !dominant[2]);

    std::vector<std::size_t> others;
    for (std::size_t m = 0; m < 3; ++m)
      if (!dominant[m]) others.push_back(m);
    PerModality<bool> flipped{};
    if (!others.empty() && uniform(rng, 0.0, 1.0) < noise_rate) {
      // Uniformly random nonempty subset of the non-dominant modalities.
      const std::size_t masks = (std::size_t{1} << others.size()) - 1;
      const std::size_t mask = 1 + uniform_index(rng, masks);
      for (std::size_t j = 0; j < others.size(); ++j)
        if (mask & (std::size_t{1} << j)) flipped[others[j]] = true;
    }

    const double offset = uniform(rng, -cfg.dominant_jitter, cfg.dominant_jitter) * hw;
    double near = std::clamp(y + offset, cfg.range.lo, cfg.range.hi);
    if (polarity(near) != polarity(y)) near = y;  // jitter must not turn a dominant modality into a noise one
    PerModality<double> uni{};
    for (std::size_t m = 0; m < 3; ++m) {
      if (dominant[m]) {
        uni[m] = near;
      } else {
        const bool positive = (y > 0.0) != flipped[m];
        uni[m] = detail::draw_away_from(rng, y, cfg.separation * hw, positive, cfg.range);
      }
    }
    r.unimodal = uni;

    // Text: sentiment tokens interpolate between adjacent buckets; cue tokens mark salience.
    const std::size_t len_t = cfg.lengths[0];
    std::vector<int> tokens;
    const double u = (uni[0] - cfg.range.lo) / (cfg.range.hi - cfg.range.lo) * static_cast<double>(cfg.sentiment_buckets - 1);
    const auto lower = std::min<std::size_t>(static_cast<std::size_t>(std::floor(u)), cfg.sentiment_buckets - 1);
    const double frac = u - static_cast<double>(lower);
    for (std::size_t k = 0; k < cfg.sentiment_tokens; ++k) {
      const std::size_t bucket = std::min(cfg.sentiment_buckets - 1, lower + (uniform(rng, 0.0, 1.0) < frac ? 1 : 0));
      tokens.push_back(static_cast<int>(bucket0 + bucket * cfg.words_per_bucket + uniform_index(rng, cfg.words_per_bucket)));
    }
    const std::size_t cues = dominant[0] ? 2 : (uniform(rng, 0.0, 1.0) < 0.1 ? 1 : 0);
    for (std::size_t k = 0; k < cues; ++k) tokens.push_back(static_cast<int>(cue0 + uniform_index(rng, cfg.cue_words)));
    while (tokens.size() < len_t) tokens.push_back(static_cast<int>(filler0 + uniform_index(rng, cfg.filler_words)));
    shuffle(tokens.begin(), tokens.end(), rng);
    r.text = std::move(tokens);

    r.vision = make_features(uni[1], dominant[1], cfg.lengths[1], cfg.vision_dim, va, vb);
    r.audio = make_features(uni[2], dominant[2], cfg.lengths[2], cfg.audio_dim, aa, ab);
    ds.records.push_back(std::move(r));
  }

  // Splits: shuffled assignment in the configured proportions.
  std::vector<std::size_t> order(cfg.samples);
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng = make_rng(seed, "synthesize.splits");
  shuffle(order.begin(), order.end(), split_rng);
  const auto n_train = static_cast<std::size_t>(std::round(cfg.split_fractions[0] * static_cast<double>(cfg.samples)));
  const auto n_valid = static_cast<std::size_t>(std::round(cfg.split_fractions[1] * static_cast<double>(cfg.samples)));
  for (std::size_t k = 0; k < order.size(); ++k)
    ds.records[order[k]].split = k < n_train ? Split::train : (k < n_train + n_valid ? Split::valid : Split::test);
  return ds;
}

// ------------------------------------------------------------------ JSON Lines I/O

inline nlohmann::json to_json(const SampleRecord& r) {
  auto matrix = [](const FeatureMatrix& f) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < f.rows; ++i)
      rows.push_back(std::vector<double>(f.values.begin() + static_cast<std::ptrdiff_t>(i * f.cols),
                                         f.values.begin() + static_cast<std::ptrdiff_t>((i + 1) * f.cols)));
    return rows;
  };
  nlohmann::json labels = {{"multimodal", r.label}};
  if (r.unimodal) {
    labels["text"] = (*r.unimodal)[0];
    labels["vision"] = (*r.unimodal)[1];
    labels["audio"] = (*r.unimodal)[2];
  }
  return {{"id", r.id},         {"split", std::string(name_of(r.split))}, {"text", r.text},
          {"vision", matrix(r.vision)}, {"audio", matrix(r.audio)},   {"labels", labels}};
}

/// Parses one dataset line; errors name the line number and field.
inline SampleRecord record_from_json(const nlohmann::json& j, const LabelRange& range, const std::string& where) {
  auto fail = [&](const std::string& field, const std::string& msg) -> DataError {
    return DataError(where + ": field '" + field + "' " + msg);
  };
  if (!j.is_object()) throw DataError(where + ": record is not a JSON object");
  auto need = [&](const char* field) -> const nlohmann::json& {
    if (!j.contains(field)) throw fail(field, "is missing");
    return j.at(field);
  };
  SampleRecord r;
  const auto& id = need("id");
  if (!id.is_string() || id.get<std::string>().empty()) throw fail("id", "must be a non-empty string");
  r.id = id.get<std::string>();
  const auto& split = need("split");
  if (!split.is_string() || !split_from_name(split.get<std::string>())) throw fail("split", "must be train|valid|test");
  r.split = *split_from_name(split.get<std::string>());
  const auto& text = need("text");
  if (!text.is_array() || text.empty()) throw fail("text", "must be a non-empty array of token ids");
  for (const auto& t : text) {
    if (!t.is_number_integer() || t.get<long long>() < 0) throw fail("text", "must hold non-negative integers");
    r.text.push_back(t.get<int>());
  }
  auto matrix = [&](const char* field) {
    const auto& rows = need(field);
    if (!rows.is_array() || rows.empty()) throw fail(field, "must be a non-empty array of rows");
    FeatureMatrix f;
    f.rows = rows.size();
    for (const auto& row : rows) {
      if (!row.is_array() || row.empty()) throw fail(field, "rows must be non-empty arrays");
      if (f.cols == 0) f.cols = row.size();
      if (row.size() != f.cols) throw fail(field, "rows have unequal lengths");
      for (const auto& v : row) {
        if (!v.is_number() || !std::isfinite(v.get<double>())) throw fail(field, "must hold finite numbers");
        f.values.push_back(v.get<double>());
      }
    }
    return f;
  };
  r.vision = matrix("vision");
  r.audio = matrix("audio");
  const auto& labels = need("labels");
  if (!labels.is_object()) throw fail("labels", "must be an object");
  auto label = [&](const char* key) {
    const std::string field = std::string("labels.") + key;
    const auto& v = labels.at(key);
    if (!v.is_number()) throw fail(field, "must be a number");
    const double x = v.get<double>();
    if (!std::isfinite(x) || !range.contains(x))
      throw fail(field, "value " + v.dump() + " outside label range [" + nlohmann::json(range.lo).dump() + ", " +
                            nlohmann::json(range.hi).dump() + "]");
    return x;
  };
  if (!labels.contains("multimodal")) throw fail("labels.multimodal", "is missing");
  r.label = label("multimodal");
  const int present = labels.contains("text") + labels.contains("vision") + labels.contains("audio");
  if (present == 3)
    r.unimodal = PerModality<double>{label("text"), label("vision"), label("audio")};
  else if (present != 0)
    throw fail("labels", "must carry all three unimodal labels or none");
  return r;
}

inline void store_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  for (const auto& r : ds.records) f << to_json(r).dump() << '\n';
  if (!f) throw DataError("failed writing '" + path + "'");
}

inline Dataset load_dataset(const std::string& path, const LabelRange& range) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open dataset '" + path + "'");
  Dataset ds;
  ds.range = range;
  std::string line;
  std::size_t lineno = 0;
  std::size_t max_token = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(where + ": malformed JSON (" + e.what() + ")");
    }
    SampleRecord r = record_from_json(j, range, where);
    for (int t : r.text) max_token = std::max<std::size_t>(max_token, static_cast<std::size_t>(t));
    ds.records.push_back(std::move(r));
  }
  if (ds.records.empty()) throw DataError(path + ": dataset has no records");
  ds.vocab_size = max_token + 1;
  return ds;
}

}  // namespace kuda
