// JSON run configuration shared by every CLI verb.
//
//   {
//     "seed": 1,
//     "profile": "desk" | "paper",
//     "paper_dataset": "ch-sims" | "ch-simsv2" | "mosi" | "mosei",   (paper profile only)
//     "dataset": "path/to/dataset.jsonl",
//     "stage1": "path/to/stage1.kuda",
//     "model": "path/to/model.kuda",
//     "generator": { GeneratorConfig fields },
//     "train": { TrainConfig fields },
//     "eval": { "split": "test", "batch_size": 16 },
//     "inspect": { "split": "test", "ids": ["s00001", ...] }
//   }
//
// Unknown keys are rejected. Relative paths resolve against the working directory.
#pragma once

#include <fstream>
#include <optional>
#include <string>

#include <json.hpp>

#include "kuda/pipeline.hpp"

namespace kuda {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RunConfig {
  std::uint64_t seed = 1;
  Profile profile = Profile::desk;
  std::string paper_dataset = "ch-simsv2";
  std::string dataset;
  std::string stage1;
  std::string model;
  GeneratorConfig generator;
  TrainConfig train;
  Split eval_split = Split::test;
  std::size_t eval_batch_size = 16;
  Split inspect_split = Split::test;
  std::vector<std::string> inspect_ids;
};

namespace detail {

using json = nlohmann::json;

inline void reject_unknown(const json& j, std::initializer_list<std::string_view> keys, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (auto key : keys) known = known || key == k;
    if (!known) throw ConfigError(where + ": unknown key '" + k + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

inline LabelRange read_range(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
    throw ConfigError(where + ": expected [lo, hi]");
  return {j[0].get<double>(), j[1].get<double>()};
}

inline Split read_split(const json& j, const std::string& where) {
  if (!j.is_string() || !split_from_name(j.get<std::string>())) throw ConfigError(where + ": expected train|valid|test");
  return *split_from_name(j.get<std::string>());
}

}  // namespace detail

inline void from_json_checked(const nlohmann::json& j, GeneratorConfig& g) {
  const std::string w = "generator";
  detail::reject_unknown(j, {"samples", "label_range", "lengths", "vision_dim", "audio_dim", "sentiment_buckets",
                             "words_per_bucket", "filler_words", "cue_words", "sentiment_tokens", "dominance",
                             "noise_samples", "dominant_jitter", "separation", "feature_noise", "salience",
                             "split_fractions"},
                         w);
  detail::read(j, "samples", g.samples, w);
  if (j.contains("label_range")) g.range = detail::read_range(j.at("label_range"), w + ".label_range");
  std::array<std::size_t, 3> lengths = g.lengths;
  detail::read(j, "lengths", lengths, w);
  g.lengths = lengths;
  detail::read(j, "vision_dim", g.vision_dim, w);
  detail::read(j, "audio_dim", g.audio_dim, w);
  detail::read(j, "sentiment_buckets", g.sentiment_buckets, w);
  detail::read(j, "words_per_bucket", g.words_per_bucket, w);
  detail::read(j, "filler_words", g.filler_words, w);
  detail::read(j, "cue_words", g.cue_words, w);
  detail::read(j, "sentiment_tokens", g.sentiment_tokens, w);
  std::array<double, 3> dom = g.dominance;
  detail::read(j, "dominance", dom, w);
  g.dominance = dom;
  detail::read(j, "noise_samples", g.noise_samples, w);
  detail::read(j, "dominant_jitter", g.dominant_jitter, w);
  detail::read(j, "separation", g.separation, w);
  detail::read(j, "feature_noise", g.feature_noise, w);
  detail::read(j, "salience", g.salience, w);
  detail::read(j, "split_fractions", g.split_fractions, w);
}

inline nlohmann::ordered_json to_json(const GeneratorConfig& g) {
  return {{"samples", g.samples},
          {"label_range", {g.range.lo, g.range.hi}},
          {"lengths", g.lengths},
          {"vision_dim", g.vision_dim},
          {"audio_dim", g.audio_dim},
          {"sentiment_buckets", g.sentiment_buckets},
          {"words_per_bucket", g.words_per_bucket},
          {"filler_words", g.filler_words},
          {"cue_words", g.cue_words},
          {"sentiment_tokens", g.sentiment_tokens},
          {"dominance", g.dominance},
          {"noise_samples", g.noise_samples},
          {"dominant_jitter", g.dominant_jitter},
          {"separation", g.separation},
          {"feature_noise", g.feature_noise},
          {"salience", g.salience},
          {"split_fractions", g.split_fractions}};
}

inline void from_json_checked(const nlohmann::json& j, TrainConfig& t) {
  const std::string w = "train";
  detail::reject_unknown(j, {"stage", "batch_size", "learning_rate", "weight_decay", "clip_norm", "epochs",
                             "pretrain_epochs", "k", "alpha", "n_blocks", "d_f", "fusion_length", "taps", "ablations",
                             "label_range"},
                         w);
  if (j.contains("stage")) {
    const auto& s = j.at("stage");
    if (s == "pretrain")
      t.stage = Stage::pretrain;
    else if (s == "downstream")
      t.stage = Stage::downstream;
    else
      throw ConfigError("train.stage: expected pretrain|downstream");
  }
  detail::read(j, "batch_size", t.batch_size, w);
  detail::read(j, "learning_rate", t.learning_rate, w);
  detail::read(j, "weight_decay", t.weight_decay, w);
  detail::read(j, "clip_norm", t.clip_norm, w);
  detail::read(j, "epochs", t.epochs, w);
  detail::read(j, "pretrain_epochs", t.pretrain_epochs, w);
  detail::read(j, "k", t.k, w);
  detail::read(j, "alpha", t.alpha, w);
  detail::read(j, "n_blocks", t.n_blocks, w);
  detail::read(j, "d_f", t.d_f, w);
  detail::read(j, "fusion_length", t.fusion_length, w);
  detail::read(j, "taps", t.taps, w);
  if (j.contains("ablations")) {
    const auto& a = j.at("ablations");
    if (!a.is_array()) throw ConfigError("train.ablations: expected an array of names");
    t.ablations.clear();
    for (const auto& name : a) {
      if (!name.is_string()) throw ConfigError("train.ablations: expected an array of names");
      try {
        t.ablations.insert(ablation_from_name(name.get<std::string>()));
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("train.ablations: ") + e.what());
      }
    }
  }
  if (j.contains("label_range")) t.label_range = detail::read_range(j.at("label_range"), w + ".label_range");
}

inline nlohmann::ordered_json to_json(const TrainConfig& t) {
  std::vector<std::string> abl;
  for (Ablation a : t.ablations) abl.emplace_back(name_of(a));
  return {{"stage", t.stage == Stage::pretrain ? "pretrain" : "downstream"},
          {"batch_size", t.batch_size},
          {"learning_rate", t.learning_rate},
          {"weight_decay", t.weight_decay},
          {"clip_norm", t.clip_norm},
          {"epochs", t.epochs},
          {"pretrain_epochs", t.pretrain_epochs},
          {"k", t.k},
          {"alpha", t.alpha},
          {"n_blocks", t.n_blocks},
          {"d_f", t.d_f},
          {"fusion_length", t.fusion_length},
          {"taps", t.taps},
          {"ablations", abl},
          {"label_range", {t.label_range.lo, t.label_range.hi}}};
}

/// Builds a RunConfig. The profile picks the TrainConfig defaults; explicit
/// "train" keys then override them.
inline RunConfig parse_run_config(const nlohmann::json& j, std::optional<Profile> profile_override = std::nullopt) {
  detail::reject_unknown(j, {"seed", "profile", "paper_dataset", "dataset", "stage1", "model", "generator", "train",
                             "eval", "inspect"},
                         "config");
  RunConfig c;
  detail::read(j, "seed", c.seed, "config");
  if (j.contains("profile")) {
    const auto& p = j.at("profile");
    if (p == "desk")
      c.profile = Profile::desk;
    else if (p == "paper")
      c.profile = Profile::paper;
    else
      throw ConfigError("config.profile: expected desk|paper");
  }
  if (profile_override) c.profile = *profile_override;
  detail::read(j, "paper_dataset", c.paper_dataset, "config");
  detail::read(j, "dataset", c.dataset, "config");
  detail::read(j, "stage1", c.stage1, "config");
  detail::read(j, "model", c.model, "config");
  try {
    c.train = c.profile == Profile::paper ? TrainConfig::paper(c.paper_dataset) : TrainConfig::desk();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config.paper_dataset: ") + e.what());
  }
  if (j.contains("generator")) from_json_checked(j.at("generator"), c.generator);
  if (j.contains("train")) from_json_checked(j.at("train"), c.train);
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    detail::reject_unknown(e, {"split", "batch_size"}, "eval");
    if (e.contains("split")) c.eval_split = detail::read_split(e.at("split"), "eval.split");
    detail::read(e, "batch_size", c.eval_batch_size, "eval");
    if (c.eval_batch_size == 0) throw ConfigError("eval.batch_size must be positive");
  }
  if (j.contains("inspect")) {
    const auto& e = j.at("inspect");
    detail::reject_unknown(e, {"split", "ids"}, "inspect");
    if (e.contains("split")) c.inspect_split = detail::read_split(e.at("split"), "inspect.split");
    detail::read(e, "ids", c.inspect_ids, "inspect");
  }
  try {
    c.generator.validate();
    c.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

inline nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["profile"] = c.profile == Profile::paper ? "paper" : "desk";
  j["paper_dataset"] = c.paper_dataset;
  j["dataset"] = c.dataset;
  j["stage1"] = c.stage1;
  j["model"] = c.model;
  j["generator"] = to_json(c.generator);
  j["train"] = to_json(c.train);
  j["eval"] = {{"split", name_of(c.eval_split)}, {"batch_size", c.eval_batch_size}};
  j["inspect"] = {{"split", name_of(c.inspect_split)}, {"ids", c.inspect_ids}};
  return j;
}

inline RunConfig load_run_config(const std::string& path, std::optional<Profile> profile_override = std::nullopt) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
  return parse_run_config(j, profile_override);
}

}  // namespace kuda
