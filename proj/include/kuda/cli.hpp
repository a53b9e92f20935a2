// Command-line surface. `run` is the whole program; tools/kuda.cpp only forwards argv.
//
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "kuda/config.hpp"
#include "kuda/gradcheck.hpp"

namespace kuda {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumerical = 3 };

/// Append-only JSON Lines log with a step counter that continues across runs.
class LogWriter {
 public:
  explicit LogWriter(std::filesystem::path path) : path_(std::move(path)) {
    std::ifstream in(path_);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      try {
        const auto j = nlohmann::json::parse(line);
        if (j.contains("step") && j["step"].is_number_unsigned()) step_ = std::max(step_, j["step"].get<std::uint64_t>());
      } catch (const nlohmann::json::exception&) {
        throw DataError("log '" + path_.string() + "' contains a malformed line");
      }
    }
  }

  void write(std::string_view verb, const nlohmann::ordered_json& event) {
    nlohmann::ordered_json j;
    j["step"] = ++step_;
    j["verb"] = verb;
    for (const auto& [k, v] : event.items()) j[k] = v;
    std::ofstream out(path_, std::ios::app);
    out << j.dump() << '\n';
  }

  std::uint64_t step() const { return step_; }

 private:
  std::filesystem::path path_;
  std::uint64_t step_ = 0;
};

namespace detail {

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::trunc);
  if (!f) throw DataError("cannot write '" + p.string() + "'");
  f << text;
}

inline void write_lines(const std::filesystem::path& p, const std::vector<nlohmann::ordered_json>& lines) {
  std::ofstream f(p, std::ios::trunc);
  if (!f) throw DataError("cannot write '" + p.string() + "'");
  for (const auto& l : lines) f << l.dump() << '\n';
}

inline nlohmann::ordered_json stats_json(const DominanceStats& s) {
  nlohmann::ordered_json j;
  j["samples"] = s.samples;
  for (std::size_t m = 0; m < 3; ++m) {
    const std::string n(name_of(kModalities[m]));
    j["dominant"][n] = {{"count", s.dominant_counts[m]}, {"proportion", s.dominant_proportion[m]}};
    j["noise_modality_count"][n] = s.noise_counts[m];
  }
  j["noise_samples"] = s.noise_samples;
  j["noise_proportion"] = s.noise_proportion;
  j["tie_samples"] = s.tie_samples;
  j["unique_dominant_samples"] = s.unique_dominant_samples;
  return j;
}

inline std::string stats_table(const DominanceStats& s) {
  std::ostringstream o;
  o << "modality  dominant  proportion  noise\n";
  for (std::size_t m = 0; m < 3; ++m) {
    std::string n(name_of(kModalities[m]));
    n.resize(10, ' ');
    o << n << std::left << std::setw(10) << s.dominant_counts[m] << std::setw(12) << std::fixed << std::setprecision(4)
      << s.dominant_proportion[m] << s.noise_counts[m] << "\n";
  }
  o << "samples " << s.samples << ", noise samples " << s.noise_samples << " (" << s.noise_proportion << "), ties "
    << s.tie_samples << "\n";
  return o.str();
}

struct Session {
  RunConfig cfg;
  std::filesystem::path out;
  std::ostream& os;
  std::ostream& err;
};

inline Dataset load_configured_dataset(const Session& s) {
  if (s.cfg.dataset.empty()) throw ConfigError("config has no \"dataset\" path");
  return load_dataset(s.cfg.dataset, s.cfg.train.label_range);
}

inline KudaModel build_model(const Session& s, const Dataset& ds) {
  return KudaModel(model_config(s.cfg.train, data_shape(ds), s.cfg.profile), s.cfg.seed);
}

inline int verb_synth(Session& s) {
  const Dataset ds = synthesize(s.cfg.generator, s.cfg.seed);
  store_dataset((s.out / "dataset.jsonl").string(), ds);
  s.os << "wrote " << ds.records.size() << " records to " << (s.out / "dataset.jsonl").string() << "\n";
  return kExitOk;
}

inline int verb_stats(Session& s) {
  const Dataset ds = load_configured_dataset(s);
  const DominanceStats st = dominance_stats(ds);
  write_text(s.out / "stats.json", stats_json(st).dump(2) + "\n");
  s.os << stats_table(st);
  return kExitOk;
}

inline StageResult run_pretrain(Session& s, KudaModel& model, const Dataset& ds, LogWriter& log) {
  const StageResult r = pretrain_stage(model, ds, s.cfg.train, [&](const auto& j) { log.write("pretrain", j); });
  save_snapshot((s.out / "stage1.kuda").string(), r.checkpoint);
  s.os << "stage 1: best epoch " << r.best_epoch << ", validation MAE (sum over modalities) " << r.best_valid_mae << "\n";
  return r;
}

inline int verb_pretrain(Session& s) {
  const Dataset ds = load_configured_dataset(s);
  KudaModel model = build_model(s, ds);
  LogWriter log(s.out / "log.jsonl");
  run_pretrain(s, model, ds, log);
  return kExitOk;
}

inline int verb_train(Session& s) {
  const Dataset ds = load_configured_dataset(s);
  KudaModel model = build_model(s, ds);
  LogWriter log(s.out / "log.jsonl");
  std::optional<ParamList> checkpoint;
  const bool wants_checkpoint = model.config().use_decoders && !s.cfg.train.has(Ablation::no_KIP);
  if (wants_checkpoint) {
    if (!s.cfg.stage1.empty()) {
      checkpoint = load_snapshot(s.cfg.stage1);
    } else {
      KudaModel stage1 = build_model(s, ds);
      checkpoint = run_pretrain(s, stage1, ds, log).checkpoint;
    }
  }
  const StageResult r = downstream_stage(model, ds, checkpoint ? &*checkpoint : nullptr, s.cfg.train,
                                         [&](const auto& j) { log.write("train", j); });
  save_snapshot((s.out / "model.kuda").string(), model.parameters());
  s.os << "stage 2: best epoch " << r.best_epoch << ", validation MAE " << r.best_valid_mae << "\n";
  return kExitOk;
}

inline KudaModel load_trained(const Session& s, const Dataset& ds) {
  if (s.cfg.model.empty()) throw ConfigError("config has no \"model\" path");
  KudaModel model = build_model(s, ds);
  assign_parameters(model.parameters(), load_snapshot(s.cfg.model));
  return model;
}

inline int verb_eval(Session& s) {
  const Dataset ds = load_configured_dataset(s);
  const KudaModel model = load_trained(s, ds);
  EvalOutput details;
  const MetricReport rep =
      evaluate(model, ds, s.cfg.eval_split, {s.cfg.eval_batch_size, true, true}, &details);
  if (rep.corr_degenerate) s.err << "warning: zero-variance predictions or labels; corr reported as 0\n";
  nlohmann::ordered_json j;
  j["split"] = name_of(s.cfg.eval_split);
  j["metrics"] = to_json(rep);
  write_text(s.out / "metrics.json", j.dump(2) + "\n");
  write_lines(s.out / "attention.jsonl", details.attention);
  write_lines(s.out / "features.jsonl", details.features);
  s.os << metrics_table(rep);
  return kExitOk;
}

/// Per-sample case study: predictions, unimodal scores, test-mode and
/// label-informed ratios, dominance labels and head-averaged attention.
inline int verb_inspect(Session& s) {
  const Dataset ds = load_configured_dataset(s);
  const KudaModel model = load_trained(s, ds);
  auto records = ds.split(s.cfg.inspect_split);
  if (!s.cfg.inspect_ids.empty()) {
    std::vector<const SampleRecord*> picked;
    for (const auto& id : s.cfg.inspect_ids) {
      auto it = std::find_if(records.begin(), records.end(), [&](const SampleRecord* r) { return r->id == id; });
      if (it == records.end()) throw DataError("inspect: no record '" + id + "' in split " + std::string(name_of(s.cfg.inspect_split)));
      picked.push_back(*it);
    }
    records = picked;
  } else if (records.size() > 8) {
    records.resize(8);
  }
  if (records.empty()) throw DataError("inspect: nothing to inspect");
  const EvalOutput out = predict_all(model, records, {s.cfg.eval_batch_size, true, false});
  const bool decoders = model.config().use_decoders;
  nlohmann::ordered_json cases = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const SampleRecord& r = *records[i];
    nlohmann::ordered_json c;
    c["id"] = r.id;
    c["label"] = r.label;
    c["prediction"] = out.predictions[i];
    if (r.unimodal) {
      const auto dom = dominant_modalities(*r.unimodal, r.label);
      const auto noise = noise_modalities(*r.unimodal, r.label);
      for (std::size_t m = 0; m < 3; ++m) {
        const std::string n(name_of(kModalities[m]));
        c["unimodal_labels"][n] = (*r.unimodal)[m];
        c["dominant"][n] = dom[m];
        c["noise"][n] = noise[m];
      }
    }
    if (decoders) {
      PerModality<double> yhat{out.unimodal[0][i], out.unimodal[1][i], out.unimodal[2][i]};
      const SentimentRatio informed = sentiment_ratio(yhat, r.label, s.cfg.train.k);
      for (std::size_t m = 0; m < 3; ++m) {
        const std::string n(name_of(kModalities[m]));
        c["unimodal_predictions"][n] = yhat[m];
        c["ratio_test"][n] = 1.0;
        c["ratio_label_informed"][n] = informed.r[m];
      }
    }
    if (!out.attention_mass.empty())
      for (std::size_t m = 0; m < 3; ++m) c["attention_mass"][std::string(name_of(kModalities[m]))] = out.attention_mass[i][m];
    nlohmann::ordered_json att = nlohmann::ordered_json::array();
    for (const auto& a : out.attention)
      if (a["id"] == r.id) att.push_back(a);
    c["attention"] = att;
    cases.push_back(c);
  }
  write_text(s.out / "inspect.json", cases.dump(2) + "\n");
  s.os << "wrote " << cases.size() << " cases to " << (s.out / "inspect.json").string() << "\n";
  return kExitOk;
}

inline int verb_gradcheck(Session& s) {
  const auto results = standard_gradchecks({}, s.cfg.seed);
  bool ok = true;
  s.os << "operation                 checked   max_rel_error  status\n";
  for (const auto& r : results) {
    std::string n = r.name;
    n.resize(26, ' ');
    s.os << n << std::left << std::setw(10) << r.checked << std::setw(15) << std::scientific << std::setprecision(3)
         << r.max_rel_error << (r.passed ? "pass" : "FAIL") << "\n";
    ok = ok && r.passed;
  }
  return ok ? kExitOk : kExitNumerical;
}

}  // namespace detail

inline int run(const std::vector<std::string>& args, std::ostream& os = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Knowledge-guided dynamic modality attention fusion for multimodal sentiment regression", "kuda"};
  app.require_subcommand(1, 1);
  std::string config_path, out_dir = ".", profile_name;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "output directory (created if missing)");
  app.add_option("--seed", seed, "overrides the config seed");
  app.add_option("--profile", profile_name, "hyper-parameter profile")->check(CLI::IsMember({"desk", "paper"}));
  const std::vector<std::pair<std::string, std::string>> verbs{
      {"synth", "generate a synthetic dataset"},
      {"pretrain", "stage 1: knowledge-injection pretraining"},
      {"train", "stage 2: downstream training (runs stage 1 first if no checkpoint is configured)"},
      {"eval", "metrics, attention and feature dumps on a split"},
      {"stats", "dominant/noise modality statistics of a dataset"},
      {"inspect", "per-sample case study"},
      {"gradcheck", "finite-difference check of every operation"}};
  for (const auto& [name, help] : verbs) app.add_subcommand(name, help)->fallthrough();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    os << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }
  const std::string verb = app.get_subcommands().front()->get_name();

  try {
    std::optional<Profile> profile;
    if (profile_name == "desk") profile = Profile::desk;
    if (profile_name == "paper") profile = Profile::paper;
    RunConfig cfg = config_path.empty() ? parse_run_config(nlohmann::json::object(), profile)
                                        : load_run_config(config_path, profile);
    if (seed) cfg.seed = *seed;
    cfg.train.seed = cfg.seed;
    const std::filesystem::path out(out_dir);
    std::filesystem::create_directories(out);
    detail::write_text(out / "config.json", to_json(cfg).dump(2) + "\n");
    detail::Session s{cfg, out, os, err};
    if (verb == "synth") return detail::verb_synth(s);
    if (verb == "stats") return detail::verb_stats(s);
    if (verb == "pretrain") return detail::verb_pretrain(s);
    if (verb == "train") return detail::verb_train(s);
    if (verb == "eval") return detail::verb_eval(s);
    if (verb == "inspect") return detail::verb_inspect(s);
    return detail::verb_gradcheck(s);
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const SnapshotError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const DimensionError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
}

inline int run(int argc, const char* const* argv, std::ostream& os = std::cout, std::ostream& err = std::cerr) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, os, err);
}

}  // namespace kuda
