#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "kuda/data.hpp"

namespace kuda {

struct MetricReport {
  std::size_t count = 0;
  double mae = 0.0;
  double corr = 0.0;
  bool corr_degenerate = false;  // zero variance on either side; corr forced to 0
  double acc2_has0 = 0.0;
  double acc2_non0 = 0.0;
  std::size_t non0_count = 0;
  double acc3 = 0.0;
  double acc5 = 0.0;
  double acc7 = 0.0;
  double f1_has0 = 0.0;
  double f1_non0 = 0.0;
};

/// Equal-width class of `x` among k classes spanning the label range
/// (round to the nearest class index after clamping).
inline int bin_class(double x, const LabelRange& range, int k) {
  const double c = std::clamp(x, range.lo, range.hi);
  const double u = (c - range.lo) * static_cast<double>(k - 1) / (range.hi - range.lo);
  return static_cast<int>(std::round(u));
}

/// Support-weighted F1 over two classes; a class with no predictions or no
/// true members contributes F1 = 0.
inline double weighted_binary_f1(const std::vector<bool>& truth, const std::vector<bool>& pred) {
  if (truth.empty()) return 0.0;
  double total = 0.0;
  for (bool cls : {false, true}) {
    std::size_t tp = 0, fp = 0, fn = 0, support = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (truth[i] == cls) ++support;
      if (pred[i] == cls && truth[i] == cls) ++tp;
      if (pred[i] == cls && truth[i] != cls) ++fp;
      if (pred[i] != cls && truth[i] == cls) ++fn;
    }
    const double denom = static_cast<double>(2 * tp + fp + fn);
    const double f1 = denom > 0.0 ? 2.0 * static_cast<double>(tp) / denom : 0.0;
    total += f1 * static_cast<double>(support);
  }
  return total / static_cast<double>(truth.size());
}

inline MetricReport compute_metrics(std::span<const double> pred, std::span<const double> truth, const LabelRange& range) {
  if (pred.empty()) throw std::invalid_argument("compute_metrics: empty input");
  if (pred.size() != truth.size())
    throw std::invalid_argument("compute_metrics: " + std::to_string(pred.size()) + " predictions vs " +
                                std::to_string(truth.size()) + " labels");
  const std::size_t n = pred.size();
  const double nd = static_cast<double>(n);
  MetricReport r;
  r.count = n;

  double abs_sum = 0.0, mp = 0.0, mt = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    abs_sum += std::abs(pred[i] - truth[i]);
    mp += pred[i];
    mt += truth[i];
  }
  r.mae = abs_sum / nd;
  mp /= nd;
  mt /= nd;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (pred[i] - mp) * (truth[i] - mt);
    sxx += (pred[i] - mp) * (pred[i] - mp);
    syy += (truth[i] - mt) * (truth[i] - mt);
  }
  if (sxx > 0.0 && syy > 0.0) {
    r.corr = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  } else {
    r.corr = 0.0;
    r.corr_degenerate = true;
  }

  auto acc_k = [&](int k) {
    std::size_t hit = 0;
    for (std::size_t i = 0; i < n; ++i) hit += bin_class(pred[i], range, k) == bin_class(truth[i], range, k);
    return static_cast<double>(hit) / nd;
  };
  r.acc3 = acc_k(3);
  r.acc5 = acc_k(5);
  r.acc7 = acc_k(7);

  std::vector<bool> t_has0, p_has0, t_non0, p_non0;
  for (std::size_t i = 0; i < n; ++i) {
    t_has0.push_back(truth[i] >= 0.0);
    p_has0.push_back(pred[i] >= 0.0);
    if (truth[i] != 0.0) {
      t_non0.push_back(truth[i] > 0.0);
      p_non0.push_back(pred[i] > 0.0);
    }
  }
  auto accuracy = [](const std::vector<bool>& a, const std::vector<bool>& b) {
    if (a.empty()) return 0.0;
    std::size_t hit = 0;
    for (std::size_t i = 0; i < a.size(); ++i) hit += a[i] == b[i];
    return static_cast<double>(hit) / static_cast<double>(a.size());
  };
  r.acc2_has0 = accuracy(t_has0, p_has0);
  r.acc2_non0 = accuracy(t_non0, p_non0);
  r.non0_count = t_non0.size();
  r.f1_has0 = weighted_binary_f1(t_has0, p_has0);
  r.f1_non0 = weighted_binary_f1(t_non0, p_non0);
  return r;
}

inline nlohmann::ordered_json to_json(const MetricReport& r) {
  return {{"count", r.count},         {"mae", r.mae},           {"corr", r.corr},
          {"corr_degenerate", r.corr_degenerate},               {"acc2_has0", r.acc2_has0},
          {"acc2_non0", r.acc2_non0}, {"non0_count", r.non0_count}, {"acc3", r.acc3},
          {"acc5", r.acc5},           {"acc7", r.acc7},         {"f1_has0", r.f1_has0},
          {"f1_non0", r.f1_non0}};
}

/// Aligned two-column text table.
inline std::string metrics_table(const MetricReport& r) {
  const auto j = to_json(r);
  std::string out;
  for (const auto& [k, v] : j.items()) {
    std::string key = k;
    key.resize(16, ' ');
    out += key + v.dump() + "\n";
  }
  return out;
}

}  // namespace kuda
