#pragma once

#include <cmath>
#include <vector>

#include "kuda/nn.hpp"

namespace kuda {

struct AdamWConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Adam with decoupled weight decay. Parameters whose requires_grad is off are skipped.
class AdamW {
 public:
  AdamW(ParamList params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
      m_.emplace_back(p.tensor.size(), 0.0);
      v_.emplace_back(p.tensor.size(), 0.0);
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor& p = params_[i].tensor;
      if (!p.requires_grad()) continue;
      auto w = p.mutable_data();
      auto g = p.grad();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < w.size(); ++j) {
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
        w[j] -= cfg_.learning_rate * cfg_.weight_decay * w[j];
        w[j] -= cfg_.learning_rate * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  const ParamList& parameters() const { return params_; }

 private:
  ParamList params_;
  AdamWConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

/// Rescales all gradients so their joint L2 norm is at most `max_norm`. Returns the pre-clip norm.
inline double clip_grad_norm(ParamList& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    if (p.tensor.requires_grad())
      for (double g : p.tensor.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& p : params)
      if (p.tensor.requires_grad())
        for (double& g : p.tensor.mutable_grad()) g *= s;
  }
  return norm;
}

}  // namespace kuda
