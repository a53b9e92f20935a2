// Regression, correlation-estimation (InfoNCE) and combined training losses.
#pragma once

#include <span>
#include <string>

#include "kuda/ops.hpp"

namespace kuda {

/// -(1/N) sum_i log softmax_j(score(i, j))[i]; positives on the diagonal.
inline Tensor nce_from_scores(const Tensor& scores) {
  if (scores.rank() != 2 || scores.dim(0) != scores.dim(1))
    throw DimensionError("nce: score matrix must be square, got " + shape_str(scores.shape()));
  if (scores.dim(0) < 2) throw std::invalid_argument("nce: batch of " + std::to_string(scores.dim(0)) + " has no negatives");
  return scale(mean(diagonal(log_softmax(scores))), -1.0);
}

/// Bilinear InfoNCE between pooled fusion vectors [N, d] and pooled unimodal
/// vectors [N, d]: score(i, j) = (f_i W) . u_j, in-batch negatives.
inline Tensor nce_correlation(const Tensor& fused, const Tensor& unimodal, const Tensor& bilinear) {
  if (fused.rank() != 2 || unimodal.rank() != 2 || fused.dim(0) != unimodal.dim(0))
    throw DimensionError("nce: pooled batches disagree " + shape_str(fused.shape()) + " vs " + shape_str(unimodal.shape()));
  if (fused.dim(0) < 2) throw std::invalid_argument("nce: need at least 2 samples per batch for negatives");
  return nce_from_scores(matmul(linear(fused, bilinear), transpose_last2(unimodal)));
}

/// Mean absolute error of predictions [N] against constant targets.
inline Tensor mae_loss(const Tensor& predictions, std::span<const double> targets) {
  if (targets.empty()) throw std::invalid_argument("mae_loss: empty batch");
  if (predictions.size() != targets.size())
    throw DimensionError("mae_loss: " + std::to_string(predictions.size()) + " predictions vs " +
                         std::to_string(targets.size()) + " targets");
  const Tensor y = Tensor::from({targets.size()}, {targets.begin(), targets.end()});
  return mean(abs(sub(reshape(predictions, {targets.size()}), y)));
}

inline Tensor union_loss(const Tensor& l_reg, const Tensor& l_cor, double alpha) {
  if (!(alpha >= 0.0)) throw std::invalid_argument("union_loss: alpha must be non-negative");
  return add(l_reg, scale(l_cor, alpha));
}

struct LossBundle {
  double l_reg = 0.0;
  double l_cor = 0.0;
  double alpha = 0.0;
  double l_task = 0.0;
};

}  // namespace kuda
