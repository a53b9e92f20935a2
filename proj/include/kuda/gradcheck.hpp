// Central finite-difference checks of the reverse-mode gradients.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "kuda/model.hpp"

namespace kuda {

struct GradcheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  bool passed = false;
};

struct GradcheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  double floor = 1e-6;  // denominator floor for near-zero gradients
};

/// Compares d loss / d input for every entry of every input against
/// (f(x + h) - f(x - h)) / 2h. `loss` must return a scalar and build its graph
/// from the given leaves.
inline GradcheckResult gradcheck(const std::string& name, const std::function<Tensor()>& loss, std::vector<Tensor> inputs,
                                 const GradcheckOptions& opt = {}) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  loss().backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& t : inputs) analytic.emplace_back(t.grad().begin(), t.grad().end());

  GradcheckResult r{name};
  NoGradGuard ng;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto w = inputs[k].mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double orig = w[i];
      w[i] = orig + opt.step;
      const double up = loss().item();
      w[i] = orig - opt.step;
      const double down = loss().item();
      w[i] = orig;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), opt.floor});
      r.max_rel_error = std::max(r.max_rel_error, std::abs(a - numeric) / denom);
      ++r.checked;
    }
  }
  r.passed = r.max_rel_error < opt.tolerance;
  return r;
}

namespace detail {

/// Random values bounded away from 0 so |x| and relu stay off their kinks.
inline Tensor probe(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) {
    x = uniform(rng, lo, hi);
    if (std::abs(x) < 0.05) x += x < 0 ? -0.05 : 0.05;
  }
  return Tensor::from(std::move(shape), std::move(v));
}

/// Scalarizes an output with fixed random weights so every entry's gradient differs.
inline Tensor weigh(const Tensor& out, std::uint64_t salt) {
  Rng rng = make_rng(salt, "gradcheck.weights");
  return sum(mul(out, probe(rng, out.shape())));
}

}  // namespace detail

/// Tiny full model used for the end-to-end check.
inline ModelConfig gradcheck_model_config() {
  ModelConfig c = ModelConfig::desk(7);
  auto& t = c.encoders[index_of(Modality::text)];
  t.width = 8, t.layers = 2, t.heads = 2, t.taps = {1, 2}, t.ffn_hidden = 8, t.max_length = 4;
  for (std::size_t m : {index_of(Modality::vision), index_of(Modality::audio)}) {
    auto& e = c.encoders[m];
    e.width = 4, e.layers = 2, e.heads = 2, e.ffn_hidden = 4, e.max_length = 4;
    e.input_dim = 3;
  }
  c.lengths = {4, 3, 2};
  c.decoder_hidden = 4;
  c.fusion.length = 3, c.fusion.width = 4, c.fusion.blocks = 2, c.fusion.cross_heads = 2, c.fusion.self_heads = 2;
  c.fusion.ffn_hidden = 4;
  return c;
}

/// Every differentiable op plus the full two-block model graph.
inline std::vector<GradcheckResult> standard_gradchecks(const GradcheckOptions& opt = {}, std::uint64_t seed = 7) {
  using detail::probe;
  using detail::weigh;
  Rng rng = make_rng(seed, "gradcheck.inputs");
  std::vector<GradcheckResult> out;
  auto check = [&](const std::string& name, std::vector<Tensor> inputs, std::function<Tensor()> f) {
    out.push_back(gradcheck(name, f, std::move(inputs), opt));
  };

  {
    Tensor a = probe(rng, {2, 3, 4}), b = probe(rng, {2, 3, 4});
    check("add", {a, b}, [=] { return weigh(add(a, b), 1); });
    check("sub", {a, b}, [=] { return weigh(sub(a, b), 2); });
    check("mul", {a, b}, [=] { return weigh(mul(a, b), 3); });
    check("scale", {a}, [=] { return weigh(scale(a, -1.7), 4); });
    check("add_scalar", {a}, [=] { return weigh(add_scalar(a, 0.3), 5); });
    check("relu", {a}, [=] { return weigh(relu(a), 6); });
    check("gelu", {a}, [=] { return weigh(gelu(a), 7); });
    check("exp", {a}, [=] { return weigh(exp(a), 8); });
    check("abs", {a}, [=] { return weigh(abs(a), 9); });
    check("sum", {a}, [=] { return scale(sum(mul(a, a)), 0.5); });
    check("mean", {a}, [=] { return mean(mul(a, b)); });
    for (std::size_t ax = 0; ax < 3; ++ax)
      check("mean_axis" + std::to_string(ax), {a}, [=] { return weigh(mean_axis(a, ax), 10 + ax); });
    check("reshape", {a}, [=] { return weigh(reshape(a, {6, 4}), 13); });
    check("transpose_last2", {a}, [=] { return weigh(transpose_last2(a), 14); });
    for (std::size_t ax = 0; ax < 3; ++ax) {
      check("concat_axis" + std::to_string(ax), {a, b}, [=] { return weigh(concat({a, b, a}, ax), 15 + ax); });
      check("slice_axis" + std::to_string(ax), {a}, [=] { return weigh(slice(a, ax, 1, 1), 18 + ax); });
      check("softmax_axis" + std::to_string(ax), {a}, [=] { return weigh(softmax(a, ax), 21 + ax); });
    }
    check("log_softmax", {a}, [=] { return weigh(log_softmax(a), 24); });
  }
  {
    Tensor p = probe(rng, {3, 4}, 0.2, 2.0);
    check("log", {p}, [=] { return weigh(log(p), 25); });
    Tensor s = probe(rng, {3, 3});
    check("diagonal", {s}, [=] { return weigh(diagonal(s), 26); });
    Tensor e = probe(rng, {1, 3, 4});
    check("expand", {e}, [=] { return weigh(expand(e, {2, 3, 4}), 27); });
    Tensor e2 = probe(rng, {2, 1, 1});
    check("expand_inner", {e2}, [=] { return weigh(expand(e2, {2, 3, 4}), 28); });
  }
  {
    Tensor table = probe(rng, {5, 3});
    const std::vector<int> ids{0, 4, 4, 2, 1, 0};
    check("embedding", {table}, [=] { return weigh(embedding(table, ids, 2, 3), 29); });
  }
  {
    Tensor a = probe(rng, {3, 4}), b = probe(rng, {4, 2});
    check("matmul", {a, b}, [=] { return weigh(matmul(a, b), 30); });
    Tensor x = probe(rng, {2, 3, 4}), y = probe(rng, {2, 4, 5});
    check("bmm", {x, y}, [=] { return weigh(bmm(x, y), 31); });
    Tensor w = probe(rng, {4, 3}), bias = probe(rng, {3});
    check("linear", {x, w, bias}, [=] { return weigh(linear(x, w, bias), 32); });
    check("linear_2d", {a, w}, [=] { return weigh(linear(a, w), 33); });
    Tensor g = probe(rng, {4}), beta = probe(rng, {4});
    check("layer_norm", {x, g, beta}, [=] { return weigh(layer_norm(x, g, beta), 34); });
  }
  {
    Rng mrng = make_rng(seed, "gradcheck.attention");
    MultiHeadAttention mha(4, 2, mrng);
    Tensor q = probe(rng, {2, 3, 4}), kv = probe(rng, {2, 5, 4});
    std::vector<Tensor> leaves{q, kv};
    ParamList ps;
    mha.collect("mha", ps);
    for (auto& p : ps) leaves.push_back(p.tensor);
    check("multi_head_attention", leaves, [=] { return weigh(mha(q, kv), 35); });
  }
  {
    Tensor f = probe(rng, {4, 3}), u = probe(rng, {4, 3}), w = probe(rng, {3, 3});
    check("nce_correlation", {f, u, w}, [=] { return nce_correlation(f, u, w); });
    Tensor pred = probe(rng, {5});
    const std::vector<double> y{0.9, -0.4, 0.0, 0.3, -1.0};
    check("mae_loss", {pred}, [=] { return mae_loss(pred, y); });
  }

  // End to end: encoders, adapters, decoders, projectors, two dynamic blocks,
  // output head, correlation loss. Ratios are fixed constants, as in training.
  {
    const ModelConfig cfg = gradcheck_model_config();
    auto model = std::make_shared<KudaModel>(cfg, seed);
    Rng drng = make_rng(seed, "gradcheck.batch");
    const std::size_t n = 3;
    auto batch = std::make_shared<MultimodalBatch>();
    batch->ids = {"a", "b", "c"};
    auto& text = batch->inputs[0];
    text.batch = n, text.length = 4;
    for (std::size_t i = 0; i < n * 4; ++i) text.ids.push_back(static_cast<int>(uniform_index(drng, 7)));
    for (std::size_t m = 1; m < 3; ++m) {
      auto& mb = batch->inputs[m];
      mb.batch = n, mb.length = cfg.lengths[m];
      mb.features = probe(drng, {n, cfg.lengths[m], 3});
    }
    const std::vector<double> y{0.5, -0.7, 0.2};
    const BatchRatios fixed{std::vector<double>{0.2, 0.5, 0.3}, std::vector<double>{0.3, 0.1, 0.6},
                            std::vector<double>{0.5, 0.4, 0.1}};
    const PerModality<std::vector<double>> y_uni{std::vector<double>{0.4, -0.6, 0.1}, std::vector<double>{0.9, 0.3, -0.2},
                                                 std::vector<double>{-0.5, -0.8, 0.6}};
    std::vector<Tensor> leaves;
    for (auto& p : model->parameters()) leaves.push_back(p.tensor);
    check("end_to_end_two_blocks", leaves, [=] {
      const ForwardResult r = model->forward(*batch, [&](const PerModality<std::vector<double>>&) { return fixed; });
      Tensor loss = union_loss(mae_loss(r.prediction, y), model->correlation_loss(r), 0.5);
      for (std::size_t m = 0; m < 3; ++m) loss = add(loss, mae_loss(r.knowledge[m].score, y_uni[m]));
      return loss;
    });
  }
  return out;
}

}  // namespace kuda
