// Dense float64 tensors (rank <= 3) with a dynamic reverse-mode tape.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace kuda {

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

using Shape = std::vector<std::size_t>;

inline constexpr std::size_t kMaxRank = 3;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

inline void check_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > kMaxRank)
    throw DimensionError("tensor rank must be 1.." + std::to_string(kMaxRank) + ", got " + shape_str(shape));
  for (auto d : shape)
    if (d == 0) throw DimensionError("tensor dims must be positive, got " + shape_str(shape));
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated on first accumulation
  bool requires_grad = false;
  bool released = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward && !released; }
  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

inline thread_local bool grad_enabled = true;

}  // namespace detail

/// Disables tape recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Shared handle to a tape node. Copies alias the same storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    check_shape(shape);
    if (numel(shape) != values.size())
      throw DimensionError("tensor " + shape_str(shape) + " needs " + std::to_string(numel(shape)) +
                           " values, got " + std::to_string(values.size()));
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    if (requires_grad) node->grad.assign(node->value.size(), 0.0);
    return Tensor(std::move(node));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = numel(shape);
    return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor filled(Shape shape, double v, bool requires_grad = false) {
    auto n = numel(shape);
    return from(std::move(shape), std::vector<double>(n, v), requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> data() const { return node_->value; }
  double operator[](std::size_t i) const { return node_->value[i]; }
  double item() const {
    if (size() != 1) throw DimensionError("item() on non-scalar tensor " + shape_str(shape()));
    return node_->value[0];
  }

  /// Writable storage; only leaves may be mutated (parameters, optimizer state).
  std::span<double> mutable_data() {
    if (!node_->is_leaf()) throw GraphError("only leaf tensors may be mutated in place");
    return node_->value;
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) {
    if (!node_->is_leaf()) throw GraphError("requires_grad can only be toggled on leaves");
    node_->requires_grad = on;
    if (on && node_->grad.empty()) node_->grad.assign(node_->value.size(), 0.0);
    if (!on) node_->grad.clear();
  }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->grad; }
  void zero_grad() {
    if (node_->requires_grad) node_->grad.assign(node_->value.size(), 0.0);
  }

  /// Value copy without history.
  Tensor detach() const { return from(shape(), node_->value, false); }

  /// Reverse sweep from a scalar loss. The recorded graph is released afterwards.
  void backward() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend Tensor make_result(Shape, std::vector<double>, std::initializer_list<const Tensor*>,
                            std::function<void(detail::Node&)>);
  friend Tensor make_result(Shape, std::vector<double>, const std::vector<Tensor>&,
                            std::function<void(detail::Node&)>);

  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline void check_finite(const std::vector<double>& v) {
#ifndef NDEBUG
  for (double x : v)
    if (!std::isfinite(x)) throw NumericalError("non-finite value produced by a forward op");
#else
  (void)v;
#endif
}

}  // namespace detail

inline Tensor make_result(Shape shape, std::vector<double> value, const std::vector<Tensor>& inputs,
                          std::function<void(detail::Node&)> bw) {
  detail::check_finite(value);
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool needs = false;
  if (detail::grad_enabled)
    for (const auto& t : inputs) needs = needs || t.requires_grad();
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const auto& t : inputs) node->parents.push_back(t.node());
    node->backward = std::move(bw);
  }
  return Tensor(std::move(node));
}

inline Tensor make_result(Shape shape, std::vector<double> value, std::initializer_list<const Tensor*> inputs,
                          std::function<void(detail::Node&)> bw) {
  std::vector<Tensor> v;
  v.reserve(inputs.size());
  for (const auto* t : inputs) v.push_back(*t);
  return make_result(std::move(shape), std::move(value), v, std::move(bw));
}

inline void Tensor::backward() const {
  if (!defined()) throw GraphError("backward on an undefined tensor");
  if (size() != 1) throw GraphError("backward needs a scalar loss, got " + shape_str(shape()));
  if (node_->released) throw GraphError("backward called twice on the same graph");
  if (!node_->requires_grad) throw GraphError("loss is detached: no parameter requires grad");

  // Iterative post-order DFS gives a topological order (inputs before outputs).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      detail::Node* p = n->parents[idx++].get();
      if (p->released) throw GraphError("graph already consumed by an earlier backward");
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad.assign(1, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  for (detail::Node* n : order) {
    if (n->backward) {
      n->backward = nullptr;
      n->parents.clear();
      n->grad.clear();
      n->grad.shrink_to_fit();
      n->released = true;
    }
  }
}

}  // namespace kuda
