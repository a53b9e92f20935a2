// Differentiable operations over kuda::Tensor. No implicit broadcasting:
// only tensor-with-scalar ops mix shapes; everything else goes through expand().
#pragma once

#include <Eigen/Core>

#include "kuda/tensor.hpp"

namespace kuda {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

inline void check_axis(const Tensor& x, std::size_t axis, const char* op) {
  if (axis >= x.rank())
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                         shape_str(x.shape()));
}

// (outer, n, inner) decomposition around an axis.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

inline AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

inline Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

}  // namespace detail

// ---------------------------------------------------------------- elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result(a.shape(), std::move(out), {&a, &b}, [](detail::Node& self) {
    for (int k = 0; k < 2; ++k) {
      auto& p = detail::parent(self, k);
      if (!p.requires_grad) continue;
      auto& g = p.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_result(a.shape(), std::move(out), {&a, &b}, [](detail::Node& self) {
    for (int k = 0; k < 2; ++k) {
      auto& p = detail::parent(self, k);
      if (!p.requires_grad) continue;
      auto& g = p.grad_buffer();
      const double sgn = k == 0 ? 1.0 : -1.0;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sgn * self.grad[i];
    }
  });
}

/// Hadamard product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result(a.shape(), std::move(out), {&a, &b}, [](detail::Node& self) {
    auto& pa = detail::parent(self, 0);
    auto& pb = detail::parent(self, 1);
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

inline Tensor scale(const Tensor& x, double s) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= s;
  return make_result(x.shape(), std::move(out), {&x}, [s](detail::Node& self) {
    auto& g = detail::parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

inline Tensor add_scalar(const Tensor& x, double s) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v += s;
  return make_result(x.shape(), std::move(out), {&x}, [](detail::Node& self) {
    auto& g = detail::parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

namespace detail {

// y = f(x) elementwise; dfdx(x, y) gives the local derivative.
template <typename Fwd, typename Deriv>
Tensor pointwise(const Tensor& x, Fwd fwd, Deriv dfdx) {
  std::vector<double> out(x.size());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  return make_result(x.shape(), std::move(out), {&x}, [dfdx](Node& self) {
    auto& p = parent(self, 0);
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfdx(p.value[i], self.value[i]);
  });
}

}  // namespace detail

inline Tensor relu(const Tensor& x) {
  return detail::pointwise(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

/// Exact GELU, x * Phi(x).
inline Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  return detail::pointwise(
      x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [](double v, double) {
        return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(-0.5 * v * v);
      });
}

inline Tensor exp(const Tensor& x) {
  return detail::pointwise(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& x) {
  for (double v : x.data())
    if (!(v > 0.0)) throw NumericalError("log of non-positive value");
  return detail::pointwise(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

/// |x| with subgradient 0 at x == 0.
inline Tensor abs(const Tensor& x) {
  return detail::pointwise(
      x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

// ---------------------------------------------------------------- reductions

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result({1}, {s}, {&x}, [](detail::Node& self) {
    auto& g = detail::parent(self, 0).grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

inline Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.size());
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result({1}, {s / n}, {&x}, [n](detail::Node& self) {
    auto& g = detail::parent(self, 0).grad_buffer();
    for (auto& v : g) v += self.grad[0] / n;
  });
}

/// Mean over one axis; the axis is removed (a rank-1 input yields shape [1]).
inline Tensor mean_axis(const Tensor& x, std::size_t axis) {
  detail::check_axis(x, axis, "mean_axis");
  const auto sp = detail::split_at(x.shape(), axis);
  Shape out_shape;
  for (std::size_t i = 0; i < x.rank(); ++i)
    if (i != axis) out_shape.push_back(x.dim(i));
  if (out_shape.empty()) out_shape = {1};
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  auto xv = x.data();
  const double inv = 1.0 / static_cast<double>(sp.n);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t j = 0; j < sp.n; ++j)
      for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += xv[(o * sp.n + j) * sp.inner + i];
  for (auto& v : out) v *= inv;
  return make_result(std::move(out_shape), std::move(out), {&x}, [sp, inv](detail::Node& self) {
    auto& g = detail::parent(self, 0).grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t j = 0; j < sp.n; ++j)
        for (std::size_t i = 0; i < sp.inner; ++i) g[(o * sp.n + j) * sp.inner + i] += inv * self.grad[o * sp.inner + i];
  });
}

// ---------------------------------------------------------------- shape ops

inline Tensor reshape(const Tensor& x, Shape shape) {
  check_shape(shape);
  if (numel(shape) != x.size())
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {&x}, [](detail::Node& self) {
    auto& g = detail::parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

/// Swaps the last two axes (matrix transpose, batched for rank 3).
inline Tensor transpose_last2(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("transpose_last2 needs rank >= 2, got " + shape_str(x.shape()));
  const std::size_t r = x.dim(x.rank() - 2), c = x.dim(x.rank() - 1);
  const std::size_t batch = x.size() / (r * c);
  Shape out_shape = x.shape();
  std::swap(out_shape[x.rank() - 2], out_shape[x.rank() - 1]);
  std::vector<double> out(x.size());
  auto xv = x.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[b * r * c + j * r + i] = xv[b * r * c + i * c + j];
  return make_result(std::move(out_shape), std::move(out), {&x}, [batch, r, c](detail::Node& self) {
    auto& g = detail::parent(self, 0).grad_buffer();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[b * r * c + i * c + j] += self.grad[b * r * c + j * r + i];
  });
}

/// Same-rank expansion of size-1 axes to `target`.
inline Tensor expand(const Tensor& x, Shape target) {
  check_shape(target);
  if (target.size() != x.rank())
    throw DimensionError("expand: rank mismatch " + shape_str(x.shape()) + " -> " + shape_str(target));
  for (std::size_t i = 0; i < target.size(); ++i)
    if (x.dim(i) != target[i] && x.dim(i) != 1)
      throw DimensionError("expand: cannot expand " + shape_str(x.shape()) + " to " + shape_str(target));
  // Source stride per target axis (0 on expanded axes).
  std::vector<std::size_t> src_stride(target.size(), 0);
  {
    std::size_t s = 1;
    for (std::size_t i = target.size(); i-- > 0;) {
      src_stride[i] = x.dim(i) == 1 ? 0 : s;
      s *= x.dim(i);
    }
  }
  const std::size_t n = numel(target);
  std::vector<std::size_t> src_index(n);
  {
    std::vector<std::size_t> idx(target.size(), 0);
    for (std::size_t flat = 0; flat < n; ++flat) {
      std::size_t off = 0;
      for (std::size_t a = 0; a < target.size(); ++a) off += idx[a] * src_stride[a];
      src_index[flat] = off;
      for (std::size_t a = target.size(); a-- > 0;) {
        if (++idx[a] < target[a]) break;
        idx[a] = 0;
      }
    }
  }
  std::vector<double> out(n);
  auto xv = x.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = xv[src_index[i]];
  return make_result(std::move(target), std::move(out), {&x}, [src_index = std::move(src_index)](detail::Node& self) {
    auto& g = detail::parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < src_index.size(); ++i) g[src_index[i]] += self.grad[i];
  });
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Tensor& first = parts.front();
  detail::check_axis(first, axis, "concat");
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.rank()) throw DimensionError("concat: rank mismatch " + shape_str(first.shape()) + " vs " + shape_str(p.shape()));
    for (std::size_t i = 0; i < p.rank(); ++i)
      if (i != axis && p.dim(i) != first.dim(i))
        throw DimensionError("concat: shape mismatch " + shape_str(first.shape()) + " vs " + shape_str(p.shape()));
    total += p.dim(axis);
  }
  Shape out_shape = first.shape();
  out_shape[axis] = total;
  const auto sp = detail::split_at(out_shape, axis);
  std::vector<double> out(numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t n = p.dim(axis);
    auto pv = p.data();
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(pv.begin() + o * n * sp.inner, n * sp.inner, out.begin() + (o * total + off) * sp.inner);
    off += n;
  }
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.dim(axis));
  return make_result(std::move(out_shape), std::move(out), parts,
                     [sp, total, offsets, widths](detail::Node& self) {
                       for (std::size_t k = 0; k < offsets.size(); ++k) {
                         auto& p = detail::parent(self, k);
                         if (!p.requires_grad) continue;
                         auto& g = p.grad_buffer();
                         const std::size_t n = widths[k];
                         for (std::size_t o = 0; o < sp.outer; ++o)
                           for (std::size_t i = 0; i < n * sp.inner; ++i)
                             g[o * n * sp.inner + i] += self.grad[(o * total + offsets[k]) * sp.inner + i];
                       }
                     });
}

inline Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  detail::check_axis(x, axis, "slice");
  if (length == 0 || start + length > x.dim(axis))
    throw DimensionError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") outside axis of size " + std::to_string(x.dim(axis)));
  const auto sp = detail::split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  std::vector<double> out(numel(out_shape));
  auto xv = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(xv.begin() + (o * sp.n + start) * sp.inner, length * sp.inner, out.begin() + o * length * sp.inner);
  return make_result(std::move(out_shape), std::move(out), {&x}, [sp, start, length](detail::Node& self) {
    auto& g = detail::parent(self, 0).grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < length * sp.inner; ++i)
        g[(o * sp.n + start) * sp.inner + i] += self.grad[o * length * sp.inner + i];
  });
}

/// Main diagonal of a square matrix.
inline Tensor diagonal(const Tensor& x) {
  if (x.rank() != 2 || x.dim(0) != x.dim(1)) throw DimensionError("diagonal needs a square matrix, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i * n + i];
  return make_result({n}, std::move(out), {&x}, [n](detail::Node& self) {
    auto& g = detail::parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < n; ++i) g[i * n + i] += self.grad[i];
  });
}

/// Row lookup: out[b, t, :] = table[ids[b*T + t], :].
inline Tensor embedding(const Tensor& table, std::span<const int> ids, std::size_t batch, std::size_t length) {
  if (table.rank() != 2) throw DimensionError("embedding table must be rank 2, got " + shape_str(table.shape()));
  if (ids.size() != batch * length)
    throw DimensionError("embedding: " + std::to_string(ids.size()) + " ids for shape [" + std::to_string(batch) + "x" +
                         std::to_string(length) + "]");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<std::size_t> rows(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab)
      throw std::out_of_range("token id " + std::to_string(ids[i]) + " outside vocabulary of size " + std::to_string(vocab));
    rows[i] = static_cast<std::size_t>(ids[i]);
  }
  std::vector<double> out(ids.size() * d);
  auto tv = table.data();
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(tv.begin() + rows[i] * d, d, out.begin() + i * d);
  return make_result({batch, length, d}, std::move(out), {&table}, [rows = std::move(rows), d](detail::Node& self) {
    auto& g = detail::parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) g[rows[i] * d + j] += self.grad[i * d + j];
  });
}

// ---------------------------------------------------------------- products

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const auto n = static_cast<Eigen::Index>(a.dim(0)), k = static_cast<Eigen::Index>(a.dim(1)),
             m = static_cast<Eigen::Index>(b.dim(1));
  std::vector<double> out(static_cast<std::size_t>(n * m));
  detail::MapMat(out.data(), n, m).noalias() = detail::CMapMat(a.data().data(), n, k) * detail::CMapMat(b.data().data(), k, m);
  return make_result({a.dim(0), b.dim(1)}, std::move(out), {&a, &b}, [n, k, m](detail::Node& self) {
    auto& pa = detail::parent(self, 0);
    auto& pb = detail::parent(self, 1);
    detail::CMapMat dy(self.grad.data(), n, m);
    if (pa.requires_grad)
      detail::MapMat(pa.grad_buffer().data(), n, k).noalias() += dy * detail::CMapMat(pb.value.data(), k, m).transpose();
    if (pb.requires_grad)
      detail::MapMat(pb.grad_buffer().data(), k, m).noalias() += detail::CMapMat(pa.value.data(), n, k).transpose() * dy;
  });
}

/// Batched matmul: [B,n,k] x [B,k,m] -> [B,n,m].
inline Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
    throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t batch = a.dim(0);
  const auto n = static_cast<Eigen::Index>(a.dim(1)), k = static_cast<Eigen::Index>(a.dim(2)),
             m = static_cast<Eigen::Index>(b.dim(2));
  std::vector<double> out(batch * static_cast<std::size_t>(n * m));
  for (std::size_t i = 0; i < batch; ++i)
    detail::MapMat(out.data() + i * n * m, n, m).noalias() =
        detail::CMapMat(a.data().data() + i * n * k, n, k) * detail::CMapMat(b.data().data() + i * k * m, k, m);
  return make_result({batch, a.dim(1), b.dim(2)}, std::move(out), {&a, &b}, [batch, n, k, m](detail::Node& self) {
    auto& pa = detail::parent(self, 0);
    auto& pb = detail::parent(self, 1);
    for (std::size_t i = 0; i < batch; ++i) {
      detail::CMapMat dy(self.grad.data() + i * n * m, n, m);
      if (pa.requires_grad)
        detail::MapMat(pa.grad_buffer().data() + i * n * k, n, k).noalias() +=
            dy * detail::CMapMat(pb.value.data() + i * k * m, k, m).transpose();
      if (pb.requires_grad)
        detail::MapMat(pb.grad_buffer().data() + i * k * m, k, m).noalias() +=
            detail::CMapMat(pa.value.data() + i * n * k, n, k).transpose() * dy;
    }
  });
}

/// Affine map over the last axis: y = x W + b, W is [in, out], b is [out] (optional).
inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = Tensor()) {
  if (weight.rank() != 2 || x.dim(x.rank() - 1) != weight.dim(0))
    throw DimensionError("linear: input " + shape_str(x.shape()) + " does not match weight " + shape_str(weight.shape()));
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != weight.dim(1)))
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not match weight " + shape_str(weight.shape()));
  const auto in = static_cast<Eigen::Index>(weight.dim(0)), outd = static_cast<Eigen::Index>(weight.dim(1));
  const auto rows = static_cast<Eigen::Index>(x.size() / weight.dim(0));
  Shape out_shape = x.shape();
  out_shape.back() = weight.dim(1);
  std::vector<double> out(static_cast<std::size_t>(rows * outd));
  detail::MapMat y(out.data(), rows, outd);
  y.noalias() = detail::CMapMat(x.data().data(), rows, in) * detail::CMapMat(weight.data().data(), in, outd);
  if (has_bias) y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), outd);
  std::vector<Tensor> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result(std::move(out_shape), std::move(out), inputs, [rows, in, outd, has_bias](detail::Node& self) {
    auto& px = detail::parent(self, 0);
    auto& pw = detail::parent(self, 1);
    detail::CMapMat dy(self.grad.data(), rows, outd);
    if (px.requires_grad)
      detail::MapMat(px.grad_buffer().data(), rows, in).noalias() += dy * detail::CMapMat(pw.value.data(), in, outd).transpose();
    if (pw.requires_grad)
      detail::MapMat(pw.grad_buffer().data(), in, outd).noalias() += detail::CMapMat(px.value.data(), rows, in).transpose() * dy;
    if (has_bias) {
      auto& pb = detail::parent(self, 2);
      if (pb.requires_grad) Eigen::Map<Eigen::RowVectorXd>(pb.grad_buffer().data(), outd) += dy.colwise().sum();
    }
  });
}

// ---------------------------------------------------------------- normalizers

/// Max-stabilized softmax along `axis`.
inline Tensor softmax(const Tensor& x, std::size_t axis) {
  detail::check_axis(x, axis, "softmax");
  const auto sp = detail::split_at(x.shape(), axis);
  std::vector<double> out(x.size());
  auto xv = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      auto at = [&](std::size_t j) { return (o * sp.n + j) * sp.inner + i; };
      double mx = xv[at(0)];
      for (std::size_t j = 1; j < sp.n; ++j) mx = std::max(mx, xv[at(j)]);
      double z = 0.0;
      for (std::size_t j = 0; j < sp.n; ++j) z += (out[at(j)] = std::exp(xv[at(j)] - mx));
      for (std::size_t j = 0; j < sp.n; ++j) out[at(j)] /= z;
    }
  return make_result(x.shape(), std::move(out), {&x}, [sp](detail::Node& self) {
    auto& g = detail::parent(self, 0).grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        auto at = [&](std::size_t j) { return (o * sp.n + j) * sp.inner + i; };
        double dot = 0.0;
        for (std::size_t j = 0; j < sp.n; ++j) dot += self.value[at(j)] * self.grad[at(j)];
        for (std::size_t j = 0; j < sp.n; ++j) g[at(j)] += self.value[at(j)] * (self.grad[at(j)] - dot);
      }
  });
}

/// log(softmax(x)) along the last axis.
inline Tensor log_softmax(const Tensor& x) {
  const std::size_t n = x.dim(x.rank() - 1), rows = x.size() / n;
  std::vector<double> out(x.size());
  auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = row[j] - lse;
  }
  return make_result(x.shape(), std::move(out), {&x}, [n, rows](detail::Node& self) {
    auto& g = detail::parent(self, 0).grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      double gs = 0.0;
      for (std::size_t j = 0; j < n; ++j) gs += self.grad[r * n + j];
      for (std::size_t j = 0; j < n; ++j) g[r * n + j] += self.grad[r * n + j] - std::exp(self.value[r * n + j]) * gs;
    }
  });
}

inline constexpr double kLayerNormEps = 1e-5;

/// Normalizes the last axis to zero mean / unit variance, then applies gain and bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = kLayerNormEps) {
  if (!(eps > 0.0)) throw std::invalid_argument("layer_norm: eps must be positive");
  const std::size_t d = x.dim(x.rank() - 1), rows = x.size() / d;
  if (gain.rank() != 1 || gain.dim(0) != d || bias.rank() != 1 || bias.dim(0) != d)
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
                         " do not match input " + shape_str(x.shape()));
  std::vector<double> xhat(x.size()), inv_std(rows), out(x.size());
  auto xv = x.data();
  auto gv = gain.data(), bv = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (row[j] - mu) * inv_std[r];
      out[r * d + j] = gv[j] * xhat[r * d + j] + bv[j];
    }
  }
  return make_result(x.shape(), std::move(out), {&x, &gain, &bias},
                     [d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
                       auto& px = detail::parent(self, 0);
                       auto& pg = detail::parent(self, 1);
                       auto& pb = detail::parent(self, 2);
                       if (pg.requires_grad) {
                         auto& g = pg.grad_buffer();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[r * d + j] * xhat[r * d + j];
                       }
                       if (pb.requires_grad) {
                         auto& g = pb.grad_buffer();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[r * d + j];
                       }
                       if (px.requires_grad) {
                         auto& g = px.grad_buffer();
                         const double invd = 1.0 / static_cast<double>(d);
                         for (std::size_t r = 0; r < rows; ++r) {
                           double m1 = 0.0, m2 = 0.0;
                           for (std::size_t j = 0; j < d; ++j) {
                             const double dxh = self.grad[r * d + j] * pg.value[j];
                             m1 += dxh;
                             m2 += dxh * xhat[r * d + j];
                           }
                           m1 *= invd;
                           m2 *= invd;
                           for (std::size_t j = 0; j < d; ++j) {
                             const double dxh = self.grad[r * d + j] * pg.value[j];
                             g[r * d + j] += inv_std[r] * (dxh - m1 - xhat[r * d + j] * m2);
                           }
                         }
                       }
                     });
}

}  // namespace kuda
