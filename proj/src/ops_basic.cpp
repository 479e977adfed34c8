#include <algorithm>
#include <cmath>
#include <numeric>

#include "miq3d/errors.hpp"
#include "miq3d/kink_trace.hpp"
#include "miq3d/ops.hpp"
#include "ops_internal.hpp"

namespace miq3d {

using detail::grad_ptr;
using detail::make_result;
using detail::broadcast_strides;
using detail::for_each_broadcast;

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1)
      throw DimensionError("shapes " + shape_str(a) + " and " + shape_str(b) +
                           " are not broadcastable");
    out[i] = std::max(ea, eb);
  }
  return out;
}

namespace {

// Binary elementwise op. `fwd(a, b)` gives the value; `da(a, b)` and `db(a, b)`
// the partial derivatives.
template <typename T, typename F, typename DA, typename DB>
Tensor<T> binary_op(const char* name, const Tensor<T>& a, const Tensor<T>& b, F fwd, DA da,
                    DB db) {
  if (a.shape() == b.shape()) {
    const std::size_t n = a.numel();
    std::vector<T> out(n);
    const auto av = a.data();
    const auto bv = b.data();
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i], bv[i]);
    return make_result<T>(name, a.shape(), std::move(out), {a, b}, [a, b, da, db](auto& self) {
      const auto av = a.data();
      const auto bv = b.data();
      const auto& g = self.grad;
      if (T* ga = grad_ptr(a))
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * da(av[i], bv[i]);
      if (T* gb = grad_ptr(b))
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * db(av[i], bv[i]);
    });
  }
  Shape out_shape = broadcast_shapes(a.shape(), b.shape());
  auto sa = broadcast_strides(a.shape(), out_shape);
  auto sb = broadcast_strides(b.shape(), out_shape);
  std::vector<T> out(numel(out_shape));
  const auto av = a.data();
  const auto bv = b.data();
  for_each_broadcast(out_shape, sa, sb,
                     [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = fwd(av[ia], bv[ib]); });
  Shape s = out_shape;
  return make_result<T>(name, std::move(out_shape), std::move(out), {a, b},
                        [a, b, da, db, s, sa, sb](auto& self) {
                          const auto av = a.data();
                          const auto bv = b.data();
                          const auto& g = self.grad;
                          T* ga = grad_ptr(a);
                          T* gb = grad_ptr(b);
                          for_each_broadcast(s, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
                            if (ga) ga[ia] += g[o] * da(av[ia], bv[ib]);
                            if (gb) gb[ib] += g[o] * db(av[ia], bv[ib]);
                          });
                        });
}

template <typename T, typename F, typename D>
Tensor<T> unary_op(const char* name, const Tensor<T>& a, F fwd, D deriv) {
  const std::size_t n = a.numel();
  std::vector<T> out(n);
  const auto av = a.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i]);
  return make_result<T>(name, a.shape(), std::move(out), {a}, [a, deriv](auto& self) {
    T* ga = grad_ptr(a);
    if (!ga) return;
    const auto av = a.data();
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(av[i], y[i]);
  });
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
      [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
      [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  return unary_op<T>(
      "scale", a, [factor](T x) { return x * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary_op<T>(
      "sigmoid", a, [](T x) { return stable_sigmoid(x); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  if (KinkTrace::active()) {
    std::uint64_t positives = 0;
    for (std::size_t i = 0; i < a.numel(); ++i)
      if (a.at(i) > T(0)) KinkTrace::record(i), ++positives;
    KinkTrace::record(positives);
  }
  return unary_op<T>(
      "relu", a, [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.numel())
    throw DimensionError("cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
  std::vector<T> out(a.data().begin(), a.data().end());
  return make_result<T>("reshape", std::move(shape), std::move(out), {a}, [a](auto& self) {
    if (T* ga = grad_ptr(a))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& axes) {
  const std::size_t rank = a.rank();
  if (axes.size() != rank) throw DimensionError("permute: axis count does not match rank");
  std::vector<bool> seen(rank, false);
  for (auto ax : axes) {
    if (ax >= rank || seen[ax]) throw DimensionError("permute: invalid axis list");
    seen[ax] = true;
  }
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank - 1; i-- > 0;) in_strides[i] = in_strides[i + 1] * a.dim(i + 1);
  Shape out_shape(rank);
  std::vector<std::size_t> gather_strides(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = a.dim(axes[i]);
    gather_strides[i] = in_strides[axes[i]];
  }
  // src_index[o] maps each output element to its input position.
  auto src_index = std::make_shared<std::vector<std::size_t>>(a.numel());
  std::vector<std::size_t> zero(rank, 0);
  for_each_broadcast(out_shape, gather_strides, zero,
                     [&](std::size_t o, std::size_t ia, std::size_t) { (*src_index)[o] = ia; });
  std::vector<T> out(a.numel());
  const auto av = a.data();
  for (std::size_t o = 0; o < out.size(); ++o) out[o] = av[(*src_index)[o]];
  return make_result<T>("permute", std::move(out_shape), std::move(out), {a},
                        [a, src_index](auto& self) {
                          if (T* ga = grad_ptr(a))
                            for (std::size_t o = 0; o < self.grad.size(); ++o)
                              ga[(*src_index)[o]] += self.grad[o];
                        });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() < 2) throw DimensionError("transpose needs rank >= 2, got " + shape_str(a.shape()));
  std::vector<std::size_t> axes(a.rank());
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[a.rank() - 1], axes[a.rank() - 2]);
  return permute(a, axes);
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape& ref = parts[0].shape();
  if (axis >= ref.size()) throw DimensionError("concat axis out of range");
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != ref.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t d = 0; d < ref.size(); ++d)
      if (d != axis && p.dim(d) != ref[d])
        throw DimensionError("concat: shapes " + shape_str(ref) + " and " + shape_str(p.shape()) +
                             " differ off the concat axis");
    out_shape[axis] += p.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= ref[d];
  for (std::size_t d = axis + 1; d < ref.size(); ++d) inner *= ref[d];
  const std::size_t out_row = out_shape[axis] * inner;
  std::vector<T> out(numel(out_shape));
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t row = p.dim(axis) * inner;
    const auto pv = p.data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pv.begin() + o * row, row, out.begin() + o * out_row + offset);
    offset += row;
  }
  return make_result<T>("concat", std::move(out_shape), std::move(out), parts,
                        [parts, outer, inner, out_row, axis](auto& self) {
                          std::size_t offset = 0;
                          for (const auto& p : parts) {
                            const std::size_t row = p.dim(axis) * inner;
                            if (T* gp = grad_ptr(p))
                              for (std::size_t o = 0; o < outer; ++o)
                                for (std::size_t i = 0; i < row; ++i)
                                  gp[o * row + i] += self.grad[o * out_row + offset + i];
                            offset += row;
                          }
                        });
}

template <typename T>
Tensor<T> select(const Tensor<T>& a, std::size_t index) {
  if (index >= a.dim(0))
    throw DimensionError("select index " + std::to_string(index) + " out of range for " +
                         shape_str(a.shape()));
  Shape out_shape(a.shape().begin() + 1, a.shape().end());
  if (out_shape.empty()) out_shape = {1};
  const std::size_t block = numel(out_shape);
  std::vector<T> out(a.data().begin() + index * block, a.data().begin() + (index + 1) * block);
  return make_result<T>("select", std::move(out_shape), std::move(out), {a},
                        [a, index, block](auto& self) {
                          if (T* ga = grad_ptr(a))
                            for (std::size_t i = 0; i < block; ++i) ga[index * block + i] += self.grad[i];
                        });
}

template <typename T>
Tensor<T> expand(const Tensor<T>& a, const Shape& shape) {
  if (broadcast_shapes(a.shape(), shape) != shape)
    throw DimensionError("cannot expand " + shape_str(a.shape()) + " to " + shape_str(shape));
  auto sa = broadcast_strides(a.shape(), shape);
  std::vector<std::size_t> zero(shape.size(), 0);
  std::vector<T> out(numel(shape));
  const auto av = a.data();
  for_each_broadcast(shape, sa, zero, [&](std::size_t o, std::size_t ia, std::size_t) { out[o] = av[ia]; });
  return make_result<T>("expand", shape, std::move(out), {a}, [a, shape, sa, zero](auto& self) {
    T* ga = grad_ptr(a);
    if (!ga) return;
    for_each_broadcast(shape, sa, zero,
                       [&](std::size_t o, std::size_t ia, std::size_t) { ga[ia] += self.grad[o]; });
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = 0;
  for (const T v : a.data()) acc += v;
  return make_result<T>("sum", {1}, {acc}, {a}, [a](auto& self) {
    if (T* ga = grad_ptr(a)) {
      const T g = self.grad[0];
      for (std::size_t i = 0; i < a.numel(); ++i) ga[i] += g;
    }
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.numel() / cols;
  std::vector<T> out(x.numel());
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * cols;
    T* o = out.data() + r * cols;
    const T mx = *std::max_element(in, in + cols);
    T total = 0;
    for (std::size_t c = 0; c < cols; ++c) total += (o[c] = std::exp(in[c] - mx));
    const T inv = T(1) / total;
    for (std::size_t c = 0; c < cols; ++c) o[c] *= inv;
  }
  return make_result<T>("softmax", x.shape(), std::move(out), {x}, [x, rows, cols](auto& self) {
    T* gx = grad_ptr(x);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.data.data() + r * cols;
      const T* g = self.grad.data() + r * cols;
      T inner = 0;
      for (std::size_t c = 0; c < cols; ++c) inner += g[c] * y[c];
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += y[c] * (g[c] - inner);
    }
  });
}

template <typename T>
Tensor<T> log_softmax_lastdim(const Tensor<T>& x) {
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.numel() / cols;
  std::vector<T> out(x.numel());
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * cols;
    const T mx = *std::max_element(in, in + cols);
    T total = 0;
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(in[c] - mx);
    const T lse = mx + std::log(total);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = in[c] - lse;
  }
  return make_result<T>("log_softmax", x.shape(), std::move(out), {x}, [x, rows, cols](auto& self) {
    T* gx = grad_ptr(x);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.data.data() + r * cols;
      const T* g = self.grad.data() + r * cols;
      T gsum = 0;
      for (std::size_t c = 0; c < cols; ++c) gsum += g[c];
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[c] - std::exp(y[c]) * gsum;
    }
  });
}

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const std::size_t cols = x.shape().back();
  if (gamma.numel() != cols || beta.numel() != cols)
    throw DimensionError("layernorm: affine parameters must have " + std::to_string(cols) +
                         " entries");
  if (!(eps > T(0))) throw ConfigError("layernorm eps must be positive");
  const std::size_t rows = x.numel() / cols;
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  std::vector<T> out(x.numel());
  const auto xv = x.data();
  const auto gv = gamma.data();
  const auto bv = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * cols;
    T mu = 0;
    for (std::size_t c = 0; c < cols; ++c) mu += in[c];
    mu /= static_cast<T>(cols);
    T var = 0;
    for (std::size_t c = 0; c < cols; ++c) var += (in[c] - mu) * (in[c] - mu);
    var /= static_cast<T>(cols);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < cols; ++c) {
      const T h = (in[c] - mu) * is;
      (*xhat)[r * cols + c] = h;
      out[r * cols + c] = h * gv[c] + bv[c];
    }
  }
  return make_result<T>(
      "layernorm", x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat, inv_std, rows, cols](auto& self) {
        T* gx = grad_ptr(x);
        T* gg = grad_ptr(gamma);
        T* gb = grad_ptr(beta);
        const auto gv = gamma.data();
        std::vector<T> dxhat(cols);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* g = self.grad.data() + r * cols;
          const T* h = xhat->data() + r * cols;
          T mean_d = 0, mean_dh = 0;
          for (std::size_t c = 0; c < cols; ++c) {
            if (gg) gg[c] += g[c] * h[c];
            if (gb) gb[c] += g[c];
            dxhat[c] = g[c] * gv[c];
            mean_d += dxhat[c];
            mean_dh += dxhat[c] * h[c];
          }
          if (!gx) continue;
          mean_d /= static_cast<T>(cols);
          mean_dh /= static_cast<T>(cols);
          const T is = (*inv_std)[r];
          for (std::size_t c = 0; c < cols; ++c)
            gx[r * cols + c] += is * (dxhat[c] - mean_d - h[c] * mean_dh);
        }
      });
}

#define MIQ3D_INSTANTIATE(T)                                                                \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> scale(const Tensor<T>&, T);                                            \
  template Tensor<T> sigmoid(const Tensor<T>&);                                             \
  template Tensor<T> relu(const Tensor<T>&);                                                \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                      \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);            \
  template Tensor<T> transpose(const Tensor<T>&);                                           \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                    \
  template Tensor<T> select(const Tensor<T>&, std::size_t);                                 \
  template Tensor<T> expand(const Tensor<T>&, const Shape&);                                \
  template Tensor<T> sum(const Tensor<T>&);                                                 \
  template Tensor<T> mean(const Tensor<T>&);                                                \
  template Tensor<T> softmax_lastdim(const Tensor<T>&);                                     \
  template Tensor<T> log_softmax_lastdim(const Tensor<T>&);                                 \
  template Tensor<T> layernorm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);

MIQ3D_INSTANTIATE(float)
MIQ3D_INSTANTIATE(double)
#undef MIQ3D_INSTANTIATE

}  // namespace miq3d
