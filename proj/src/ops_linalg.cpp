#include <algorithm>
#include <memory>

#include "miq3d/errors.hpp"
#include "miq3d/kernels/kernels.hpp"
#include "miq3d/ops.hpp"
#include "ops_internal.hpp"

namespace miq3d {

using detail::broadcast_strides;
using detail::for_each_broadcast;
using detail::grad_ptr;
using detail::make_result;
using kernels::Trans;

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2 || a.shape().back() != b.dim(b.rank() - 2))
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  const std::size_t m = a.dim(a.rank() - 2);
  const std::size_t k = a.shape().back();
  const std::size_t n = b.shape().back();
  const Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  const Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  Shape batch;
  try {
    batch = broadcast_shapes(batch_a, batch_b);
  } catch (const DimensionError&) {
    throw DimensionError("matmul: batch extents of " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " are not broadcastable");
  }
  const auto sa = broadcast_strides(batch_a, batch);
  const auto sb = broadcast_strides(batch_b, batch);
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<T> out(numel(out_shape));
  const T* av = a.data().data();
  const T* bv = b.data().data();
  for_each_broadcast(batch, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
    kernels::gemm(Trans::kNo, Trans::kNo, m, n, k, av + ia * m * k, bv + ib * k * n,
                  out.data() + o * m * n, false);
  });
  return make_result<T>("matmul", std::move(out_shape), std::move(out), {a, b},
                        [a, b, batch, sa, sb, m, n, k](auto& self) {
                          T* ga = grad_ptr(a);
                          T* gb = grad_ptr(b);
                          const T* av = a.data().data();
                          const T* bv = b.data().data();
                          const T* g = self.grad.data();
                          for_each_broadcast(batch, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
                            if (ga)
                              kernels::gemm(Trans::kNo, Trans::kYes, m, k, n, g + o * m * n,
                                            bv + ib * k * n, ga + ia * m * k, true);
                            if (gb)
                              kernels::gemm(Trans::kYes, Trans::kNo, k, n, m, av + ia * m * k,
                                            g + o * m * n, gb + ib * k * n, true);
                          });
                        });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (weight.rank() != 2 || x.shape().back() != weight.dim(0))
    throw DimensionError("linear: input " + shape_str(x.shape()) + " vs weight " +
                         shape_str(weight.shape()));
  const std::size_t in = weight.dim(0);
  const std::size_t out_dim = weight.dim(1);
  if (bias.defined() && bias.numel() != out_dim)
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " vs " +
                         std::to_string(out_dim) + " outputs");
  const std::size_t rows = x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = out_dim;
  std::vector<T> out(rows * out_dim);
  kernels::gemm(Trans::kNo, Trans::kNo, rows, out_dim, in, x.data().data(), weight.data().data(),
                out.data(), false);
  if (bias.defined()) {
    const auto bv = bias.data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < out_dim; ++j) out[r * out_dim + j] += bv[j];
  }
  return make_result<T>("linear", std::move(out_shape), std::move(out), {x, weight, bias},
                        [x, weight, bias, rows, in, out_dim](auto& self) {
                          const T* g = self.grad.data();
                          if (T* gx = grad_ptr(x))
                            kernels::gemm(Trans::kNo, Trans::kYes, rows, in, out_dim, g,
                                          weight.data().data(), gx, true);
                          if (T* gw = grad_ptr(weight))
                            kernels::gemm(Trans::kYes, Trans::kNo, in, out_dim, rows,
                                          x.data().data(), g, gw, true);
                          if (T* gb = grad_ptr(bias))
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t j = 0; j < out_dim; ++j) gb[j] += g[r * out_dim + j];
                        });
}

namespace {

struct ConvGeometry {
  std::size_t c_in, d, h, w;
  std::size_t c_out, k, stride, pad;
  std::size_t od, oh, ow;
  std::size_t rows() const { return c_in * k * k * k; }
  std::size_t cols() const { return od * oh * ow; }
  bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

std::size_t conv_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  const std::size_t padded = in + 2 * pad;
  if (padded < k || (padded - k) % stride != 0)
    throw ConfigError("conv3d: extent " + std::to_string(in) + " with k=" + std::to_string(k) +
                      ", stride=" + std::to_string(stride) + ", pad=" + std::to_string(pad) +
                      " gives a non-integral output extent");
  return (padded - k) / stride + 1;
}

// Visits every (col row, output position, input offset) triple of the
// unfolded input; padding positions are skipped.
template <typename Fn>
void for_each_window_tap(const ConvGeometry& g, Fn&& fn) {
  const auto in_range = [](std::ptrdiff_t v, std::size_t n) { return v >= 0 && v < static_cast<std::ptrdiff_t>(n); };
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.c_in; ++c)
    for (std::size_t kd = 0; kd < g.k; ++kd)
      for (std::size_t kh = 0; kh < g.k; ++kh)
        for (std::size_t kw = 0; kw < g.k; ++kw, ++row) {
          std::size_t col = 0;
          for (std::size_t z = 0; z < g.od; ++z) {
            const std::ptrdiff_t iz = static_cast<std::ptrdiff_t>(z * g.stride + kd) - static_cast<std::ptrdiff_t>(g.pad);
            if (!in_range(iz, g.d)) {
              col += g.oh * g.ow;
              continue;
            }
            for (std::size_t y = 0; y < g.oh; ++y) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * g.stride + kh) - static_cast<std::ptrdiff_t>(g.pad);
              if (!in_range(iy, g.h)) {
                col += g.ow;
                continue;
              }
              const std::size_t base = ((c * g.d + iz) * g.h + iy) * g.w;
              for (std::size_t x = 0; x < g.ow; ++x, ++col) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * g.stride + kw) - static_cast<std::ptrdiff_t>(g.pad);
                if (in_range(ix, g.w)) fn(row, col, base + ix);
              }
            }
          }
        }
}

template <typename T>
std::vector<T> im2col(const ConvGeometry& g, const T* x) {
  std::vector<T> col(g.rows() * g.cols(), T(0));
  const std::size_t cols = g.cols();
  for_each_window_tap(g, [&](std::size_t r, std::size_t c, std::size_t src) { col[r * cols + c] = x[src]; });
  return col;
}

template <typename T>
void col2im_accumulate(const ConvGeometry& g, const T* col, T* dx) {
  const std::size_t cols = g.cols();
  for_each_window_tap(g, [&](std::size_t r, std::size_t c, std::size_t dst) { dx[dst] += col[r * cols + c]; });
}

}  // namespace

template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, std::size_t pad) {
  if (x.rank() != 4 || weight.rank() != 5 || weight.dim(1) != x.dim(0))
    throw DimensionError("conv3d: input " + shape_str(x.shape()) + " vs weight " +
                         shape_str(weight.shape()));
  const std::size_t k = weight.dim(2);
  if (weight.dim(3) != k || weight.dim(4) != k) throw ConfigError("conv3d: kernel must be cubic");
  if (k % 2 == 0) throw ConfigError("conv3d: kernel size must be odd, got " + std::to_string(k));
  if (stride == 0) throw ConfigError("conv3d: stride must be positive");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), k, stride, pad, 0, 0, 0};
  g.od = conv_extent(g.d, k, stride, pad);
  g.oh = conv_extent(g.h, k, stride, pad);
  g.ow = conv_extent(g.w, k, stride, pad);
  if (bias.defined() && bias.numel() != g.c_out)
    throw DimensionError("conv3d: bias " + shape_str(bias.shape()) + " vs " +
                         std::to_string(g.c_out) + " output channels");

  std::shared_ptr<const std::vector<T>> col;
  const T* col_ptr = x.data().data();
  if (!g.pointwise()) {
    col = std::make_shared<const std::vector<T>>(im2col(g, x.data().data()));
    col_ptr = col->data();
  }
  const std::size_t cols = g.cols();
  std::vector<T> out(g.c_out * cols);
  kernels::gemm(Trans::kNo, Trans::kNo, g.c_out, cols, g.rows(), weight.data().data(), col_ptr,
                out.data(), false);
  if (bias.defined()) {
    const auto bv = bias.data();
    for (std::size_t c = 0; c < g.c_out; ++c)
      for (std::size_t i = 0; i < cols; ++i) out[c * cols + i] += bv[c];
  }
  return make_result<T>(
      "conv3d", {g.c_out, g.od, g.oh, g.ow}, std::move(out), {x, weight, bias},
      [x, weight, bias, g, col](auto& self) {
        const std::size_t cols = g.cols();
        const T* dy = self.grad.data();
        const T* colp = col ? col->data() : x.data().data();
        if (T* gw = grad_ptr(weight))
          kernels::gemm(Trans::kNo, Trans::kYes, g.c_out, g.rows(), cols, dy, colp, gw, true);
        if (T* gb = grad_ptr(bias))
          for (std::size_t c = 0; c < g.c_out; ++c) {
            T acc = 0;
            for (std::size_t i = 0; i < cols; ++i) acc += dy[c * cols + i];
            gb[c] += acc;
          }
        if (T* gx = grad_ptr(x)) {
          if (g.pointwise()) {
            kernels::gemm(Trans::kYes, Trans::kNo, g.rows(), cols, g.c_out, weight.data().data(),
                          dy, gx, true);
          } else {
            std::vector<T> dcol(g.rows() * cols);
            kernels::gemm(Trans::kYes, Trans::kNo, g.rows(), cols, g.c_out, weight.data().data(),
                          dy, dcol.data(), false);
            col2im_accumulate(g, dcol.data(), gx);
          }
        }
      });
}

template <typename T>
Tensor<T> patchify(const Tensor<T>& x, std::size_t patch) {
  if (x.rank() != 4) throw DimensionError("patchify expects [C,D,H,W], got " + shape_str(x.shape()));
  if (patch == 0 || x.dim(1) % patch || x.dim(2) % patch || x.dim(3) % patch)
    throw ConfigError("patchify: extents " + shape_str(x.shape()) + " not divisible by patch " +
                      std::to_string(patch));
  const std::size_t c = x.dim(0), d = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t gd = d / patch, gh = h / patch, gw = w / patch;
  const std::size_t feat = c * patch * patch * patch;
  auto index = std::make_shared<std::vector<std::size_t>>(x.numel());
  std::size_t o = 0;
  for (std::size_t td = 0; td < gd; ++td)
    for (std::size_t th = 0; th < gh; ++th)
      for (std::size_t tw = 0; tw < gw; ++tw)
        for (std::size_t ci = 0; ci < c; ++ci)
          for (std::size_t pd = 0; pd < patch; ++pd)
            for (std::size_t ph = 0; ph < patch; ++ph)
              for (std::size_t pw = 0; pw < patch; ++pw)
                (*index)[o++] =
                    ((ci * d + td * patch + pd) * h + th * patch + ph) * w + tw * patch + pw;
  std::vector<T> out(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[(*index)[i]];
  return make_result<T>("patchify", {gd * gh * gw, feat}, std::move(out), {x}, [x, index](auto& self) {
    if (T* gx = grad_ptr(x))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx[(*index)[i]] += self.grad[i];
  });
}

#define MIQ3D_INSTANTIATE(T)                                                                    \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> conv3d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, \
                            std::size_t);                                                       \
  template Tensor<T> patchify(const Tensor<T>&, std::size_t);

MIQ3D_INSTANTIATE(float)
MIQ3D_INSTANTIATE(double)
#undef MIQ3D_INSTANTIATE

}  // namespace miq3d
