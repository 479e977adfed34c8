#include <algorithm>
#include <array>
#include <cmath>
#include <memory>

#include "miq3d/errors.hpp"
#include "miq3d/ops.hpp"

namespace miq3d {

using detail::grad_ptr;
using detail::make_result;

namespace {

void require_volume(const Shape& s, const char* op) {
  if (s.size() != 4)
    throw DimensionError(std::string(op) + " expects [C,D,H,W], got " + shape_str(s));
}

// Linear interpolation taps for resizing one axis from `in` to `out` samples
// with half-voxel alignment; sources are clamped to the valid range.
struct AxisTaps {
  std::vector<std::size_t> lo, hi;
  std::vector<double> frac;
};

AxisTaps make_taps(std::size_t in, std::size_t out) {
  AxisTaps taps;
  taps.lo.resize(out);
  taps.hi.resize(out);
  taps.frac.resize(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t j = 0; j < out; ++j) {
    double src = (static_cast<double>(j) + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    taps.lo[j] = lo;
    taps.hi[j] = std::min(lo + 1, in - 1);
    taps.frac[j] = src - static_cast<double>(lo);
  }
  return taps;
}

// x viewed as [outer, in_len, inner] -> [outer, out_len, inner].
template <typename T>
std::vector<T> resize_axis(const std::vector<T>& x, std::size_t outer, std::size_t in_len,
                           std::size_t inner, const AxisTaps& taps) {
  const std::size_t out_len = taps.lo.size();
  std::vector<T> y(outer * out_len * inner);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < out_len; ++j) {
      const T t = static_cast<T>(taps.frac[j]);
      const T* a = x.data() + (o * in_len + taps.lo[j]) * inner;
      const T* b = x.data() + (o * in_len + taps.hi[j]) * inner;
      T* dst = y.data() + (o * out_len + j) * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] = (T(1) - t) * a[i] + t * b[i];
    }
  return y;
}

template <typename T>
std::vector<T> resize_axis_adjoint(const std::vector<T>& dy, std::size_t outer, std::size_t in_len,
                                   std::size_t inner, const AxisTaps& taps) {
  const std::size_t out_len = taps.lo.size();
  std::vector<T> dx(outer * in_len * inner, T(0));
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < out_len; ++j) {
      const T t = static_cast<T>(taps.frac[j]);
      const T* g = dy.data() + (o * out_len + j) * inner;
      T* a = dx.data() + (o * in_len + taps.lo[j]) * inner;
      T* b = dx.data() + (o * in_len + taps.hi[j]) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        a[i] += (T(1) - t) * g[i];
        b[i] += t * g[i];
      }
    }
  return dx;
}

}  // namespace

template <typename T>
Tensor<T> avgpool_downsample(const Tensor<T>& x, Extent3 out) {
  require_volume(x.shape(), "avgpool_downsample");
  const std::size_t c = x.dim(0), d = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (out[0] == 0 || out[1] == 0 || out[2] == 0 || d % out[0] || h % out[1] || w % out[2])
    throw ConfigError("avgpool_downsample: " + shape_str(x.shape()) + " not divisible into " +
                      shape_str({out[0], out[1], out[2]}));
  const std::size_t bd = d / out[0], bh = h / out[1], bw = w / out[2];
  const T inv = T(1) / static_cast<T>(bd * bh * bw);
  std::vector<T> y(c * out[0] * out[1] * out[2], T(0));
  const auto xv = x.data();
  auto out_index = [=](std::size_t ci, std::size_t z, std::size_t yy, std::size_t xx) {
    return ((ci * out[0] + z / bd) * out[1] + yy / bh) * out[2] + xx / bw;
  };
  std::size_t i = 0;
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t z = 0; z < d; ++z)
      for (std::size_t yy = 0; yy < h; ++yy)
        for (std::size_t xx = 0; xx < w; ++xx) y[out_index(ci, z, yy, xx)] += xv[i++];
  for (auto& v : y) v *= inv;
  return make_result<T>("avgpool_downsample", {c, out[0], out[1], out[2]}, std::move(y), {x},
                        [x, out_index, c, d, h, w, inv](auto& self) {
                          T* gx = grad_ptr(x);
                          if (!gx) return;
                          std::size_t i = 0;
                          for (std::size_t ci = 0; ci < c; ++ci)
                            for (std::size_t z = 0; z < d; ++z)
                              for (std::size_t yy = 0; yy < h; ++yy)
                                for (std::size_t xx = 0; xx < w; ++xx)
                                  gx[i++] += self.grad[out_index(ci, z, yy, xx)] * inv;
                        });
}

template <typename T>
Tensor<T> trilinear_sample(const Tensor<T>& f, Point3 p) {
  require_volume(f.shape(), "trilinear_sample");
  const std::array<double, 3> coord{p.d, p.h, p.w};
  std::array<std::size_t, 3> lo{}, hi{};
  std::array<double, 3> frac{};
  for (std::size_t a = 0; a < 3; ++a) {
    const std::size_t extent = f.dim(a + 1);
    if (!std::isfinite(coord[a]) || coord[a] < 0.0 || coord[a] > static_cast<double>(extent - 1))
      throw PromptError("point (" + std::to_string(p.d) + "," + std::to_string(p.h) + "," +
                        std::to_string(p.w) + ") lies outside volume " +
                        shape_str({f.dim(1), f.dim(2), f.dim(3)}));
    lo[a] = std::min(static_cast<std::size_t>(std::floor(coord[a])), extent - 1);
    hi[a] = std::min(lo[a] + 1, extent - 1);
    frac[a] = coord[a] - static_cast<double>(lo[a]);
  }
  const std::size_t c = f.dim(0), d = f.dim(1), h = f.dim(2), w = f.dim(3);
  std::array<std::size_t, 8> offs{};
  std::array<T, 8> weights{};
  for (std::size_t corner = 0; corner < 8; ++corner) {
    const std::size_t z = (corner & 4) ? hi[0] : lo[0];
    const std::size_t y = (corner & 2) ? hi[1] : lo[1];
    const std::size_t x = (corner & 1) ? hi[2] : lo[2];
    offs[corner] = (z * h + y) * w + x;
    weights[corner] = static_cast<T>(((corner & 4) ? frac[0] : 1.0 - frac[0]) *
                                     ((corner & 2) ? frac[1] : 1.0 - frac[1]) *
                                     ((corner & 1) ? frac[2] : 1.0 - frac[2]));
  }
  const std::size_t plane = d * h * w;
  std::vector<T> out(c, T(0));
  const auto fv = f.data();
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t corner = 0; corner < 8; ++corner)
      out[ci] += weights[corner] * fv[ci * plane + offs[corner]];
  return make_result<T>("trilinear_sample", {c}, std::move(out), {f},
                        [f, offs, weights, c, plane](auto& self) {
                          T* gf = grad_ptr(f);
                          if (!gf) return;
                          for (std::size_t ci = 0; ci < c; ++ci)
                            for (std::size_t corner = 0; corner < 8; ++corner)
                              gf[ci * plane + offs[corner]] += weights[corner] * self.grad[ci];
                        });
}

template <typename T>
Tensor<T> trilinear_resize(const Tensor<T>& f, Extent3 out) {
  require_volume(f.shape(), "trilinear_resize");
  if (out[0] == 0 || out[1] == 0 || out[2] == 0)
    throw ConfigError("trilinear_resize: output extents must be positive");
  const std::size_t c = f.dim(0), d = f.dim(1), h = f.dim(2), w = f.dim(3);
  auto taps = std::make_shared<std::array<AxisTaps, 3>>(
      std::array<AxisTaps, 3>{make_taps(d, out[0]), make_taps(h, out[1]), make_taps(w, out[2])});
  std::vector<T> y(f.data().begin(), f.data().end());
  if (d != out[0]) y = resize_axis(y, c, d, h * w, (*taps)[0]);
  if (h != out[1]) y = resize_axis(y, c * out[0], h, w, (*taps)[1]);
  if (w != out[2]) y = resize_axis(y, c * out[0] * out[1], w, 1, (*taps)[2]);
  return make_result<T>("trilinear_resize", {c, out[0], out[1], out[2]}, std::move(y), {f},
                        [f, taps, out, c, d, h, w](auto& self) {
                          T* gf = grad_ptr(f);
                          if (!gf) return;
                          std::vector<T> g = self.grad;
                          if (w != out[2]) g = resize_axis_adjoint(g, c * out[0] * out[1], w, 1, (*taps)[2]);
                          if (h != out[1]) g = resize_axis_adjoint(g, c * out[0], h, w, (*taps)[1]);
                          if (d != out[0]) g = resize_axis_adjoint(g, c, d, h * w, (*taps)[0]);
                          for (std::size_t i = 0; i < g.size(); ++i) gf[i] += g[i];
                        });
}

#define MIQ3D_INSTANTIATE(T)                                          \
  template Tensor<T> avgpool_downsample(const Tensor<T>&, Extent3);   \
  template Tensor<T> trilinear_sample(const Tensor<T>&, Point3);      \
  template Tensor<T> trilinear_resize(const Tensor<T>&, Extent3);

MIQ3D_INSTANTIATE(float)
MIQ3D_INSTANTIATE(double)
#undef MIQ3D_INSTANTIATE

}  // namespace miq3d
