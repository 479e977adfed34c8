#include <cmath>

#include "miq3d/errors.hpp"
#include "miq3d/ops.hpp"

namespace miq3d {

using detail::grad_ptr;
using detail::make_result;

template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const Tensor<T>& target) {
  if (logits.shape() != target.shape())
    throw DimensionError("bce_with_logits: " + shape_str(logits.shape()) + " vs " +
                         shape_str(target.shape()));
  const std::size_t n = logits.numel();
  const auto x = logits.data();
  const auto y = target.data();
  // max(x,0) - x*y + log1p(exp(-|x|)) never exponentiates a positive number.
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i)
    acc += std::max(x[i], T(0)) - x[i] * y[i] + std::log1p(std::exp(-std::abs(x[i])));
  const T value = static_cast<T>(acc / static_cast<double>(n));
  return make_result<T>("bce_with_logits", {1}, {value}, {logits, target},
                        [logits, target, n](auto& self) {
                          const T g = self.grad[0] / static_cast<T>(n);
                          const auto x = logits.data();
                          const auto y = target.data();
                          T* gx = grad_ptr(logits);
                          T* gy = grad_ptr(target);
                          for (std::size_t i = 0; i < n; ++i) {
                            const T s = x[i] >= 0 ? T(1) / (T(1) + std::exp(-x[i]))
                                                  : std::exp(x[i]) / (T(1) + std::exp(x[i]));
                            if (gx) gx[i] += g * (s - y[i]);
                            if (gy) gy[i] -= g * x[i];
                          }
                        });
}

template <typename T>
Tensor<T> soft_dice_loss(const Tensor<T>& probs, const Tensor<T>& target, T eps) {
  if (probs.shape() != target.shape())
    throw DimensionError("soft_dice_loss: " + shape_str(probs.shape()) + " vs " +
                         shape_str(target.shape()));
  const std::size_t n = probs.numel();
  const auto p = probs.data();
  const auto g = target.data();
  double inter = 0, sp = 0, sg = 0;
  for (std::size_t i = 0; i < n; ++i) {
    inter += static_cast<double>(p[i]) * g[i];
    sp += p[i];
    sg += g[i];
  }
  const double num = 2.0 * inter + eps;
  const double den = sp + sg + eps;
  const T value = static_cast<T>(1.0 - num / den);
  return make_result<T>("soft_dice_loss", {1}, {value}, {probs, target},
                        [probs, target, num, den, n](auto& self) {
                          const double up = self.grad[0];
                          const auto p = probs.data();
                          const auto g = target.data();
                          T* gp = grad_ptr(probs);
                          T* gg = grad_ptr(target);
                          const double inv_den2 = 1.0 / (den * den);
                          for (std::size_t i = 0; i < n; ++i) {
                            if (gp) gp[i] += static_cast<T>(-up * (2.0 * g[i] * den - num) * inv_den2);
                            if (gg) gg[i] += static_cast<T>(-up * (2.0 * p[i] * den - num) * inv_den2);
                          }
                        });
}

template Tensor<float> bce_with_logits(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> bce_with_logits(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> soft_dice_loss(const Tensor<float>&, const Tensor<float>&, float);
template Tensor<double> soft_dice_loss(const Tensor<double>&, const Tensor<double>&, double);

}  // namespace miq3d
