#pragma once

// Differentiable operations on Tensor<T>. All are explicitly instantiated for
// float (training/inference) and double (verification).

#include <array>
#include <cstddef>
#include <vector>

#include "miq3d/tensor.hpp"

namespace miq3d {

// Continuous voxel coordinate (d, h, w); integer values hit voxel centers.
struct Point3 {
  double d = 0;
  double h = 0;
  double w = 0;
  bool operator==(const Point3&) const = default;
};

using Extent3 = std::array<std::size_t, 3>;

// Trailing-dimension broadcast of two shapes; throws DimensionError.
Shape broadcast_shapes(const Shape& a, const Shape& b);

// ---- elementwise (broadcasting) ----
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T> Tensor<T> relu(const Tensor<T>& a);

// ---- shape manipulation ----
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& axes);
// Swaps the last two axes.
template <typename T> Tensor<T> transpose(const Tensor<T>& a);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
// Index along axis 0; a rank-1 input yields shape [1].
template <typename T> Tensor<T> select(const Tensor<T>& a, std::size_t index);
// Broadcasts `a` up to `shape` under the trailing-dimension rule.
template <typename T> Tensor<T> expand(const Tensor<T>& a, const Shape& shape);

// ---- reductions ----
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);

// ---- normalization ----
template <typename T> Tensor<T> softmax_lastdim(const Tensor<T>& x);
template <typename T> Tensor<T> log_softmax_lastdim(const Tensor<T>& x);
template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    T eps = T(1e-5));

// ---- linear algebra ----
// [..., M, K] x [..., K, N] with broadcast batch dims.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// x[..., in] * weight[in, out] + bias[out]; bias may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);
// Cross-correlation. x[C_in,D,H,W], weight[C_out,C_in,k,k,k] with k odd,
// optional bias[C_out].
template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, std::size_t pad);
// x[C,D,H,W] -> [T, C*p^3], tokens ordered row-major over the (D/p,H/p,W/p) grid
// and features ordered (c, pd, ph, pw).
template <typename T> Tensor<T> patchify(const Tensor<T>& x, std::size_t patch);

// ---- volumetric resampling ----
// Block means of x[C,D,H,W] onto [C,d,h,w]; extents must divide evenly.
template <typename T> Tensor<T> avgpool_downsample(const Tensor<T>& x, Extent3 out);
// Interpolates f[C,D,H,W] at p under the voxel-center convention; requires
// 0 <= p <= extent-1 on every axis (PromptError otherwise).
template <typename T> Tensor<T> trilinear_sample(const Tensor<T>& f, Point3 p);
// Separable linear resize of f[C,D,H,W] to [C,d,h,w] with half-voxel alignment.
template <typename T> Tensor<T> trilinear_resize(const Tensor<T>& f, Extent3 out);

// ---- losses ----
// Mean over voxels of the logistic loss computed from logits.
template <typename T> Tensor<T> bce_with_logits(const Tensor<T>& logits, const Tensor<T>& target);
// 1 - (2 sum(p*g) + eps) / (sum(p) + sum(g) + eps).
template <typename T>
Tensor<T> soft_dice_loss(const Tensor<T>& probs, const Tensor<T>& target, T eps = T(1));

}  // namespace miq3d
