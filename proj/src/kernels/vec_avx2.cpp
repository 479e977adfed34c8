#include "simd_avx2.hpp"
#include "variants.hpp"

namespace miq3d::kernels::avx2 {

template <typename T>
T dot(std::size_t n, const T* x, const T* y) {
  using V = Vec<T>;
  constexpr std::size_t W = V::kWidth;
  auto a0 = V::zero(), a1 = V::zero(), a2 = V::zero(), a3 = V::zero();
  std::size_t i = 0;
  for (; i + 4 * W <= n; i += 4 * W) {
    a0 = V::fmadd(V::load(x + i), V::load(y + i), a0);
    a1 = V::fmadd(V::load(x + i + W), V::load(y + i + W), a1);
    a2 = V::fmadd(V::load(x + i + 2 * W), V::load(y + i + 2 * W), a2);
    a3 = V::fmadd(V::load(x + i + 3 * W), V::load(y + i + 3 * W), a3);
  }
  for (; i + W <= n; i += W) a0 = V::fmadd(V::load(x + i), V::load(y + i), a0);
  T acc = V::hsum(V::add(V::add(a0, a1), V::add(a2, a3)));
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
  using V = Vec<T>;
  constexpr std::size_t W = V::kWidth;
  const auto av = V::set1(alpha);
  std::size_t i = 0;
  for (; i + W <= n; i += W) V::store(y + i, V::fmadd(av, V::load(x + i), V::load(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

template float dot<float>(std::size_t, const float*, const float*);
template double dot<double>(std::size_t, const double*, const double*);
template void axpy<float>(std::size_t, float, const float*, float*);
template void axpy<double>(std::size_t, double, const double*, double*);

}  // namespace miq3d::kernels::avx2
