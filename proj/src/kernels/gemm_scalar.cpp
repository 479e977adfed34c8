#include <algorithm>

#include "variants.hpp"

namespace miq3d::kernels::scalar {

template <typename T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T(0));
  const bool at = ta == Trans::kYes;
  const bool bt = tb == Trans::kYes;
  if (!bt) {
    // i-k-j order keeps the innermost loop contiguous in B and C.
    for (std::size_t i = 0; i < m; ++i) {
      T* crow = c + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = at ? a[p * m + i] : a[i * k + p];
        const T* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
    return;
  }
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = at ? a[p * m + i] : a[i * k + p];
        acc += av * b[j * k + p];
      }
      c[i * n + j] += acc;
    }
  }
}

template void gemm<float>(Trans, Trans, std::size_t, std::size_t, std::size_t, const float*,
                          const float*, float*, bool);
template void gemm<double>(Trans, Trans, std::size_t, std::size_t, std::size_t, const double*,
                           const double*, double*, bool);

}  // namespace miq3d::kernels::scalar
