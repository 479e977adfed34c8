#pragma once

#include <cstddef>

#include "miq3d/kernels/kernels.hpp"

namespace miq3d::kernels {

namespace scalar {
template <typename T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate);
template <typename T>
T dot(std::size_t n, const T* x, const T* y);
template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y);
}  // namespace scalar

#if defined(MIQ3D_HAVE_AVX2)
namespace avx2 {
template <typename T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate);
template <typename T>
T dot(std::size_t n, const T* x, const T* y);
template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y);
}  // namespace avx2
#endif

}  // namespace miq3d::kernels
