#include <algorithm>
#include <vector>

#include "simd_avx2.hpp"
#include "variants.hpp"

namespace miq3d::kernels::avx2 {
namespace {

constexpr std::size_t kRowTile = 4;
// K-block for the dot-product (A * B^T) path; keeps both operand panels in L2.
constexpr std::size_t kDotBlock = 512;

// C[R, NV*W] += A[R, K] * B[K, NV*W] with the C tile held in registers.
template <typename T, std::size_t R, std::size_t NV>
inline void tile_nn(std::size_t k, std::size_t lda, std::size_t ldb, std::size_t ldc,
                    const T* a, const T* b, T* c) {
  using V = Vec<T>;
  constexpr std::size_t W = V::kWidth;
  typename V::Reg acc[R][NV];
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t v = 0; v < NV; ++v) acc[r][v] = V::load(c + r * ldc + v * W);
  for (std::size_t p = 0; p < k; ++p) {
    typename V::Reg bv[NV];
    for (std::size_t v = 0; v < NV; ++v) bv[v] = V::load(b + p * ldb + v * W);
    for (std::size_t r = 0; r < R; ++r) {
      const auto av = V::set1(a[r * lda + p]);
      for (std::size_t v = 0; v < NV; ++v) acc[r][v] = V::fmadd(av, bv[v], acc[r][v]);
    }
  }
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t v = 0; v < NV; ++v) V::store(c + r * ldc + v * W, acc[r][v]);
}

template <typename T, std::size_t NV>
inline void panel_nn(std::size_t m, std::size_t k, std::size_t n, std::size_t j0, const T* a,
                     const T* b, T* c) {
  std::size_t i = 0;
  for (; i + kRowTile <= m; i += kRowTile)
    tile_nn<T, kRowTile, NV>(k, k, n, n, a + i * k, b + j0, c + i * n + j0);
  for (; i < m; ++i) tile_nn<T, 1, NV>(k, k, n, n, a + i * k, b + j0, c + i * n + j0);
}

// C[M,N] += A[M,K] * B[K,N]; column panels outermost so a B panel is reused
// from L1 across all row tiles.
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  constexpr std::size_t W = Vec<T>::kWidth;
  std::size_t j = 0;
  for (; j + 2 * W <= n; j += 2 * W) panel_nn<T, 2>(m, k, n, j, a, b, c);
  for (; j + W <= n; j += W) panel_nn<T, 1>(m, k, n, j, a, b, c);
  if (j < n) {
    for (std::size_t i = 0; i < m; ++i) {
      T* crow = c + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = a[i * k + p];
        const T* brow = b + p * n;
        for (std::size_t jj = j; jj < n; ++jj) crow[jj] += av * brow[jj];
      }
    }
  }
}

// C[M,N] += A[M,K] * B[N,K]^T as blocked dot products.
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  using V = Vec<T>;
  constexpr std::size_t W = V::kWidth;
  constexpr std::size_t RI = 2;
  constexpr std::size_t RJ = 4;
  for (std::size_t k0 = 0; k0 < k; k0 += kDotBlock) {
    const std::size_t kb = std::min(kDotBlock, k - k0);
    const std::size_t kv = kb - kb % W;
    auto dot_tile = [&](std::size_t i0, std::size_t ri, std::size_t j0, std::size_t rj) {
      typename V::Reg acc[RI][RJ];
      for (std::size_t r = 0; r < ri; ++r)
        for (std::size_t s = 0; s < rj; ++s) acc[r][s] = V::zero();
      for (std::size_t p = 0; p < kv; p += W) {
        typename V::Reg bv[RJ];
        for (std::size_t s = 0; s < rj; ++s) bv[s] = V::load(b + (j0 + s) * k + k0 + p);
        for (std::size_t r = 0; r < ri; ++r) {
          const auto av = V::load(a + (i0 + r) * k + k0 + p);
          for (std::size_t s = 0; s < rj; ++s) acc[r][s] = V::fmadd(av, bv[s], acc[r][s]);
        }
      }
      for (std::size_t r = 0; r < ri; ++r) {
        for (std::size_t s = 0; s < rj; ++s) {
          T sum = V::hsum(acc[r][s]);
          const T* ar = a + (i0 + r) * k + k0;
          const T* bs = b + (j0 + s) * k + k0;
          for (std::size_t p = kv; p < kb; ++p) sum += ar[p] * bs[p];
          c[(i0 + r) * n + j0 + s] += sum;
        }
      }
    };
    for (std::size_t i = 0; i < m; i += RI) {
      const std::size_t ri = std::min(RI, m - i);
      for (std::size_t j = 0; j < n; j += RJ) dot_tile(i, ri, j, std::min(RJ, n - j));
    }
  }
}

template <typename T>
std::vector<T> transposed(const T* src, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
  return out;
}

}  // namespace

template <typename T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T(0));
  if (m == 0 || n == 0 || k == 0) return;
  std::vector<T> a_buf;
  if (ta == Trans::kYes) {
    a_buf = transposed(a, k, m);
    a = a_buf.data();
  }
  if (tb == Trans::kNo) {
    gemm_nn(m, n, k, a, b, c);
  } else {
    gemm_nt(m, n, k, a, b, c);
  }
}

template void gemm<float>(Trans, Trans, std::size_t, std::size_t, std::size_t, const float*,
                          const float*, float*, bool);
template void gemm<double>(Trans, Trans, std::size_t, std::size_t, std::size_t, const double*,
                           const double*, double*, bool);

}  // namespace miq3d::kernels::avx2
