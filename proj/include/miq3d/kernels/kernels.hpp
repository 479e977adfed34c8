#pragma once

// Dense numeric inner loops behind the tensor ops. Every kernel has a scalar
// reference implementation and, on x86-64, an AVX2/FMA variant chosen once at
// startup (or forced via set_isa / the MIQ3D_ISA environment variable).

#include <cstddef>
#include <string_view>

namespace miq3d::kernels {

enum class Isa { kScalar, kAvx2 };

enum class Trans { kNo, kYes };

bool isa_supported(Isa isa);
Isa active_isa();
// Throws ConfigError when the ISA is not available on this machine/build.
void set_isa(Isa isa);
std::string_view isa_name(Isa isa);
// Parses "scalar" / "avx2".
Isa parse_isa(std::string_view name);

// Row-major C[M,N] (+)= op(A) * op(B), op(A) is [M,K], op(B) is [K,N].
// Stored A is [M,K] (kNo) or [K,M] (kYes); stored B is [K,N] or [N,K].
template <typename T>
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k,
          const T* a, const T* b, T* c, bool accumulate);

template <typename T>
T dot(std::size_t n, const T* x, const T* y);

// y += alpha * x
template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y);

// RAII override of the active ISA, used by equivalence tests.
class ScopedIsa {
 public:
  explicit ScopedIsa(Isa isa);
  ~ScopedIsa();
  ScopedIsa(const ScopedIsa&) = delete;
  ScopedIsa& operator=(const ScopedIsa&) = delete;

 private:
  Isa previous_;
};

}  // namespace miq3d::kernels
