#include <atomic>
#include <cstdlib>
#include <string>

#include "miq3d/errors.hpp"
#include "variants.hpp"

namespace miq3d::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(MIQ3D_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa initial_isa() {
  if (const char* env = std::getenv("MIQ3D_ISA")) {
    const Isa requested = parse_isa(env);
    if (isa_supported(requested)) return requested;
  }
  return cpu_has_avx2() ? Isa::kAvx2 : Isa::kScalar;
}

std::atomic<Isa>& isa_slot() {
  static std::atomic<Isa> slot{initial_isa()};
  return slot;
}

}  // namespace

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return true;
    case Isa::kAvx2:
      return cpu_has_avx2();
  }
  return false;
}

Isa active_isa() { return isa_slot().load(std::memory_order_relaxed); }

void set_isa(Isa isa) {
  if (!isa_supported(isa))
    throw ConfigError("kernel ISA '" + std::string(isa_name(isa)) + "' is not supported here");
  isa_slot().store(isa, std::memory_order_relaxed);
}

std::string_view isa_name(Isa isa) { return isa == Isa::kAvx2 ? "avx2" : "scalar"; }

Isa parse_isa(std::string_view name) {
  if (name == "scalar") return Isa::kScalar;
  if (name == "avx2") return Isa::kAvx2;
  throw ConfigError("unknown kernel ISA '" + std::string(name) + "'");
}

ScopedIsa::ScopedIsa(Isa isa) : previous_(active_isa()) { set_isa(isa); }
ScopedIsa::~ScopedIsa() { isa_slot().store(previous_, std::memory_order_relaxed); }

template <typename T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate) {
#if defined(MIQ3D_HAVE_AVX2)
  if (active_isa() == Isa::kAvx2) return avx2::gemm(ta, tb, m, n, k, a, b, c, accumulate);
#endif
  scalar::gemm(ta, tb, m, n, k, a, b, c, accumulate);
}

template <typename T>
T dot(std::size_t n, const T* x, const T* y) {
#if defined(MIQ3D_HAVE_AVX2)
  if (active_isa() == Isa::kAvx2) return avx2::dot(n, x, y);
#endif
  return scalar::dot(n, x, y);
}

template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
#if defined(MIQ3D_HAVE_AVX2)
  if (active_isa() == Isa::kAvx2) return avx2::axpy(n, alpha, x, y);
#endif
  scalar::axpy(n, alpha, x, y);
}

template void gemm<float>(Trans, Trans, std::size_t, std::size_t, std::size_t, const float*,
                          const float*, float*, bool);
template void gemm<double>(Trans, Trans, std::size_t, std::size_t, std::size_t, const double*,
                           const double*, double*, bool);
template float dot<float>(std::size_t, const float*, const float*);
template double dot<double>(std::size_t, const double*, const double*);
template void axpy<float>(std::size_t, float, const float*, float*);
template void axpy<double>(std::size_t, double, const double*, double*);

}  // namespace miq3d::kernels
