#include <atomic>
#include <stdexcept>
#include <string>

#include "rfp/kernels.hpp"

namespace rfp::kernels {

#ifndef RFP_HAVE_AVX2
namespace avx2 {
// Non-x86 builds link these stubs; supported() keeps them unreachable.
void gemm_nn(std::size_t, std::size_t, std::size_t, const float*, std::size_t, const float*,
             std::size_t, float*, std::size_t, bool) {
  throw std::logic_error("avx2 kernels not built");
}
void gemm_nt(std::size_t, std::size_t, std::size_t, const float*, std::size_t, const float*,
             std::size_t, float*, std::size_t, bool) {
  throw std::logic_error("avx2 kernels not built");
}
void axpy(std::size_t, float, const float*, float*) { throw std::logic_error("avx2 kernels not built"); }
float dot(std::size_t, const float*, const float*) { throw std::logic_error("avx2 kernels not built"); }
}  // namespace avx2
#endif

bool avx2::supported() {
#if defined(RFP_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__))
  static const bool ok = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return ok;
#else
  return false;
#endif
}

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar: return "scalar";
    case Isa::avx2: return "avx2";
  }
  return "unknown";
}

Isa detected_isa() { return avx2::supported() ? Isa::avx2 : Isa::scalar; }

namespace {

std::atomic<Isa>& active() {
  static std::atomic<Isa> isa{detected_isa()};
  return isa;
}

}  // namespace

Isa active_isa() { return active().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  if (isa == Isa::avx2 && !avx2::supported()) {
    throw std::invalid_argument("avx2 requested but not supported by this CPU/build");
  }
  active().store(isa, std::memory_order_relaxed);
}

template <>
void gemm_nn<float>(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
                    const float* b, std::size_t ldb, float* c, std::size_t ldc, bool accumulate) {
  if (active_isa() == Isa::avx2) {
    avx2::gemm_nn(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
  } else {
    scalar::gemm_nn(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
  }
}

template <>
void gemm_nn<double>(std::size_t m, std::size_t n, std::size_t k, const double* a,
                     std::size_t lda, const double* b, std::size_t ldb, double* c,
                     std::size_t ldc, bool accumulate) {
  scalar::gemm_nn(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

template <>
void gemm_nt<float>(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
                    const float* b, std::size_t ldb, float* c, std::size_t ldc, bool accumulate) {
  if (active_isa() == Isa::avx2) {
    avx2::gemm_nt(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
  } else {
    scalar::gemm_nt(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
  }
}

template <>
void gemm_nt<double>(std::size_t m, std::size_t n, std::size_t k, const double* a,
                     std::size_t lda, const double* b, std::size_t ldb, double* c,
                     std::size_t ldc, bool accumulate) {
  scalar::gemm_nt(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

template <>
void axpy<float>(std::size_t n, float alpha, const float* x, float* y) {
  if (active_isa() == Isa::avx2) {
    avx2::axpy(n, alpha, x, y);
  } else {
    scalar::axpy(n, alpha, x, y);
  }
}

template <>
void axpy<double>(std::size_t n, double alpha, const double* x, double* y) {
  scalar::axpy(n, alpha, x, y);
}

template <>
float dot<float>(std::size_t n, const float* x, const float* y) {
  return active_isa() == Isa::avx2 ? avx2::dot(n, x, y) : scalar::dot(n, x, y);
}

template <>
double dot<double>(std::size_t n, const double* x, const double* y) {
  return scalar::dot(n, x, y);
}

}  // namespace rfp::kernels
