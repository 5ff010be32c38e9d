#pragma once

// Inner-loop arithmetic kernels. Every kernel has a portable scalar
// reference (templated on the element type) and, for float, SIMD variants
// chosen once at runtime from the CPU feature set.

#include <cstddef>
#include <string_view>

namespace rfp::kernels {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);

/// Best instruction set supported by this CPU and build.
Isa detected_isa();

/// Instruction set the float dispatchers currently route to.
Isa active_isa();

/// Forces the float dispatchers onto `isa`. Throws std::invalid_argument if
/// the CPU cannot execute it.
void set_active_isa(Isa isa);

/// C[m x n] = (accumulate ? C : 0) + A[m x k] * B[k x n]; all row-major with
/// the given leading dimensions.
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
             std::size_t ldb, T* c, std::size_t ldc, bool accumulate);

/// C[m x n] = (accumulate ? C : 0) + A[m x k] * B[n x k]^T.
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
             std::size_t ldb, T* c, std::size_t ldc, bool accumulate);

/// y += alpha * x
template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y);

template <typename T>
T dot(std::size_t n, const T* x, const T* y);

namespace scalar {

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
             std::size_t ldb, T* c, std::size_t ldc, bool accumulate);
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
             std::size_t ldb, T* c, std::size_t ldc, bool accumulate);
template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y);
template <typename T>
T dot(std::size_t n, const T* x, const T* y);

}  // namespace scalar

namespace avx2 {

bool supported();

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
             const float* b, std::size_t ldb, float* c, std::size_t ldc, bool accumulate);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
             const float* b, std::size_t ldb, float* c, std::size_t ldc, bool accumulate);
void axpy(std::size_t n, float alpha, const float* x, float* y);
float dot(std::size_t n, const float* x, const float* y);

}  // namespace avx2

}  // namespace rfp::kernels
