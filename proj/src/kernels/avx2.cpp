// AVX2 + FMA float kernels. This translation unit is compiled with
// -mavx2 -mfma and must only be entered after avx2::supported() says so.

#ifdef RFP_HAVE_AVX2

#include <immintrin.h>

#include <algorithm>
#include <cstdint>

#include "rfp/kernels.hpp"

namespace rfp::kernels::avx2 {

namespace {

constexpr std::size_t kRowsNN = 6;
constexpr std::size_t kColsNN = 16;
constexpr std::size_t kPanelNN = 256;

alignas(32) constexpr std::int32_t kMaskBits[16] = {-1, -1, -1, -1, -1, -1, -1, -1,
                                                    0,  0,  0,  0,  0,  0,  0,  0};

inline __m256i lane_mask(std::size_t count) {
  return _mm256_loadu_si256(reinterpret_cast<const __m256i*>(kMaskBits + 8 - count));
}

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  const __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 sh = _mm_movehdup_ps(lo);
  __m128 s = _mm_add_ps(lo, sh);
  sh = _mm_movehl_ps(sh, s);
  s = _mm_add_ss(s, sh);
  return _mm_cvtss_f32(s);
}

template <int MR>
inline void micro_nn(std::size_t k, const float* a, std::size_t lda, const float* b,
                     std::size_t ldb, float* c, std::size_t ldc, bool accumulate) {
  __m256 c0[MR];
  __m256 c1[MR];
  for (int r = 0; r < MR; ++r) {
    c0[r] = _mm256_setzero_ps();
    c1[r] = _mm256_setzero_ps();
  }
  for (std::size_t p = 0; p < k; ++p) {
    const __m256 b0 = _mm256_loadu_ps(b + p * ldb);
    const __m256 b1 = _mm256_loadu_ps(b + p * ldb + 8);
    for (int r = 0; r < MR; ++r) {
      const __m256 av = _mm256_broadcast_ss(a + r * lda + p);
      c0[r] = _mm256_fmadd_ps(av, b0, c0[r]);
      c1[r] = _mm256_fmadd_ps(av, b1, c1[r]);
    }
  }
  for (int r = 0; r < MR; ++r) {
    float* crow = c + r * ldc;
    if (accumulate) {
      c0[r] = _mm256_add_ps(c0[r], _mm256_loadu_ps(crow));
      c1[r] = _mm256_add_ps(c1[r], _mm256_loadu_ps(crow + 8));
    }
    _mm256_storeu_ps(crow, c0[r]);
    _mm256_storeu_ps(crow + 8, c1[r]);
  }
}

// Same as micro_nn for a right-edge strip narrower than kColsNN.
template <int MR>
inline void micro_nn_edge(std::size_t k, const float* a, std::size_t lda, const float* b,
                          std::size_t ldb, float* c, std::size_t ldc, bool accumulate,
                          std::size_t cols) {
  const __m256i m0 = lane_mask(std::min<std::size_t>(cols, 8));
  const __m256i m1 = lane_mask(cols > 8 ? cols - 8 : 0);
  __m256 c0[MR];
  __m256 c1[MR];
  for (int r = 0; r < MR; ++r) {
    c0[r] = _mm256_setzero_ps();
    c1[r] = _mm256_setzero_ps();
  }
  for (std::size_t p = 0; p < k; ++p) {
    const __m256 b0 = _mm256_maskload_ps(b + p * ldb, m0);
    const __m256 b1 = _mm256_maskload_ps(b + p * ldb + 8, m1);
    for (int r = 0; r < MR; ++r) {
      const __m256 av = _mm256_broadcast_ss(a + r * lda + p);
      c0[r] = _mm256_fmadd_ps(av, b0, c0[r]);
      c1[r] = _mm256_fmadd_ps(av, b1, c1[r]);
    }
  }
  for (int r = 0; r < MR; ++r) {
    float* crow = c + r * ldc;
    if (accumulate) {
      c0[r] = _mm256_add_ps(c0[r], _mm256_maskload_ps(crow, m0));
      c1[r] = _mm256_add_ps(c1[r], _mm256_maskload_ps(crow + 8, m1));
    }
    _mm256_maskstore_ps(crow, m0, c0[r]);
    _mm256_maskstore_ps(crow + 8, m1, c1[r]);
  }
}

template <int MR>
void row_block_nn(std::size_t j0, std::size_t j1, std::size_t k, const float* a, std::size_t lda,
                  const float* b, std::size_t ldb, float* c, std::size_t ldc, bool accumulate) {
  std::size_t j = j0;
  for (; j + kColsNN <= j1; j += kColsNN) {
    micro_nn<MR>(k, a, lda, b + j, ldb, c + j, ldc, accumulate);
  }
  if (j < j1) {
    micro_nn_edge<MR>(k, a, lda, b + j, ldb, c + j, ldc, accumulate, j1 - j);
  }
}

template <int MR, int NR>
inline void micro_nt(std::size_t k, const float* a, std::size_t lda, const float* b,
                     std::size_t ldb, float* c, std::size_t ldc, bool accumulate) {
  __m256 s[MR][NR];
  for (int r = 0; r < MR; ++r)
    for (int q = 0; q < NR; ++q) s[r][q] = _mm256_setzero_ps();
  std::size_t p = 0;
  for (; p + 8 <= k; p += 8) {
    __m256 bv[NR];
    for (int q = 0; q < NR; ++q) bv[q] = _mm256_loadu_ps(b + q * ldb + p);
    for (int r = 0; r < MR; ++r) {
      const __m256 av = _mm256_loadu_ps(a + r * lda + p);
      for (int q = 0; q < NR; ++q) s[r][q] = _mm256_fmadd_ps(av, bv[q], s[r][q]);
    }
  }
  if (p < k) {
    const __m256i mask = lane_mask(k - p);
    __m256 bv[NR];
    for (int q = 0; q < NR; ++q) bv[q] = _mm256_maskload_ps(b + q * ldb + p, mask);
    for (int r = 0; r < MR; ++r) {
      const __m256 av = _mm256_maskload_ps(a + r * lda + p, mask);
      for (int q = 0; q < NR; ++q) s[r][q] = _mm256_fmadd_ps(av, bv[q], s[r][q]);
    }
  }
  for (int r = 0; r < MR; ++r) {
    for (int q = 0; q < NR; ++q) {
      const float v = hsum(s[r][q]);
      float& dst = c[r * ldc + q];
      dst = accumulate ? dst + v : v;
    }
  }
}

template <int MR>
void row_block_nt(std::size_t n, std::size_t k, const float* a, std::size_t lda, const float* b,
                  std::size_t ldb, float* c, std::size_t ldc, bool accumulate) {
  std::size_t j = 0;
  for (; j + 3 <= n; j += 3) micro_nt<MR, 3>(k, a, lda, b + j * ldb, ldb, c + j, ldc, accumulate);
  switch (n - j) {
    case 2:
      micro_nt<MR, 2>(k, a, lda, b + j * ldb, ldb, c + j, ldc, accumulate);
      break;
    case 1:
      micro_nt<MR, 1>(k, a, lda, b + j * ldb, ldb, c + j, ldc, accumulate);
      break;
    default:
      break;
  }
}

}  // namespace

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
             const float* b, std::size_t ldb, float* c, std::size_t ldc, bool accumulate) {
  if (k == 0) {
    if (!accumulate) {
      for (std::size_t i = 0; i < m; ++i) std::fill_n(c + i * ldc, n, 0.0f);
    }
    return;
  }
  for (std::size_t j0 = 0; j0 < n; j0 += kPanelNN) {
    const std::size_t j1 = std::min(n, j0 + kPanelNN);
    std::size_t i = 0;
    for (; i + kRowsNN <= m; i += kRowsNN) {
      row_block_nn<6>(j0, j1, k, a + i * lda, lda, b, ldb, c + i * ldc, ldc, accumulate);
    }
    const float* ai = a + i * lda;
    float* ci = c + i * ldc;
    switch (m - i) {
      case 5: row_block_nn<5>(j0, j1, k, ai, lda, b, ldb, ci, ldc, accumulate); break;
      case 4: row_block_nn<4>(j0, j1, k, ai, lda, b, ldb, ci, ldc, accumulate); break;
      case 3: row_block_nn<3>(j0, j1, k, ai, lda, b, ldb, ci, ldc, accumulate); break;
      case 2: row_block_nn<2>(j0, j1, k, ai, lda, b, ldb, ci, ldc, accumulate); break;
      case 1: row_block_nn<1>(j0, j1, k, ai, lda, b, ldb, ci, ldc, accumulate); break;
      default: break;
    }
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
             const float* b, std::size_t ldb, float* c, std::size_t ldc, bool accumulate) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) row_block_nt<4>(n, k, a + i * lda, lda, b, ldb, c + i * ldc, ldc, accumulate);
  const float* ai = a + i * lda;
  float* ci = c + i * ldc;
  switch (m - i) {
    case 3: row_block_nt<3>(n, k, ai, lda, b, ldb, ci, ldc, accumulate); break;
    case 2: row_block_nt<2>(n, k, ai, lda, b, ldb, ci, ldc, accumulate); break;
    case 1: row_block_nt<1>(n, k, ai, lda, b, ldb, ci, ldc, accumulate); break;
    default: break;
  }
}

void axpy(std::size_t n, float alpha, const float* x, float* y) {
  const __m256 av = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

float dot(std::size_t n, const float* x, const float* y) {
  __m256 acc0 = _mm256_setzero_ps();
  __m256 acc1 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc0);
    acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i + 8), _mm256_loadu_ps(y + i + 8), acc1);
  }
  if (i + 8 <= n) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc0);
    i += 8;
  }
  float s = hsum(_mm256_add_ps(acc0, acc1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

}  // namespace rfp::kernels::avx2

#endif  // RFP_HAVE_AVX2
