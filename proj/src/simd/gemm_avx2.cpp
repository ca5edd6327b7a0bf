#include "scalestack/simd/gemm.hpp"

#include <cstring>

#if defined(__x86_64__) || defined(__i386__)
#include <immintrin.h>
#define SCALESTACK_HAVE_X86 1
#else
#define SCALESTACK_HAVE_X86 0
#endif

#include <stdexcept>

namespace scalestack::simd::avx2 {

#if SCALESTACK_HAVE_X86

#pragma GCC push_options
#pragma GCC target("avx2,fma")

namespace {

template <typename T>
struct Vec;

template <>
struct Vec<float> {
  using Reg = __m256;
  static constexpr std::size_t width = 8;
  static Reg load(const float* p) { return _mm256_loadu_ps(p); }
  static void store(float* p, Reg v) { _mm256_storeu_ps(p, v); }
  static Reg broadcast(float v) { return _mm256_set1_ps(v); }
  static Reg zero() { return _mm256_setzero_ps(); }
  static Reg fma(Reg a, Reg b, Reg c) { return _mm256_fmadd_ps(a, b, c); }
};

template <>
struct Vec<double> {
  using Reg = __m256d;
  static constexpr std::size_t width = 4;
  static Reg load(const double* p) { return _mm256_loadu_pd(p); }
  static void store(double* p, Reg v) { _mm256_storeu_pd(p, v); }
  static Reg broadcast(double v) { return _mm256_set1_pd(v); }
  static Reg zero() { return _mm256_setzero_pd(); }
  static Reg fma(Reg a, Reg b, Reg c) { return _mm256_fmadd_pd(a, b, c); }
};

// Computes R rows of C. Columns go in panels of two registers, then one
// register, then a scalar tail. Every element accumulates over p in order.
template <std::size_t R, typename T>
void row_block(std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
               std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  using V = Vec<T>;
  constexpr std::size_t W = V::width;
  std::size_t j = 0;
  for (; j + 2 * W <= n; j += 2 * W) {
    typename V::Reg acc[R][2];
    for (std::size_t r = 0; r < R; ++r) {
      acc[r][0] = accumulate ? V::load(c + r * ldc + j) : V::zero();
      acc[r][1] = accumulate ? V::load(c + r * ldc + j + W) : V::zero();
    }
    for (std::size_t p = 0; p < k; ++p) {
      const auto b0 = V::load(b + p * ldb + j);
      const auto b1 = V::load(b + p * ldb + j + W);
      for (std::size_t r = 0; r < R; ++r) {
        const auto av = V::broadcast(a[r * lda + p]);
        acc[r][0] = V::fma(av, b0, acc[r][0]);
        acc[r][1] = V::fma(av, b1, acc[r][1]);
      }
    }
    for (std::size_t r = 0; r < R; ++r) {
      V::store(c + r * ldc + j, acc[r][0]);
      V::store(c + r * ldc + j + W, acc[r][1]);
    }
  }
  for (; j + W <= n; j += W) {
    typename V::Reg acc[R];
    for (std::size_t r = 0; r < R; ++r) acc[r] = accumulate ? V::load(c + r * ldc + j) : V::zero();
    for (std::size_t p = 0; p < k; ++p) {
      const auto b0 = V::load(b + p * ldb + j);
      for (std::size_t r = 0; r < R; ++r) acc[r] = V::fma(V::broadcast(a[r * lda + p]), b0, acc[r]);
    }
    for (std::size_t r = 0; r < R; ++r) V::store(c + r * ldc + j, acc[r]);
  }
  for (; j < n; ++j) {
    for (std::size_t r = 0; r < R; ++r) {
      T sum = accumulate ? c[r * ldc + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) sum = __builtin_fma(a[r * lda + p], b[p * ldb + j], sum);
      c[r * ldc + j] = sum;
    }
  }
}

template <typename T>
void gemm_nn_impl(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
                  const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) row_block<4>(n, k, a + i * lda, lda, b, ldb, c + i * ldc, ldc, accumulate);
  for (; i < m; ++i) row_block<1>(n, k, a + i * lda, lda, b, ldb, c + i * ldc, ldc, accumulate);
}

}  // namespace

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
             const float* b, std::size_t ldb, float* c, std::size_t ldc, bool accumulate) {
  gemm_nn_impl(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  gemm_nn_impl(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

#pragma GCC pop_options

#else

void gemm_nn(std::size_t, std::size_t, std::size_t, const float*, std::size_t, const float*,
             std::size_t, float*, std::size_t, bool) {
  throw std::logic_error("avx2 kernel not built for this architecture");
}
void gemm_nn(std::size_t, std::size_t, std::size_t, const double*, std::size_t, const double*,
             std::size_t, double*, std::size_t, bool) {
  throw std::logic_error("avx2 kernel not built for this architecture");
}

#endif

}  // namespace scalestack::simd::avx2
