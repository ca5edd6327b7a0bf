#pragma once

#include <cstddef>
#include <string_view>

// Dense matrix multiply used by the convolution layers. A portable scalar
// kernel is always available; an AVX2/FMA kernel is chosen at runtime when
// the CPU supports it. Set SCALESTACK_ISA=scalar to force the reference path.

namespace scalestack::simd {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);
bool isa_supported(Isa isa);
Isa active_isa();
// Throws std::invalid_argument if the CPU lacks `isa`.
void set_active_isa(Isa isa);

enum class Op { none, transpose };

// C[m x n] = op(A)[m x k] * op(B)[k x n], or C += ... when `accumulate`.
// All matrices are row-major; ld* are row strides of the stored matrices.
template <typename T>
void gemm(Op op_a, Op op_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          std::size_t lda, const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate);

// Same contract as gemm with both operands untransposed, on a fixed ISA.
// Exposed so the equivalence tests can compare kernels directly.
namespace scalar {
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
             const float* b, std::size_t ldb, float* c, std::size_t ldc, bool accumulate);
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate);
}  // namespace scalar

namespace avx2 {
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
             const float* b, std::size_t ldb, float* c, std::size_t ldc, bool accumulate);
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate);
}  // namespace avx2

}  // namespace scalestack::simd
