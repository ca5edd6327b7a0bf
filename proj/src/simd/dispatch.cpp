#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <vector>

#include "scalestack/simd/gemm.hpp"

namespace scalestack::simd {

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
  }
  return "unknown";
}

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
#if defined(__x86_64__) || defined(__i386__)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

namespace {

Isa initial_isa() {
  if (const char* env = std::getenv("SCALESTACK_ISA")) {
    if (std::string(env) == "scalar") return Isa::scalar;
  }
  return isa_supported(Isa::avx2) ? Isa::avx2 : Isa::scalar;
}

std::atomic<Isa>& active() {
  static std::atomic<Isa> isa{initial_isa()};
  return isa;
}

// Copies the op(X) view of a stored matrix into a dense rows x cols buffer.
template <typename T>
const T* materialize(Op op, std::size_t rows, std::size_t cols, const T* x, std::size_t ldx,
                     std::vector<T>& scratch, std::size_t& ld_out) {
  if (op == Op::none) {
    ld_out = ldx;
    return x;
  }
  scratch.resize(rows * cols);
  for (std::size_t c = 0; c < cols; ++c) {
    const T* src = x + c * ldx;
    for (std::size_t r = 0; r < rows; ++r) scratch[r * cols + c] = src[r];
  }
  ld_out = cols;
  return scratch.data();
}

}  // namespace

Isa active_isa() { return active().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  if (!isa_supported(isa)) {
    throw std::invalid_argument("ISA " + std::string(isa_name(isa)) + " not supported on this CPU");
  }
  active().store(isa, std::memory_order_relaxed);
}

template <typename T>
void gemm(Op op_a, Op op_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          std::size_t lda, const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  if (m == 0 || n == 0) return;
  thread_local std::vector<T> scratch_a;
  thread_local std::vector<T> scratch_b;
  std::size_t la = 0;
  std::size_t lb = 0;
  const T* pa = materialize(op_a, m, k, a, lda, scratch_a, la);
  const T* pb = materialize(op_b, k, n, b, ldb, scratch_b, lb);
  if (active_isa() == Isa::avx2) {
    avx2::gemm_nn(m, n, k, pa, la, pb, lb, c, ldc, accumulate);
  } else {
    scalar::gemm_nn(m, n, k, pa, la, pb, lb, c, ldc, accumulate);
  }
}

template void gemm<float>(Op, Op, std::size_t, std::size_t, std::size_t, const float*, std::size_t,
                          const float*, std::size_t, float*, std::size_t, bool);
template void gemm<double>(Op, Op, std::size_t, std::size_t, std::size_t, const double*,
                           std::size_t, const double*, std::size_t, double*, std::size_t, bool);

}  // namespace scalestack::simd
