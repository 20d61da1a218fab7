#include "bino/kernels.hpp"

#include <cstdlib>
#include <string>

namespace bino::kernels {

bool cpu_supports(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
#if defined(BINO_HAVE_AVX2_TU)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

namespace {
Isa detect() {
  if (const char* env = std::getenv("BINO_SIMD")) {
    if (std::string(env) == "scalar") return Isa::scalar;
  }
  return cpu_supports(Isa::avx2) ? Isa::avx2 : Isa::scalar;
}
}  // namespace

Isa active_isa() {
  static const Isa isa = detect();
  return isa;
}

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

void gemm(std::size_t m, std::size_t n, std::size_t k, MatrixRef<float> a, MatrixRef<float> b,
          float beta, float* c, std::size_t ldc) {
  if (m == 0 || n == 0) return;
  if (active_isa() == Isa::avx2) {
    avx2::gemm(m, n, k, a, b, beta, c, ldc);
  } else {
    scalar::gemm(m, n, k, a, b, beta, c, ldc);
  }
}

double dot(const float* x, const float* y, std::size_t n) {
  return active_isa() == Isa::avx2 ? avx2::dot(x, y, n) : scalar::dot(x, y, n);
}

double sum_squares(const float* x, std::size_t n) {
  return active_isa() == Isa::avx2 ? avx2::sum_squares(x, n) : scalar::sum_squares(x, n);
}

void softmax_rows(float* x, std::size_t rows, std::size_t cols, float scale) {
  if (active_isa() == Isa::avx2) {
    avx2::softmax_rows(x, rows, cols, scale);
  } else {
    scalar::softmax_rows(x, rows, cols, scale);
  }
}

}  // namespace bino::kernels
