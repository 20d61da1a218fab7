#pragma once

// Data-parallel inner loops. Every kernel has a scalar reference version and an
// AVX2+FMA version; `bino::kernels::gemm` etc. route to whichever the CPU
// supports. Both variants accumulate in double and are equivalence-tested.

#include <cstddef>
#include <string_view>

namespace bino::kernels {

enum class Isa { scalar, avx2 };

// Highest ISA usable on this machine, capped by BINO_SIMD=scalar|avx2.
Isa active_isa();
std::string_view isa_name(Isa isa);
bool cpu_supports(Isa isa);

// Strided matrix view: element (i, j) lives at data[i * ld + j], or at
// data[j * ld + i] when `trans` is set.
template <class T>
struct MatrixRef {
  const T* data;
  std::size_t ld;
  bool trans = false;
};

// C[m x n] = beta * C + A'[m x k] * B'[k x n], where A' and B' are A and B
// optionally transposed. Sums are formed in double, k ascending.
void gemm(std::size_t m, std::size_t n, std::size_t k, MatrixRef<float> a, MatrixRef<float> b,
          float beta, float* c, std::size_t ldc);
void gemm(std::size_t m, std::size_t n, std::size_t k, MatrixRef<double> a, MatrixRef<double> b,
          double beta, double* c, std::size_t ldc);

double dot(const float* x, const float* y, std::size_t n);
double sum_squares(const float* x, std::size_t n);

// In place, per row: x <- softmax(scale * x). exp is a degree-6 polynomial
// (relative error ~2e-7); row sums are formed in double.
void softmax_rows(float* x, std::size_t rows, std::size_t cols, float scale);

namespace scalar {
void gemm(std::size_t m, std::size_t n, std::size_t k, MatrixRef<float> a, MatrixRef<float> b,
          float beta, float* c, std::size_t ldc);
double dot(const float* x, const float* y, std::size_t n);
double sum_squares(const float* x, std::size_t n);
void softmax_rows(float* x, std::size_t rows, std::size_t cols, float scale);
}  // namespace scalar

namespace avx2 {
void gemm(std::size_t m, std::size_t n, std::size_t k, MatrixRef<float> a, MatrixRef<float> b,
          float beta, float* c, std::size_t ldc);
double dot(const float* x, const float* y, std::size_t n);
double sum_squares(const float* x, std::size_t n);
void softmax_rows(float* x, std::size_t rows, std::size_t cols, float scale);
}  // namespace avx2

}  // namespace bino::kernels
