#include "bino/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace bino::kernels {
namespace {

template <class T>
inline T element(const MatrixRef<T>& m, std::size_t i, std::size_t j) {
  return m.trans ? m.data[j * m.ld + i] : m.data[i * m.ld + j];
}

template <class T>
void gemm_reference(std::size_t m, std::size_t n, std::size_t k, MatrixRef<T> a, MatrixRef<T> b,
                    T beta, T* c, std::size_t ldc) {
  std::vector<double> acc(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = static_cast<double>(element(a, i, kk));
      if (b.trans) {
        for (std::size_t j = 0; j < n; ++j) acc[j] += aik * static_cast<double>(b.data[j * b.ld + kk]);
      } else {
        const T* brow = b.data + kk * b.ld;
        for (std::size_t j = 0; j < n; ++j) acc[j] += aik * static_cast<double>(brow[j]);
      }
    }
    T* crow = c + i * ldc;
    if (beta == T(0)) {
      for (std::size_t j = 0; j < n; ++j) crow[j] = static_cast<T>(acc[j]);
    } else {
      for (std::size_t j = 0; j < n; ++j)
        crow[j] = static_cast<T>(static_cast<double>(beta) * static_cast<double>(crow[j]) + acc[j]);
    }
  }
}

}  // namespace

namespace scalar {

void gemm(std::size_t m, std::size_t n, std::size_t k, MatrixRef<float> a, MatrixRef<float> b,
          float beta, float* c, std::size_t ldc) {
  gemm_reference(m, n, k, a, b, beta, c, ldc);
}

double dot(const float* x, const float* y, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += static_cast<double>(x[i]) * static_cast<double>(y[i]);
  return s;
}

double sum_squares(const float* x, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += static_cast<double>(x[i]) * static_cast<double>(x[i]);
  return s;
}

namespace {
// Cephes-style expf: range reduction by ln 2, polynomial, exponent scaling.
float poly_exp(float x) {
  x = std::min(88.3762626647949f, std::max(-87.3365478515625f, x));
  const float fx = std::floor(x * 1.44269504088896341f + 0.5f);
  x = x - fx * 0.693359375f;
  x = x - fx * -2.12194440e-4f;
  const float z = x * x;
  float y = 1.9875691500e-4f;
  y = y * x + 1.3981999507e-3f;
  y = y * x + 8.3334519073e-3f;
  y = y * x + 4.1665795894e-2f;
  y = y * x + 1.6666665459e-1f;
  y = y * x + 5.0000001201e-1f;
  y = y * z + x + 1.0f;
  return std::ldexp(y, static_cast<int>(fx));
}
}  // namespace

void softmax_rows(float* x, std::size_t rows, std::size_t cols, float scale) {
  for (std::size_t i = 0; i < rows; ++i) {
    float* row = x + i * cols;
    float mx = -INFINITY;
    for (std::size_t j = 0; j < cols; ++j) mx = std::max(mx, row[j] * scale);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      row[j] = poly_exp(row[j] * scale - mx);
      z += row[j];
    }
    const auto iz = static_cast<float>(1.0 / z);
    for (std::size_t j = 0; j < cols; ++j) row[j] *= iz;
  }
}

}  // namespace scalar

// Double storage is only used by gradient checking, so it has no SIMD variant.
void gemm(std::size_t m, std::size_t n, std::size_t k, MatrixRef<double> a, MatrixRef<double> b,
          double beta, double* c, std::size_t ldc) {
  gemm_reference(m, n, k, a, b, beta, c, ldc);
}

}  // namespace bino::kernels
