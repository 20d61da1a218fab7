#include "bino/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#if defined(BINO_HAVE_AVX2_TU)
#include <immintrin.h>
#endif

namespace bino::kernels::avx2 {

#if defined(BINO_HAVE_AVX2_TU)

namespace {

constexpr std::size_t kRows = 6;
constexpr std::size_t kCols = 8;

// op(A)[rows x cols] as dense double rows.
void pack_rows(const MatrixRef<float>& m, std::size_t rows, std::size_t cols, std::vector<double>& out) {
  out.resize(rows * cols);
  if (!m.trans) {
    for (std::size_t i = 0; i < rows; ++i) {
      const float* src = m.data + i * m.ld;
      double* dst = out.data() + i * cols;
      std::size_t j = 0;
      for (; j + 4 <= cols; j += 4) _mm256_storeu_pd(dst + j, _mm256_cvtps_pd(_mm_loadu_ps(src + j)));
      for (; j < cols; ++j) dst[j] = src[j];
    }
  } else {
    for (std::size_t j = 0; j < cols; ++j) {
      const float* src = m.data + j * m.ld;
      for (std::size_t i = 0; i < rows; ++i) out[i * cols + j] = src[i];
    }
  }
}

// op(B)[k x n] as column panels of width kCols: panel p holds k rows of
// kCols contiguous doubles, zero padded past n.
void pack_panels(const MatrixRef<float>& m, std::size_t k, std::size_t n, std::vector<double>& out) {
  const std::size_t panels = (n + kCols - 1) / kCols;
  out.resize(panels * k * kCols);
  for (std::size_t p = 0; p < panels; ++p) {
    const std::size_t j0 = p * kCols, width = std::min(kCols, n - j0);
    double* dst = out.data() + p * k * kCols;
    for (std::size_t kk = 0; kk < k; ++kk) {
      double* row = dst + kk * kCols;
      if (!m.trans) {
        const float* src = m.data + kk * m.ld + j0;
        if (width == kCols) {
          _mm256_storeu_pd(row, _mm256_cvtps_pd(_mm_loadu_ps(src)));
          _mm256_storeu_pd(row + 4, _mm256_cvtps_pd(_mm_loadu_ps(src + 4)));
          continue;
        }
        for (std::size_t t = 0; t < width; ++t) row[t] = src[t];
      } else {
        for (std::size_t t = 0; t < width; ++t) row[t] = m.data[(j0 + t) * m.ld + kk];
      }
      for (std::size_t t = width; t < kCols; ++t) row[t] = 0.0;
    }
  }
}

inline void store_row(float* crow, const double* acc, std::size_t count, float beta) {
  if (beta == 0.0f) {
    for (std::size_t j = 0; j < count; ++j) crow[j] = static_cast<float>(acc[j]);
  } else {
    for (std::size_t j = 0; j < count; ++j)
      crow[j] = static_cast<float>(static_cast<double>(beta) * static_cast<double>(crow[j]) + acc[j]);
  }
}

template <std::size_t R>
inline void micro_tile(const double* const* arows, const double* panel, std::size_t k, double (*tile)[kCols]) {
  __m256d lo[R], hi[R];
  for (std::size_t r = 0; r < R; ++r) lo[r] = hi[r] = _mm256_setzero_pd();
  for (std::size_t kk = 0; kk < k; ++kk) {
    const __m256d b0 = _mm256_loadu_pd(panel + kk * kCols);
    const __m256d b1 = _mm256_loadu_pd(panel + kk * kCols + 4);
    for (std::size_t r = 0; r < R; ++r) {
      const __m256d av = _mm256_broadcast_sd(arows[r] + kk);
      lo[r] = _mm256_fmadd_pd(av, b0, lo[r]);
      hi[r] = _mm256_fmadd_pd(av, b1, hi[r]);
    }
  }
  for (std::size_t r = 0; r < R; ++r) {
    _mm256_storeu_pd(tile[r], lo[r]);
    _mm256_storeu_pd(tile[r] + 4, hi[r]);
  }
}

template <std::size_t R>
void row_block(std::size_t i, std::size_t n, std::size_t k, const std::vector<double>& ap,
               const std::vector<double>& bp, float beta, float* c, std::size_t ldc) {
  const double* arows[R];
  for (std::size_t r = 0; r < R; ++r) arows[r] = ap.data() + (i + r) * k;
  double tile[R][kCols];
  for (std::size_t j = 0, p = 0; j < n; j += kCols, ++p) {
    micro_tile<R>(arows, bp.data() + p * k * kCols, k, tile);
    const std::size_t count = std::min(kCols, n - j);
    for (std::size_t r = 0; r < R; ++r) store_row(c + (i + r) * ldc + j, tile[r], count, beta);
  }
}

}  // namespace

void gemm(std::size_t m, std::size_t n, std::size_t k, MatrixRef<float> a, MatrixRef<float> b,
          float beta, float* c, std::size_t ldc) {
  thread_local std::vector<double> ap;
  thread_local std::vector<double> bp;
  pack_rows(a, m, k, ap);
  pack_panels(b, k, n, bp);
  std::size_t i = 0;
  for (; i + kRows <= m; i += kRows) row_block<kRows>(i, n, k, ap, bp, beta, c, ldc);
  for (; i + 2 <= m; i += 2) row_block<2>(i, n, k, ap, bp, beta, c, ldc);
  for (; i < m; ++i) row_block<1>(i, n, k, ap, bp, beta, c, ldc);
}

namespace {
inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}
}  // namespace

double dot(const float* x, const float* y, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 xv = _mm256_loadu_ps(x + i);
    const __m256 yv = _mm256_loadu_ps(y + i);
    acc0 = _mm256_fmadd_pd(_mm256_cvtps_pd(_mm256_castps256_ps128(xv)),
                           _mm256_cvtps_pd(_mm256_castps256_ps128(yv)), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_cvtps_pd(_mm256_extractf128_ps(xv, 1)),
                           _mm256_cvtps_pd(_mm256_extractf128_ps(yv, 1)), acc1);
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += static_cast<double>(x[i]) * static_cast<double>(y[i]);
  return s;
}

double sum_squares(const float* x, std::size_t n) { return dot(x, x, n); }

namespace {
inline __m256 poly_exp(__m256 x) {
  x = _mm256_min_ps(_mm256_set1_ps(88.3762626647949f), _mm256_max_ps(_mm256_set1_ps(-87.3365478515625f), x));
  const __m256 fx = _mm256_floor_ps(_mm256_fmadd_ps(x, _mm256_set1_ps(1.44269504088896341f), _mm256_set1_ps(0.5f)));
  x = _mm256_fnmadd_ps(fx, _mm256_set1_ps(0.693359375f), x);
  x = _mm256_fnmadd_ps(fx, _mm256_set1_ps(-2.12194440e-4f), x);
  const __m256 z = _mm256_mul_ps(x, x);
  __m256 y = _mm256_set1_ps(1.9875691500e-4f);
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.3981999507e-3f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(8.3334519073e-3f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(4.1665795894e-2f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.6666665459e-1f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(5.0000001201e-1f));
  y = _mm256_add_ps(_mm256_fmadd_ps(y, z, x), _mm256_set1_ps(1.0f));
  __m256i e = _mm256_add_epi32(_mm256_cvtps_epi32(fx), _mm256_set1_epi32(127));
  return _mm256_mul_ps(y, _mm256_castsi256_ps(_mm256_slli_epi32(e, 23)));
}

inline float hmax(__m256 v) {
  __m128 m = _mm_max_ps(_mm256_castps256_ps128(v), _mm256_extractf128_ps(v, 1));
  m = _mm_max_ps(m, _mm_movehl_ps(m, m));
  m = _mm_max_ss(m, _mm_shuffle_ps(m, m, 1));
  return _mm_cvtss_f32(m);
}
}  // namespace

void softmax_rows(float* x, std::size_t rows, std::size_t cols, float scale) {
  const __m256 vs = _mm256_set1_ps(scale);
  for (std::size_t i = 0; i < rows; ++i) {
    float* row = x + i * cols;
    __m256 vm = _mm256_set1_ps(-INFINITY);
    std::size_t j = 0;
    for (; j + 8 <= cols; j += 8) vm = _mm256_max_ps(vm, _mm256_mul_ps(_mm256_loadu_ps(row + j), vs));
    float mx = hmax(vm);
    for (; j < cols; ++j) mx = std::max(mx, row[j] * scale);
    const __m256 vmx = _mm256_set1_ps(mx);
    __m256d z0 = _mm256_setzero_pd(), z1 = _mm256_setzero_pd();
    for (j = 0; j + 8 <= cols; j += 8) {
      const __m256 e = poly_exp(_mm256_sub_ps(_mm256_mul_ps(_mm256_loadu_ps(row + j), vs), vmx));
      _mm256_storeu_ps(row + j, e);
      z0 = _mm256_add_pd(z0, _mm256_cvtps_pd(_mm256_castps256_ps128(e)));
      z1 = _mm256_add_pd(z1, _mm256_cvtps_pd(_mm256_extractf128_ps(e, 1)));
    }
    double z = hsum(_mm256_add_pd(z0, z1));
    for (; j < cols; ++j) {
      __m256 e = poly_exp(_mm256_set1_ps(row[j] * scale - mx));
      row[j] = _mm256_cvtss_f32(e);
      z += row[j];
    }
    const __m256 iz = _mm256_set1_ps(static_cast<float>(1.0 / z));
    for (j = 0; j + 8 <= cols; j += 8) _mm256_storeu_ps(row + j, _mm256_mul_ps(_mm256_loadu_ps(row + j), iz));
    for (; j < cols; ++j) row[j] *= _mm256_cvtss_f32(iz);
  }
}

#else

void gemm(std::size_t m, std::size_t n, std::size_t k, MatrixRef<float> a, MatrixRef<float> b,
          float beta, float* c, std::size_t ldc) {
  scalar::gemm(m, n, k, a, b, beta, c, ldc);
}
double dot(const float* x, const float* y, std::size_t n) { return scalar::dot(x, y, n); }
double sum_squares(const float* x, std::size_t n) { return scalar::sum_squares(x, n); }
void softmax_rows(float* x, std::size_t rows, std::size_t cols, float scale) {
  scalar::softmax_rows(x, rows, cols, scale);
}

#endif

}  // namespace bino::kernels::avx2
