// Compiled with -mavx2 -mfma. Nothing in here may run before
// cpu_supports_avx2() has been checked by the dispatcher.

#include "ncfkkt/kernels.hpp"

#include <immintrin.h>

namespace ncfkkt::kernels {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4)
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_avx2(double a, const double* x, double* y, std::size_t n) {
  const __m256d av = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d yv = _mm256_loadu_pd(y + i);
    yv = _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), yv);
    _mm256_storeu_pd(y + i, yv);
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

void gemv_avx2(const double* A, std::size_t rows, std::size_t cols, const double* x, double* y) {
  for (std::size_t r = 0; r < rows; ++r) y[r] = dot_avx2(A + r * cols, x, cols);
}

void gemv_t_avx2(const double* A, std::size_t rows, std::size_t cols, const double* x,
                 double* y) {
  for (std::size_t c = 0; c < cols; ++c) y[c] = 0.0;
  for (std::size_t r = 0; r < rows; ++r) axpy_avx2(x[r], A + r * cols, y, cols);
}

void ger_avx2(double* A, std::size_t rows, std::size_t cols, double s, const double* a,
              const double* b) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double ar = s * a[r];
    if (ar == 0.0) continue;
    axpy_avx2(ar, b, A + r * cols, cols);
  }
}

void activate_avx2(const double* h, double* phi, double* slope, std::size_t n, double alpha,
                   int p) {
  const __m256d av = _mm256_set1_pd(alpha);
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d pv = _mm256_set1_pd(static_cast<double>(p));
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d x = _mm256_loadu_pd(h + i);
    const __m256d ax = _mm256_mul_pd(av, x);
    const __m256d linear = _mm256_cmp_pd(x, ax, _CMP_GT_OQ);
    const __m256d m = _mm256_blendv_pd(ax, x, linear);
    const __m256d branch_slope = _mm256_blendv_pd(av, one, linear);
    __m256d mp1 = one;
    for (int k = 1; k < p; ++k) mp1 = _mm256_mul_pd(mp1, m);
    _mm256_storeu_pd(phi + i, _mm256_mul_pd(mp1, m));
    _mm256_storeu_pd(slope + i, _mm256_mul_pd(_mm256_mul_pd(pv, mp1), branch_slope));
  }
  for (; i < n; ++i) {
    const double x = h[i];
    const double ax = alpha * x;
    const bool linear = x > ax;
    const double m = linear ? x : ax;
    double mp1 = 1.0;
    for (int k = 1; k < p; ++k) mp1 *= m;
    phi[i] = mp1 * m;
    slope[i] = static_cast<double>(p) * mp1 * (linear ? 1.0 : alpha);
  }
}

}  // namespace

const KernelTable* avx2_table() {
  static const KernelTable table{Isa::Avx2, "avx2", dot_avx2,   axpy_avx2,
                                 gemv_avx2, gemv_t_avx2, ger_avx2, activate_avx2};
  return &table;
}

}  // namespace ncfkkt::kernels
