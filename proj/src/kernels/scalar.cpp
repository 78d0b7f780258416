#include "ncfkkt/kernels.hpp"

#include <cmath>

namespace ncfkkt::kernels {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_scalar(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void gemv_scalar(const double* A, std::size_t rows, std::size_t cols, const double* x,
                 double* y) {
  for (std::size_t r = 0; r < rows; ++r) y[r] = dot_scalar(A + r * cols, x, cols);
}

void gemv_t_scalar(const double* A, std::size_t rows, std::size_t cols, const double* x,
                   double* y) {
  for (std::size_t c = 0; c < cols; ++c) y[c] = 0.0;
  for (std::size_t r = 0; r < rows; ++r) axpy_scalar(x[r], A + r * cols, y, cols);
}

void ger_scalar(double* A, std::size_t rows, std::size_t cols, double s, const double* a,
                const double* b) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double ar = s * a[r];
    if (ar == 0.0) continue;
    axpy_scalar(ar, b, A + r * cols, cols);
  }
}

void activate_scalar(const double* h, double* phi, double* slope, std::size_t n, double alpha,
                     int p) {
  for (std::size_t i = 0; i < n; ++i) {
    const double x = h[i];
    const double ax = alpha * x;
    const bool linear_branch = x > ax;
    const double m = linear_branch ? x : ax;
    const double branch_slope = linear_branch ? 1.0 : alpha;
    double mp1 = 1.0;  // m^(p-1)
    for (int k = 1; k < p; ++k) mp1 *= m;
    phi[i] = mp1 * m;
    slope[i] = static_cast<double>(p) * mp1 * branch_slope;
  }
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{Isa::Scalar,   "scalar",      dot_scalar,     axpy_scalar,
                                 gemv_scalar,   gemv_t_scalar, ger_scalar,     activate_scalar};
  return table;
}

}  // namespace ncfkkt::kernels
