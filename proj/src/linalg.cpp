#include "ncfkkt/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ncfkkt/kernels.hpp"

namespace ncfkkt {

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::outer(std::span<const double> a, std::span<const double> b) {
  Matrix m(a.size(), b.size());
  kernels::active().ger(m.data.data(), m.rows, m.cols, 1.0, a.data(), b.data());
  return m;
}

double norm2(std::span<const double> v) { return std::sqrt(kernels::nrm2_sq(v)); }

double frobenius(MatrixView m) { return norm2(m.flat()); }

Matrix transpose(MatrixView m) {
  Matrix t(m.cols, m.rows);
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) t(c, r) = m(r, c);
  return t;
}

Matrix multiply(MatrixView a, MatrixView b) {
  if (a.cols != b.rows) throw std::invalid_argument("multiply: inner dimensions differ");
  Matrix out(a.rows, b.cols);
  for (std::size_t r = 0; r < a.rows; ++r)
    for (std::size_t k = 0; k < a.cols; ++k)
      kernels::axpy(a(r, k), b.row(k), out.row(r));
  return out;
}

void scale_in_place(std::span<double> v, double s) {
  for (double& x : v) x *= s;
}

Vector scaled(std::span<const double> v, double s) {
  Vector out(v.begin(), v.end());
  scale_in_place(out, s);
  return out;
}

Vector normalized(std::span<const double> v) {
  const double n = norm2(v);
  if (!(n > 0.0)) throw std::domain_error("normalized: zero or non-finite vector");
  return scaled(v, 1.0 / n);
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("max_abs_diff: size mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace ncfkkt
