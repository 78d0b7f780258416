#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace ncfkkt {

using Vector = std::vector<double>;

// Dense row-major matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  static Matrix identity(std::size_t n);
  static Matrix outer(std::span<const double> a, std::span<const double> b);
};

// Non-owning view of a matrix stored row-major inside a larger buffer.
template <class T>
struct BasicMatrixView {
  T* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;

  T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<T> row(std::size_t r) const { return {data + r * cols, cols}; }
  std::span<T> flat() const { return {data, rows * cols}; }
};
using MatrixView = BasicMatrixView<const double>;
using MutMatrixView = BasicMatrixView<double>;

inline MatrixView view(const Matrix& m) { return {m.data.data(), m.rows, m.cols}; }

double norm2(std::span<const double> v);
double frobenius(MatrixView m);
Matrix transpose(MatrixView m);
Matrix multiply(MatrixView a, MatrixView b);
void scale_in_place(std::span<double> v, double s);
Vector scaled(std::span<const double> v, double s);
// Returns v / ||v||; throws std::domain_error for the zero vector.
Vector normalized(std::span<const double> v);
double max_abs_diff(std::span<const double> a, std::span<const double> b);

}  // namespace ncfkkt
