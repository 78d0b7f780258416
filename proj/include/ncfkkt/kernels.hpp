#pragma once

// Dense double-precision kernels behind every inner loop of the library.
//
// Two implementations exist: a portable scalar reference and an AVX2/FMA
// variant. The variant is chosen once at startup from CPUID and can be
// overridden with NCFKKT_ISA=scalar or select_isa(). All kernels take raw
// row-major storage; the span wrappers at the bottom are what library code
// calls.
//
// Reduction order: kernels that accumulate into an output (axpy, gemv_t,
// ger) vectorize across output entries and never reorder the accumulation
// sequence of a single entry. Only dot/gemv reduce within a vector.

#include <cstddef>
#include <span>
#include <string_view>

namespace ncfkkt::kernels {

enum class Isa { Scalar, Avx2 };

struct KernelTable {
  Isa isa;
  const char* name;

  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += a * x
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  // y = A x, A is rows x cols
  void (*gemv)(const double* A, std::size_t rows, std::size_t cols, const double* x, double* y);
  // y = A^T x, A is rows x cols; y has cols entries and is overwritten
  void (*gemv_t)(const double* A, std::size_t rows, std::size_t cols, const double* x, double* y);
  // A += s * a b^T
  void (*ger)(double* A, std::size_t rows, std::size_t cols, double s, const double* a,
              const double* b);
  // phi = max(h, alpha h)^p, slope = d phi / d h with slope(0) = alpha when p == 1
  void (*activate)(const double* h, double* phi, double* slope, std::size_t n, double alpha,
                   int p);
};

const KernelTable& scalar_table();
// nullptr when the binary was built without AVX2 support.
const KernelTable* avx2_table();

bool cpu_supports_avx2();

// Table used by the wrappers below.
const KernelTable& active();
void select_isa(Isa isa);
std::string_view isa_name(Isa isa);

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size());
}

inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  active().axpy(a, x.data(), y.data(), x.size());
}

inline double nrm2_sq(std::span<const double> a) { return dot(a, a); }

}  // namespace ncfkkt::kernels
