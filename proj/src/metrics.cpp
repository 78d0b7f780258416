#include "ncfkkt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ncfkkt/kernels.hpp"

namespace ncfkkt {

namespace {

struct EigenPair {
  double value = 0.0;
  Vector vector;
};

Matrix gram(MatrixView Z) {
  Matrix G(Z.cols, Z.cols);
  for (std::size_t r = 0; r < Z.rows; ++r)
    kernels::active().ger(G.data.data(), Z.cols, Z.cols, 1.0, Z.data + r * Z.cols, Z.data + r * Z.cols);
  return G;
}

// Dominant eigenpair of a symmetric positive semidefinite matrix. With
// residual_tol > 0 iteration continues until ||G v - lambda v|| <= residual_tol * lambda
// as well; if only that second test is left unmet at max_iter the eigenvalue
// is still returned (near-degenerate top eigenvalues). Changes below abs_tol
// count as converged.
EigenPair dominant_eigenpair(const Matrix& G, double tol, int max_iter, double residual_tol,
                             double abs_tol = 0.0) {
  const std::size_t n = G.rows;
  const auto& k = kernels::active();
  Vector v(n, 1.0 / std::sqrt(static_cast<double>(n))), w(n);
  k.gemv(G.data.data(), n, n, v.data(), w.data());
  double lambda = kernels::dot(v, w);
  if (!(lambda > 0.0)) {
    // One fixed restart: the coordinate with the largest diagonal entry.
    std::size_t j = 0;
    for (std::size_t i = 1; i < n; ++i)
      if (G(i, i) > G(j, j)) j = i;
    std::fill(v.begin(), v.end(), 0.0);
    v[j] = 1.0;
    k.gemv(G.data.data(), n, n, v.data(), w.data());
    lambda = kernels::dot(v, w);
    if (!(lambda > 0.0)) return {0.0, v};
  }
  bool value_converged = false;
  for (int it = 0; it < max_iter; ++it) {
    const double wn = norm2(w);
    for (std::size_t i = 0; i < n; ++i) v[i] = w[i] / wn;
    k.gemv(G.data.data(), n, n, v.data(), w.data());
    const double next = kernels::dot(v, w);
    value_converged = std::abs(next - lambda) <= tol * next + abs_tol;
    lambda = next;
    if (value_converged) {
      if (residual_tol <= 0.0) return {lambda, v};
      double res = 0.0;
      for (std::size_t i = 0; i < n; ++i) res += (w[i] - lambda * v[i]) * (w[i] - lambda * v[i]);
      if (std::sqrt(res) <= residual_tol * lambda + abs_tol) return {lambda, v};
    }
  }
  if (value_converged) return {lambda, v};
  throw ConvergenceError("power iteration did not converge in " + std::to_string(max_iter) +
                             " iterations",
                         std::sqrt(std::max(lambda, 0.0)));
}

double negative_part_norm(MatrixView Z) {
  double s = 0.0;
  for (double x : Z.flat())
    if (x < 0.0) s += x * x;
  return std::sqrt(s);
}

void require_nonzero(MatrixView Z, const char* who) {
  if (!(frobenius(Z) > 0.0)) throw std::invalid_argument(std::string(who) + ": zero matrix");
}

std::vector<MatrixView> views(const std::vector<Matrix>& Zs) {
  std::vector<MatrixView> v;
  v.reserve(Zs.size());
  for (const Matrix& m : Zs) v.push_back(view(m));
  return v;
}

}  // namespace

double spectral_norm(MatrixView Z, double tol, int max_iter) {
  require_nonzero(Z, "spectral_norm");
  return std::sqrt(dominant_eigenpair(gram(Z), tol, max_iter, 0.0).value);
}

MatrixSummary summarize(MatrixView Z) {
  require_nonzero(Z, "summarize");
  MatrixSummary s;
  s.frobenius = frobenius(Z);
  s.spectral = spectral_norm(Z);
  if (std::min(Z.rows, Z.cols) >= 2)
    s.top2 = top2_singular(Z);
  else
    s.top2 = {s.spectral, 0.0};
  s.kappa_term = std::clamp(1.0 - s.spectral / s.frobenius, 0.0, 1.0);
  s.rho_term = negative_part_norm(Z) / s.frobenius;
  return s;
}

double kappa(std::span<const MatrixView> Zs) {
  double m = 0.0;
  for (MatrixView Z : Zs) {
    require_nonzero(Z, "kappa");
    m = std::max(m, 1.0 - spectral_norm(Z) / frobenius(Z));
  }
  return m;
}

double kappa(const std::vector<Matrix>& Zs) {
  const auto v = views(Zs);
  return kappa(std::span<const MatrixView>(v));
}

double rho(std::span<const MatrixView> Zs) {
  double m = 0.0;
  for (MatrixView Z : Zs) {
    require_nonzero(Z, "rho");
    m = std::max(m, negative_part_norm(Z) / frobenius(Z));
  }
  return m;
}

double rho(const std::vector<Matrix>& Zs) {
  const auto v = views(Zs);
  return rho(std::span<const MatrixView>(v));
}

Matrix as_column(std::span<const double> v) {
  Matrix m(v.size(), 1);
  std::copy(v.begin(), v.end(), m.data.begin());
  return m;
}

std::pair<double, double> top2_singular(MatrixView Z) {
  if (std::min(Z.rows, Z.cols) < 2)
    throw std::invalid_argument("top2_singular: needs at least two rows and two columns");
  if (!(frobenius(Z) > 0.0)) return {0.0, 0.0};
  Matrix G = gram(Z);
  const EigenPair first = dominant_eigenpair(G, kPowerTol, kPowerMaxIter, 1e-10);
  kernels::active().ger(G.data.data(), G.rows, G.cols, -first.value, first.vector.data(),
                        first.vector.data());
  // Deflation leaves roundoff of order eps * lambda_1 in G.
  const double floor = 64.0 * std::numeric_limits<double>::epsilon() * first.value;
  if (frobenius(view(G)) <= floor) return {std::sqrt(first.value), 0.0};
  const EigenPair second = dominant_eigenpair(G, kPowerTol, kPowerMaxIter, 1e-10, floor);
  const double l2 = second.value > floor ? second.value : 0.0;
  return {std::sqrt(first.value), std::sqrt(l2)};
}

RankOneFactors factor_rank_one(MatrixView Z) {
  require_nonzero(Z, "factor_rank_one");
  const EigenPair top = dominant_eigenpair(gram(Z), kPowerTol, kPowerMaxIter, 1e-10);
  Vector u(Z.rows);
  kernels::active().gemv(Z.data, Z.rows, Z.cols, top.vector.data(), u.data());
  const double s1 = norm2(u);
  RankOneFactors f;
  f.s1 = s1;
  const double root = std::sqrt(s1);
  f.a = scaled(u, root / s1);
  f.b = scaled(top.vector, root);
  std::size_t imax = 0;
  for (std::size_t i = 1; i < f.a.size(); ++i)
    if (std::abs(f.a[i]) > std::abs(f.a[imax])) imax = i;
  if (f.a[imax] < 0.0) {
    scale_in_place(f.a, -1.0);
    scale_in_place(f.b, -1.0);
  }
  return f;
}

}  // namespace ncfkkt
