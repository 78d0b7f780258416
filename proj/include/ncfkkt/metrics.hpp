#pragma once

// Rank-one and non-negativity proximity measures for weight matrices.

#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ncfkkt/linalg.hpp"

namespace ncfkkt {

class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double last_estimate)
      : std::runtime_error(what), last_(last_estimate) {}
  double last_estimate() const { return last_; }

 private:
  double last_;
};

inline constexpr double kPowerTol = 1e-12;
inline constexpr int kPowerMaxIter = 200000;

// Largest singular value by power iteration on Z^T Z, started from the
// normalized all-ones vector. Stops when the Rayleigh quotient changes by at
// most tol relative. Throws std::invalid_argument for Z = 0.
double spectral_norm(MatrixView Z, double tol = kPowerTol, int max_iter = kPowerMaxIter);

struct MatrixSummary {
  double frobenius = 0.0;
  double spectral = 0.0;
  std::pair<double, double> top2{0.0, 0.0};
  double kappa_term = 0.0;  // 1 - spectral / frobenius
  double rho_term = 0.0;    // ||max(0, -Z)||_F / ||Z||_F
};

MatrixSummary summarize(MatrixView Z);

// max_i (1 - ||Z_i||_2 / ||Z_i||_F)
double kappa(std::span<const MatrixView> Zs);
double kappa(const std::vector<Matrix>& Zs);

// max_i ||max(0, -Z_i)||_F / ||Z_i||_F; pass vectors as single-column matrices.
double rho(std::span<const MatrixView> Zs);
double rho(const std::vector<Matrix>& Zs);

Matrix as_column(std::span<const double> v);

// Two largest singular values; the second from the Gram matrix deflated by the
// first eigenpair. Requires min(rows, cols) >= 2.
std::pair<double, double> top2_singular(MatrixView Z);

struct RankOneFactors {
  Vector a;  // sqrt(s1) u
  Vector b;  // sqrt(s1) v
  double s1 = 0.0;
};

// Best rank-one approximation a b^T with ||a|| = ||b|| and the largest-magnitude
// entry of a positive.
RankOneFactors factor_rank_one(MatrixView Z);

}  // namespace ncfkkt
