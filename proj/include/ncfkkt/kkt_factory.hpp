#pragma once

// Rank-one KKT points of  max y^T H(X; W)  s.t.  sum_l ||W_l||_F^2 = 1  for
// networks with activation max(x, alpha x)^p:
//
//   W_l = a_l b_l^T (l < L),  W_L = w_bar^T,
//   ||a_l||^4 = p^(L-l) / p_hat,  ||w_bar||^2 = 1 / p_hat,
//   b_l = q a_{l-1} / p^(1/4),    w_bar = q a_{L-1} / (p p_hat)^(1/4),
//
// with p_hat = p^(L-1) + ... + 1 and b_1 a KKT point of a small problem on
// R^{k_0}. For even p and alpha = 1 the a's inside b_l and w_bar enter by
// absolute value. For p >= 2 the nonzero entries of each a_l share one
// magnitude.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ncfkkt/ncf.hpp"
#include "ncfkkt/net.hpp"

namespace ncfkkt {

// Squared-norm constraint of the small problem: 1/sqrt(L) for p = 1,
// sqrt(p^(L-1) / p_hat) otherwise.
double small_problem_radius(int L, int p);
// p^(L-1) + ... + 1
long long p_hat(int L, int p);

// max_u sum_i z_i s^(L-1)(x_i^T u)  s.t.  ||u||^2 = radius_sq
struct SmallProblem {
  Dataset data;
  Vector z;
  double alpha = 0.0;
  int p = 1;
  int L = 2;
  double radius_sq = 0.0;

  static SmallProblem from(const NcfProblem& prob);
  void validate() const;
};

struct SmallSolveConfig {
  std::size_t max_iters = 200000;
  // Stop when the sine of the angle between u and grad G(u) is below this.
  double sine_tol = 1e-13;
  int max_attempts = 25;
};

struct SmallSolveReport {
  double value = 0.0;      // G(u)
  double residual = 0.0;   // ||grad G(u) - (u_hat^T grad G(u)) u_hat||
  double alignment = 0.0;  // cosine between u and grad G(u)
  double gradient_norm = 0.0;
  int attempts = 0;
  std::size_t iterations = 0;
};

double small_problem_value(const SmallProblem& sp, std::span<const double> u);
double small_problem_value_and_gradient(const SmallProblem& sp, std::span<const double> u,
                                        Vector& grad);
SmallSolveReport small_problem_report(const SmallProblem& sp, std::span<const double> u);

// Sphere-projected gradient ascent with backtracking from random starts.
// Throws std::runtime_error("no positive-value KKT point found") when every
// attempt fails.
std::pair<Vector, SmallSolveReport> solve_small_problem(const SmallProblem& sp,
                                                        std::uint64_t seed,
                                                        const SmallSolveConfig& cfg = {});

struct RankOneKKT {
  NetSpec spec;
  std::vector<Vector> a;  // a_1 .. a_{L-1}
  std::vector<Vector> b;  // b_1 .. b_{L-1}
  Vector w_bar;
  // q[j] links a_{j+1} to b_{j+2} for j < L-2; q.back() is the output sign.
  std::vector<int> q;
  long long p_hat = 1;
};

struct RankOneOptions {
  // L-1 signs. Empty means all +1. For alpha != 1 only the output sign may be -1.
  std::vector<int> q;
  // Nonzero coordinates of each a_l. Empty means coordinate 0 for p >= 2 and
  // every coordinate for p = 1.
  std::vector<std::vector<std::size_t>> supports;
  // Optional per-entry signs of each a_l on its support; only allowed for alpha = 1.
  std::vector<std::vector<int>> entry_signs;
};

// Throws std::invalid_argument when ||b1||^2 is off the small-problem radius by
// more than 1e-10, or when negative entries are requested with alpha != 1.
RankOneKKT construct_rank_one(const NetSpec& spec, const Vector& b1,
                              const RankOneOptions& opts = {});

Weights assemble_weights(const RankOneKKT& k);

struct BalanceReport {
  Vector per_layer;  // entry l-1 compares W_l with W_{l+1}
  double max_deviation = 0.0;
};

// diag(W_l W_l^T) - p diag(W_{l+1}^T W_{l+1}) in max norm; with full_matrix the
// whole of W_l W_l^T - W_{l+1}^T W_{l+1} is compared instead (linear networks).
BalanceReport check_balance(const Weights& w, int p, bool full_matrix = false);

struct VerdictItem {
  std::string name;
  bool passed = false;
  double deviation = 0.0;
  double tolerance = 0.0;
};

struct TheoremVerdict {
  std::vector<VerdictItem> items;
  KktReport full;
  SmallSolveReport small;
  BalanceReport balance;

  bool all_passed() const;
  const VerdictItem* find(const std::string& name) const;
};

struct VerifyTolerances {
  double structure = 1e-12;
  double small_kkt = 1e-8;
  double full_kkt = kDefaultKktTol;
  double balance = 1e-12;
};

TheoremVerdict verify_theorem_conditions(const RankOneKKT& k, const NcfProblem& prob,
                                         const VerifyTolerances& tol = {});

}  // namespace ncfkkt
