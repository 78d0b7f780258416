#pragma once

// Neural correlation function N(w) = z^T H(X; w) and the first-order
// optimality diagnostics of  max N(w)  subject to  ||w|| = 1.

#include <span>

#include "ncfkkt/net.hpp"
#include "ncfkkt/trajectory.hpp"

namespace ncfkkt {

struct NcfProblem {
  NetSpec spec;
  Dataset data;
  Vector z;

  NcfProblem() = default;
  NcfProblem(NetSpec s, Dataset d, Vector weights);

  int order() const { return homogeneity_order(spec); }
};

// Holds the forward/backward workspace for repeated evaluation of one problem.
// Keeps a pointer to the problem, which must outlive the evaluator.
class NcfEvaluator {
 public:
  explicit NcfEvaluator(const NcfProblem& prob);

  double value(const Weights& w);
  // Returns N(w) and writes grad N(w) into grad.
  double value_and_gradient(const Weights& w, Weights& grad);
  // Same, on flattened vectors.
  double value_and_gradient(std::span<const double> w, Vector& grad);

  const NcfProblem& problem() const { return *prob_; }

 private:
  const NcfProblem* prob_;
  NetEvaluator net_;
  Weights w_scratch_, g_scratch_;
};

double ncf_value(const NcfProblem& prob, const Weights& w);
Weights ncf_gradient(const NcfProblem& prob, const Weights& w);

inline constexpr double kDefaultKktTol = 1e-8;

struct KktReport {
  double ncf_value = 0.0;        // N at the unit-normalized point
  double lambda_estimate = 0.0;  // w^T grad N(w)
  double residual = 0.0;         // || grad N(w) - lambda w ||
  double alignment = 0.0;        // w^T grad N(w) / || grad N(w) ||, 0 when the gradient vanishes
  double gradient_norm = 0.0;
  bool is_nonnegative_kkt = false;
  bool nonsmooth = false;
};

// Normalizes w internally. Throws std::domain_error for w = 0.
KktReport kkt_report(const NcfProblem& prob, const Weights& w, double tol = kDefaultKktTol);
KktReport kkt_report(NcfEvaluator& eval, std::span<const double> w, double tol = kDefaultKktTol);

// Alignment at every snapshot; NaN marks a zero-norm snapshot.
Vector directional_alignment_series(const NcfProblem& prob, const Trajectory& traj);

}  // namespace ncfkkt
