#include "ncfkkt/ncf.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "ncfkkt/kernels.hpp"

namespace ncfkkt {

NcfProblem::NcfProblem(NetSpec s, Dataset d, Vector weights)
    : spec(std::move(s)), data(std::move(d)), z(std::move(weights)) {
  spec.validate();
  if (z.size() != data.size())
    throw std::invalid_argument("NcfProblem: z has " + std::to_string(z.size()) +
                                " entries for " + std::to_string(data.size()) + " examples");
}

NcfEvaluator::NcfEvaluator(const NcfProblem& prob)
    : prob_(&prob), net_(prob.spec, prob.data), w_scratch_(prob.spec), g_scratch_(prob.spec) {}

double NcfEvaluator::value(const Weights& w) {
  auto out = net_.forward(w);
  return kernels::dot(prob_->z, out);
}

double NcfEvaluator::value_and_gradient(const Weights& w, Weights& grad) {
  auto out = net_.forward(w);
  const double v = kernels::dot(prob_->z, out);
  net_.backward(prob_->z, grad);
  return v;
}

double NcfEvaluator::value_and_gradient(std::span<const double> w, Vector& grad) {
  if (w.size() != w_scratch_.size())
    throw DimensionError(0, "parameter vector has " + std::to_string(w.size()) +
                                " entries, expected " + std::to_string(w_scratch_.size()));
  std::copy(w.begin(), w.end(), w_scratch_.flat().begin());
  const double v = value_and_gradient(w_scratch_, g_scratch_);
  grad.assign(g_scratch_.flat().begin(), g_scratch_.flat().end());
  return v;
}

double ncf_value(const NcfProblem& prob, const Weights& w) {
  NcfEvaluator eval(prob);
  return eval.value(w);
}

Weights ncf_gradient(const NcfProblem& prob, const Weights& w) {
  NcfEvaluator eval(prob);
  Weights g(prob.spec);
  eval.value_and_gradient(w, g);
  return g;
}

KktReport kkt_report(NcfEvaluator& eval, std::span<const double> w, double tol) {
  const Vector unit = normalized(w);
  Vector grad;
  KktReport r;
  r.ncf_value = eval.value_and_gradient(unit, grad);
  r.lambda_estimate = kernels::dot(unit, grad);
  r.gradient_norm = norm2(grad);
  Vector tangential = grad;
  kernels::axpy(-r.lambda_estimate, unit, tangential);
  r.residual = norm2(tangential);
  r.alignment = r.gradient_norm > 0.0 ? r.lambda_estimate / r.gradient_norm : 0.0;
  r.is_nonnegative_kkt = r.residual <= tol && r.ncf_value >= -tol;
  r.nonsmooth = eval.problem().spec.nonsmooth();
  return r;
}

KktReport kkt_report(const NcfProblem& prob, const Weights& w, double tol) {
  check_compatible(prob.spec, w);
  NcfEvaluator eval(prob);
  return kkt_report(eval, w.flat(), tol);
}

Vector directional_alignment_series(const NcfProblem& prob, const Trajectory& traj) {
  NcfEvaluator eval(prob);
  Vector out;
  out.reserve(traj.size());
  for (const Vector& s : traj.states) {
    if (!(norm2(s) > 0.0)) {
      out.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    out.push_back(kkt_report(eval, s).alignment);
  }
  return out;
}

}  // namespace ncfkkt
