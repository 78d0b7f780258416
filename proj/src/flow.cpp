#include "ncfkkt/flow.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include "ncfkkt/kernels.hpp"
#include "ncfkkt/rng.hpp"

namespace ncfkkt {

std::string_view termination_name(Termination t) {
  switch (t) {
    case Termination::Horizon:
      return "horizon";
    case Termination::BlowUp:
      return "blow_up";
    case Termination::ConvergedToZero:
      return "converged_to_zero";
  }
  return "unknown";
}

void IntegratorConfig::validate() const {
  if (!(step > 0.0)) throw std::invalid_argument("IntegratorConfig: step must be > 0");
  if (!(horizon > 0.0)) throw std::invalid_argument("IntegratorConfig: horizon must be > 0");
  if (snapshot_stride == 0)
    throw std::invalid_argument("IntegratorConfig: snapshot_stride must be >= 1");
  if (!(blowup_norm_cap > 0.0))
    throw std::invalid_argument("IntegratorConfig: blowup_norm_cap must be > 0");
  if (!(zero_floor > 0.0)) throw std::invalid_argument("IntegratorConfig: zero_floor must be > 0");
  if (zero_patience == 0) throw std::invalid_argument("IntegratorConfig: zero_patience must be >= 1");
}

namespace {

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// Aitken extrapolation of a geometrically converging sequence of doubling times.
double extrapolate_escape_time(const Vector& doubling_times, double fallback) {
  const std::size_t m = doubling_times.size();
  if (m < 3) return fallback;
  const double t0 = doubling_times[m - 3], t1 = doubling_times[m - 2], t2 = doubling_times[m - 1];
  const double d1 = t1 - t0, d2 = t2 - t1;
  const double denom = d1 - d2;
  if (!(denom > 0.0)) return fallback;
  return t2 + d2 * d2 / denom;
}

void check_unit(std::span<const double> w, double tol, const char* who) {
  const double n = norm2(w);
  if (std::abs(n - 1.0) > tol)
    throw std::invalid_argument(std::string(who) + ": initial direction must have unit norm, got " +
                                std::to_string(n));
}

}  // namespace

Trajectory integrate_rk4(const VectorField& f, Vector x0, const IntegratorConfig& cfg, int order) {
  cfg.validate();
  const std::size_t k = x0.size();
  Trajectory tr;
  tr.push(0.0, x0);

  const double r0 = norm2(x0);
  double next_level = r0 > 0.0 ? 2.0 * r0 : std::numeric_limits<double>::infinity();
  Vector doubling_times;
  std::size_t below = r0 < cfg.zero_floor ? 1 : 0;

  Vector x = std::move(x0), xn(k), tmp(k), k1(k), k2(k), k3(k), k4(k);
  double t = 0.0;
  double nx = r0;
  std::size_t steps = 0;
  bool snapshot_is_current = true;

  while (t < cfg.horizon) {
    double h = cfg.step;
    if (cfg.step_shrink_near_blowup && order > 2 && r0 > 0.0 && nx > r0)
      h *= std::pow(r0 / nx, order - 2);
    bool last = false;
    if (t + h >= cfg.horizon) {
      h = cfg.horizon - t;
      last = true;
    }

    f(x, k1);
    for (std::size_t i = 0; i < k; ++i) tmp[i] = x[i] + 0.5 * h * k1[i];
    f(tmp, k2);
    for (std::size_t i = 0; i < k; ++i) tmp[i] = x[i] + 0.5 * h * k2[i];
    f(tmp, k3);
    for (std::size_t i = 0; i < k; ++i) tmp[i] = x[i] + h * k3[i];
    f(tmp, k4);
    for (std::size_t i = 0; i < k; ++i)
      xn[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);

    if (!all_finite(xn)) {
      if (!snapshot_is_current) tr.push(t, x);
      tr.terminated_by = Termination::BlowUp;
      break;
    }

    const double t_prev = t;
    t = last ? cfg.horizon : t + h;
    std::swap(x, xn);
    ++steps;
    const double n = norm2(x);
    while (n >= next_level) {
      const double frac = (std::log(next_level) - std::log(nx)) / (std::log(n) - std::log(nx));
      doubling_times.push_back(t_prev + frac * (t - t_prev));
      next_level *= 2.0;
    }
    nx = n;

    if (n > cfg.blowup_norm_cap) {
      tr.push(t, x);
      tr.terminated_by = Termination::BlowUp;
      break;
    }

    snapshot_is_current = false;
    if (steps % cfg.snapshot_stride == 0 || last) {
      tr.push(t, x);
      snapshot_is_current = true;
      below = n < cfg.zero_floor ? below + 1 : 0;
      if (below >= cfg.zero_patience) {
        tr.terminated_by = Termination::ConvergedToZero;
        break;
      }
    }
  }

  if (tr.terminated_by == Termination::BlowUp)
    tr.t_star_estimate = extrapolate_escape_time(doubling_times, tr.times.back());
  return tr;
}

Trajectory integrate_training_flow(const NetSpec& spec, const Weights& w0, double delta,
                                   const Dataset& data, LossKind kind,
                                   const IntegratorConfig& cfg) {
  check_compatible(spec, w0);
  if (!(delta > 0.0)) throw std::invalid_argument("integrate_training_flow: delta must be > 0");
  check_unit(w0.flat(), 1e-12, "integrate_training_flow");

  NetEvaluator eval(spec, data);
  Weights w(spec), g(spec);
  Vector coeffs(data.size());
  VectorField field = [&](std::span<const double> x, Vector& dx) {
    std::copy(x.begin(), x.end(), w.flat().begin());
    auto out = eval.forward(w);
    for (std::size_t i = 0; i < coeffs.size(); ++i) coeffs[i] = -loss_prime(kind, out[i], data.y[i]);
    eval.backward(coeffs, g);
    dx.assign(g.flat().begin(), g.flat().end());
  };
  Trajectory tr = integrate_rk4(field, scaled(w0.flat(), delta), cfg, homogeneity_order(spec));
  tr.nonsmooth = spec.nonsmooth();
  return tr;
}

Trajectory integrate_ncf_flow(const NcfProblem& prob, const Weights& u0,
                              const IntegratorConfig& cfg) {
  check_compatible(prob.spec, u0);
  NcfEvaluator eval(prob);
  VectorField field = [&](std::span<const double> x, Vector& dx) {
    eval.value_and_gradient(x, dx);
  };
  Trajectory tr = integrate_rk4(field, u0.vector(), cfg, prob.order());
  tr.nonsmooth = prob.spec.nonsmooth();
  return tr;
}

Trajectory integrate_ncf_flow(const NetSpec& spec, const Weights& u0, std::span<const double> z,
                              const Dataset& data, const IntegratorConfig& cfg) {
  NcfProblem prob(spec, data, Vector(z.begin(), z.end()));
  return integrate_ncf_flow(prob, u0, cfg);
}

BlowupReport fit_blowup_rate(const Trajectory& traj, int order) {
  if (traj.terminated_by != Termination::BlowUp)
    throw std::invalid_argument("fit_blowup_rate: trajectory did not blow up");
  if (order < 3) throw std::invalid_argument("fit_blowup_rate: homogeneity order must be >= 3");
  const double t_star = traj.t_star_estimate;
  if (!std::isfinite(t_star)) throw std::invalid_argument("fit_blowup_rate: no escape-time estimate");

  const double r0 = norm2(traj.states.front());
  Vector xs, ys;
  for (std::size_t j = 0; j < traj.size(); ++j) {
    const double gap = t_star - traj.times[j];
    const double n = norm2(traj.states[j]);
    if (n > 10.0 * r0 && gap > 0.0) {
      xs.push_back(-std::log(gap));
      ys.push_back(std::log(n));
    }
  }
  if (xs.size() < 8)
    throw std::invalid_argument("fit_blowup_rate: only " + std::to_string(xs.size()) +
                                " samples past 10x the initial norm, need 8");

  const double m = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= m;
  my /= m;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  BlowupReport rep;
  rep.t_star_estimate = t_star;
  rep.fitted_exponent = sxy / sxx;
  rep.kappa_rate = std::exp(my - rep.fitted_exponent * mx);
  rep.r_squared = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  rep.samples = xs.size();
  return rep;
}

Trajectory rescale_trajectory(const Trajectory& traj, double delta, int order) {
  if (!(delta > 0.0)) throw std::invalid_argument("rescale_trajectory: delta must be > 0");
  Trajectory s = traj;
  const double time_scale = std::pow(delta, order - 2);
  for (double& t : s.times) t *= time_scale;
  for (Vector& st : s.states)
    for (double& x : st) x /= delta;
  if (std::isfinite(s.t_star_estimate)) s.t_star_estimate *= time_scale;
  return s;
}

Vector xi_residual(const NetSpec& spec, const Weights& w, const Dataset& data, LossKind kind) {
  const Vector out = outputs(spec, w, data);
  Vector xi(out.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    xi[i] = loss_prime(kind, out[i], data.y[i]) - loss_prime(kind, 0.0, data.y[i]);
  return xi;
}

Trajectory gradient_descent(const NetSpec& spec, const Weights& w0, double delta, double step,
                            std::size_t iters, const Dataset& data, LossKind kind,
                            std::size_t stride) {
  check_compatible(spec, w0);
  if (!(delta > 0.0)) throw std::invalid_argument("gradient_descent: delta must be > 0");
  if (!(step > 0.0)) throw std::invalid_argument("gradient_descent: step must be > 0");
  if (stride == 0) throw std::invalid_argument("gradient_descent: stride must be >= 1");

  NetEvaluator eval(spec, data);
  Weights w(spec, scaled(w0.flat(), delta)), g(spec);
  Vector coeffs(data.size());
  Trajectory tr;
  tr.nonsmooth = spec.nonsmooth();
  tr.push(0.0, w.vector());

  for (std::size_t it = 1; it <= iters; ++it) {
    auto out = eval.forward(w);
    for (std::size_t i = 0; i < coeffs.size(); ++i) coeffs[i] = -loss_prime(kind, out[i], data.y[i]);
    eval.backward(coeffs, g);
    kernels::axpy(step, g.flat(), w.flat());
    if (!all_finite(w.flat())) {
      tr.terminated_by = Termination::BlowUp;
      return tr;
    }
    if (it % stride == 0 || it == iters) tr.push(static_cast<double>(it), w.vector());
  }
  return tr;
}

Trajectory projected_gradient_ascent(const NcfProblem& prob, const Weights& u0, double step,
                                     std::size_t iters, const PgaOptions& opts) {
  check_compatible(prob.spec, u0);
  if (!(step > 0.0)) throw std::invalid_argument("projected_gradient_ascent: step must be > 0");
  if (opts.stride == 0) throw std::invalid_argument("projected_gradient_ascent: stride must be >= 1");
  check_unit(u0.flat(), 1e-10, "projected_gradient_ascent");

  NcfEvaluator eval(prob);
  Vector v = u0.vector(), g;
  Trajectory tr;
  tr.nonsmooth = prob.spec.nonsmooth();
  tr.push(0.0, v);
  bool current = true;

  for (std::size_t it = 0; it < iters; ++it) {
    eval.value_and_gradient(v, g);
    const double gn = norm2(g);
    if (gn == 0.0) {
      tr.terminated_by = Termination::ConvergedToZero;
      break;
    }
    if (kernels::dot(v, g) / gn >= opts.stop_alignment) break;
    kernels::axpy(step, g, v);
    const double c = 1.0 / norm2(v);
    scale_in_place(v, c);
    tr.scale_factors.push_back(c);
    current = false;
    if ((it + 1) % opts.stride == 0 || it + 1 == iters) {
      tr.push(static_cast<double>(it + 1), v);
      current = true;
    }
  }
  if (!current) tr.push(static_cast<double>(tr.scale_factors.size()), v);
  return tr;
}

Trajectory stochastic_projected_gradient_ascent(const NcfProblem& prob, const Weights& u0,
                                                double step, std::size_t iters,
                                                const StochasticPgaOptions& opts) {
  check_compatible(prob.spec, u0);
  if (!(step > 0.0)) throw std::invalid_argument("stochastic_projected_gradient_ascent: step must be > 0");
  if (opts.batch == 0 || opts.stride == 0 || opts.check_every == 0)
    throw std::invalid_argument("stochastic_projected_gradient_ascent: batch, stride and check_every must be >= 1");
  check_unit(u0.flat(), 1e-10, "stochastic_projected_gradient_ascent");

  const std::size_t n = prob.data.size();
  const std::size_t b = std::min(opts.batch, n);
  const std::size_t d = prob.data.dim();
  Rng rng(opts.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = n;

  Dataset batch(Matrix(b, d), Vector(b));
  Vector zb(b);
  Weights w(prob.spec), grad(prob.spec);
  NcfEvaluator full(prob);
  Vector v = u0.vector(), g;
  Trajectory tr;
  tr.nonsmooth = prob.spec.nonsmooth();
  tr.push(0.0, v);
  bool current = true;

  auto aligned = [&] {
    full.value_and_gradient(v, g);
    const double gn = norm2(g);
    return gn > 0.0 && kernels::dot(v, g) / gn >= opts.stop_alignment;
  };

  for (std::size_t it = 0; it < iters; ++it) {
    if (it % opts.check_every == 0 && aligned()) break;
    if (cursor >= n) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    const std::size_t m = std::min(b, n - cursor);
    if (batch.size() != m) {
      batch = Dataset(Matrix(m, d), Vector(m));
      zb.assign(m, 0.0);
    }
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t i = order[cursor + j];
      auto src = prob.data.x(i);
      std::copy(src.begin(), src.end(), batch.inputs.row(j).begin());
      batch.y[j] = prob.data.y[i];
      zb[j] = prob.z[i];
    }
    cursor += m;

    std::copy(v.begin(), v.end(), w.flat().begin());
    NetEvaluator net(prob.spec, batch);
    net.forward(w);
    net.backward(zb, grad);
    kernels::axpy(step, grad.flat(), v);
    const double c = 1.0 / norm2(v);
    scale_in_place(v, c);
    tr.scale_factors.push_back(c);
    current = false;
    if ((it + 1) % opts.stride == 0 || it + 1 == iters) {
      tr.push(static_cast<double>(it + 1), v);
      current = true;
    }
  }
  if (!current) tr.push(static_cast<double>(tr.scale_factors.size()), v);
  return tr;
}

Trajectory adaptive_gradient_ascent(const NcfProblem& prob, const Weights& u0, double base_step,
                                    std::span<const double> scale_factors, std::size_t iters,
                                    std::size_t stride) {
  check_compatible(prob.spec, u0);
  if (!(base_step > 0.0)) throw std::invalid_argument("adaptive_gradient_ascent: step must be > 0");
  if (stride == 0) throw std::invalid_argument("adaptive_gradient_ascent: stride must be >= 1");
  if (iters > 0 && scale_factors.size() + 1 < iters)
    throw std::invalid_argument("adaptive_gradient_ascent: need at least iters - 1 scale factors");

  const int order = prob.order();
  NcfEvaluator eval(prob);
  Vector u = u0.vector(), g;
  Trajectory tr;
  tr.nonsmooth = prob.spec.nonsmooth();
  tr.push(0.0, u);
  double prod = 1.0;  // c_0 ... c_{t-1}
  for (std::size_t it = 0; it < iters; ++it) {
    if (it > 0) prod *= scale_factors[it - 1];
    eval.value_and_gradient(u, g);
    kernels::axpy(base_step * std::pow(prod, order - 2), g, u);
    if ((it + 1) % stride == 0 || it + 1 == iters) tr.push(static_cast<double>(it + 1), u);
  }
  return tr;
}

}  // namespace ncfkkt
