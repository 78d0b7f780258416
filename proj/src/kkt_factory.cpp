#include "ncfkkt/kkt_factory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "ncfkkt/kernels.hpp"
#include "ncfkkt/rng.hpp"

namespace ncfkkt {

long long p_hat(int L, int p) {
  long long s = 0, pw = 1;
  for (int l = 0; l < L; ++l) {
    s += pw;
    pw *= p;
  }
  return s;
}

double small_problem_radius(int L, int p) {
  if (L < 2 || p < 1) throw std::invalid_argument("small_problem_radius: need L >= 2, p >= 1");
  if (p == 1) return 1.0 / std::sqrt(static_cast<double>(L));
  return std::sqrt(std::pow(static_cast<double>(p), L - 1) / static_cast<double>(p_hat(L, p)));
}

SmallProblem SmallProblem::from(const NcfProblem& prob) {
  SmallProblem sp;
  sp.data = prob.data;
  sp.z = prob.z;
  sp.alpha = prob.spec.alpha;
  sp.p = prob.spec.p;
  sp.L = static_cast<int>(prob.spec.depth());
  sp.radius_sq = small_problem_radius(sp.L, sp.p);
  return sp;
}

void SmallProblem::validate() const {
  if (!(radius_sq > 0.0)) throw std::invalid_argument("SmallProblem: radius_sq must be > 0");
  if (z.size() != data.size()) throw std::invalid_argument("SmallProblem: z length mismatch");
  if (L < 2 || p < 1) throw std::invalid_argument("SmallProblem: need L >= 2, p >= 1");
}

double small_problem_value(const SmallProblem& sp, std::span<const double> u) {
  double g = 0.0;
  for (std::size_t i = 0; i < sp.data.size(); ++i)
    g += sp.z[i] * iterated_activation(kernels::dot(sp.data.x(i), u), sp.alpha, sp.p, sp.L - 1);
  return g;
}

double small_problem_value_and_gradient(const SmallProblem& sp, std::span<const double> u,
                                        Vector& grad) {
  grad.assign(u.size(), 0.0);
  double g = 0.0;
  for (std::size_t i = 0; i < sp.data.size(); ++i) {
    const double t = kernels::dot(sp.data.x(i), u);
    g += sp.z[i] * iterated_activation(t, sp.alpha, sp.p, sp.L - 1);
    const double d = sp.z[i] * iterated_activation_derivative(t, sp.alpha, sp.p, sp.L - 1);
    kernels::axpy(d, sp.data.x(i), grad);
  }
  return g;
}

SmallSolveReport small_problem_report(const SmallProblem& sp, std::span<const double> u) {
  Vector grad;
  SmallSolveReport r;
  r.value = small_problem_value_and_gradient(sp, u, grad);
  const Vector unit = normalized(u);
  const double radial = kernels::dot(unit, grad);
  Vector tangential = grad;
  kernels::axpy(-radial, unit, tangential);
  r.residual = norm2(tangential);
  r.gradient_norm = norm2(grad);
  r.alignment = r.gradient_norm > 0.0 ? radial / r.gradient_norm : 0.0;
  return r;
}

namespace {

double tangential_sine(std::span<const double> v, const Vector& grad, Vector& tangential) {
  const double gn = norm2(grad);
  tangential = grad;
  kernels::axpy(-kernels::dot(v, grad), v, tangential);
  return gn > 0.0 ? norm2(tangential) / gn : 0.0;
}

}  // namespace

std::pair<Vector, SmallSolveReport> solve_small_problem(const SmallProblem& sp,
                                                        std::uint64_t seed,
                                                        const SmallSolveConfig& cfg) {
  sp.validate();
  const double radius = std::sqrt(sp.radius_sq);
  const double ulp = std::numeric_limits<double>::epsilon();
  Rng rng(seed);
  Vector grad, tgrad, tangential, ttang, trial(sp.data.dim());

  // On piecewise-polynomial objectives ascent can stall next to the exact
  // point of a smooth piece; the fixed-point map grad / ||grad|| lands on it.
  auto polish = [&](Vector& v, double& g, Vector& grad_v) {
    Vector w, gw = grad_v, t;
    for (int k = 0; k < 50; ++k) {
      const double gn = norm2(gw);
      if (!(gn > 0.0)) return false;
      w = scaled(gw, 1.0 / gn);
      const double wg = small_problem_value_and_gradient(sp, w, gw);
      if (wg > 0.0 && kernels::dot(w, gw) > 0.0 && tangential_sine(w, gw, t) <= cfg.sine_tol) {
        v = w;
        g = wg;
        grad_v = gw;
        return true;
      }
    }
    return false;
  };

  for (int attempt = 1; attempt <= cfg.max_attempts; ++attempt) {
    Vector v = random_unit(rng, sp.data.dim());
    double g = small_problem_value_and_gradient(sp, v, grad);
    double sine = tangential_sine(v, grad, tangential);
    double step = 0.1;  // arc length along the unit tangential direction
    bool converged = false;
    std::size_t next_polish = 0;
    std::size_t it = 0;
    for (; it < cfg.max_iters; ++it) {
      if (norm2(grad) == 0.0) break;
      if (kernels::dot(v, grad) > 0.0 && sine <= cfg.sine_tol) {
        converged = true;
        break;
      }
      if (it >= next_polish && sine < 1e-6 && g > 0.0) {
        next_polish = it + 1000;
        if ((converged = polish(v, g, grad))) break;
      }
      const double tn = norm2(tangential);
      // Backtracking on the value; once value changes are at roundoff level a
      // step that shrinks the tangential gradient is taken instead.
      bool accepted = false;
      for (int half = 0; half < 80 && !accepted; ++half, step *= 0.5) {
        trial = v;
        kernels::axpy(step / tn, tangential, trial);
        scale_in_place(trial, 1.0 / norm2(trial));
        const double tg = small_problem_value_and_gradient(sp, trial, tgrad);
        const double tsine = tangential_sine(trial, tgrad, ttang);
        if (tg > g || (tg >= g - 8.0 * ulp * std::abs(g) && tsine < sine)) {
          v.swap(trial);
          grad.swap(tgrad);
          tangential.swap(ttang);
          g = tg;
          sine = tsine;
          accepted = true;
        }
      }
      if (!accepted) break;
      step = std::min(step * 4.0, 1.0);  // undo the last halving and grow
    }
    if (!converged && g > 0.0) converged = polish(v, g, grad);
    if (!converged || !(g > 0.0)) continue;
    Vector u = scaled(v, radius);
    SmallSolveReport rep = small_problem_report(sp, u);
    rep.attempts = attempt;
    rep.iterations = it;
    return {std::move(u), rep};
  }
  throw std::runtime_error("no positive-value KKT point found");
}

namespace {

double fourth_root(double x) { return std::sqrt(std::sqrt(x)); }

std::vector<std::size_t> default_support(std::size_t k, int p) {
  std::vector<std::size_t> s;
  if (p >= 2) {
    s.push_back(0);
  } else {
    for (std::size_t i = 0; i < k; ++i) s.push_back(i);
  }
  return s;
}

Vector link(const Vector& a_prev, double sign, bool absolute, double divisor) {
  Vector b(a_prev.size());
  for (std::size_t i = 0; i < b.size(); ++i)
    b[i] = sign * (absolute ? std::abs(a_prev[i]) : a_prev[i]) / divisor;
  return b;
}

}  // namespace

RankOneKKT construct_rank_one(const NetSpec& spec, const Vector& b1, const RankOneOptions& opts) {
  spec.validate();
  const int L = static_cast<int>(spec.depth());
  const int p = spec.p;
  const bool linear_alpha = spec.alpha == 1.0;
  if (b1.size() != spec.input_dim())
    throw DimensionError(1, "b_1 has " + std::to_string(b1.size()) + " entries, expected " +
                                std::to_string(spec.input_dim()));
  const double r = small_problem_radius(L, p);
  const double b1_sq = kernels::nrm2_sq(b1);
  if (std::abs(b1_sq - r) > 1e-10)
    throw std::invalid_argument("construct_rank_one: ||b_1||^2 = " + std::to_string(b1_sq) +
                                ", expected " + std::to_string(r));

  RankOneKKT k;
  k.spec = spec;
  k.p_hat = p_hat(L, p);
  k.q = opts.q.empty() ? std::vector<int>(L - 1, 1) : opts.q;
  if (k.q.size() != static_cast<std::size_t>(L - 1))
    throw std::invalid_argument("construct_rank_one: q must have L-1 entries");
  for (std::size_t j = 0; j < k.q.size(); ++j) {
    if (k.q[j] != 1 && k.q[j] != -1) throw std::invalid_argument("construct_rank_one: q must be +-1");
    if (!linear_alpha && j + 1 < k.q.size() && k.q[j] != 1)
      throw std::invalid_argument(
          "construct_rank_one: negative link signs need alpha = 1 (only the output sign is free)");
  }
  if (!opts.supports.empty() && opts.supports.size() != static_cast<std::size_t>(L - 1))
    throw std::invalid_argument("construct_rank_one: supports must have L-1 entries");
  if (!opts.entry_signs.empty()) {
    if (opts.entry_signs.size() != static_cast<std::size_t>(L - 1))
      throw std::invalid_argument("construct_rank_one: entry_signs must have L-1 entries");
    if (!linear_alpha)
      for (const auto& s : opts.entry_signs)
        for (int x : s)
          if (x < 0)
            throw std::invalid_argument(
                "construct_rank_one: negative entries of a_l require alpha = 1");
  }

  const double pd = static_cast<double>(p);
  const double ph = static_cast<double>(k.p_hat);
  const double link_div = fourth_root(pd);
  const bool absolute = linear_alpha && p % 2 == 0;

  for (int l = 1; l <= L - 1; ++l) {
    const std::size_t kl = spec.widths[l];
    std::vector<std::size_t> support =
        opts.supports.empty() ? default_support(kl, p) : opts.supports[l - 1];
    if (support.empty()) throw std::invalid_argument("construct_rank_one: empty support");
    for (std::size_t i : support)
      if (i >= kl) throw DimensionError(l, "support index out of range");
    const double norm_a = fourth_root(std::pow(pd, L - l) / ph);
    const double entry = norm_a / std::sqrt(static_cast<double>(support.size()));
    Vector a(kl, 0.0);
    for (std::size_t s = 0; s < support.size(); ++s) {
      int sign = 1;
      if (!opts.entry_signs.empty()) {
        const auto& es = opts.entry_signs[l - 1];
        if (es.size() != support.size())
          throw std::invalid_argument("construct_rank_one: entry_signs must match supports");
        sign = es[s] < 0 ? -1 : 1;
      }
      a[support[s]] = sign * entry;
    }
    k.a.push_back(std::move(a));
  }

  k.b.push_back(b1);
  for (int l = 2; l <= L - 1; ++l)
    k.b.push_back(link(k.a[l - 2], k.q[l - 2], absolute, link_div));
  k.w_bar = link(k.a[L - 2], k.q.back(), absolute, fourth_root(pd * ph));
  return k;
}

Weights assemble_weights(const RankOneKKT& k) {
  std::vector<Matrix> layers;
  for (std::size_t l = 0; l < k.a.size(); ++l) layers.push_back(Matrix::outer(k.a[l], k.b[l]));
  Matrix out(1, k.w_bar.size());
  std::copy(k.w_bar.begin(), k.w_bar.end(), out.data.begin());
  layers.push_back(std::move(out));
  Weights w = Weights::from_layers(layers);
  check_compatible(k.spec, w);
  return w;
}

BalanceReport check_balance(const Weights& w, int p, bool full_matrix) {
  BalanceReport rep;
  for (std::size_t l = 0; l + 1 < w.depth(); ++l) {
    MatrixView A = w.layer(l), B = w.layer(l + 1);
    double dev = 0.0;
    if (full_matrix) {
      const Matrix lhs = multiply(A, view(transpose(A)));
      const Matrix rhs = multiply(view(transpose(B)), B);
      dev = max_abs_diff(lhs.data, rhs.data);
    } else {
      for (std::size_t i = 0; i < A.rows; ++i) {
        const double row = kernels::nrm2_sq(A.row(i));
        double col = 0.0;
        for (std::size_t r = 0; r < B.rows; ++r) col += B(r, i) * B(r, i);
        dev = std::max(dev, std::abs(row - p * col));
      }
    }
    rep.per_layer.push_back(dev);
    rep.max_deviation = std::max(rep.max_deviation, dev);
  }
  return rep;
}

bool TheoremVerdict::all_passed() const {
  return std::all_of(items.begin(), items.end(), [](const VerdictItem& i) { return i.passed; });
}

const VerdictItem* TheoremVerdict::find(const std::string& name) const {
  for (const VerdictItem& i : items)
    if (i.name == name) return &i;
  return nullptr;
}

TheoremVerdict verify_theorem_conditions(const RankOneKKT& k, const NcfProblem& prob,
                                         const VerifyTolerances& tol) {
  const NetSpec& spec = k.spec;
  const int L = static_cast<int>(spec.depth());
  const int p = spec.p;
  const double pd = static_cast<double>(p);
  const double ph = static_cast<double>(k.p_hat);
  const bool linear_alpha = spec.alpha == 1.0;
  TheoremVerdict v;
  auto add = [&](std::string name, double dev, double t) {
    v.items.push_back({std::move(name), dev <= t, dev, t});
  };

  add("p_hat", std::abs(ph - static_cast<double>(p_hat(L, p))), 0.0);
  for (int l = 1; l <= L - 1; ++l) {
    const double na = norm2(k.a[l - 1]);
    const std::string s = std::to_string(l);
    add("norm_a_" + s, std::abs(na * na * na * na - std::pow(pd, L - l) / ph), tol.structure);
    add("norm_b_" + s, std::abs(norm2(k.b[l - 1]) - na), tol.structure);
  }
  const double nw = norm2(k.w_bar);
  add("norm_w_bar", std::abs(nw * nw - 1.0 / ph), tol.structure);

  const bool absolute = linear_alpha && p % 2 == 0;
  auto link_dev = [&](const Vector& target, const Vector& a_prev, int q, double div) {
    double d = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
      const double src = absolute ? std::abs(a_prev[i]) : a_prev[i];
      d = std::max(d, std::abs(target[i] - q * src / div));
    }
    return d;
  };
  for (int l = 2; l <= L - 1; ++l)
    add("link_b_" + std::to_string(l),
        link_dev(k.b[l - 1], k.a[l - 2], k.q[l - 2], std::sqrt(std::sqrt(pd))), tol.structure);
  add("link_w_bar", link_dev(k.w_bar, k.a[L - 2], k.q.back(), std::sqrt(std::sqrt(pd * ph))),
      tol.structure);

  if (p >= 2) {
    for (int l = 1; l <= L - 1; ++l) {
      const Vector& a = k.a[l - 1];
      const double scale = norm2(a);
      double lo = INFINITY, hi = 0.0;
      for (double x : a) {
        const double m = linear_alpha ? std::abs(x) : x;
        if (std::abs(x) > 1e-14 * scale) {
          lo = std::min(lo, m);
          hi = std::max(hi, m);
        }
      }
      add("identical_entries_a_" + std::to_string(l), hi - lo, tol.structure);
    }
  }
  if (!linear_alpha) {
    double worst = 0.0;
    for (const Vector& a : k.a)
      for (double x : a) worst = std::max(worst, -x);
    for (std::size_t l = 1; l < k.b.size(); ++l)
      for (double x : k.b[l]) worst = std::max(worst, -x);
    add("nonnegative_factors", worst, 0.0);
  }

  SmallProblem sp = SmallProblem::from(prob);
  add("small_radius", std::abs(kernels::nrm2_sq(k.b[0]) - sp.radius_sq), 1e-10);
  v.small = small_problem_report(sp, k.b[0]);
  // Sine of the angle between b_1 and grad G(b_1).
  add("small_kkt_residual",
      v.small.gradient_norm > 0.0 ? v.small.residual / v.small.gradient_norm : 1.0,
      tol.small_kkt);
  add("small_value_nonzero", v.small.value != 0.0 ? 0.0 : 1.0, 0.0);

  const Weights w = assemble_weights(k);
  add("unit_sphere", std::abs(kernels::nrm2_sq(w.flat()) - 1.0), tol.structure);
  v.balance = check_balance(w, p, linear_alpha && p == 1);
  add("balance", v.balance.max_deviation, tol.balance);
  v.full = kkt_report(prob, w, tol.full_kkt);
  add("full_kkt_residual", v.full.residual, tol.full_kkt);
  return v;
}

}  // namespace ncfkkt
