#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "ncfkkt/flow.hpp"
#include "ncfkkt/harness.hpp"
#include "ncfkkt/kkt_factory.hpp"
#include "test_util.hpp"

using namespace ncfkkt;
using testutil::make_spec;

namespace {

Weights unit_weights(Rng& rng, const NetSpec& spec) {
  return Weights(spec, random_unit(rng, spec.parameter_count()));
}

// Scalar chain with L unit-width layers, one sample x = 1 and z = 1: every
// coordinate follows u' = u^(L-1) from a balanced start.
NcfProblem scalar_chain(int L) {
  NetSpec spec{std::vector<std::size_t>(static_cast<std::size_t>(L) + 1, 1), 1.0, 1};
  return NcfProblem(spec, Dataset(Matrix(1, 1, 1.0), Vector{1.0}), Vector{1.0});
}

// Draws unit directions until N > 0.
Weights positive_start(Rng& rng, const NcfProblem& prob) {
  for (;;) {
    Weights w = unit_weights(rng, prob.spec);
    if (ncf_value(prob, w) > 0.0) return w;
  }
}

}  // namespace

TEST_CASE("flow integrator config validation") {
  IntegratorConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.step = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.snapshot_stride = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.horizon = -1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  CHECK(termination_name(Termination::BlowUp) == "blow_up");
}

TEST_CASE("flow rk4 on a linear ODE and its convergence order") {
  // x' = -x, exact solution e^{-t}
  const VectorField f = [](std::span<const double> x, Vector& dx) {
    dx.assign(x.begin(), x.end());
    for (double& v : dx) v = -v;
  };
  IntegratorConfig cfg;
  cfg.horizon = 1.0;
  cfg.step = 0.1;
  const Trajectory tr = integrate_rk4(f, Vector{1.0}, cfg, 2);
  CHECK(tr.terminated_by == Termination::Horizon);
  CHECK(tr.times.front() == 0.0);
  CHECK(tr.states.front() == Vector{1.0});
  CHECK(tr.times.back() == doctest::Approx(1.0));
  CHECK(std::abs(tr.back()[0] - std::exp(-1.0)) < 1e-6);
  for (std::size_t j = 1; j < tr.size(); ++j) CHECK(tr.times[j] > tr.times[j - 1]);
  CHECK(tr.times.size() == tr.states.size());
}

TEST_CASE("flow rk4 step halving on a smooth NCF flow is fourth order") {
  Rng rng(4);
  const NetSpec spec = make_spec(3, 3, 2, 0.1, 2);
  const NcfProblem prob = testutil::gaussian_problem(rng, spec, 6);
  const Weights u0 = Weights(spec, scaled(unit_weights(rng, spec).flat(), 0.5));
  auto final_state = [&](double h) {
    IntegratorConfig cfg;
    cfg.step = h;
    cfg.horizon = 0.4;
    cfg.snapshot_stride = 1000000;
    return integrate_ncf_flow(prob, u0, cfg).back();
  };
  const Vector ref = final_state(0.1 / 8);
  const double e1 = max_abs_diff(final_state(0.1), ref);
  const double e2 = max_abs_diff(final_state(0.05), ref);
  CAPTURE(e1);
  CAPTURE(e2);
  CHECK(e2 > 0.0);
  CHECK(e1 / e2 >= 8.0);
}

TEST_CASE("flow ncf flow with zero z stays put") {
  Rng rng(2);
  const NetSpec spec = make_spec(3, 4, 3, 0.0, 2);
  NcfProblem prob = testutil::gaussian_problem(rng, spec, 5);
  std::fill(prob.z.begin(), prob.z.end(), 0.0);
  const Weights u0 = unit_weights(rng, spec);
  IntegratorConfig cfg;
  cfg.horizon = 0.5;
  cfg.step = 0.05;
  const Trajectory tr = integrate_ncf_flow(prob, u0, cfg);
  for (const Vector& s : tr.states) CHECK(s == u0.vector());
  CHECK(tr.terminated_by == Termination::Horizon);
}

TEST_CASE("flow ncf flow monotonicity properties") {
  Rng rng(6);
  for (int L : {2, 3})
    for (double alpha : {0.0, 0.1, 1.0}) {
      const NetSpec spec = make_spec(4, 4, L, alpha, 2);
      const NcfProblem prob = testutil::gaussian_problem(rng, spec, 10);
      const Weights u0 = positive_start(rng, prob);
      const int M = prob.order();
      IntegratorConfig cfg;
      cfg.step = 1e-3;
      cfg.horizon = 0.5;
      cfg.blowup_norm_cap = 50.0;
      const Trajectory tr = integrate_ncf_flow(prob, u0, cfg);
      REQUIRE(tr.size() > 3);
      double prev_n = ncf_value(prob, u0), prev_norm = 1.0, prev_tilde = prev_n;
      for (std::size_t j = 1; j < tr.size(); ++j) {
        const Weights w(spec, tr.states[j]);
        const double n = ncf_value(prob, w);
        const double norm = norm2(tr.states[j]);
        const double tilde = n / std::pow(norm, M);
        CHECK(n >= prev_n - 1e-9 * (1.0 + std::abs(n)));
        CHECK(norm >= prev_norm - 1e-12);
        CHECK(tilde >= prev_tilde - 1e-9 * (1.0 + std::abs(tilde)));
        // d||u||^2/dt = 2 M N
        const double dt = tr.times[j] - tr.times[j - 1];
        const double fd = (norm * norm - prev_norm * prev_norm) / dt;
        const double mid = M * (n + prev_n);
        if (norm < 3.0) CHECK(std::abs(fd - mid) <= 0.05 * std::abs(mid) + 1e-12);
        prev_n = n;
        prev_norm = norm;
        prev_tilde = tilde;
      }
    }
}

TEST_CASE("flow scalar chain matches the closed-form blow-up") {
  // L = 3: u' = u^2, u(t) = c / (1 - c t)
  const NcfProblem prob = scalar_chain(3);
  const double c = 0.5;
  IntegratorConfig cfg;
  cfg.step = 1e-3;
  cfg.horizon = 1.5;
  const Trajectory tr = integrate_ncf_flow(prob, Weights(prob.spec, {c, c, c}), cfg);
  for (std::size_t j = 0; j < tr.size(); j += 100) {
    const double expect = c / (1.0 - c * tr.times[j]);
    CHECK(tr.states[j][0] == doctest::Approx(expect).epsilon(1e-9));
    CHECK(tr.states[j][1] == tr.states[j][0]);
  }

  IntegratorConfig blow;
  blow.step = 1e-4;
  blow.horizon = 4.0;
  blow.step_shrink_near_blowup = true;
  const Trajectory bt = integrate_ncf_flow(prob, Weights(prob.spec, {c, c, c}), blow);
  CHECK(bt.terminated_by == Termination::BlowUp);
  CHECK(norm2(bt.back()) > blow.blowup_norm_cap);
  CHECK(bt.t_star_estimate == doctest::Approx(1.0 / c).epsilon(1e-3));
}

TEST_CASE("flow blow-up rate fits on the scalar oracles") {
  for (int L : {3, 4}) {
    const NcfProblem prob = scalar_chain(L);
    const double c = 1.0 / std::sqrt(static_cast<double>(L));
    IntegratorConfig cfg;
    cfg.step = 1e-3;
    cfg.horizon = 2.0 * std::pow(c, 2 - L) / (L - 2);
    cfg.step_shrink_near_blowup = true;
    const Trajectory tr =
        integrate_ncf_flow(prob, Weights(prob.spec, Vector(static_cast<std::size_t>(L), c)), cfg);
    REQUIRE(tr.terminated_by == Termination::BlowUp);
    const BlowupReport rep = fit_blowup_rate(tr, L);
    CAPTURE(L);
    CHECK(std::abs(rep.fitted_exponent - 1.0 / (L - 2)) <= 0.05);
    CHECK(rep.r_squared >= 0.99);
    CHECK(rep.samples >= 8);
  }
}

TEST_CASE("flow blow-up fit preconditions") {
  Trajectory tr;
  tr.push(0.0, {1.0});
  CHECK_THROWS_AS(fit_blowup_rate(tr, 3), std::invalid_argument);
  tr.terminated_by = Termination::BlowUp;
  tr.t_star_estimate = 1.0;
  tr.push(0.5, {100.0});
  CHECK_THROWS_AS(fit_blowup_rate(tr, 3), std::invalid_argument);  // one sample
  CHECK_THROWS_AS(fit_blowup_rate(tr, 2), std::invalid_argument);
}

TEST_CASE("flow converges to zero when the NCF pulls inward") {
  // Linear 2-layer chain with z < 0 from a balanced start: u' = -u.
  NetSpec spec{{1, 1, 1}, 1.0, 1};
  const NcfProblem prob(spec, Dataset(Matrix(1, 1, 1.0), Vector{1.0}), Vector{-1.0});
  IntegratorConfig cfg;
  cfg.step = 0.05;
  cfg.horizon = 100.0;
  cfg.zero_floor = 1e-3;
  cfg.zero_patience = 5;
  const Trajectory tr = integrate_ncf_flow(prob, Weights(spec, {0.5, 0.5}), cfg);
  CHECK(tr.terminated_by == Termination::ConvergedToZero);
  CHECK(norm2(tr.back()) < 1e-3);
}

TEST_CASE("flow training flow basics") {
  Rng rng(9);
  const NetSpec spec = make_spec(4, 5, 2, 0.0, 2);
  Dataset data = testutil::gaussian_dataset(rng, 12, 4);
  const Weights w0 = unit_weights(rng, spec);
  IntegratorConfig cfg;
  cfg.step = 1e-2;
  cfg.horizon = 2.0;

  SUBCASE("zero targets: loss and norm never increase") {
    std::fill(data.y.begin(), data.y.end(), 0.0);
    const Trajectory tr = integrate_training_flow(spec, w0, 1.0, data, LossKind::Square, cfg);
    double prev_loss = INFINITY, prev_norm = INFINITY;
    for (const Vector& s : tr.states) {
      const Weights w(spec, s);
      const double loss = total_loss(LossKind::Square, outputs(spec, w, data), data.y);
      CHECK(loss <= prev_loss + 1e-12);
      CHECK(norm2(s) <= prev_norm + 1e-12);
      prev_loss = loss;
      prev_norm = norm2(s);
    }
  }
  SUBCASE("starts at delta times the direction") {
    const Trajectory tr = integrate_training_flow(spec, w0, 0.3, data, LossKind::Square, cfg);
    CHECK(max_abs_diff(tr.states.front(), scaled(w0.flat(), 0.3)) == 0.0);
  }
  SUBCASE("preconditions") {
    CHECK_THROWS_AS(integrate_training_flow(spec, w0, 0.0, data, LossKind::Square, cfg),
                    std::invalid_argument);
    const Weights big(spec, scaled(w0.flat(), 2.0));
    CHECK_THROWS_AS(integrate_training_flow(spec, big, 0.1, data, LossKind::Square, cfg),
                    std::invalid_argument);
  }
}

TEST_CASE("flow escape time scales with delta^(2-M)") {
  // Squared-ReLU, two layers: M = 3, so halving delta doubles the time to
  // reach a fixed norm ratio.
  Rng rng(1);
  const NetSpec spec = make_spec(5, 6, 2, 0.0, 2);
  Dataset data = testutil::gaussian_dataset(rng, 20, 5);
  const NcfProblem prob(spec, data, ncf_target(LossKind::Square, data.y));
  const Weights w0 = positive_start(rng, prob);
  auto time_to_ratio = [&](double delta) {
    IntegratorConfig cfg;
    cfg.step = 1e-3 / delta;
    cfg.horizon = 50.0 / delta;
    const Trajectory tr = integrate_training_flow(spec, w0, delta, data, LossKind::Square, cfg);
    for (std::size_t j = 1; j < tr.size(); ++j) {
      const double a = norm2(tr.states[j - 1]) / delta, b = norm2(tr.states[j]) / delta;
      if (b >= 2.0)
        return tr.times[j - 1] + (2.0 - a) / (b - a) * (tr.times[j] - tr.times[j - 1]);
    }
    return -1.0;
  };
  const double t1 = time_to_ratio(1e-3), t2 = time_to_ratio(5e-4);
  REQUIRE(t1 > 0.0);
  REQUIRE(t2 > 0.0);
  CHECK(t2 / t1 == doctest::Approx(2.0).epsilon(0.02));
}

TEST_CASE("flow rescaling") {
  Trajectory tr;
  tr.push(0.0, {0.1, -0.2});
  tr.push(2.0, {0.3, 0.4});
  const Trajectory s = rescale_trajectory(tr, 0.1, 4);
  CHECK(s.states.front()[0] == doctest::Approx(1.0));
  CHECK(s.states.front()[1] == doctest::Approx(-2.0));
  CHECK(s.times[1] == doctest::Approx(2.0 * 0.01));
  const Trajectory same = rescale_trajectory(tr, 1.0, 4);
  CHECK(same.states == tr.states);
  CHECK(same.times == tr.times);
  CHECK_THROWS_AS(rescale_trajectory(tr, 0.0, 3), std::invalid_argument);
}

TEST_CASE("flow rescaled training approaches the NCF flow as delta shrinks") {
  Rng rng(3);
  const NetSpec spec = make_spec(4, 6, 2, 0.0, 2);
  const Dataset data = testutil::gaussian_dataset(rng, 15, 4);
  const NcfProblem prob(spec, data, ncf_target(LossKind::Square, data.y));
  const Weights w0 = positive_start(rng, prob);
  const int M = prob.order();
  IntegratorConfig ncfg;
  ncfg.step = 1e-3;
  ncfg.horizon = 0.2;
  const Trajectory u = integrate_ncf_flow(prob, w0, ncfg);
  double prev = INFINITY;
  for (double delta : {0.2, 0.1, 0.05}) {
    IntegratorConfig cfg;
    const double scale = std::pow(delta, M - 2);
    cfg.step = ncfg.step / scale;
    cfg.horizon = ncfg.horizon / scale;
    cfg.blowup_norm_cap = 1e300;
    const Trajectory s =
        rescale_trajectory(integrate_training_flow(spec, w0, delta, data, LossKind::Square, cfg),
                           delta, M);
    const std::size_t n = std::min(s.size(), u.size());
    REQUIRE(n + 1 >= u.size());
    double gap = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      CHECK(s.times[j] == doctest::Approx(u.times[j]).epsilon(1e-9));
      gap = std::max(gap, max_abs_diff(s.states[j], u.states[j]));
    }
    CHECK(gap < prev);
    prev = gap;
  }
}

TEST_CASE("flow xi residual") {
  Rng rng(5);
  const NetSpec spec = make_spec(3, 4, 3, 0.1, 2);
  const Dataset data = testutil::gaussian_dataset(rng, 7, 3);
  const Vector zero = xi_residual(spec, Weights(spec), data, LossKind::Square);
  for (double v : zero) CHECK(v == 0.0);
  const Weights w0 = unit_weights(rng, spec);
  const Vector xi = xi_residual(spec, w0, data, LossKind::Square);
  const Vector out = outputs(spec, w0, data);
  for (std::size_t i = 0; i < xi.size(); ++i) CHECK(xi[i] == doctest::Approx(out[i]).epsilon(1e-14));
  const int M = homogeneity_order(spec);
  const double base = norm2(xi);
  for (double delta : {0.5, 0.1}) {
    const Weights w(spec, scaled(w0.flat(), delta));
    CHECK(norm2(xi_residual(spec, w, data, LossKind::Square)) ==
          doctest::Approx(std::pow(delta, M) * base).epsilon(1e-10));
  }
  for (double v : xi_residual(spec, Weights(spec), data, LossKind::Logistic)) CHECK(v == 0.0);
}

TEST_CASE("flow gradient descent") {
  Rng rng(7);
  const NetSpec spec = make_spec(3, 4, 2, 0.0, 2);
  const Dataset data = testutil::gaussian_dataset(rng, 8, 3);
  const Weights w0 = unit_weights(rng, spec);
  const Trajectory none = gradient_descent(spec, w0, 0.2, 0.1, 0, data, LossKind::Square);
  REQUIRE(none.size() == 1);
  CHECK(none.back() == scaled(w0.flat(), 0.2));

  const Trajectory one = gradient_descent(spec, w0, 0.2, 0.1, 1, data, LossKind::Square);
  Weights w(spec, scaled(w0.flat(), 0.2));
  const Vector out = outputs(spec, w, data);
  Vector coeffs(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) coeffs[i] = data.y[i] - out[i];
  const Weights g = gradient(spec, w, data, coeffs);
  Vector expect = w.vector();
  for (std::size_t j = 0; j < expect.size(); ++j) expect[j] += 0.1 * g.flat()[j];
  CHECK(max_abs_diff(one.back(), expect) <= 1e-15);

  const Trajectory strided = gradient_descent(spec, w0, 0.2, 0.01, 25, data, LossKind::Square, 10);
  CHECK(strided.times == Vector{0.0, 10.0, 20.0, 25.0});

  const NetSpec leaky = make_spec(3, 4, 3, 0.5, 2);
  const Trajectory blow = gradient_descent(leaky, unit_weights(rng, leaky), 1e3, 1.0, 50, data,
                                           LossKind::Square);
  CHECK(blow.terminated_by == Termination::BlowUp);
}

TEST_CASE("flow projected gradient ascent") {
  Rng rng(8);
  const NetSpec spec = make_spec(5, 5, 2, 0.0, 2);
  const NcfProblem prob = testutil::gaussian_problem(rng, spec, 20);
  const Weights u0 = positive_start(rng, prob);
  const Trajectory tr = projected_gradient_ascent(prob, u0, 0.05, 200);
  CHECK(tr.size() == 201);
  CHECK(tr.scale_factors.size() == 200);
  for (const Vector& s : tr.states) CHECK(std::abs(norm2(s) - 1.0) <= 1e-12);
  for (double c : tr.scale_factors) CHECK(c > 0.0);
  CHECK_THROWS_AS(projected_gradient_ascent(prob, Weights(spec, scaled(u0.flat(), 2.0)), 0.1, 3),
                  std::invalid_argument);

  PgaOptions stop;
  stop.stop_alignment = 0.5;
  const Trajectory early = projected_gradient_ascent(prob, u0, 0.05, 100000, stop);
  CHECK(kkt_report(prob, Weights(spec, early.back())).alignment >= 0.5);
  CHECK(early.scale_factors.size() < 100000);
}

TEST_CASE("flow projected ascent is stationary at a constructed KKT point") {
  const NetSpec spec = make_spec(6, 5, 3, 0.0, 2);
  const NcfProblem prob = random_ncf_problem(spec, 40, 3);
  const auto [b1, rep] = solve_small_problem(SmallProblem::from(prob), 3);
  const Weights w = assemble_weights(construct_rank_one(spec, b1));
  const Trajectory tr = projected_gradient_ascent(prob, w, 0.1, 5);
  for (std::size_t j = 1; j < tr.size(); ++j)
  {
    double dot = 0.0;
    for (std::size_t i = 0; i < tr.states[j].size(); ++i) dot += tr.states[j][i] * tr.states[j - 1][i];
    CHECK(dot / (norm2(tr.states[j]) * norm2(tr.states[j - 1])) >= 1.0 - 1e-12);
  }
}

TEST_CASE("flow projected ascent stops on a vanishing gradient") {
  const NetSpec spec = make_spec(3, 2, 2, 0.0, 2);
  Rng rng(1);
  const NcfProblem prob = testutil::gaussian_problem(rng, spec, 4);
  Weights w(spec);
  w.layer(1)(0, 0) = 1.0;
  const Trajectory tr = projected_gradient_ascent(prob, w, 0.1, 10);
  CHECK(tr.terminated_by == Termination::ConvergedToZero);
  CHECK(tr.size() == 1);
}

TEST_CASE("flow adaptive ascent and the projected ascent identity") {
  Rng rng(12);
  const NetSpec spec = make_spec(5, 5, 2, 0.0, 2);
  const NcfProblem prob = testutil::gaussian_problem(rng, spec, 10);
  const Weights u0 = positive_start(rng, prob);
  const double eta = 0.01;

  SUBCASE("one step is plain ascent") {
    const Trajectory a = adaptive_gradient_ascent(prob, u0, eta, Vector{}, 1);
    const Weights g = ncf_gradient(prob, u0);
    Vector expect = u0.vector();
    for (std::size_t j = 0; j < expect.size(); ++j) expect[j] += eta * g.flat()[j];
    CHECK(max_abs_diff(a.back(), expect) <= 1e-16);
  }
  SUBCASE("unit factors reduce to plain ascent") {
    const Trajectory a = adaptive_gradient_ascent(prob, u0, eta, Vector(20, 1.0), 20);
    Vector u = u0.vector();
    for (int t = 0; t < 20; ++t) {
      const Weights g = ncf_gradient(prob, Weights(spec, u));
      for (std::size_t j = 0; j < u.size(); ++j) u[j] += eta * g.flat()[j];
    }
    CHECK(max_abs_diff(a.back(), u) <= 1e-14 * std::max(1.0, norm2(u)));
  }
  SUBCASE("v_T = (prod c_t) u_T") {
    for (std::size_t steps : {50u, 100u}) {
      const Trajectory v = projected_gradient_ascent(prob, u0, eta, steps);
      const Trajectory u = adaptive_gradient_ascent(prob, u0, eta, v.scale_factors, steps);
      REQUIRE(u.size() == v.size());
      double prod = 1.0, worst = 0.0;
      for (std::size_t t = 0; t < v.size(); ++t) {
        if (t > 0) prod *= v.scale_factors[t - 1];
        const Vector pu = scaled(u.states[t], prod);
        worst = std::max(worst, max_abs_diff(pu, v.states[t]) / norm2(v.states[t]));
      }
      CAPTURE(steps);
      CHECK(worst <= (steps == 50 ? 1e-12 : 1e-10));
    }
  }
  CHECK_THROWS_AS(adaptive_gradient_ascent(prob, u0, eta, Vector(2, 1.0), 10),
                  std::invalid_argument);
}

TEST_CASE("flow stochastic projected ascent") {
  Rng rng(13);
  const NetSpec spec = make_spec(4, 4, 2, 0.0, 1);
  const NcfProblem prob = testutil::gaussian_problem(rng, spec, 25);
  const Weights u0 = positive_start(rng, prob);
  StochasticPgaOptions opts;
  opts.seed = 4;
  const Trajectory a = stochastic_projected_gradient_ascent(prob, u0, 0.02, 60, opts);
  const Trajectory b = stochastic_projected_gradient_ascent(prob, u0, 0.02, 60, opts);
  CHECK(a.states == b.states);
  CHECK(a.scale_factors.size() == 60);
  for (const Vector& s : a.states) CHECK(std::abs(norm2(s) - 1.0) <= 1e-12);
  opts.seed = 5;
  const Trajectory c = stochastic_projected_gradient_ascent(prob, u0, 0.02, 60, opts);
  CHECK(c.back() != a.back());

  // a full batch reproduces the deterministic method
  StochasticPgaOptions full;
  full.batch = 25;
  full.check_every = 1000;
  const Trajectory s = stochastic_projected_gradient_ascent(prob, u0, 0.02, 30, full);
  const Trajectory d = projected_gradient_ascent(prob, u0, 0.02, 30);
  CHECK(max_abs_diff(s.back(), d.back()) <= 1e-12);
}
