#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "ncfkkt/harness.hpp"
#include "ncfkkt/kernels.hpp"
#include "ncfkkt/kkt_factory.hpp"
#include "ncfkkt/metrics.hpp"
#include "test_util.hpp"

using namespace ncfkkt;
using testutil::make_spec;

namespace {

NcfProblem instance(const NetSpec& spec, std::uint64_t seed) {
  const bool cone = spec.nonsmooth();
  return random_ncf_problem(spec, 100, seed,
                            cone ? InputDistribution::HalfNormal : InputDistribution::Gaussian,
                            cone ? LabelSource::HalfNormal : LabelSource::Gaussian);
}

Vector on_radius(Rng& rng, std::size_t d, double radius_sq) {
  return scaled(random_unit(rng, d), std::sqrt(radius_sq));
}

}  // namespace

TEST_CASE("kkt factory radii and p_hat") {
  CHECK(small_problem_radius(3, 1) == doctest::Approx(1.0 / std::sqrt(3.0)));
  CHECK(small_problem_radius(3, 2) == doctest::Approx(std::sqrt(4.0 / 7.0)));
  CHECK(small_problem_radius(3, 2) == doctest::Approx(0.75593).epsilon(1e-5));
  CHECK(small_problem_radius(2, 1) == doctest::Approx(1.0 / std::sqrt(2.0)));
  CHECK(p_hat(3, 2) == 7);
  CHECK(p_hat(4, 3) == 40);
  // p = 1: p_hat = L and the general formula agrees with 1/sqrt(L)
  for (int L = 2; L <= 6; ++L) {
    CHECK(p_hat(L, 1) == L);
    CHECK(small_problem_radius(L, 1) ==
          doctest::Approx(std::sqrt(1.0 / static_cast<double>(p_hat(L, 1)))));
  }
}

TEST_CASE("kkt factory construction norms") {
  Rng rng(1);
  SUBCASE("p = 1, L = 3") {
    const NetSpec spec = make_spec(5, 4, 3, 0.0, 1);
    const RankOneKKT k = construct_rank_one(spec, on_radius(rng, 5, small_problem_radius(3, 1)));
    CHECK(k.p_hat == 3);
    for (const Vector& a : k.a)
      CHECK(kernels::nrm2_sq(a) == doctest::Approx(1.0 / std::sqrt(3.0)).epsilon(1e-12));
    CHECK(kernels::nrm2_sq(k.w_bar) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    for (std::size_t i = 0; i < k.w_bar.size(); ++i)
      CHECK(k.w_bar[i] == doctest::Approx(k.q.back() * k.a[1][i] / std::pow(3.0, 0.25)));
  }
  SUBCASE("p = 2, L = 3") {
    const NetSpec spec = make_spec(5, 4, 3, 0.0, 2);
    const RankOneKKT k = construct_rank_one(spec, on_radius(rng, 5, small_problem_radius(3, 2)));
    CHECK(k.p_hat == 7);
    CHECK(std::pow(norm2(k.a[0]), 4) == doctest::Approx(4.0 / 7.0).epsilon(1e-12));
    CHECK(std::pow(norm2(k.a[1]), 4) == doctest::Approx(2.0 / 7.0).epsilon(1e-12));
    CHECK(kernels::nrm2_sq(k.w_bar) == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
    for (std::size_t i = 0; i < k.w_bar.size(); ++i)
      CHECK(k.w_bar[i] == doctest::Approx(k.q.back() * k.a[1][i] / std::pow(14.0, 0.25)));
  }
}

TEST_CASE("kkt factory construction invariants across cases") {
  Rng rng(2);
  for (int L : {2, 3, 4})
    for (int p : {1, 2, 3})
      for (double alpha : {0.0, 0.1, 1.0}) {
        const NetSpec spec = make_spec(4, 5, L, alpha, p);
        const RankOneKKT k =
            construct_rank_one(spec, on_radius(rng, 4, small_problem_radius(L, p)));
        const double ph = static_cast<double>(k.p_hat);
        for (int l = 1; l < L; ++l) {
          const double na = norm2(k.a[l - 1]);
          CHECK(na == doctest::Approx(norm2(k.b[l - 1])).epsilon(1e-12));
          CHECK(std::pow(na, 4) == doctest::Approx(std::pow(p, L - l) / ph).epsilon(1e-12));
        }
        // |a_l| = p^(1/4) |b_{l+1}| and |a_{L-1}| = (p p_hat)^(1/4) |w_bar|
        for (int l = 1; l + 1 < L; ++l)
          for (std::size_t i = 0; i < k.a[l - 1].size(); ++i)
            CHECK(std::abs(k.a[l - 1][i]) ==
                  doctest::Approx(std::pow(p, 0.25) * std::abs(k.b[l][i])).epsilon(1e-12));
        for (std::size_t i = 0; i < k.w_bar.size(); ++i)
          CHECK(std::abs(k.a[L - 2][i]) ==
                doctest::Approx(std::pow(p * ph, 0.25) * std::abs(k.w_bar[i])).epsilon(1e-12));

        const Weights w = assemble_weights(k);
        CHECK(kernels::nrm2_sq(w.flat()) == doctest::Approx(1.0).epsilon(1e-12));
        const std::vector<Matrix> layers = w.to_layers();
        for (int l = 0; l + 1 < L; ++l) {
          CHECK(kappa(std::vector<Matrix>{layers[l]}) <= 1e-14);
          CHECK(frobenius(view(layers[l])) ==
                doctest::Approx(norm2(k.a[l]) * norm2(k.b[l])).epsilon(1e-12));
          const RankOneFactors f = factor_rank_one(view(layers[l]));
          for (std::size_t i = 0; i < f.a.size(); ++i)
            CHECK(std::abs(f.a[i]) == doctest::Approx(std::abs(k.a[l][i])).epsilon(1e-9));
          for (std::size_t i = 0; i < f.b.size(); ++i)
            CHECK(std::abs(f.b[i]) == doctest::Approx(std::abs(k.b[l][i])).epsilon(1e-9));
        }
        CHECK(check_balance(w, p, alpha == 1.0 && p == 1).max_deviation <= 1e-12);
      }
}

TEST_CASE("kkt factory rejects bad inputs") {
  const NetSpec spec = make_spec(3, 3, 3, 0.0, 2);
  CHECK_THROWS_AS(construct_rank_one(spec, Vector{1.0, 0.0, 0.0}), std::invalid_argument);
  Rng rng(3);
  const Vector b1 = on_radius(rng, 3, small_problem_radius(3, 2));
  RankOneOptions neg;
  neg.entry_signs = {{-1}, {1}};
  CHECK_THROWS_AS(construct_rank_one(spec, b1, neg), std::invalid_argument);
  RankOneOptions flip;
  flip.q = {-1, 1};
  CHECK_THROWS_AS(construct_rank_one(spec, b1, flip), std::invalid_argument);
  flip.q = {1, -1};  // output sign is free
  CHECK_NOTHROW(construct_rank_one(spec, b1, flip));
}

TEST_CASE("kkt factory small problem solver") {
  SUBCASE("linear chain has the closed-form maximizer") {
    const NetSpec spec = make_spec(6, 4, 3, 1.0, 1);
    const NcfProblem prob = random_ncf_problem(spec, 40, 5);
    const SmallProblem sp = SmallProblem::from(prob);
    CHECK(sp.radius_sq == doctest::Approx(1.0 / std::sqrt(3.0)));
    const auto [u, rep] = solve_small_problem(sp, 9);
    Vector xy(6, 0.0);
    for (std::size_t i = 0; i < 40; ++i)
      for (std::size_t j = 0; j < 6; ++j) xy[j] += prob.data.inputs(i, j) * prob.z[i];
    const Vector expect = scaled(normalized(xy), std::sqrt(sp.radius_sq));
    CHECK(max_abs_diff(u, expect) <= 1e-10);
  }
  SUBCASE("returned points are positive KKT points on the sphere") {
    for (int L : {2, 3, 4})
      for (int p : {1, 2})
        for (double alpha : {0.0, 0.1, 1.0}) {
          const NetSpec spec = make_spec(8, 5, L, alpha, p);
          const NcfProblem prob = instance(spec, 11);
          const SmallProblem sp = SmallProblem::from(prob);
          const auto [u, rep] = solve_small_problem(sp, 4);
          CHECK(kernels::nrm2_sq(u) == doctest::Approx(sp.radius_sq).epsilon(1e-10));
          CHECK(rep.value > 0.0);
          CHECK(rep.alignment >= 1.0 - 1e-10);
          CHECK(rep.residual <= 1e-8);
          const SmallSolveReport again = small_problem_report(sp, u);
          CHECK(again.value == rep.value);
          const auto [u2, rep2] = solve_small_problem(sp, 4);
          CHECK(u2 == u);  // deterministic in the seed
        }
  }
  SUBCASE("fails cleanly without positive KKT points") {
    // All labels negative with a ReLU-type chain: G(u) <= 0 everywhere.
    const NetSpec spec = make_spec(3, 3, 2, 0.0, 2);
    NcfProblem prob = random_ncf_problem(spec, 20, 3);
    for (double& v : prob.z) v = -std::abs(v) - 0.1;
    SmallSolveConfig cfg;
    cfg.max_attempts = 3;
    cfg.max_iters = 2000;
    CHECK_THROWS_WITH_AS(solve_small_problem(SmallProblem::from(prob), 1, cfg),
                         "no positive-value KKT point found", std::runtime_error);
  }
}

TEST_CASE("kkt factory verification passes for constructed points") {
  for (int L : {2, 3, 4})
    for (int p : {1, 2})
      for (double alpha : {0.0, 0.1, 1.0})
        for (std::uint64_t seed : {1u, 2u}) {
          const NetSpec spec = make_spec(10, 10, L, alpha, p);
          const NcfProblem prob = instance(spec, seed);
          const auto [b1, rep] = solve_small_problem(SmallProblem::from(prob), seed);
          const RankOneKKT k = construct_rank_one(spec, b1);
          const TheoremVerdict v = verify_theorem_conditions(k, prob);
          CAPTURE(L);
          CAPTURE(p);
          CAPTURE(alpha);
          for (const VerdictItem& it : v.items) {
            CAPTURE(it.name);
            CHECK(it.passed);
          }
          CHECK(v.all_passed());
          CHECK(v.full.residual <= 1e-8);
          CHECK(v.balance.max_deviation <= 1e-12);
          REQUIRE(v.find("full_kkt_residual") != nullptr);
          CHECK(v.find("no_such_item") == nullptr);
        }
}

TEST_CASE("kkt factory sign freedom for odd p at alpha = 1") {
  for (const auto& [L, p] : std::vector<std::pair<int, int>>{{4, 1}, {3, 1}, {3, 3}}) {
    const NetSpec spec = make_spec(6, 4, L, 1.0, p);
    const NcfProblem prob = instance(spec, 7);
    const auto [b1, rep] = solve_small_problem(SmallProblem::from(prob), 7);
    for (int flip = 0; flip < L - 1; ++flip) {
      RankOneOptions opts;
      opts.q.assign(static_cast<std::size_t>(L - 1), 1);
      opts.q[static_cast<std::size_t>(flip)] = -1;
      const RankOneKKT k = construct_rank_one(spec, b1, opts);
      const TheoremVerdict v = verify_theorem_conditions(k, prob);
      CAPTURE(L);
      CAPTURE(p);
      CAPTURE(flip);
      CHECK(v.all_passed());
      // an odd activation flips the sign of the value with each q
      CHECK(v.full.ncf_value < 0.0);
    }
  }
}

TEST_CASE("kkt factory perturbation breaks stationarity") {
  const NetSpec spec = make_spec(10, 10, 3, 0.0, 2);
  const NcfProblem prob = instance(spec, 3);
  const auto [b1, rep] = solve_small_problem(SmallProblem::from(prob), 3);
  RankOneKKT k = construct_rank_one(spec, b1);
  k.a[0][0] += 1e-3;
  const TheoremVerdict v = verify_theorem_conditions(k, prob);
  CHECK(v.full.residual > 1e-6);
  CHECK_FALSE(v.all_passed());
}

TEST_CASE("kkt factory balance on random weights and zero-output points") {
  Rng rng(8);
  const NetSpec spec = make_spec(5, 5, 3, 0.0, 1);
  const Weights w = testutil::gaussian_weights(rng, spec);
  CHECK(check_balance(w, 1).max_deviation > 1e-2);

  // Three-layer ReLU network with a non-positive W_2: every output is zero.
  for (std::uint64_t seed : {4u, 5u, 6u}) {
    const NcfProblem prob = random_ncf_problem(make_spec(5, 5, 3, 0.0, 1), 30, seed);
    Weights z = testutil::gaussian_weights(rng, prob.spec);
    for (double& v : z.layer(1).flat()) v = -std::abs(v);
    const KktReport r = kkt_report(prob, z);
    CHECK(r.ncf_value == 0.0);
    CHECK(r.residual <= 1e-12);
    CHECK(r.is_nonnegative_kkt);
  }
}
