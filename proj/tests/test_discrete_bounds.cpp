#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "support.hpp"
#include "uqe/discrete_bounds.hpp"
#include "uqe/errors.hpp"
#include "uqe/simulation.hpp"

using namespace uqe;

namespace {

struct Fixture {
  DgpSpec spec;
  MergedSample m;
  ThetaEstimate th;

  Fixture(Index n, std::uint64_t seed, std::vector<std::string> index = {"1", "z1_*", "x"}) {
    spec.n = n;
    spec.seed = seed;
    spec.z1_law = DgpSpec::Z1Law::bernoulli;
    spec.x_thresholds = {-0.5, 0.5};
    auto [s, a] = generate_dgp(spec);
    m = merge_samples(s, a);
    EstimatorConfig cfg = simulation_estimator_config();
    cfg.lambda_index = std::move(index);
    th = fit_nuisances(m, 0.5, cfg);
  }
};

// Sum over periods of the min / max over every merged z1 row.
std::pair<double, double> brute_bounds(const Fixture& f, const CounterfactualDistribution& G) {
  const VectorXd& x = f.m.x();
  const VectorXd& w = f.th.propensity.ell_hat;
  std::vector<double> pts(x.data(), x.data() + x.size());
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  double lo = 0.0, hi = 0.0;
  for (std::size_t j = 1; j < pts.size(); ++j) {
    double F = 0.0;
    for (Index a = 0; a < x.size(); ++a)
      if (x(a) <= pts[j - 1]) F += w(a);
    F /= w.sum();
    double Gp = G.cdf(pts[j - 1]);
    double mn = 1e300, mx = -1e300;
    for (Index i = 0; i < f.m.n(); ++i) {
      double diff = f.th.lambda.value(pts[j - 1], f.m.z1(), i, f.th.gmm.beta) -
                    f.th.lambda.value(pts[j], f.m.z1(), i, f.th.gmm.beta);
      double h = -diff * (Gp - F) / f.th.f_y;
      mn = std::min(mn, h);
      mx = std::max(mx, h);
    }
    lo += mn;
    hi += mx;
  }
  return {lo, hi};
}

}  // namespace

TEST_CASE("period bound arithmetic") {
  CHECK(period_bound(0.6, 0.4, 0.3, 0.5, 0.4) == doctest::Approx(0.1));
  CHECK(period_bound(0.6, 0.4, 0.5, 0.5, 0.4) == 0.0);
  CHECK(period_bound(0.6, 0.4, 0.7, 0.5, 0.4) == doctest::Approx(-0.1));
  CHECK_THROWS_AS(period_bound(0.6, 0.4, 0.3, 0.5, 0.0), ValidationError);
}

TEST_CASE("discrete counterfactual construction") {
  auto G = discrete_counterfactual({0, 1, 2}, {0.2, 0.5, 1.0});
  CHECK(G.cdf(-0.1) == 0.0);
  CHECK(G.cdf(0.0) == doctest::Approx(0.2));
  CHECK(G.cdf(1.5) == doctest::Approx(0.5));
  CHECK(G.cdf(2.0) == doctest::Approx(1.0));
  CHECK_THROWS_AS(discrete_counterfactual({0, 1}, {0.5}), ValidationError);
  CHECK_THROWS_AS(discrete_counterfactual({1, 0}, {0.5, 1.0}), ValidationError);
  CHECK_THROWS_AS(discrete_counterfactual({0, 1}, {0.6, 0.5}), ValidationError);
  CHECK_THROWS_AS(discrete_counterfactual({0, 1}, {0.5, 0.9}), ValidationError);
}

TEST_CASE("bounds match a brute-force search over every z1 row") {
  Fixture f(4000, 3);
  for (auto cdf : {std::vector<double>{0.2, 0.6, 1.0}, std::vector<double>{0.5, 0.7, 1.0},
                   std::vector<double>{0.1, 0.9, 1.0}}) {
    auto G = discrete_counterfactual({0, 1, 2}, cdf);
    BoundsResult b = estimate_bounds(f.m, f.th, G);
    auto [lo, hi] = brute_bounds(f, G);
    CHECK(b.lower == doctest::Approx(lo).epsilon(1e-12));
    CHECK(b.upper == doctest::Approx(hi).epsilon(1e-12));
    CHECK(b.lower <= b.upper);
    CHECK(b.periods.size() == 2);
    CHECK(b.z1_search.rows() == 2);
    CHECK_FALSE(b.collapsed);
    for (const auto& p : b.periods) {
      CHECK(p.in_j_plus == (p.G_prev <= p.F_prev));
      CHECK(std::min(p.h_star, p.h_dagger) <= std::max(p.h_star, p.h_dagger));
    }
  }
}

TEST_CASE("bounds collapse when Lambda does not depend on z1") {
  Fixture f(4000, 4, {"1", "x"});
  auto G = discrete_counterfactual({0, 1, 2}, {0.2, 0.6, 1.0});
  BoundsResult b = estimate_bounds(f.m, f.th, G);
  CHECK(b.collapsed);
  CHECK(b.upper == doctest::Approx(b.lower).epsilon(1e-14));
  double point = 0.0;
  for (const auto& p : b.periods) {
    double lp = f.th.lambda.value(p.x_prev, f.m.z1(), 0, f.th.gmm.beta);
    double lc = f.th.lambda.value(p.x, f.m.z1(), 0, f.th.gmm.beta);
    point += -(lp - lc) * (p.G_prev - p.F_prev) / f.th.f_y;
  }
  CHECK(b.lower == doctest::Approx(point).epsilon(1e-12));
}

TEST_CASE("status quo gives a zero-width interval at zero") {
  Fixture f(3000, 5);
  BoundsResult b = estimate_bounds(f.m, f.th, status_quo(f.th));
  CHECK(std::abs(b.lower) < 1e-14);
  CHECK(std::abs(b.upper) < 1e-14);
  CHECK(b.collapsed);
}

TEST_CASE("support validation") {
  Fixture f(2000, 6);
  CHECK_THROWS_AS(estimate_bounds(f.m, f.th, CounterfactualDistribution::normal(1, 1)), ValidationError);
  CHECK_THROWS_AS(estimate_bounds(f.m, f.th, discrete_counterfactual({0, 1, 3}, {0.2, 0.6, 1.0})),
                  ValidationError);
  CHECK_NOTHROW(estimate_bounds(f.m, f.th, discrete_counterfactual({0, 1}, {0.2, 1.0})));  // no mass on the top level
  CHECK_THROWS_AS(estimate_bounds(f.m, f.th, discrete_counterfactual({-1, 0, 1, 2}, {0.1, 0.2, 0.6, 1.0})),
                  ValidationError);
  BoundsOptions o;
  o.max_levels = 2;
  CHECK_THROWS_AS(estimate_bounds(f.m, f.th, discrete_counterfactual({0, 1, 2}, {0.2, 0.6, 1.0}), o),
                  ValidationError);
  BoundsOptions wrong;
  wrong.z1_search = MatrixXd::Zero(1, 2);
  CHECK_THROWS_AS(estimate_bounds(f.m, f.th, discrete_counterfactual({0, 1, 2}, {0.2, 0.6, 1.0}), wrong),
                  ValidationError);
}

TEST_CASE("wider search set widens the interval") {
  Fixture f(3000, 7);
  auto G = discrete_counterfactual({0, 1, 2}, {0.2, 0.6, 1.0});
  BoundsOptions one;
  one.z1_search = MatrixXd::Zero(1, 1);
  BoundsResult narrow = estimate_bounds(f.m, f.th, G, one);
  BoundsResult wide = estimate_bounds(f.m, f.th, G);
  CHECK(narrow.collapsed);
  CHECK(wide.lower <= narrow.lower + 1e-15);
  CHECK(wide.upper >= narrow.upper - 1e-15);
}
