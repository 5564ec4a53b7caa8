#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "support.hpp"
#include "uqe/errors.hpp"
#include "uqe/simulation.hpp"

using namespace uqe;

namespace {

double ecdf(const VectorXd& v, double t) { return (v.array() <= t).cast<double>().mean(); }

CounterfactualDistribution truth_shift(const DgpTruth& truth, double t) {
  return CounterfactualDistribution::custom([&truth, t](double x) { return truth.F_x(x - t); },
                                            [&truth, t](double x) { return truth.f_x(x - t); },
                                            [&truth, t](double u) { return truth.x_quantile(u) + t; });
}

}  // namespace

TEST_CASE("generation is deterministic in the seed") {
  DgpSpec spec;
  spec.n = 400;
  auto [s1, a1] = generate_dgp(spec);
  auto [s2, a2] = generate_dgp(spec);
  CHECK(s1.y == s2.y);
  CHECK(a1.x == a2.x);
  CHECK(s1.y.size() + a1.x.size() == 400);
  CHECK(s1.z1.cols() == 1);
  CHECK(s1.z2.cols() == 1);
  spec.seed = 2;
  auto [s3, a3] = generate_dgp(spec);
  CHECK(s3.y.size() + a3.x.size() == 400);
  CHECK_FALSE((s3.y.size() == s1.y.size() && s3.y == s1.y));
}

TEST_CASE("specification validation") {
  DgpSpec bad;
  bad.gamma_prop = {0.1, 0.2};
  CHECK_THROWS_AS(generate_dgp(bad), ValidationError);
  bad = DgpSpec{};
  bad.psi_y = 0.0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = DgpSpec{};
  bad.x_thresholds = {0.5, -0.5};
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = DgpSpec{};
  bad.delta_2 = {0.0};
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = DgpSpec{};
  bad.z1_law = DgpSpec::Z1Law::bernoulli;
  bad.z1_p = 1.0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("population truth matches a large simulated sample") {
  DgpSpec spec;
  spec.n = 400000;
  spec.seed = 77;
  DgpTruth truth(spec);
  auto [s, a] = generate_dgp(spec);
  CHECK(static_cast<double>(s.y.size()) / spec.n == doctest::Approx(truth.study_share()).epsilon(0.01));
  double supy = 0.0;
  for (double y = -4; y <= 5; y += 0.05) supy = std::max(supy, std::abs(ecdf(s.y, y) - truth.F_y(y)));
  CHECK(supy < 0.006);
  for (double tau : {0.1, 0.25, 0.5, 0.75, 0.9}) {
    double q = truth.q_y(tau);
    CHECK(truth.F_y(q) == doctest::Approx(tau).epsilon(1e-10));
    CHECK(std::abs(empirical_quantile(s.y, tau) - q) < 0.02);
  }
}

TEST_CASE("covariate truth matches an importance-weighted auxiliary sample") {
  DgpSpec spec;
  spec.n = 400000;
  spec.seed = 78;
  DgpTruth truth(spec);
  auto [s, a] = generate_dgp(spec);
  // reweight auxiliary rows by the true odds L / (1 - L)
  LinkFunction L(spec.propensity_link);
  VectorXd w(a.x.size());
  for (Index i = 0; i < a.x.size(); ++i) {
    double idx = spec.gamma_prop[0] + spec.gamma_prop[1] * a.z1(i, 0) + spec.gamma_prop[2] * a.z2(i, 0);
    double p = L.eval(idx).value;
    w(i) = p / (1.0 - p);
  }
  WeightedEcdf F(a.x, w);
  double sup = 0.0;
  for (double x = -4; x <= 4; x += 0.05) sup = std::max(sup, std::abs(F(x) - truth.F_x(x)));
  CHECK(sup < 0.01);
  double mean = (w.array() * a.x.array()).sum() / w.sum();
  CHECK(std::abs(truth.x_mean() - mean) < 0.02);
}

TEST_CASE("truth derivatives are consistent") {
  DgpTruth truth(DgpSpec{});
  const double h = 1e-4;
  for (double v = -2.5; v <= 2.5; v += 0.25) {
    CHECK(truth.f_y(v) == doctest::Approx((truth.F_y(v + h) - truth.F_y(v - h)) / (2 * h)).epsilon(1e-6));
    CHECK(truth.f_y_d1(v) == doctest::Approx((truth.f_y(v + h) - truth.f_y(v - h)) / (2 * h)).epsilon(1e-5).scale(1e-6));
    CHECK(truth.f_y_d2(v) == doctest::Approx((truth.f_y_d1(v + h) - truth.f_y_d1(v - h)) / (2 * h)).epsilon(1e-4).scale(1e-5));
    CHECK(truth.f_x(v) == doctest::Approx((truth.F_x(v + h) - truth.F_x(v - h)) / (2 * h)).epsilon(1e-5));
    CHECK(truth.f_x_d1(v) == doctest::Approx((truth.f_x(v + h) - truth.f_x(v - h)) / (2 * h)).epsilon(1e-4).scale(1e-5));
  }
  for (double u : {0.05, 0.3, 0.5, 0.9}) CHECK(truth.F_x(truth.x_quantile(u)) == doctest::Approx(u).epsilon(1e-8));
  double total = 0.0;
  for (double v = -10; v <= 10; v += 0.001) total += truth.f_y(v) * 0.001;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("lambda is the conditional normal cdf") {
  DgpSpec spec;
  DgpTruth truth(spec);
  double q = 0.7, x = -0.3, z = 1.1;
  double expected = 0.5 * std::erfc(-(q - spec.gamma_s1 * x - spec.gamma_s2[0] - spec.gamma_s2[1] * z) /
                                    std::sqrt(spec.psi_y) / std::sqrt(2.0));
  CHECK(truth.lambda(q, x, {z}) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("discrete design levels") {
  DgpSpec spec;
  spec.x_thresholds = {-0.5, 0.5};
  spec.z1_law = DgpSpec::Z1Law::bernoulli;
  spec.n = 200000;
  spec.seed = 4;
  DgpTruth truth(spec);
  auto [s, a] = generate_dgp(spec);
  std::set<double> lv(a.x.data(), a.x.data() + a.x.size());
  CHECK(lv == std::set<double>{0.0, 1.0, 2.0});
  std::set<double> z(s.z1.data(), s.z1.data() + s.z1.size());
  CHECK(z == std::set<double>{0.0, 1.0});
  CHECK(truth.x_level_cdf(2) == doctest::Approx(1.0));
  CHECK(truth.x_level_cdf(0) < truth.x_level_cdf(1));
  CHECK_THROWS_AS(DgpTruth(DgpSpec{}).x_level_cdf(0), ValidationError);
  double supy = 0.0;
  for (double y = -3; y <= 4; y += 0.05) supy = std::max(supy, std::abs(ecdf(s.y, y) - truth.F_y(y)));
  CHECK(supy < 0.01);
}

TEST_CASE("oracle: location shifts move every quantile by gamma_s1") {
  DgpSpec spec;
  DgpTruth truth(spec);
  OracleOptions oo;
  oo.n_draws = 200000;
  for (double tau : {0.25, 0.5, 0.75}) {
    OracleResult mls = oracle_uqe(spec, truth, tau, default_counterfactual(truth), ShiftKind::mls, oo);
    CHECK(mls.value == doctest::Approx(spec.gamma_s1).epsilon(1e-3));
    OracleResult mqs = oracle_uqe(spec, truth, tau, truth_shift(truth, 0.3), ShiftKind::mqs, oo);
    CHECK(mqs.value == doctest::Approx(0.3 * spec.gamma_s1).epsilon(1e-3));
  }
}

TEST_CASE("oracle: Rao-Blackwell and sampled noise agree") {
  DgpSpec spec;
  DgpTruth truth(spec);
  auto G = default_counterfactual(truth);
  OracleOptions rb, mc;
  rb.n_draws = mc.n_draws = 400000;
  mc.rao_blackwell = false;
  for (ShiftKind k : {ShiftKind::mqs, ShiftKind::mds}) {
    OracleResult a = oracle_uqe(spec, truth, 0.5, G, k, rb);
    OracleResult b = oracle_uqe(spec, truth, 0.5, G, k, mc);
    CHECK(a.mc_se < b.mc_se);
    CHECK(std::abs(a.value - b.value) < 4.0 * std::hypot(a.mc_se, b.mc_se));
  }
  DgpSpec d = spec;
  d.x_thresholds = {0.0};
  CHECK_THROWS_AS(oracle_uqe(d, DgpTruth(d), 0.5, G, ShiftKind::mqs, rb), ValidationError);
}

TEST_CASE("replication seeds and Monte Carlo bookkeeping") {
  std::set<std::uint64_t> seeds;
  for (std::uint64_t r = 0; r < 1000; ++r) seeds.insert(replication_seed(1, r));
  CHECK(seeds.size() == 1000);
  CHECK(replication_seed(1, 5) != replication_seed(2, 5));

  DgpSpec spec;
  spec.n = 1500;
  McSettings ms;
  ms.n_reps = 12;
  ms.taus = {0.25, 0.5};
  ms.kinds = {ShiftKind::mqs, ShiftKind::mls};
  ms.compute_oracle = false;
  ms.threads = 1;
  McReport one = run_monte_carlo(spec, simulation_estimator_config(), ms);
  ms.threads = 4;
  McReport four = run_monte_carlo(spec, simulation_estimator_config(), ms);
  REQUIRE(one.cells.size() == 4);
  CHECK(one.cells[0].tau == 0.25);
  CHECK(one.cells[1].kind == ShiftKind::mls);
  for (std::size_t c = 0; c < 4; ++c) {
    const McCell& x = one.cells[c];
    CHECK(x.n_ok + one.failures == 12);
    for (std::size_t r = 0; r < 12; ++r)
      if (!std::isnan(x.point[r])) CHECK(x.point[r] == four.cells[c].point[r]);
    CHECK(x.mean == four.cells[c].mean);
    CHECK(x.coverage >= 0.0);
    CHECK(x.coverage <= 1.0);
  }
}
