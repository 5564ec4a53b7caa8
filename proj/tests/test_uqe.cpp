#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "support.hpp"
#include "uqe/errors.hpp"
#include "uqe/simulation.hpp"
#include "uqe/uqe.hpp"

using namespace uqe;

namespace {

struct Fixture {
  DgpSpec spec;
  MergedSample m;
  ThetaEstimate th;

  Fixture(Index n, std::uint64_t seed, double tau = 0.5, double gamma_s1 = 0.5) {
    spec.n = n;
    spec.seed = seed;
    spec.gamma_s1 = gamma_s1;
    auto [s, a] = generate_dgp(spec);
    m = merge_samples(s, a);
    th = fit_nuisances(m, tau, simulation_estimator_config());
  }
};

// dLambda/dx by central differences of the fitted model.
double lambda_x(const Fixture& f, Index a) {
  Index row = f.m.n_study() + a;
  double x = f.m.x()(a), h = 1e-5;
  return (f.th.lambda.value(x + h, f.m.z1(), row, f.th.gmm.beta) -
          f.th.lambda.value(x - h, f.m.z1(), row, f.th.gmm.beta)) /
         (2 * h);
}

// Brute-force d_hat: O(n_a^2) ECDF and density sums, no shared code with the estimator.
double brute_d(const Fixture& f, const CounterfactualDistribution& G, ShiftKind kind) {
  const VectorXd& x = f.m.x();
  const VectorXd& w = f.th.propensity.ell_hat;
  const Index na = x.size();
  const double S = w.sum(), b = f.th.b_x;
  std::vector<double> F(na), mass(na, 0.0), dens(na, 0.0);
  for (Index a = 0; a < na; ++a) {
    double cum = 0.0;
    for (Index j = 0; j < na; ++j) {
      if (x(j) <= x(a)) cum += w(j);
      if (x(j) == x(a)) mass[a] += w(j);
      dens[a] += w(j) * f.th.kernel_x((x(j) - x(a)) / b);
    }
    F[a] = cum / S;
    mass[a] /= S;
    dens[a] /= S * b;
  }
  double lo = x.minCoeff() + b, hi = x.maxCoeff() - b;
  double fmax = *std::max_element(dens.begin(), dens.end());
  double sum = 0.0;
  Index kept = 0;
  for (Index a = 0; a < na; ++a) {
    double g = 1.0;
    if (kind == ShiftKind::mqs) {
      g = G.quantile(F[a] - 0.5 * mass[a]) - x(a);
    } else if (kind == ShiftKind::mds) {
      if (x(a) < lo || x(a) > hi || dens[a] < 1e-3 * fmax) continue;
      g = -(G.cdf(x(a)) - F[a]) / dens[a];
    }
    sum += w(a) * lambda_x(f, a) * g;
    ++kept;
  }
  return sum / static_cast<double>(kept);
}

// Location shift of the fitted covariate law by t.
CounterfactualDistribution shifted_status_quo(const ThetaEstimate& th, double t) {
  auto F = std::make_shared<WeightedEcdf>(th.F_hat);
  return CounterfactualDistribution::custom([F, t](double x) { return (*F)(x - t); },
                                            [](double) { return 1.0; },  // only enters the gradient
                                            [F, t](double u) { return F->quantile(u) + t; }, "shifted");
}

}  // namespace

TEST_CASE("d_hat matches a brute-force computation") {
  Fixture f(1500, 17);
  auto G = CounterfactualDistribution::normal(f.th.F_hat.quantile(0.5) + 0.25, 1.2);
  for (ShiftKind k : {ShiftKind::mls, ShiftKind::mqs, ShiftKind::mds}) {
    CAPTURE(shift_name(k));
    double d = estimate_d(f.m, f.th, G, k);
    CHECK(d == doctest::Approx(brute_d(f, G, k)).epsilon(1e-6));
  }
}

TEST_CASE("gradient of d_hat matches finite differences") {
  Fixture f(2000, 23);
  auto G = CounterfactualDistribution::normal(f.th.F_hat.quantile(0.5) + 0.25, 1.1);
  ThetaPoint at = ThetaPoint::from(f.th);
  VectorXd p = at.flatten();
  for (ShiftKind k : {ShiftKind::mls, ShiftKind::mqs, ShiftKind::mds}) {
    CAPTURE(shift_name(k));
    DEvaluation e = evaluate_d(f.m, f.th, at, G, k, true);
    REQUIRE(e.gradient.size() == p.size());
    CHECK(e.d == doctest::Approx(estimate_d(f.m, f.th, G, k)).epsilon(1e-12));
    VectorXd fd(p.size());
    for (Index j = 0; j < p.size(); ++j) {
      const double h = 1e-6 * std::max(1.0, std::abs(p(j)));
      VectorXd pp = p, pm = p;
      pp(j) += h;
      pm(j) -= h;
      fd(j) = (evaluate_d(f.m, f.th, at.with(pp), G, k, false, &e.kept).d -
               evaluate_d(f.m, f.th, at.with(pm), G, k, false, &e.kept).d) /
              (2 * h);
    }
    CHECK((e.gradient - fd).norm() <= 1e-5 * std::max(1.0, fd.norm()));
  }
}

TEST_CASE("zero shift gives an exact zero") {
  Fixture f(3000, 5);
  auto G = status_quo(f.th);
  UqeResult r = estimate_uqe(f.m, f.th, G, ShiftKind::mqs);
  CHECK(r.d_hat == 0.0);
  CHECK(r.point == 0.0);
  CHECK(r.p_value >= 0.999);
  CHECK(r.bias == 0.0);
  CHECK(r.se_plugin == 0.0);
  UqeResult r2 = estimate_uqe(f.m, f.th, G, ShiftKind::mds);
  CHECK(std::abs(r2.point) < 1e-10);
}

TEST_CASE("location shift: MQS equals t times MLS") {
  Fixture f(3000, 6);
  double dls = estimate_d(f.m, f.th, CounterfactualDistribution::normal(0, 1), ShiftKind::mls);
  for (double t : {-0.5, 0.2, 1.0}) {
    double dqs = estimate_d(f.m, f.th, shifted_status_quo(f.th, t), ShiftKind::mqs);
    CHECK(dqs == doctest::Approx(t * dls).epsilon(1e-10));
  }
}

TEST_CASE("influence components are centered") {
  Fixture f(4000, 8);
  auto G = CounterfactualDistribution::normal(f.th.F_hat.quantile(0.5) + 0.25, 1.1);
  for (ShiftKind k : {ShiftKind::mqs, ShiftKind::mds, ShiftKind::mls}) {
    CAPTURE(shift_name(k));
    InfluenceComponents c;
    UqeResult r = estimate_uqe(f.m, f.th, G, k, {}, &c);
    const double n = static_cast<double>(f.m.n());
    CHECK(std::abs(c.psi_avg.mean()) < 1e-10 * std::max(1.0, c.psi_avg.cwiseAbs().maxCoeff()));
    CHECK(std::abs(c.psi_g.mean()) < 1e-10 * std::max(1.0, c.psi_g.cwiseAbs().maxCoeff()));
    CHECK(c.psi_theta.colwise().mean().cwiseAbs().maxCoeff() < 20.0 / n);
    CHECK(std::abs(c.psi_fy.mean()) < 20.0 / n * std::max(1.0, c.psi_fy.cwiseAbs().maxCoeff()));
    CHECK(r.se_improved == doctest::Approx(std::sqrt(c.psi.squaredNorm()) / n));
    CHECK((c.psi - (c.psi_fy - c.psi_d / r.f_y_at_q)).norm() < 1e-12 * std::max(1.0, c.psi.norm()));
    CHECK(r.point == doctest::Approx(-r.d_hat / r.f_y_at_q));
    CHECK(r.ci_lo < r.point);
    CHECK(r.ci_hi > r.point);
    CHECK((r.ci_hi - r.ci_lo) == doctest::Approx(2 * 1.959963984540054 * r.se_improved));
    CHECK(r.p_value >= 0.0);
    CHECK(r.p_value <= 1.0);
  }
}

TEST_CASE("bias and plug-in standard error formulas") {
  Kernel E;
  CHECK(bias_term(0.2, 0.4, -0.3, 0.1, E) == doctest::Approx(0.01 * -0.3 * 0.2 / (2 * 0.16) * 0.2));
  CHECK(bias_term(0.0, 0.4, -0.3, 0.1, E) == 0.0);
  CHECK(plugin_se(0.2, 0.4, 0.5, E, 1000, 0.1) ==
        doctest::Approx(std::sqrt(0.04 / (0.064 * 0.5) * 0.6 / (1000 * 0.1))));
  CHECK(plugin_se(-0.2, 0.4, 0.5, E, 1000, 0.1) == plugin_se(0.2, 0.4, 0.5, E, 1000, 0.1));
}

TEST_CASE("confidence level and recentering") {
  Fixture f(3000, 12);
  auto G = CounterfactualDistribution::normal(f.th.F_hat.quantile(0.5) + 0.25, 1.1);
  EstimatorConfig c90 = simulation_estimator_config();
  c90.ci_level = 0.90;
  UqeResult r = estimate_uqe(f.m, f.th, G, ShiftKind::mqs, c90);
  CHECK((r.ci_hi - r.ci_lo) == doctest::Approx(2 * 1.6448536269514722 * r.se_improved));
  EstimatorConfig rc = simulation_estimator_config();
  rc.recenter_ci = true;
  UqeResult s = estimate_uqe(f.m, f.th, G, ShiftKind::mqs, rc);
  CHECK(0.5 * (s.ci_lo + s.ci_hi) == doctest::Approx(s.point - s.bias));
}

TEST_CASE("estimate is close to the population effect") {
  Fixture f(8000, 99);
  DgpTruth truth(f.spec);
  auto G = default_counterfactual(truth);
  OracleOptions oo;
  for (ShiftKind k : {ShiftKind::mls, ShiftKind::mqs, ShiftKind::mds}) {
    CAPTURE(shift_name(k));
    UqeResult r = estimate_uqe(f.m, f.th, G, k);
    double target = oracle_uqe(f.spec, truth, 0.5, G, k, oo).value;
    CHECK(std::abs(r.point - target) < 4.0 * r.se_improved);
  }
}

TEST_CASE("tau out of range") {
  DgpSpec spec;
  spec.n = 500;
  auto [s, a] = generate_dgp(spec);
  MergedSample m = merge_samples(s, a);
  CHECK_THROWS_AS(fit_nuisances(m, 1.2, simulation_estimator_config()), ValidationError);
  CHECK_THROWS_AS(fit_nuisances(m, 0.0, simulation_estimator_config()), ValidationError);
}
