#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "support.hpp"
#include "uqe/errors.hpp"
#include "uqe/propensity.hpp"
#include "uqe/simulation.hpp"

using namespace uqe;
using testing::col;
using testing::vec;

namespace {

const std::vector<std::string> kDefault{"1", "z1_*", "z2_*"};

PropensityFit fit(const MergedSample& m, const std::vector<std::string>& k = kDefault,
                  const std::vector<std::string>& t = kDefault, LinkKind link = LinkKind::logit) {
  return fit_propensity_model(m, Basis::parse(k, m.z1_names(), m.z2_names(), false, true),
                              Basis::parse(t, m.z1_names(), m.z2_names(), false, true),
                              LinkFunction(link));
}

MergedSample shares(Index ns, Index na) {
  StudySample s;
  s.y = VectorXd::LinSpaced(ns, 0.0, 1.0);
  s.z1 = MatrixXd::Zero(ns, 1);
  s.z2 = MatrixXd::Zero(ns, 1);
  AuxSample a;
  a.x = VectorXd::LinSpaced(na, 0.0, 1.0);
  a.z1 = MatrixXd::Zero(na, 1);
  a.z2 = MatrixXd::Zero(na, 1);
  return merge_samples(s, a);
}

MergedSample simulated(Index n, std::uint64_t seed) {
  DgpSpec spec;
  spec.n = n;
  spec.seed = seed;
  auto [s, a] = generate_dgp(spec);
  return merge_samples(s, a);
}

}  // namespace

TEST_CASE("links are symmetric, increasing and match finite differences") {
  for (LinkKind kind : {LinkKind::logit, LinkKind::probit}) {
    LinkFunction L(kind);
    for (double x = -8.0; x <= 8.0; x += 0.25) {
      LinkValue v = L.eval(x);
      CHECK(v.value + L.cdf(-x) == doctest::Approx(1.0).epsilon(1e-14));
      CHECK(v.complement == doctest::Approx(1.0 - v.value).epsilon(1e-12));
      CHECK(v.d1 > 0.0);
      CHECK(std::abs(v.d2) < 1.0);
      const double h = 1e-5;
      CHECK(v.d1 == doctest::Approx((L.cdf(x + h) - L.cdf(x - h)) / (2 * h)).epsilon(1e-6));
      CHECK(v.d2 == doctest::Approx((L.eval(x + h).d1 - L.eval(x - h).d1) / (2 * h)).epsilon(1e-5));
      if (std::abs(x) <= 5.0) CHECK(L.inverse(v.value) == doctest::Approx(x).epsilon(1e-8));
      CHECK(L.log_cdf(x) == doctest::Approx(std::log(v.value)).epsilon(1e-12));
    }
    CHECK(std::isfinite(L.log_cdf(-60.0)));
    CHECK(std::isfinite(L.log_complement(60.0)));
  }
  CHECK(LinkFunction(LinkKind::logit).eval(0.0).d1 == doctest::Approx(0.25));
  CHECK(LinkFunction::parse("probit").kind() == LinkKind::probit);
  CHECK_THROWS_AS(LinkFunction::parse("cloglog"), ValidationError);
}

TEST_CASE("intercept-only MLE recovers the share") {
  LinkFunction logit(LinkKind::logit);
  MergedSample balanced = shares(5, 5);
  VectorXd K = VectorXd::Ones(10);
  CHECK(fit_propensity(balanced, K, logit)(0) == doctest::Approx(0.0).epsilon(1e-12));
  MergedSample skewed = shares(3, 1);
  CHECK(fit_propensity(skewed, VectorXd::Ones(4), logit)(0) == doctest::Approx(std::log(3.0)).epsilon(1e-10));
  CHECK(std::log(3.0) == doctest::Approx(1.0986).epsilon(1e-4));
}

TEST_CASE("balanced intercept-only tilts vanish and weights are one") {
  MergedSample m = shares(4, 4);
  PropensityFit p = fit(m, {"1"}, {"1"});
  CHECK(p.gamma(0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(std::abs(p.lambda_s(0)) < 1e-10);
  CHECK(std::abs(p.lambda_a(0)) < 1e-10);
  for (Index i = 0; i < m.n(); ++i) {
    CHECK(p.pi_s(i) == doctest::Approx(1.0));
    CHECK(p.pi_a(i) == doctest::Approx(1.0));
  }
  for (Index i = 0; i < m.n_aux(); ++i) CHECK(p.ell_hat(i) == doctest::Approx(1.0));
}

TEST_CASE("tilt weights at zero index and zero tilts") {
  LinkFunction logit(LinkKind::logit);
  MatrixXd K = MatrixXd::Ones(3, 1), T = MatrixXd::Ones(3, 1);
  TiltWeights w = compute_tilt_weights(K, T, vec({0.0}), vec({0.0}), vec({0.0}), logit);
  for (Index i = 0; i < 3; ++i) {
    CHECK(w.pi_s(i) == doctest::Approx(1.0));
    CHECK(w.pi_a(i) == doctest::Approx(1.0));
  }
  MatrixXd K2 = col({-1.0, 0.3, 2.0});
  TiltWeights w2 = compute_tilt_weights(K2, T, vec({0.7}), vec({0.0}), vec({0.4}), logit);
  for (Index i = 0; i < 3; ++i) CHECK(w2.pi_s(i) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(compute_tilt_weights(K, T, vec({0.0}), vec({0.0}), vec({40.0}), logit), NumericalError);
}

TEST_CASE("likelihood ratio prefactor") {
  LinkFunction logit(LinkKind::logit);
  MatrixXd Ka = MatrixXd::Ones(300, 1), Ta = MatrixXd::Ones(300, 1);
  VectorXd ell = likelihood_ratio(Ka, Ta, vec({0.0}), vec({0.0}), vec({0.0}), logit, 100, 300);
  CHECK(ell.minCoeff() == doctest::Approx(3.0));
  CHECK(ell.maxCoeff() == doctest::Approx(3.0));
}

TEST_CASE("constant-only auxiliary tilt matches scalar bisection") {
  StudySample s;
  s.y = vec({1.0});
  s.z1 = MatrixXd::Zero(1, 0);
  s.z2 = col({0.5});
  AuxSample a;
  a.x = vec({0.0, 1.0, 2.0});
  a.z1 = MatrixXd::Zero(3, 0);
  a.z2 = col({0.2, 0.9, 0.6});
  MergedSample m = merge_samples(s, a);
  PropensityFit p = fit(m, {"1", "z2_*"}, {"1"});

  LinkFunction L(LinkKind::logit);
  auto equation = [&](double lam) {
    double acc = 0.0;
    for (Index i = 0; i < m.n(); ++i) {
      double idx = p.gamma(0) + p.gamma(1) * m.z2()(i, 0);
      double r = m.is_study(i) ? 0.0 : 1.0;
      acc += (r / (1.0 - L.cdf(idx + lam)) - 1.0) * L.cdf(idx);
    }
    return acc;
  };
  double lo = -10.0, hi = 10.0;
  REQUIRE(equation(lo) * equation(hi) < 0.0);
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    (equation(mid) * equation(lo) > 0.0 ? lo : hi) = mid;
  }
  CHECK(p.lambda_a(0) == doctest::Approx(0.5 * (lo + hi)).epsilon(1e-8));
  CHECK(std::abs(p.lambda_a(0)) > 1e-3);
}

TEST_CASE("score vanishes and tilts balance on simulated data") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    MergedSample m = simulated(4000, seed);
    for (LinkKind kind : {LinkKind::logit, LinkKind::probit}) {
      PropensityFit p = fit(m, kDefault, kDefault, kind);
      CHECK(p.mle.gradient_norm <= 1e-8);
      const MatrixXd& T = p.T;
      VectorXd study = VectorXd::Zero(T.cols()), aux = VectorXd::Zero(T.cols()), base = VectorXd::Zero(T.cols());
      for (Index i = 0; i < m.n(); ++i) {
        double L0 = p.link.cdf(p.K.row(i).dot(p.gamma));
        base += L0 * T.row(i).transpose();
        if (m.is_study(i)) study += p.pi_s(i) * T.row(i).transpose();
        else aux += p.pi_a(i) * T.row(i).transpose();
      }
      double n = static_cast<double>(m.n());
      CHECK(((study - aux) / n).cwiseAbs().maxCoeff() <= 1e-6);
      CHECK(((study - base) / n).cwiseAbs().maxCoeff() <= 1e-6);
      CHECK(p.pi_s.minCoeff() > 0.0);
      CHECK(p.pi_a.minCoeff() > 0.0);
      CHECK(p.ell_hat.minCoeff() > 0.0);
    }
  }
}

TEST_CASE("rescaling a k column rescales its coefficient only") {
  MergedSample m = simulated(3000, 9);
  StudySample s = m.study();
  AuxSample a = m.aux();
  const double c = -2.5;
  s.z2 *= c;
  a.z2 *= c;
  MergedSample scaled = merge_samples(s, a);
  LinkFunction L(LinkKind::logit);
  Basis k = Basis::parse(kDefault, m.z1_names(), m.z2_names(), false, true);
  MatrixXd K = k.design(m.z1(), m.z2()), Ks = k.design(scaled.z1(), scaled.z2());
  VectorXd g = fit_propensity(m, K, L), gs = fit_propensity(scaled, Ks, L);
  CHECK(gs(2) == doctest::Approx(g(2) / c).epsilon(1e-8));
  CHECK(gs(0) == doctest::Approx(g(0)).epsilon(1e-8));
  for (Index i = 0; i < m.n(); i += 97)
    CHECK(L.cdf(Ks.row(i).dot(gs)) == doctest::Approx(L.cdf(K.row(i).dot(g))).epsilon(1e-8));
}

TEST_CASE("separation and rank deficiency are reported") {
  StudySample s;
  s.y = vec({1, 2, 3});
  s.z1 = MatrixXd::Zero(3, 0);
  s.z2 = col({1.0, 1.1, 1.2});
  AuxSample a;
  a.x = vec({1, 2, 3});
  a.z1 = MatrixXd::Zero(3, 0);
  a.z2 = col({-1.0, -1.1, -1.2});
  MergedSample m = merge_samples(s, a);
  LinkFunction L(LinkKind::logit);
  Basis k = Basis::parse({"1", "z2_*"}, {}, m.z2_names(), false, true);
  CHECK_THROWS_AS(fit_propensity(m, k.design(m.z1(), m.z2()), L), NumericalError);
  MatrixXd dup(6, 2);
  dup.col(0).setOnes();
  dup.col(1).setOnes();
  CHECK_THROWS_AS(fit_propensity(m, dup, L), NumericalError);
}

TEST_CASE("tilting basis must lead with the constant") {
  MergedSample m = simulated(500, 4);
  CHECK_THROWS_AS(fit(m, kDefault, {"z2_*", "1"}), ValidationError);
}

TEST_CASE("MLE is centered on the design coefficients") {
  DgpSpec spec;
  const int reps = 200;
  MatrixXd draws(reps, 3);
  for (int r = 0; r < reps; ++r) {
    MergedSample m = simulated(50000, 1000 + r);
    LinkFunction L(spec.propensity_link);
    Basis k = Basis::parse(kDefault, m.z1_names(), m.z2_names(), false, true);
    draws.row(r) = fit_propensity(m, k.design(m.z1(), m.z2()), L).transpose();
  }
  for (Index j = 0; j < 3; ++j) {
    double mean = draws.col(j).mean();
    double sd = std::sqrt((draws.col(j).array() - mean).square().sum() / (reps - 1));
    CHECK(std::abs(mean - spec.gamma_prop[j]) <= 3.0 * sd / std::sqrt(double(reps)));
  }
}

TEST_CASE("tilts shrink as the sample grows under a correct propensity model") {
  auto median_norm = [](Index n) {
    std::vector<double> v;
    for (int r = 0; r < 25; ++r) {
      MergedSample m = simulated(n, 500 + r);
      PropensityFit p = fit(m);
      v.push_back(std::sqrt(p.lambda_s.squaredNorm() + p.lambda_a.squaredNorm()));
    }
    std::nth_element(v.begin(), v.begin() + 12, v.end());
    return v[12];
  };
  CHECK(median_norm(50000) < median_norm(5000));
}

TEST_CASE("likelihood ratio averages to one over the auxiliary sample") {
  MergedSample m = simulated(20000, 77);
  PropensityFit p = fit(m);
  CHECK(p.ell_hat.mean() == doctest::Approx(1.0).epsilon(0.02));
}
