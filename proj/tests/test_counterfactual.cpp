#include <doctest.h>

#include <cmath>
#include <vector>

#include "support.hpp"
#include "uqe/counterfactual.hpp"
#include "uqe/errors.hpp"

using namespace uqe;

namespace {

std::vector<CounterfactualDistribution> continuous_family() {
  return {
      CounterfactualDistribution::normal(0.25, 1.1),
      CounterfactualDistribution::uniform(-1.0, 3.0),
      CounterfactualDistribution::from_sample({0.3, -1.2, 2.5, 0.9, 0.1, 1.7, -0.4}),
      CounterfactualDistribution::from_quantile_table({0.0, 0.2, 0.7, 1.0}, {-2.0, -0.5, 0.5, 3.0}),
      CounterfactualDistribution::custom([](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                                         [](double x) {
                                           double p = 1.0 / (1.0 + std::exp(-x));
                                           return p * (1.0 - p);
                                         }),
  };
}

}  // namespace

TEST_CASE("shift names") {
  CHECK(parse_shift("mqs") == ShiftKind::mqs);
  CHECK(parse_shift("MDS") == ShiftKind::mds);
  CHECK(parse_shift("mls") == ShiftKind::mls);
  CHECK(shift_name(ShiftKind::mds) == "mds");
  CHECK_THROWS_AS(parse_shift("mxs"), ValidationError);
}

TEST_CASE("interpolated sample distribution") {
  auto G = CounterfactualDistribution::from_sample({3.0, 1.0, 2.0});
  CHECK(G.cdf(0.99) == 0.0);
  CHECK(G.cdf(1.0) == 0.0);
  CHECK(G.cdf(1.5) == doctest::Approx(0.25));
  CHECK(G.cdf(2.0) == doctest::Approx(0.5));
  CHECK(G.cdf(3.0) == 1.0);
  CHECK(G.pdf(2.7) == doctest::Approx(0.5));
  CHECK(G.pdf(3.5) == 0.0);
  CHECK(G.quantile(0.75) == doctest::Approx(2.5));
  CHECK(G.quantile(0.0) == 1.0);
  CHECK(G.quantile(1.0) == 3.0);

  auto T = CounterfactualDistribution::from_sample({1.0, 1.0, 2.0, 3.0});
  CHECK(T.cdf(1.0) == doctest::Approx(1.0 / 3.0));
  CHECK(T.cdf(2.0) == doctest::Approx(2.0 / 3.0));
  CHECK(T.cdf(2.5) == doctest::Approx(5.0 / 6.0));

  CHECK_THROWS_AS(CounterfactualDistribution::from_sample({1.0, 1.0}), ValidationError);
  CHECK_THROWS_AS(CounterfactualDistribution::from_sample({1.0, NAN}), ValidationError);
}

TEST_CASE("continuous distributions: cdf, pdf and quantile agree") {
  for (const auto& G : continuous_family()) {
    CAPTURE(G.describe());
    double prev = 0.0;
    for (double x = -4.0; x <= 4.0; x += 0.013) {
      double F = G.cdf(x);
      CHECK(F >= prev);
      CHECK(F >= 0.0);
      CHECK(F <= 1.0);
      prev = F;
      const double h = 1e-6;
      double fd = (G.cdf(x + h) - G.cdf(x - h)) / (2 * h);
      if (std::abs(G.pdf(x + 2 * h) - G.pdf(x - 2 * h)) < 1e-9)  // away from kinks
        CHECK(G.pdf(x) == doctest::Approx(fd).epsilon(1e-5).scale(1e-6));
    }
    for (double u = 0.01; u < 1.0; u += 0.0137) {
      double q = G.quantile(u);
      CHECK(G.cdf(q) == doctest::Approx(u).epsilon(1e-9));
      const double h = 1e-7;
      double fd = (G.quantile(u + h) - G.quantile(u - h)) / (2 * h);
      if (std::abs(G.quantile_slope(u + 2 * h) - G.quantile_slope(u - 2 * h)) < 1e-3 * G.quantile_slope(u))
        CHECK(G.quantile_slope(u) == doctest::Approx(fd).epsilon(1e-4));
    }
  }
}

TEST_CASE("quantile table and parameter validation") {
  CHECK_THROWS_AS(CounterfactualDistribution::from_quantile_table({0.0}, {1.0}), ValidationError);
  CHECK_THROWS_AS(CounterfactualDistribution::from_quantile_table({0.0, 0.5, 0.4}, {1, 2, 3}), ValidationError);
  CHECK_THROWS_AS(CounterfactualDistribution::from_quantile_table({0.0, 1.2}, {1, 2}), ValidationError);
  CHECK_THROWS_AS(CounterfactualDistribution::from_quantile_table({0.0, 1.0}, {2, 1}), ValidationError);
  CHECK_THROWS_AS(CounterfactualDistribution::normal(0.0, 0.0), ValidationError);
  CHECK_THROWS_AS(CounterfactualDistribution::uniform(1.0, 1.0), ValidationError);
  CHECK_THROWS_AS(CounterfactualDistribution::custom({}, {}), ValidationError);
}

TEST_CASE("weighted ECDF counterfactual is a step law") {
  WeightedEcdf F(testing::vec({0.0, 1.0, 2.0}), testing::vec({1.0, 2.0, 1.0}));
  auto G = CounterfactualDistribution::from_weighted_ecdf(F);
  CHECK(G.cdf(0.5) == doctest::Approx(0.25));
  CHECK(G.cdf(1.0) == doctest::Approx(0.75));
  CHECK(G.pdf(0.5) == 0.0);
  CHECK(G.quantile(0.5) == 1.0);
  CHECK(G.quantile_slope(0.5) == 0.0);
}

TEST_CASE("shift directions") {
  auto G = CounterfactualDistribution::normal(0.0, 1.0);
  for (double x = -2.0; x <= 2.0; x += 0.25) {
    double F = G.cdf(x), f = G.pdf(x);
    CHECK(std::abs(*shift_direction(G, F, f, x, ShiftKind::mqs)) < 1e-12);
    CHECK(std::abs(*shift_direction(G, F, f, x, ShiftKind::mds)) < 1e-15);
    CHECK(*shift_direction(G, F, f, x, ShiftKind::mls) == 1.0);
  }
  auto H = CounterfactualDistribution::normal(0.5, 1.0);
  auto F0 = CounterfactualDistribution::normal(0.0, 1.0);
  double x = 0.3;
  CHECK(*shift_direction(H, F0.cdf(x), F0.pdf(x), x, ShiftKind::mqs) == doctest::Approx(0.5));
  CHECK(*shift_direction(H, F0.cdf(x), F0.pdf(x), x, ShiftKind::mds) ==
        doctest::Approx(-(H.cdf(x) - F0.cdf(x)) / F0.pdf(x)));
  CHECK_FALSE(shift_direction(H, 0.5, 0.0, x, ShiftKind::mds).has_value());
  CHECK_FALSE(shift_direction(H, 0.5, 0.3, x, ShiftKind::mds, false).has_value());
  CHECK(shift_direction(H, 0.5, 0.0, x, ShiftKind::mqs).has_value());
}
