#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "uqe/nonparametrics.hpp"

namespace uqe {

enum class ShiftKind { mds, mqs, mls };

ShiftKind parse_shift(std::string_view name);
std::string shift_name(ShiftKind kind);

// Counterfactual covariate distribution G as a (cdf, pdf, quantile) triple.
// quantile_slope(u) is dG^{-1}/du (right derivative at knots).
class CounterfactualDistribution {
 public:
  enum class Source {
    sample_ecdf_interpolated,
    normal,
    uniform,
    quantile_table,
    weighted_ecdf,
    custom,
  };

  // Linear interpolation of the ECDF between distinct order statistics, with knot
  // heights (m F_m(v) - 1)/(m - 1); continuous and strictly increasing on [min, max].
  static CounterfactualDistribution from_sample(std::vector<double> sample);
  static CounterfactualDistribution normal(double mu, double sigma);
  static CounterfactualDistribution uniform(double a, double b);
  // Knots (u_j, q_j), both strictly increasing, u_j in [0, 1].
  static CounterfactualDistribution from_quantile_table(std::vector<double> u, std::vector<double> q);
  // Step distribution of a weighted sample (density 0 almost everywhere).
  static CounterfactualDistribution from_weighted_ecdf(WeightedEcdf ecdf);
  static CounterfactualDistribution custom(std::function<double(double)> cdf,
                                           std::function<double(double)> pdf,
                                           std::function<double(double)> quantile = {},
                                           std::string label = "custom");

  Source source() const { return source_; }
  std::string describe() const;

  double cdf(double x) const;
  double pdf(double x) const;
  double quantile(double u) const;
  double quantile_slope(double u) const;

 private:
  Source source_ = Source::normal;
  double a_ = 0.0;  // normal: mean, uniform: lower end
  double b_ = 1.0;  // normal: sd, uniform: upper end
  std::vector<double> kx_;  // piecewise-linear knots
  std::vector<double> ku_;
  std::shared_ptr<const WeightedEcdf> step_;
  std::function<double(double)> cdf_fn_;
  std::function<double(double)> pdf_fn_;
  std::function<double(double)> quantile_fn_;
  std::string label_;

  double custom_quantile(double u) const;
};

// Shift direction at x given F_hat(x) and f_hat(x). MQS: G^{-1}(F) - x; MDS:
// -(G(x) - F)/f; MLS: 1. Returns nullopt for an MDS point whose density is unusable.
std::optional<double> shift_direction(const CounterfactualDistribution& G, double F_hat,
                                      double f_hat, double x, ShiftKind kind, bool usable = true);

}  // namespace uqe
