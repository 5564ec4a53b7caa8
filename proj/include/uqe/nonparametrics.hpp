#pragma once

#include <Eigen/Dense>
#include <vector>

#include "uqe/kernel.hpp"
#include "uqe/sample.hpp"

namespace uqe {

// Left-continuous empirical quantile: the ceil(n tau)-th order statistic.
double empirical_quantile(const VectorXd& y, double tau);
double empirical_quantile(const MergedSample& merged, double tau);

// n^-0.01 * 1.06 * min(sd, IQR) * n^-0.2 over the study outcomes.
double rule_of_thumb_bandwidth(const VectorXd& y);

// 1.06 * weighted sd * n^-1/3.
double covariate_bandwidth(const VectorXd& x, const VectorXd& weights);

double kde(const VectorXd& data, double at, double b, const Kernel& kernel);
double kde_outcome_density(const MergedSample& merged, double at, double b, const Kernel& kernel);

struct DensityDerivatives {
  double d1;
  double d2;
};

// First and second derivatives of an unweighted KDE; needs a kernel with a
// continuous first derivative (the biweight is used by the estimator).
DensityDerivatives kde_derivatives(const VectorXd& data, double at, double b, const Kernel& kernel);

// Weighted step CDF. Cumulative weights are divided by their final partial sum,
// so the terminal value is exactly 1.
class WeightedEcdf {
 public:
  WeightedEcdf() = default;
  WeightedEcdf(const VectorXd& x, const VectorXd& weights);

  double operator()(double at) const;
  double quantile(double u) const;

  Index size() const { return static_cast<Index>(x_.size()); }
  const std::vector<double>& sorted_x() const { return x_; }
  const std::vector<Index>& order() const { return order_; }  // original index per sorted slot
  double value_sorted(Index k) const { return cum_[tie_end_[k]]; }
  double mass_sorted(Index k) const { return mass_[k]; }

 private:
  std::vector<double> x_;
  std::vector<double> cum_;
  std::vector<double> mass_;
  std::vector<Index> order_;
  std::vector<Index> tie_end_;
};

WeightedEcdf weighted_ecdf(const MergedSample& merged, const VectorXd& ell_hat);

// Weighted KDE of the covariate with the boundary trimming region
// [min x + b * rho/2, max x - b * rho/2].
class CovariateDensity {
 public:
  CovariateDensity() = default;
  CovariateDensity(const VectorXd& x, const VectorXd& weights, double b, const Kernel& kernel);

  double operator()(double at) const;
  bool in_trim(double at) const { return at >= lo_ && at <= hi_; }
  double bandwidth() const { return b_; }
  double trim_lo() const { return lo_; }
  double trim_hi() const { return hi_; }
  const Kernel& kernel() const { return kernel_; }

  // Sorted support and normalized weights, for callers that run their own window sums.
  const std::vector<double>& sorted_x() const { return x_; }
  const std::vector<double>& sorted_weights() const { return w_; }

 private:
  std::vector<double> x_;
  std::vector<double> w_;
  double b_ = 1.0;
  double lo_ = 0.0;
  double hi_ = 0.0;
  Kernel kernel_;
};

struct TrimmedDensity {
  double f_hat;
  bool in_trim;
};

TrimmedDensity kde_covariate_density_trimmed(const MergedSample& merged, const VectorXd& ell_hat,
                                             double at, double b, const Kernel& kernel);

}  // namespace uqe
