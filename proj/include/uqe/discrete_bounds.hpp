#pragma once

#include <optional>
#include <vector>

#include "uqe/counterfactual.hpp"
#include "uqe/uqe.hpp"

namespace uqe {

// Support points x^1 < ... < x^l with the fitted and counterfactual CDFs at each point.
struct DiscreteSupport {
  std::vector<double> points;
  std::vector<double> F_hat;
  std::vector<double> G;
};

DiscreteSupport discrete_support(const MergedSample& merged, const ThetaEstimate& theta,
                                 const CounterfactualDistribution& G, Index max_levels = 50);

// Step distribution putting cdf[j] - cdf[j-1] on points[j].
CounterfactualDistribution discrete_counterfactual(const std::vector<double>& points,
                                                   const std::vector<double>& cdf);

double period_bound(double lambda_prev, double lambda_cur, double G_prev, double F_prev,
                    double f_y_at_q);

struct PeriodContribution {
  Index j = 0;  // 1-based level index, j >= 2
  double x_prev = 0.0;
  double x = 0.0;
  double G_prev = 0.0;
  double F_prev = 0.0;
  bool in_j_plus = true;  // G(x^{j-1}) <= F_hat(x^{j-1})
  Index z_star = 0;       // row of the search set maximizing Lambda(x^{j-1}) - Lambda(x^j)
  Index z_dagger = 0;     // row minimizing it
  double h_star = 0.0;
  double h_dagger = 0.0;
};

struct BoundsResult {
  double lower = 0.0;
  double upper = 0.0;
  bool collapsed = false;
  double tau = 0.0;
  double f_y_at_q = 0.0;
  DiscreteSupport support;
  MatrixXd z1_search;  // distinct z1 rows searched
  std::vector<PeriodContribution> periods;
};

struct BoundsOptions {
  Index max_levels = 50;
  double collapse_tol = 1e-10;
  std::optional<MatrixXd> z1_search;  // default: distinct observed z1 rows
};

// Sums run over j = 2..l: the j = 1 term vanishes because F_hat(x^0) = G(x^0) = 0.
BoundsResult estimate_bounds(const MergedSample& merged, const ThetaEstimate& theta,
                             const CounterfactualDistribution& G, const BoundsOptions& opts = {});

}  // namespace uqe
