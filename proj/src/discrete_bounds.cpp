#include "uqe/discrete_bounds.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "uqe/errors.hpp"

namespace uqe {

namespace {

MatrixXd distinct_rows(const MatrixXd& z1) {
  std::set<std::vector<double>> seen;
  std::vector<std::vector<double>> rows;
  for (Index i = 0; i < z1.rows(); ++i) {
    std::vector<double> r(z1.cols());
    for (Index j = 0; j < z1.cols(); ++j) r[j] = z1(i, j);
    if (seen.insert(r).second) rows.push_back(std::move(r));
  }
  MatrixXd out(static_cast<Index>(rows.size()), z1.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (Index j = 0; j < z1.cols(); ++j) out(static_cast<Index>(i), j) = rows[i][j];
  return out;
}

}  // namespace

DiscreteSupport discrete_support(const MergedSample& merged, const ThetaEstimate& theta,
                                 const CounterfactualDistribution& G, Index max_levels) {
  std::vector<double> pts(merged.x().data(), merged.x().data() + merged.n_aux());
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (static_cast<Index>(pts.size()) > max_levels) {
    std::ostringstream os;
    os << "covariate has " << pts.size() << " distinct values, more than max_levels = " << max_levels;
    throw ValidationError(os.str());
  }
  if (pts.size() < 2) throw ValidationError("discrete covariate needs at least two levels");

  DiscreteSupport s;
  s.points = pts;
  const double tol = 1e-9;
  const double below = pts.front() - 1.0;
  if (G.cdf(below) > tol) throw ValidationError("counterfactual puts mass below the covariate support");
  for (std::size_t j = 0; j < pts.size(); ++j) {
    s.F_hat.push_back(theta.F_hat(pts[j]));
    double g = G.cdf(pts[j]);
    if (j + 1 < pts.size()) {
      double mid = 0.5 * (pts[j] + pts[j + 1]);
      double before = 0.5 * (pts[j + 1] + mid);
      if (std::abs(G.cdf(mid) - g) > tol || std::abs(G.cdf(before) - g) > tol)
        throw ValidationError("counterfactual puts mass off the covariate support");
    }
    s.G.push_back(g);
  }
  if (std::abs(s.G.back() - 1.0) > tol)
    throw ValidationError("counterfactual puts mass above the covariate support");
  return s;
}

CounterfactualDistribution discrete_counterfactual(const std::vector<double>& points,
                                                   const std::vector<double>& cdf) {
  if (points.empty() || points.size() != cdf.size())
    throw ValidationError("discrete counterfactual needs one cdf value per support point");
  VectorXd x(static_cast<Index>(points.size())), w(static_cast<Index>(points.size()));
  double prev = 0.0;
  for (std::size_t j = 0; j < points.size(); ++j) {
    if (j > 0 && !(points[j] > points[j - 1]))
      throw ValidationError("discrete counterfactual points must be increasing");
    if (cdf[j] < prev - 1e-12 || cdf[j] > 1.0 + 1e-12)
      throw ValidationError("discrete counterfactual cdf must be nondecreasing in [0, 1]");
    x(j) = points[j];
    w(j) = std::max(0.0, cdf[j] - prev);
    prev = cdf[j];
  }
  if (std::abs(cdf.back() - 1.0) > 1e-12)
    throw ValidationError("discrete counterfactual cdf must end at 1");
  return CounterfactualDistribution::from_weighted_ecdf(WeightedEcdf(x, w));
}

double period_bound(double lambda_prev, double lambda_cur, double G_prev, double F_prev,
                    double f_y_at_q) {
  if (!(f_y_at_q > 0.0)) throw ValidationError("outcome density at the quantile must be positive");
  return -(lambda_prev - lambda_cur) * (G_prev - F_prev) / f_y_at_q;
}

BoundsResult estimate_bounds(const MergedSample& merged, const ThetaEstimate& theta,
                             const CounterfactualDistribution& G, const BoundsOptions& opts) {
  BoundsResult res;
  res.tau = theta.tau;
  res.f_y_at_q = theta.f_y;
  res.support = discrete_support(merged, theta, G, opts.max_levels);
  res.z1_search = opts.z1_search ? distinct_rows(*opts.z1_search) : distinct_rows(merged.z1());
  if (res.z1_search.rows() == 0) throw ValidationError("empty z1 search set");
  if (res.z1_search.cols() != merged.z1().cols())
    throw ValidationError("z1 search set has the wrong number of columns");

  const auto& pts = res.support.points;
  const VectorXd& beta = theta.gmm.beta;
  const Index m = res.z1_search.rows();
  std::vector<double> prev(m), cur(m);
  for (Index k = 0; k < m; ++k) prev[k] = theta.lambda.value(pts[0], res.z1_search, k, beta);
  bool invariant = true;
  for (std::size_t j = 1; j < pts.size(); ++j) {
    for (Index k = 0; k < m; ++k) cur[k] = theta.lambda.value(pts[j], res.z1_search, k, beta);
    PeriodContribution pc;
    pc.j = static_cast<Index>(j + 1);
    pc.x_prev = pts[j - 1];
    pc.x = pts[j];
    pc.G_prev = res.support.G[j - 1];
    pc.F_prev = res.support.F_hat[j - 1];
    pc.in_j_plus = pc.G_prev <= pc.F_prev;
    double best = -std::numeric_limits<double>::infinity(), worst = -best;
    for (Index k = 0; k < m; ++k) {
      double diff = prev[k] - cur[k];
      if (diff > best) { best = diff; pc.z_star = k; }
      if (diff < worst) { worst = diff; pc.z_dagger = k; }
    }
    if (best - worst > 0.0) invariant = false;
    pc.h_star = period_bound(prev[pc.z_star], cur[pc.z_star], pc.G_prev, pc.F_prev, theta.f_y);
    pc.h_dagger = period_bound(prev[pc.z_dagger], cur[pc.z_dagger], pc.G_prev, pc.F_prev, theta.f_y);
    if (pc.in_j_plus) {
      res.lower += pc.h_dagger;
      res.upper += pc.h_star;
    } else {
      res.lower += pc.h_star;
      res.upper += pc.h_dagger;
    }
    res.periods.push_back(pc);
    std::swap(prev, cur);
  }
  res.collapsed = invariant || res.upper - res.lower <= opts.collapse_tol;
  return res;
}

}  // namespace uqe
