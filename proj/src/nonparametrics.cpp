#include "uqe/nonparametrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "uqe/errors.hpp"

namespace uqe {

double empirical_quantile(const VectorXd& y, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw ValidationError("tau must lie in (0,1)");
  const Index n = y.size();
  if (n < 1) throw ValidationError("empirical quantile of an empty sample");
  auto k = static_cast<Index>(std::ceil(static_cast<double>(n) * tau - 1e-9));
  k = std::clamp<Index>(k, 1, n);
  std::vector<double> v(y.data(), y.data() + n);
  std::nth_element(v.begin(), v.begin() + (k - 1), v.end());
  return v[k - 1];
}

double empirical_quantile(const MergedSample& merged, double tau) {
  return empirical_quantile(merged.y(), tau);
}

double rule_of_thumb_bandwidth(const VectorXd& y) {
  const Index n = y.size();
  if (n < 2) throw ValidationError("bandwidth rule needs at least two outcomes");
  double mean = y.mean();
  double sd = std::sqrt((y.array() - mean).square().sum() / static_cast<double>(n - 1));
  double iqr = empirical_quantile(y, 0.75) - empirical_quantile(y, 0.25);
  double spread = std::min(sd, iqr);
  if (!(spread > 0.0)) spread = sd;
  if (!(spread > 0.0)) throw ValidationError("outcomes have zero dispersion; no bandwidth");
  double nn = static_cast<double>(n);
  return std::pow(nn, -0.01) * 1.06 * spread * std::pow(nn, -0.2);
}

double covariate_bandwidth(const VectorXd& x, const VectorXd& w) {
  double total = w.sum();
  double mean = x.dot(w) / total;
  double var = (x.array() - mean).square().matrix().dot(w) / total;
  if (!(var > 0.0)) throw ValidationError("covariate has zero dispersion; no bandwidth");
  return 1.06 * std::sqrt(var) * std::pow(static_cast<double>(x.size()), -1.0 / 3.0);
}

double kde(const VectorXd& data, double at, double b, const Kernel& kernel) {
  if (!(b > 0.0)) throw ValidationError("bandwidth must be positive");
  double s = 0.0;
  for (Index i = 0; i < data.size(); ++i) s += kernel((data(i) - at) / b);
  return s / (static_cast<double>(data.size()) * b);
}

double kde_outcome_density(const MergedSample& merged, double at, double b, const Kernel& kernel) {
  return kde(merged.y(), at, b, kernel);
}

DensityDerivatives kde_derivatives(const VectorXd& data, double at, double b, const Kernel& kernel) {
  double s1 = 0.0, s2 = 0.0;
  for (Index i = 0; i < data.size(); ++i) {
    double u = (data(i) - at) / b;
    s1 -= kernel.d1(u);
    s2 += kernel.d2(u);
  }
  double n = static_cast<double>(data.size());
  return {s1 / (n * b * b), s2 / (n * b * b * b)};
}

WeightedEcdf::WeightedEcdf(const VectorXd& x, const VectorXd& w) {
  const Index n = x.size();
  if (n < 1 || w.size() != n) throw ValidationError("weighted ECDF needs matching non-empty inputs");
  order_.resize(n);
  std::iota(order_.begin(), order_.end(), Index{0});
  std::stable_sort(order_.begin(), order_.end(), [&](Index a, Index b) { return x(a) < x(b); });
  x_.resize(n);
  cum_.resize(n);
  mass_.resize(n);
  double run = 0.0;
  for (Index k = 0; k < n; ++k) {
    double wk = w(order_[k]);
    if (!(wk > 0.0)) throw ValidationError("weighted ECDF needs strictly positive weights");
    x_[k] = x(order_[k]);
    run += wk;
    cum_[k] = run;
  }
  for (Index k = 0; k < n; ++k) {
    mass_[k] = w(order_[k]) / run;
    cum_[k] /= run;
  }
  tie_end_.resize(n);
  for (Index k = n; k-- > 0;)
    tie_end_[k] = (k + 1 < n && x_[k + 1] == x_[k]) ? tie_end_[k + 1] : k;
}

double WeightedEcdf::operator()(double at) const {
  auto it = std::upper_bound(x_.begin(), x_.end(), at);
  if (it == x_.begin()) return 0.0;
  return cum_[static_cast<std::size_t>(it - x_.begin()) - 1];
}

double WeightedEcdf::quantile(double u) const {
  auto it = std::lower_bound(cum_.begin(), cum_.end(), u);
  if (it == cum_.end()) return x_.back();
  return x_[static_cast<std::size_t>(it - cum_.begin())];
}

WeightedEcdf weighted_ecdf(const MergedSample& merged, const VectorXd& ell_hat) {
  return WeightedEcdf(merged.x(), ell_hat);
}

CovariateDensity::CovariateDensity(const VectorXd& x, const VectorXd& w, double b,
                                   const Kernel& kernel)
    : b_(b), kernel_(kernel) {
  const Index n = x.size();
  if (n < 1) throw ValidationError("covariate density needs a non-empty auxiliary sample");
  if (!(b > 0.0)) throw ValidationError("bandwidth must be positive");
  std::vector<Index> order(n);
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index c) { return x(a) < x(c); });
  double total = w.sum();
  x_.resize(n);
  w_.resize(n);
  for (Index k = 0; k < n; ++k) {
    x_[k] = x(order[k]);
    w_[k] = w(order[k]) / total;
  }
  lo_ = x_.front() + b_ * Kernel::diameter() / 2.0;
  hi_ = x_.back() - b_ * Kernel::diameter() / 2.0;
}

double CovariateDensity::operator()(double at) const {
  auto first = std::lower_bound(x_.begin(), x_.end(), at - b_);
  double s = 0.0;
  for (auto it = first; it != x_.end() && *it <= at + b_; ++it)
    s += w_[static_cast<std::size_t>(it - x_.begin())] * kernel_((*it - at) / b_);
  return s / b_;
}

TrimmedDensity kde_covariate_density_trimmed(const MergedSample& merged, const VectorXd& ell_hat,
                                             double at, double b, const Kernel& kernel) {
  CovariateDensity f(merged.x(), ell_hat, b, kernel);
  return {f(at), f.in_trim(at)};
}

}  // namespace uqe
