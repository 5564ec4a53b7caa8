#include "uqe/counterfactual.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <limits>
#include <sstream>

#include "uqe/errors.hpp"

namespace uqe {

namespace {

constexpr double inv_sqrt2 = 0.70710678118654752440;
constexpr double inv_sqrt2pi = 0.39894228040143267794;

// Index k of the segment [x_k, x_{k+1}) holding v, clamped to the valid range.
std::size_t segment(const std::vector<double>& knots, double v) {
  auto it = std::upper_bound(knots.begin(), knots.end(), v);
  std::size_t k = it == knots.begin() ? 0 : static_cast<std::size_t>(it - knots.begin()) - 1;
  return std::min(k, knots.size() - 2);
}

}  // namespace

ShiftKind parse_shift(std::string_view name) {
  if (name == "mds" || name == "MDS") return ShiftKind::mds;
  if (name == "mqs" || name == "MQS") return ShiftKind::mqs;
  if (name == "mls" || name == "MLS") return ShiftKind::mls;
  throw ValidationError("unknown shift kind '" + std::string(name) + "' (expected mds, mqs or mls)");
}

std::string shift_name(ShiftKind kind) {
  switch (kind) {
    case ShiftKind::mds: return "mds";
    case ShiftKind::mqs: return "mqs";
    default: return "mls";
  }
}

CounterfactualDistribution CounterfactualDistribution::from_sample(std::vector<double> sample) {
  for (double v : sample)
    if (!std::isfinite(v)) throw ValidationError("counterfactual sample has non-finite values");
  std::sort(sample.begin(), sample.end());
  const double m = static_cast<double>(sample.size());
  CounterfactualDistribution G;
  G.source_ = Source::sample_ecdf_interpolated;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    if (i + 1 < sample.size() && sample[i + 1] == sample[i]) continue;
    G.kx_.push_back(sample[i]);
    G.ku_.push_back((static_cast<double>(i + 1) - 1.0) / (m - 1.0));
  }
  if (G.kx_.size() < 2) throw ValidationError("counterfactual sample needs at least two distinct points");
  G.ku_.back() = 1.0;
  return G;
}

CounterfactualDistribution CounterfactualDistribution::normal(double mu, double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(mu)) throw ValidationError("normal(mu, sigma) needs sigma > 0");
  CounterfactualDistribution G;
  G.source_ = Source::normal;
  G.a_ = mu;
  G.b_ = sigma;
  return G;
}

CounterfactualDistribution CounterfactualDistribution::uniform(double a, double b) {
  if (!(b > a)) throw ValidationError("uniform(a, b) needs a < b");
  CounterfactualDistribution G;
  G.source_ = Source::uniform;
  G.a_ = a;
  G.b_ = b;
  return G;
}

CounterfactualDistribution CounterfactualDistribution::from_quantile_table(std::vector<double> u,
                                                                           std::vector<double> q) {
  if (u.size() != q.size() || u.size() < 2)
    throw ValidationError("quantile table needs at least two (u, q) pairs");
  for (std::size_t k = 0; k < u.size(); ++k) {
    if (!(u[k] >= 0.0 && u[k] <= 1.0) || !std::isfinite(q[k]))
      throw ValidationError("quantile table entries must have u in [0,1] and finite q");
    if (k > 0 && !(u[k] > u[k - 1] && q[k] > q[k - 1]))
      throw ValidationError("quantile table must be strictly increasing in both columns");
  }
  CounterfactualDistribution G;
  G.source_ = Source::quantile_table;
  G.kx_ = std::move(q);
  G.ku_ = std::move(u);
  return G;
}

CounterfactualDistribution CounterfactualDistribution::from_weighted_ecdf(WeightedEcdf ecdf) {
  CounterfactualDistribution G;
  G.source_ = Source::weighted_ecdf;
  G.step_ = std::make_shared<const WeightedEcdf>(std::move(ecdf));
  return G;
}

CounterfactualDistribution CounterfactualDistribution::custom(std::function<double(double)> cdf,
                                                              std::function<double(double)> pdf,
                                                              std::function<double(double)> quantile,
                                                              std::string label) {
  if (!cdf || !pdf) throw ValidationError("custom counterfactual needs cdf and pdf");
  CounterfactualDistribution G;
  G.source_ = Source::custom;
  G.cdf_fn_ = std::move(cdf);
  G.pdf_fn_ = std::move(pdf);
  G.quantile_fn_ = std::move(quantile);
  G.label_ = std::move(label);
  return G;
}

std::string CounterfactualDistribution::describe() const {
  std::ostringstream os;
  switch (source_) {
    case Source::sample_ecdf_interpolated:
      os << "sample(" << kx_.size() << " distinct points)";
      break;
    case Source::normal: os << "normal(" << a_ << "," << b_ << ")"; break;
    case Source::uniform: os << "uniform(" << a_ << "," << b_ << ")"; break;
    case Source::quantile_table: os << "quantile_table(" << kx_.size() << " knots)"; break;
    case Source::weighted_ecdf: os << "weighted_ecdf(" << step_->size() << " points)"; break;
    case Source::custom: os << label_; break;
  }
  return os.str();
}

double CounterfactualDistribution::cdf(double x) const {
  switch (source_) {
    case Source::normal: return 0.5 * std::erfc(-(x - a_) / b_ * inv_sqrt2);
    case Source::uniform: return std::clamp((x - a_) / (b_ - a_), 0.0, 1.0);
    case Source::weighted_ecdf: return (*step_)(x);
    case Source::custom: return cdf_fn_(x);
    default: {
      if (x < kx_.front()) return 0.0;
      if (x >= kx_.back()) return 1.0;
      std::size_t k = segment(kx_, x);
      double t = (x - kx_[k]) / (kx_[k + 1] - kx_[k]);
      return ku_[k] + t * (ku_[k + 1] - ku_[k]);
    }
  }
}

double CounterfactualDistribution::pdf(double x) const {
  switch (source_) {
    case Source::normal: {
      double z = (x - a_) / b_;
      return inv_sqrt2pi * std::exp(-0.5 * z * z) / b_;
    }
    case Source::uniform: return (x >= a_ && x < b_) ? 1.0 / (b_ - a_) : 0.0;
    case Source::weighted_ecdf: return 0.0;
    case Source::custom: return pdf_fn_(x);
    default: {
      if (x < kx_.front() || x >= kx_.back()) return 0.0;
      std::size_t k = segment(kx_, x);
      return (ku_[k + 1] - ku_[k]) / (kx_[k + 1] - kx_[k]);
    }
  }
}

double CounterfactualDistribution::quantile(double u) const {
  switch (source_) {
    case Source::normal:
      if (u <= 0.0) return -std::numeric_limits<double>::infinity();
      if (u >= 1.0) return std::numeric_limits<double>::infinity();
      return a_ + b_ * boost::math::quantile(boost::math::normal(), u);
    case Source::uniform: return a_ + std::clamp(u, 0.0, 1.0) * (b_ - a_);
    case Source::weighted_ecdf: return step_->quantile(u);
    case Source::custom: return quantile_fn_ ? quantile_fn_(u) : custom_quantile(u);
    default: {
      if (u <= ku_.front()) return kx_.front();
      if (u >= ku_.back()) return kx_.back();
      auto it = std::lower_bound(ku_.begin(), ku_.end(), u);
      std::size_t k = static_cast<std::size_t>(it - ku_.begin()) - 1;
      double t = (u - ku_[k]) / (ku_[k + 1] - ku_[k]);
      return kx_[k] + t * (kx_[k + 1] - kx_[k]);
    }
  }
}

double CounterfactualDistribution::quantile_slope(double u) const {
  switch (source_) {
    case Source::normal: {
      double x = quantile(u);
      if (!std::isfinite(x)) return std::numeric_limits<double>::infinity();
      return 1.0 / pdf(x);
    }
    case Source::uniform: return b_ - a_;
    case Source::weighted_ecdf: return 0.0;
    case Source::custom: {
      double p = pdf(quantile(u));
      return p > 0 ? 1.0 / p : std::numeric_limits<double>::infinity();
    }
    default: {
      std::size_t k = segment(ku_, u);
      return (kx_[k + 1] - kx_[k]) / (ku_[k + 1] - ku_[k]);
    }
  }
}

double CounterfactualDistribution::custom_quantile(double u) const {
  if (u <= 0.0) return -std::numeric_limits<double>::infinity();
  if (u >= 1.0) return std::numeric_limits<double>::infinity();
  double lo = -1.0, hi = 1.0;
  while (cdf_fn_(lo) >= u) lo *= 2.0;
  while (cdf_fn_(hi) < u) hi *= 2.0;
  for (int it = 0; it < 200 && hi - lo > 1e-13 * std::max(1.0, std::abs(lo)); ++it) {
    double mid = 0.5 * (lo + hi);
    if (cdf_fn_(mid) >= u) hi = mid; else lo = mid;
  }
  return hi;
}

std::optional<double> shift_direction(const CounterfactualDistribution& G, double F_hat,
                                      double f_hat, double x, ShiftKind kind, bool usable) {
  switch (kind) {
    case ShiftKind::mls: return 1.0;
    case ShiftKind::mqs: return G.quantile(F_hat) - x;
    default:
      if (!usable || !(f_hat > 0.0)) return std::nullopt;
      return -(G.cdf(x) - F_hat) / f_hat;
  }
}

}  // namespace uqe
