#include "uqe/link.hpp"

#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <numbers>

#include "uqe/errors.hpp"

namespace uqe {

namespace {

constexpr double inv_sqrt2 = 0.70710678118654752440;
constexpr double inv_sqrt2pi = 0.39894228040143267794;

double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

LinkFunction LinkFunction::parse(std::string_view name) {
  if (name == "logit") return LinkFunction(LinkKind::logit);
  if (name == "probit") return LinkFunction(LinkKind::probit);
  throw ValidationError("unknown link '" + std::string(name) + "' (expected logit or probit)");
}

std::string LinkFunction::name() const {
  return kind_ == LinkKind::logit ? "logit" : "probit";
}

LinkValue LinkFunction::eval(double x) const {
  LinkValue v{};
  if (kind_ == LinkKind::logit) {
    v.value = logistic(x);
    v.complement = logistic(-x);
    v.d1 = v.value * v.complement;
    v.d2 = v.d1 * (v.complement - v.value);
  } else {
    v.value = 0.5 * std::erfc(-x * inv_sqrt2);
    v.complement = 0.5 * std::erfc(x * inv_sqrt2);
    v.d1 = inv_sqrt2pi * std::exp(-0.5 * x * x);
    v.d2 = -x * v.d1;
  }
  return v;
}

double LinkFunction::cdf(double x) const {
  if (kind_ == LinkKind::logit) return logistic(x);
  return 0.5 * std::erfc(-x * inv_sqrt2);
}

double LinkFunction::complement(double x) const { return cdf(-x); }

double LinkFunction::inverse(double p) const {
  if (!(p > 0.0 && p < 1.0)) throw ValidationError("link inverse needs p in (0,1)");
  if (kind_ == LinkKind::logit) return std::log(p / (1.0 - p));
  return boost::math::quantile(boost::math::normal(), p);
}

double LinkFunction::log_cdf(double x) const {
  if (kind_ == LinkKind::logit) {
    // log(1/(1+e^{-x}))
    return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
  }
  if (x > -30.0) return std::log(0.5 * std::erfc(-x * inv_sqrt2));
  // Mills-ratio asymptote far in the left tail
  return -0.5 * x * x - std::log(-x) - 0.5 * std::log(2.0 * std::numbers::pi);
}

double LinkFunction::log_complement(double x) const { return log_cdf(-x); }

}  // namespace uqe
