#pragma once

#include <string>
#include <string_view>

namespace uqe {

enum class LinkKind { logit, probit };

// L, 1 - L (computed without cancellation), L' and L'' at one index value.
struct LinkValue {
  double value;
  double complement;
  double d1;
  double d2;
};

class LinkFunction {
 public:
  explicit LinkFunction(LinkKind kind = LinkKind::logit) : kind_(kind) {}

  static LinkFunction parse(std::string_view name);

  LinkKind kind() const { return kind_; }
  std::string name() const;

  LinkValue eval(double index) const;
  double cdf(double index) const;
  double complement(double index) const;
  double inverse(double p) const;

  // log L and log(1 - L), finite for large |index|.
  double log_cdf(double index) const;
  double log_complement(double index) const;

 private:
  LinkKind kind_;
};

}  // namespace uqe
