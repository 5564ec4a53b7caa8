#include "uqe/kernel.hpp"

#include <cmath>

#include "uqe/errors.hpp"

namespace uqe {

Kernel Kernel::parse(std::string_view name) {
  if (name == "epanechnikov") return Kernel(KernelKind::epanechnikov);
  if (name == "biweight") return Kernel(KernelKind::biweight);
  if (name == "triangular") return Kernel(KernelKind::triangular);
  throw ValidationError("unknown kernel '" + std::string(name) + "'");
}

std::string Kernel::name() const {
  switch (kind_) {
    case KernelKind::epanechnikov: return "epanechnikov";
    case KernelKind::biweight: return "biweight";
    default: return "triangular";
  }
}

double Kernel::operator()(double u) const {
  if (!(std::abs(u) < 1.0)) return 0.0;
  switch (kind_) {
    case KernelKind::epanechnikov: return 0.75 * (1.0 - u * u);
    case KernelKind::biweight: {
      double v = 1.0 - u * u;
      return 0.9375 * v * v;
    }
    default: return 1.0 - std::abs(u);
  }
}

double Kernel::d1(double u) const {
  if (!(std::abs(u) < 1.0)) return 0.0;
  switch (kind_) {
    case KernelKind::epanechnikov: return -1.5 * u;
    case KernelKind::biweight: return -3.75 * u * (1.0 - u * u);
    default: return u > 0 ? -1.0 : (u < 0 ? 1.0 : 0.0);
  }
}

double Kernel::d2(double u) const {
  if (!(std::abs(u) < 1.0)) return 0.0;
  switch (kind_) {
    case KernelKind::epanechnikov: return -1.5;
    case KernelKind::biweight: return -3.75 * (1.0 - 3.0 * u * u);
    default: return 0.0;
  }
}

double Kernel::roughness() const {
  switch (kind_) {
    case KernelKind::epanechnikov: return 3.0 / 5.0;
    case KernelKind::biweight: return 5.0 / 7.0;
    default: return 2.0 / 3.0;
  }
}

double Kernel::second_moment() const {
  switch (kind_) {
    case KernelKind::epanechnikov: return 1.0 / 5.0;
    case KernelKind::biweight: return 1.0 / 7.0;
    default: return 1.0 / 6.0;
  }
}

}  // namespace uqe
