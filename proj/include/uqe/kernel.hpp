#pragma once

#include <string>
#include <string_view>

namespace uqe {

enum class KernelKind { epanechnikov, biweight, triangular };

// Second-order symmetric kernels supported on [-1, 1] (support diameter rho = 2).
class Kernel {
 public:
  explicit Kernel(KernelKind kind = KernelKind::epanechnikov) : kind_(kind) {}

  static Kernel parse(std::string_view name);

  KernelKind kind() const { return kind_; }
  std::string name() const;

  double operator()(double u) const;
  double d1(double u) const;
  double d2(double u) const;

  static constexpr double radius() { return 1.0; }
  static constexpr double diameter() { return 2.0; }
  double roughness() const;      // integral of K^2
  double second_moment() const;  // integral of u^2 K

 private:
  KernelKind kind_;
};

}  // namespace uqe
