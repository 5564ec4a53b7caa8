#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace uqe {

// One column of a basis: constant, a power of x, or a power of one instrument column.
struct Term {
  enum class Var { one, x, z1, z2 };
  Var var = Var::one;
  Eigen::Index column = -1;
  int power = 1;
  std::string label;
};

// Ordered list of terms. Parsed from strings such as
//   "1", "x", "x^2", "z1_*", "z2_*", "z1_educ", "z1_educ^2".
// A "*" wildcard expands to every column of the block in sample order.
class Basis {
 public:
  Basis() = default;
  explicit Basis(std::vector<Term> terms) : terms_(std::move(terms)) {}

  static Basis parse(const std::vector<std::string>& specs,
                     const std::vector<std::string>& z1_names,
                     const std::vector<std::string>& z2_names, bool allow_x, bool allow_z2);

  Eigen::Index size() const { return static_cast<Eigen::Index>(terms_.size()); }
  const std::vector<Term>& terms() const { return terms_; }
  std::vector<std::string> labels() const;
  bool constant_first() const;
  bool involves_x() const;
  bool involves_z1() const;

  // Rows of (z1, z2) mapped through the terms; x terms are not allowed here.
  Eigen::MatrixXd design(const Eigen::MatrixXd& z1, const Eigen::MatrixXd& z2) const;

  // Feature vector at (x, z1 row) and its derivative in x; z2 terms are not allowed here.
  void features(double x, const Eigen::MatrixXd& z1, Eigen::Index row, double* out,
                double* out_dx) const;

 private:
  std::vector<Term> terms_;
};

}  // namespace uqe
