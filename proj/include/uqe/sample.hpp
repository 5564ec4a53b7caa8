#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

namespace uqe {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// The main sample: outcome plus instruments, covariate missing.
struct StudySample {
  VectorXd y;
  MatrixXd z1;
  MatrixXd z2;
  std::vector<std::string> z1_names;  // empty means z1_1, z1_2, ...
  std::vector<std::string> z2_names;
};

// The auxiliary sample: covariate plus instruments, outcome missing.
struct AuxSample {
  VectorXd x;
  MatrixXd z1;
  MatrixXd z2;
  std::vector<std::string> z1_names;
  std::vector<std::string> z2_names;
};

std::vector<std::string> default_names(const std::string& prefix, Index count);

// Study rows first (r = 1), then auxiliary rows (r = 0). Immutable.
class MergedSample {
 public:
  MergedSample() = default;

  Index n() const { return n_s_ + n_a_; }
  Index n_study() const { return n_s_; }
  Index n_aux() const { return n_a_; }
  double q0_hat() const { return static_cast<double>(n_s_) / static_cast<double>(n()); }

  int r(Index i) const { return i < n_s_ ? 1 : 0; }
  bool is_study(Index i) const { return i < n_s_; }
  std::optional<double> y_obs(Index i) const;
  std::optional<double> x_obs(Index i) const;

  // Outcomes of the study rows and covariate values of the auxiliary rows,
  // in merged-row order (aux row i sits at merged index n_study() + i).
  const VectorXd& y() const { return y_; }
  const VectorXd& x() const { return x_; }
  const MatrixXd& z1() const { return z1_; }
  const MatrixXd& z2() const { return z2_; }
  const std::vector<std::string>& z1_names() const { return z1_names_; }
  const std::vector<std::string>& z2_names() const { return z2_names_; }

  StudySample study() const;
  AuxSample aux() const;

  friend MergedSample merge_samples(const StudySample& study, const AuxSample& aux);

 private:
  Index n_s_ = 0;
  Index n_a_ = 0;
  VectorXd y_;
  VectorXd x_;
  MatrixXd z1_;
  MatrixXd z2_;
  std::vector<std::string> z1_names_;
  std::vector<std::string> z2_names_;
};

// Columns are matched by name; auxiliary columns are reordered to the study order.
MergedSample merge_samples(const StudySample& study, const AuxSample& aux);

struct OverlapColumn {
  std::string name;
  double study_min;
  double study_max;
  double aux_min;
  double aux_max;
  double excess;  // how far the study range sticks out of the auxiliary range
  bool flagged;
};

struct OverlapReport {
  std::vector<OverlapColumn> columns;
  std::size_t flagged_count() const;
};

OverlapReport validate_overlap(const MergedSample& merged, double tolerance = 0.0);

}  // namespace uqe
