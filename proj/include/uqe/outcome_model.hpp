#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>

#include "uqe/basis.hpp"
#include "uqe/link.hpp"
#include "uqe/propensity.hpp"
#include "uqe/sample.hpp"

namespace uqe {

// Lambda(x, z1; beta) = link(features(x, z1)' beta).
class LambdaModel {
 public:
  LambdaModel() = default;
  LambdaModel(Basis index, LinkFunction link);

  const Basis& index() const { return index_; }
  const LinkFunction& link() const { return link_; }
  Index size() const { return index_.size(); }
  bool involves_x() const { return index_.involves_x(); }

  struct Eval {
    double value;
    double dx;
    VectorXd dbeta;
    VectorXd dxdbeta;
  };

  Eval eval(double x, const MatrixXd& z1, Index row, const VectorXd& beta) const;
  double value(double x, const MatrixXd& z1, Index row, const VectorXd& beta) const;

  // Feature rows F and their x-derivatives D at (x(i), z1 row offset + i).
  void design(const VectorXd& x, const MatrixXd& z1, Index offset, MatrixXd& F, MatrixXd& D) const;

 private:
  Basis index_;
  LinkFunction link_;
};

// Lambda and its derivative blocks at one (x, z1) point, z1 given as a row vector.
LambdaModel::Eval lambda_eval(double x, const Eigen::RowVectorXd& z1, const VectorXd& beta,
                              const LambdaModel& model);

// AST moment (pi_s r 1(y <= q) - pi_a (1 - r) Lambda) e(z) for one merged row.
VectorXd moment_function(const MergedSample& merged, Index row, const PropensityFit& prop,
                         double q_hat, const MatrixXd& E, const LambdaModel& model,
                         const VectorXd& beta);

// Sample moments as functions of beta, with the study-side part cached.
class GmmProblem {
 public:
  GmmProblem(const MergedSample& merged, const PropensityFit& prop, double q_hat, MatrixXd E,
             const LambdaModel& model);

  Index dim_e() const { return E_.cols(); }
  Index dim_beta() const { return model_.size(); }
  const MatrixXd& E() const { return E_; }

  VectorXd mean_moment(const VectorXd& beta) const;
  MatrixXd jacobian(const VectorXd& beta) const;  // d mean_moment / d beta'
  MatrixXd moments(const VectorXd& beta) const;   // n x d_e per-row moments
  double objective(const VectorXd& beta, const MatrixXd& omega) const;
  VectorXd gradient(const VectorXd& beta, const MatrixXd& omega) const;
  VectorXd start() const;

 private:
  const MergedSample& merged_;
  const PropensityFit& prop_;
  MatrixXd E_;
  LambdaModel model_;
  VectorXd study_part_;
  VectorXd indicator_;  // 1(y <= q) on study rows
  MatrixXd F_;          // auxiliary feature rows
  MatrixXd D_;
  double q_hat_;
};

enum class GmmWeighting { identity, twostep };

struct GmmOptions {
  GmmWeighting weighting = GmmWeighting::identity;
  double tol = 1e-10;
  int max_iter = 200;
  int multistart = 5;
  std::uint64_t seed = 0x5eed;
  std::optional<MatrixXd> omega;  // overrides the weighting rule when set
  double flat_threshold = 1e-8;   // smallest / largest Jacobian singular value
};

struct GmmFit {
  VectorXd beta;
  double objective = 0.0;
  VectorXd moment_mean;
  MatrixXd omega;
  bool converged = false;
  int iterations = 0;
  double gradient_norm = 0.0;
  double jacobian_min_sv = 0.0;
  int starts_used = 1;
};

GmmFit fit_beta(const MergedSample& merged, const PropensityFit& prop, double q_hat,
                const MatrixXd& E, const LambdaModel& model, const GmmOptions& opts = {});

}  // namespace uqe
