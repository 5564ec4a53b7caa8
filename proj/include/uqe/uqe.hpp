#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "uqe/basis.hpp"
#include "uqe/counterfactual.hpp"
#include "uqe/kernel.hpp"
#include "uqe/link.hpp"
#include "uqe/nonparametrics.hpp"
#include "uqe/outcome_model.hpp"
#include "uqe/propensity.hpp"
#include "uqe/sample.hpp"

namespace uqe {

struct EstimatorConfig {
  LinkKind propensity_link = LinkKind::logit;
  std::vector<std::string> k_terms{"1", "z1_*", "z2_*"};
  std::vector<std::string> t_terms{"1", "z1_*", "z2_*"};
  std::vector<std::string> e_terms{"1", "z1_*", "z2_*"};
  LinkKind lambda_link = LinkKind::logit;
  std::vector<std::string> lambda_index{"1", "z1_*", "x", "x^2"};
  KernelKind kernel_y = KernelKind::epanechnikov;
  KernelKind kernel_x = KernelKind::epanechnikov;
  std::optional<double> bandwidth_y;  // nullopt: rule of thumb
  std::optional<double> bandwidth_x;  // nullopt: 1.06 sd n^-1/3
  double derivative_bandwidth_factor = 2.0;
  GmmWeighting weighting = GmmWeighting::identity;
  double gmm_tol = 1e-10;
  int gmm_max_iter = 200;
  SolverOptions solver{};
  double density_floor = 1e-3;  // MDS points with f_hat < floor * max f_hat are dropped
  bool recenter_ci = false;
  double ci_level = 0.95;
};

// Fitted nuisances for one tau: (q, gamma, lambda_s, lambda_a, beta) plus the
// nonparametric pieces built from them.
struct ThetaEstimate {
  double tau = 0.5;
  double q_hat = 0.0;
  Basis k_basis;
  Basis t_basis;
  Basis e_basis;
  LambdaModel lambda;
  PropensityFit propensity;
  GmmFit gmm;
  MatrixXd E;
  Kernel kernel_y;
  Kernel kernel_x;
  double b_y = 0.0;
  double b_x = 0.0;
  double f_y = 0.0;     // outcome density at q_hat
  double f_y_d1 = 0.0;  // its derivatives, from a biweight KDE with a wider bandwidth
  double f_y_d2 = 0.0;
  WeightedEcdf F_hat;
  CovariateDensity f_x;
  double density_floor = 1e-3;
};

ThetaEstimate fit_nuisances(const MergedSample& merged, double tau, const EstimatorConfig& cfg);

// The fitted covariate distribution itself, usable as G (zero shift).
CounterfactualDistribution status_quo(const ThetaEstimate& theta);

struct UqeResult {
  double tau = 0.0;
  ShiftKind kind = ShiftKind::mqs;
  double point = 0.0;
  double d_hat = 0.0;
  double f_y_at_q = 0.0;
  double bias = 0.0;
  double se_plugin = 0.0;
  double se_improved = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double statistic = 0.0;
  double p_value = 1.0;
  Index n_kept = 0;
  Index n_trimmed = 0;
  double jacobian_condition = 0.0;
  bool plugin_fallback = false;
  std::vector<std::string> warnings;
};

struct InfluenceComponents {
  VectorXd psi_fy;     // n rows
  VectorXd psi_d;
  VectorXd psi;        // psi_fy - psi_d / f
  VectorXd psi_theta_term;  // M' psi_theta
  VectorXd psi_g;
  VectorXd psi_avg;
  MatrixXd psi_theta;  // n x (1 + d_k + 2 d_t + d_beta), order (q, gamma, lambda_s, lambda_a, beta)
  VectorXd M;          // d d_hat / d(gamma, lambda_s, lambda_a, beta)
  VectorXd pi_x;       // auxiliary rows: kernel-smoothed MDS correction (zero otherwise)
  MatrixXd stacked_jacobian;
  double condition = 0.0;
  std::vector<char> kept;  // auxiliary rows retained in d_hat
};

double estimate_d(const MergedSample& merged, const ThetaEstimate& theta,
                  const CounterfactualDistribution& G, ShiftKind kind);

UqeResult estimate_uqe(const MergedSample& merged, const ThetaEstimate& theta,
                       const CounterfactualDistribution& G, ShiftKind kind,
                       const EstimatorConfig& cfg = {}, InfluenceComponents* components = nullptr);

InfluenceComponents influence_components(const MergedSample& merged, const ThetaEstimate& theta,
                                         const CounterfactualDistribution& G, ShiftKind kind);

double bias_term(double d_hat, double f_y, double f_y_d2, double b_y, const Kernel& kernel);
double plugin_se(double d_hat, double f_y, double q0_hat, const Kernel& kernel, Index n, double b_y);
double improved_se(const InfluenceComponents& components);

struct ZeroTest {
  double statistic;
  double p_value;
};
ZeroTest zero_effect_test(const InfluenceComponents& components, double d_hat);

// d_hat as a function of (gamma, lambda_s, lambda_a, beta), holding the data,
// bandwidths and (optionally) the retained-row set fixed.
struct ThetaPoint {
  VectorXd gamma;
  VectorXd lambda_s;
  VectorXd lambda_a;
  VectorXd beta;

  static ThetaPoint from(const ThetaEstimate& theta);
  VectorXd flatten() const;
  ThetaPoint with(const VectorXd& flat) const;
};

struct DEvaluation {
  double d = 0.0;
  VectorXd gradient;  // empty unless requested
  Index n_kept = 0;
  std::vector<char> kept;
};

DEvaluation evaluate_d(const MergedSample& merged, const ThetaEstimate& theta, const ThetaPoint& at,
                       const CounterfactualDistribution& G, ShiftKind kind, bool with_gradient,
                       const std::vector<char>* fixed_keep = nullptr);

}  // namespace uqe
