#pragma once

#include <Eigen/Dense>

#include "uqe/basis.hpp"
#include "uqe/link.hpp"
#include "uqe/sample.hpp"

namespace uqe {

struct SolverOptions {
  double tol = 1e-10;        // on the score / residual norm divided by n
  int max_iter = 100;
  double prob_floor = 1e-6;  // every fitted L must stay in (floor, 1 - floor)
};

struct StageDiagnostics {
  bool converged = false;
  int iterations = 0;
  double gradient_norm = 0.0;
};

// Bernoulli MLE of R on k(Z). K is the n x d_k design in merged-row order.
VectorXd fit_propensity(const MergedSample& merged, const MatrixXd& K, const LinkFunction& link,
                        const SolverOptions& opts = {}, StageDiagnostics* diag = nullptr);

struct TiltFit {
  VectorXd lambda_s;
  VectorXd lambda_a;
  StageDiagnostics stage_s;
  StageDiagnostics stage_a;
};

// Auxiliary-to-study tilting parameters; T must have a constant first column.
TiltFit fit_tilts(const MergedSample& merged, const MatrixXd& K, const VectorXd& gamma,
                  const MatrixXd& T, const LinkFunction& link, const SolverOptions& opts = {});

struct TiltWeights {
  VectorXd pi_s;  // L(k'g) / L(k'g + t'ls), all rows
  VectorXd pi_a;  // L(k'g) / (1 - L(k'g + t'la)), all rows
};

TiltWeights compute_tilt_weights(const MatrixXd& K, const MatrixXd& T, const VectorXd& gamma,
                                 const VectorXd& lambda_s, const VectorXd& lambda_a,
                                 const LinkFunction& link, double floor = 1e-6);

// (n_a / n_s) L(k'g + t'ls) / (1 - L(k'g + t'la)) at the auxiliary rows. Ka, Ta hold
// only the auxiliary rows.
VectorXd likelihood_ratio(const MatrixXd& Ka, const MatrixXd& Ta, const VectorXd& gamma,
                          const VectorXd& lambda_s, const VectorXd& lambda_a,
                          const LinkFunction& link, Index n_study, Index n_aux);

struct PropensityFit {
  LinkFunction link;
  MatrixXd K;
  MatrixXd T;
  VectorXd gamma;
  VectorXd lambda_s;
  VectorXd lambda_a;
  VectorXd pi_s;
  VectorXd pi_a;
  VectorXd ell_hat;  // auxiliary rows
  StageDiagnostics mle;
  StageDiagnostics tilt_s;
  StageDiagnostics tilt_a;
};

PropensityFit fit_propensity_model(const MergedSample& merged, const Basis& k_basis,
                                   const Basis& t_basis, const LinkFunction& link,
                                   const SolverOptions& opts = {});

// Derivatives of log L and log(1 - L) with respect to the index.
struct LogLinkDerivatives {
  double dlog;     // L'/L
  double d2log;    // d/dx (L'/L)
  double dlogc;    // -L'/(1-L)
  double d2logc;   // d/dx (-L'/(1-L))
};

LogLinkDerivatives log_link_derivatives(const LinkFunction& link, double index);

}  // namespace uqe
