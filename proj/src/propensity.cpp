#include "uqe/propensity.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "uqe/errors.hpp"

namespace uqe {

namespace {

constexpr double log_inv_sqrt2pi = -0.91893853320467274178;

void check_rank(const MatrixXd& X, Step step, const char* what) {
  Eigen::ColPivHouseholderQR<MatrixXd> qr(X);
  qr.setThreshold(1e-10);
  if (qr.rank() < X.cols()) {
    std::ostringstream os;
    os << what << " design is rank deficient (rank " << qr.rank() << " < " << X.cols() << ")";
    throw NumericalError(step, os.str());
  }
}

double loglik(const MergedSample& m, const VectorXd& idx, const LinkFunction& link) {
  double s = 0.0;
  for (Index i = 0; i < idx.size(); ++i)
    s += m.is_study(i) ? link.log_cdf(idx(i)) : link.log_complement(idx(i));
  return s;
}

struct Residual {
  VectorXd m;
  MatrixXd jac;
  bool finite = true;
};

// Tilting equation for one side. study = true gives the lambda_s system.
Residual tilt_system(const MergedSample& merged, const VectorXd& idx0, const VectorXd& L0,
                     const MatrixXd& T, const VectorXd& lambda, const LinkFunction& link, bool study) {
  const Index n = T.rows();
  const Index d = T.cols();
  Residual out{VectorXd::Zero(d), MatrixXd::Zero(d, d), true};
  VectorXd idx = idx0 + T * lambda;
  for (Index i = 0; i < n; ++i) {
    LinkValue v = link.eval(idx(i));
    double a, da;
    if (study) {
      double r = merged.is_study(i) ? 1.0 : 0.0;
      a = (r / v.value - 1.0) * L0(i);
      da = -r * v.d1 / (v.value * v.value) * L0(i);
    } else {
      double r = merged.is_study(i) ? 0.0 : 1.0;
      a = (r / v.complement - 1.0) * L0(i);
      da = r * v.d1 / (v.complement * v.complement) * L0(i);
    }
    if (!std::isfinite(a) || !std::isfinite(da)) {
      out.finite = false;
      return out;
    }
    out.m.noalias() += a * T.row(i).transpose();
    out.jac.noalias() += da * T.row(i).transpose() * T.row(i);
  }
  out.m /= static_cast<double>(n);
  out.jac /= static_cast<double>(n);
  return out;
}

VectorXd solve_tilt(const MergedSample& merged, const VectorXd& idx0, const VectorXd& L0,
                    const MatrixXd& T, const LinkFunction& link, bool study,
                    const SolverOptions& opts, StageDiagnostics& diag) {
  VectorXd lambda = VectorXd::Zero(T.cols());
  Residual cur = tilt_system(merged, idx0, L0, T, lambda, link, study);
  for (int it = 0; it < opts.max_iter; ++it) {
    diag.iterations = it;
    diag.gradient_norm = cur.m.norm();
    if (diag.gradient_norm <= opts.tol) {
      diag.converged = true;
      return lambda;
    }
    VectorXd step = cur.jac.fullPivLu().solve(-cur.m);
    if (!step.allFinite()) break;
    double t = 1.0;
    bool accepted = false;
    for (int half = 0; half < 40; ++half, t *= 0.5) {
      VectorXd trial = lambda + t * step;
      Residual next = tilt_system(merged, idx0, L0, T, trial, link, study);
      if (next.finite && next.m.norm() < cur.m.norm()) {
        lambda = trial;
        cur = std::move(next);
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
  }
  diag.gradient_norm = cur.m.norm();
  diag.converged = diag.gradient_norm <= opts.tol * 100.0;
  if (!diag.converged) {
    std::ostringstream os;
    os << (study ? "study" : "auxiliary") << " tilting equation did not converge (residual "
       << diag.gradient_norm << ")";
    throw NumericalError(Step::tilting, os.str());
  }
  return lambda;
}

void check_floor(const VectorXd& idx, const LinkFunction& link, double floor, Step step,
                 const char* what) {
  for (Index i = 0; i < idx.size(); ++i) {
    double v = link.cdf(idx(i));
    double c = link.complement(idx(i));
    if (!(v > floor && c > floor)) {
      std::ostringstream os;
      os << what << " probability " << v << " at row " << i << " leaves (" << floor << ", 1-"
         << floor << ")";
      throw NumericalError(step, os.str());
    }
  }
}

}  // namespace

LogLinkDerivatives log_link_derivatives(const LinkFunction& link, double x) {
  if (link.kind() == LinkKind::logit) {
    LinkValue v = link.eval(x);
    return {v.complement, -v.d1, -v.value, -v.d1};
  }
  double logphi = log_inv_sqrt2pi - 0.5 * x * x;
  double r = std::exp(logphi - link.log_cdf(x));
  double rc = std::exp(logphi - link.log_complement(x));
  return {r, -x * r - r * r, -rc, x * rc - rc * rc};
}

VectorXd fit_propensity(const MergedSample& merged, const MatrixXd& K, const LinkFunction& link,
                        const SolverOptions& opts, StageDiagnostics* diag_out) {
  const Index n = merged.n();
  if (K.rows() != n) throw ValidationError("propensity design has the wrong number of rows");
  if (!K.allFinite()) throw ValidationError("propensity design has non-finite entries");
  check_rank(K, Step::propensity, "propensity");

  StageDiagnostics diag;
  VectorXd gamma = VectorXd::Zero(K.cols());
  bool constant = (K.col(0).array() == 1.0).all();
  if (constant) gamma(0) = link.inverse(merged.q0_hat());

  auto gradient_hessian = [&](const VectorXd& g, VectorXd& grad, MatrixXd& hess) {
    grad.setZero(K.cols());
    hess.setZero(K.cols(), K.cols());
    VectorXd idx = K * g;
    for (Index i = 0; i < n; ++i) {
      LogLinkDerivatives d = log_link_derivatives(link, idx(i));
      double a = merged.is_study(i) ? d.dlog : d.dlogc;
      double h = merged.is_study(i) ? d.d2log : d.d2logc;
      grad.noalias() += a * K.row(i).transpose();
      hess.noalias() += h * K.row(i).transpose() * K.row(i);
    }
  };

  VectorXd grad;
  MatrixXd hess;
  double ll = loglik(merged, K * gamma, link);
  for (int it = 0; it < opts.max_iter; ++it) {
    gradient_hessian(gamma, grad, hess);
    diag.iterations = it;
    diag.gradient_norm = grad.norm() / static_cast<double>(n);
    if (diag.gradient_norm <= opts.tol) {
      diag.converged = true;
      break;
    }
    Eigen::LDLT<MatrixXd> ldlt(-hess);
    VectorXd step = ldlt.solve(grad);
    if (ldlt.info() != Eigen::Success || !step.allFinite() || step.dot(grad) <= 0.0) step = grad / n;
    double t = 1.0;
    bool accepted = false;
    for (int half = 0; half < 50; ++half, t *= 0.5) {
      VectorXd trial = gamma + t * step;
      double ll_trial = loglik(merged, K * trial, link);
      double slack = 1e-12 * std::max(1.0, std::abs(ll));
      if (std::isfinite(ll_trial) && ll_trial >= ll - slack) {
        gamma = trial;
        accepted = ll_trial > ll - slack || t * step.norm() < 1e-14;
        ll = ll_trial;
        break;
      }
    }
    if (!accepted) break;
  }
  if (!diag.converged) {
    gradient_hessian(gamma, grad, hess);
    diag.gradient_norm = grad.norm() / static_cast<double>(n);
    diag.converged = diag.gradient_norm <= opts.tol * 100.0;
  }

  VectorXd idx = K * gamma;
  Index extreme = 0;
  for (Index i = 0; i < n; ++i) {
    double v = link.cdf(idx(i));
    if (v < opts.prob_floor || v > 1.0 - opts.prob_floor) ++extreme;
  }
  if (extreme > n / 100 || (!diag.converged && extreme > 0)) {
    std::ostringstream os;
    os << "separation detected: " << extreme << " of " << n
       << " fitted propensities are at 0/1 and the likelihood keeps increasing";
    throw NumericalError(Step::propensity, os.str());
  }
  if (!diag.converged) {
    std::ostringstream os;
    os << "propensity MLE did not converge after " << diag.iterations + 1 << " iterations (score norm "
       << diag.gradient_norm << ")";
    throw NumericalError(Step::propensity, os.str());
  }
  check_floor(idx, link, opts.prob_floor, Step::propensity, "fitted propensity");
  if (diag_out) *diag_out = diag;
  return gamma;
}

TiltFit fit_tilts(const MergedSample& merged, const MatrixXd& K, const VectorXd& gamma,
                  const MatrixXd& T, const LinkFunction& link, const SolverOptions& opts) {
  if (T.rows() != merged.n()) throw ValidationError("tilting design has the wrong number of rows");
  if (!(T.col(0).array() == 1.0).all())
    throw ValidationError("tilting basis must start with the constant term");
  check_rank(T, Step::tilting, "tilting");
  VectorXd idx0 = K * gamma;
  VectorXd L0 = idx0.unaryExpr([&](double v) { return link.cdf(v); });
  TiltFit fit;
  fit.lambda_s = solve_tilt(merged, idx0, L0, T, link, true, opts, fit.stage_s);
  fit.lambda_a = solve_tilt(merged, idx0, L0, T, link, false, opts, fit.stage_a);
  check_floor(idx0 + T * fit.lambda_s, link, opts.prob_floor, Step::tilting, "study tilt");
  check_floor(idx0 + T * fit.lambda_a, link, opts.prob_floor, Step::tilting, "auxiliary tilt");
  return fit;
}

TiltWeights compute_tilt_weights(const MatrixXd& K, const MatrixXd& T, const VectorXd& gamma,
                                 const VectorXd& lambda_s, const VectorXd& lambda_a,
                                 const LinkFunction& link, double floor) {
  VectorXd idx0 = K * gamma;
  VectorXd is = idx0 + T * lambda_s;
  VectorXd ia = idx0 + T * lambda_a;
  TiltWeights w{VectorXd(K.rows()), VectorXd(K.rows())};
  for (Index i = 0; i < K.rows(); ++i) {
    double ds = link.cdf(is(i));
    double da = link.complement(ia(i));
    if (!(ds > floor) || !(da > floor)) {
      std::ostringstream os;
      os << "tilt denominator below " << floor << " at row " << i;
      throw NumericalError(Step::tilting, os.str());
    }
    double l0 = link.cdf(idx0(i));
    w.pi_s(i) = l0 / ds;
    w.pi_a(i) = l0 / da;
  }
  return w;
}

VectorXd likelihood_ratio(const MatrixXd& Ka, const MatrixXd& Ta, const VectorXd& gamma,
                          const VectorXd& lambda_s, const VectorXd& lambda_a,
                          const LinkFunction& link, Index n_study, Index n_aux) {
  const double prefactor = static_cast<double>(n_aux) / static_cast<double>(n_study);
  VectorXd idx0 = Ka * gamma;
  VectorXd ell(Ka.rows());
  for (Index i = 0; i < Ka.rows(); ++i) {
    double s = idx0(i) + Ta.row(i).dot(lambda_s);
    double a = idx0(i) + Ta.row(i).dot(lambda_a);
    ell(i) = prefactor * link.cdf(s) / link.complement(a);
  }
  return ell;
}

PropensityFit fit_propensity_model(const MergedSample& merged, const Basis& k_basis,
                                   const Basis& t_basis, const LinkFunction& link,
                                   const SolverOptions& opts) {
  PropensityFit fit;
  fit.link = link;
  fit.K = k_basis.design(merged.z1(), merged.z2());
  fit.T = t_basis.design(merged.z1(), merged.z2());
  fit.gamma = fit_propensity(merged, fit.K, link, opts, &fit.mle);
  TiltFit tilts = fit_tilts(merged, fit.K, fit.gamma, fit.T, link, opts);
  fit.lambda_s = tilts.lambda_s;
  fit.lambda_a = tilts.lambda_a;
  fit.tilt_s = tilts.stage_s;
  fit.tilt_a = tilts.stage_a;
  TiltWeights w = compute_tilt_weights(fit.K, fit.T, fit.gamma, fit.lambda_s, fit.lambda_a, link,
                                       opts.prob_floor);
  fit.pi_s = std::move(w.pi_s);
  fit.pi_a = std::move(w.pi_a);
  const Index ns = merged.n_study();
  const Index na = merged.n_aux();
  fit.ell_hat = likelihood_ratio(fit.K.bottomRows(na), fit.T.bottomRows(na), fit.gamma,
                                 fit.lambda_s, fit.lambda_a, link, ns, na);
  return fit;
}

}  // namespace uqe
