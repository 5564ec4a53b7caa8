#include "uqe/outcome_model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "uqe/errors.hpp"

namespace uqe {

LambdaModel::LambdaModel(Basis index, LinkFunction link)
    : index_(std::move(index)), link_(link) {}

LambdaModel::Eval LambdaModel::eval(double x, const MatrixXd& z1, Index row,
                                    const VectorXd& beta) const {
  const Index p = size();
  VectorXd f(p), d(p);
  index_.features(x, z1, row, f.data(), d.data());
  LinkValue v = link_.eval(f.dot(beta));
  double di = d.dot(beta);
  Eval out;
  out.value = v.value;
  out.dx = v.d1 * di;
  out.dbeta = v.d1 * f;
  out.dxdbeta = v.d2 * di * f + v.d1 * d;
  return out;
}

double LambdaModel::value(double x, const MatrixXd& z1, Index row, const VectorXd& beta) const {
  VectorXd f(size());
  index_.features(x, z1, row, f.data(), nullptr);
  return link_.cdf(f.dot(beta));
}

void LambdaModel::design(const VectorXd& x, const MatrixXd& z1, Index offset, MatrixXd& F,
                         MatrixXd& D) const {
  const Index n = x.size();
  const Index p = size();
  F.resize(n, p);
  D.resize(n, p);
  std::vector<double> f(p), d(p);
  for (Index i = 0; i < n; ++i) {
    index_.features(x(i), z1, offset + i, f.data(), d.data());
    for (Index k = 0; k < p; ++k) {
      F(i, k) = f[k];
      D(i, k) = d[k];
    }
  }
}

LambdaModel::Eval lambda_eval(double x, const Eigen::RowVectorXd& z1, const VectorXd& beta,
                              const LambdaModel& model) {
  MatrixXd row = z1;
  return model.eval(x, row, 0, beta);
}

VectorXd moment_function(const MergedSample& merged, Index i, const PropensityFit& prop,
                         double q_hat, const MatrixXd& E, const LambdaModel& model,
                         const VectorXd& beta) {
  VectorXd e = E.row(i).transpose();
  if (merged.is_study(i)) {
    double on = merged.y()(i) <= q_hat ? 1.0 : 0.0;
    return prop.pi_s(i) * on * e;
  }
  Index a = i - merged.n_study();
  double lam = model.value(merged.x()(a), merged.z1(), i, beta);
  return -prop.pi_a(i) * lam * e;
}

GmmProblem::GmmProblem(const MergedSample& merged, const PropensityFit& prop, double q_hat,
                       MatrixXd E, const LambdaModel& model)
    : merged_(merged), prop_(prop), E_(std::move(E)), model_(model), q_hat_(q_hat) {
  const Index ns = merged.n_study();
  const double n = static_cast<double>(merged.n());
  indicator_.resize(ns);
  study_part_ = VectorXd::Zero(E_.cols());
  for (Index i = 0; i < ns; ++i) {
    indicator_(i) = merged.y()(i) <= q_hat ? 1.0 : 0.0;
    if (indicator_(i) > 0) study_part_.noalias() += prop.pi_s(i) * E_.row(i).transpose();
  }
  study_part_ /= n;
  model_.design(merged.x(), merged.z1(), ns, F_, D_);
}

VectorXd GmmProblem::mean_moment(const VectorXd& beta) const {
  const Index ns = merged_.n_study();
  VectorXd idx = F_ * beta;
  VectorXd g = study_part_;
  VectorXd aux = VectorXd::Zero(E_.cols());
  for (Index a = 0; a < idx.size(); ++a)
    aux.noalias() += prop_.pi_a(ns + a) * model_.link().cdf(idx(a)) * E_.row(ns + a).transpose();
  return g - aux / static_cast<double>(merged_.n());
}

MatrixXd GmmProblem::jacobian(const VectorXd& beta) const {
  const Index ns = merged_.n_study();
  VectorXd idx = F_ * beta;
  MatrixXd J = MatrixXd::Zero(E_.cols(), beta.size());
  for (Index a = 0; a < idx.size(); ++a) {
    double c = prop_.pi_a(ns + a) * model_.link().eval(idx(a)).d1;
    J.noalias() -= c * E_.row(ns + a).transpose() * F_.row(a);
  }
  return J / static_cast<double>(merged_.n());
}

MatrixXd GmmProblem::moments(const VectorXd& beta) const {
  const Index ns = merged_.n_study();
  MatrixXd G(merged_.n(), E_.cols());
  for (Index i = 0; i < ns; ++i) G.row(i) = prop_.pi_s(i) * indicator_(i) * E_.row(i);
  VectorXd idx = F_ * beta;
  for (Index a = 0; a < idx.size(); ++a)
    G.row(ns + a) = -prop_.pi_a(ns + a) * model_.link().cdf(idx(a)) * E_.row(ns + a);
  return G;
}

double GmmProblem::objective(const VectorXd& beta, const MatrixXd& omega) const {
  VectorXd g = mean_moment(beta);
  return g.dot(omega * g);
}

VectorXd GmmProblem::gradient(const VectorXd& beta, const MatrixXd& omega) const {
  return 2.0 * jacobian(beta).transpose() * omega * mean_moment(beta);
}

VectorXd GmmProblem::start() const {
  const Index ns = merged_.n_study();
  VectorXd beta = VectorXd::Zero(model_.size());
  if (!model_.index().constant_first()) return beta;
  double num = 0.0, den = 0.0;
  for (Index i = 0; i < ns; ++i) num += prop_.pi_s(i) * indicator_(i);
  for (Index a = 0; a < F_.rows(); ++a) den += prop_.pi_a(ns + a);
  double p = std::clamp(den > 0 ? num / den : 0.5, 0.01, 0.99);
  beta(0) = model_.link().inverse(p);
  return beta;
}

namespace {

struct Solve {
  VectorXd beta;
  double objective;
  double gradient_norm;
  int iterations;
  bool converged;
};

Solve levenberg_marquardt(const GmmProblem& prob, const MatrixXd& omega, VectorXd beta,
                          const GmmOptions& opts) {
  VectorXd g = prob.mean_moment(beta);
  double obj = g.dot(omega * g);
  double mu = 1e-3;
  Solve s{beta, obj, 0.0, 0, false};
  for (int it = 0; it < opts.max_iter; ++it) {
    MatrixXd J = prob.jacobian(beta);
    VectorXd grad = 2.0 * J.transpose() * omega * g;
    s.iterations = it;
    s.gradient_norm = grad.norm();
    if (!std::isfinite(s.gradient_norm)) break;
    if (s.gradient_norm <= opts.tol) {
      s.converged = true;
      break;
    }
    MatrixXd A = J.transpose() * omega * J;
    VectorXd b = -J.transpose() * omega * g;
    bool accepted = false;
    double prev = obj;
    while (mu < 1e12) {
      MatrixXd Ad = A;
      for (Index k = 0; k < A.rows(); ++k) Ad(k, k) += mu * std::max(A(k, k), 1e-12);
      VectorXd step = Ad.ldlt().solve(b);
      VectorXd trial = beta + step;
      VectorXd gt = prob.mean_moment(trial);
      double ot = gt.dot(omega * gt);
      if (std::isfinite(ot) && ot < obj) {
        beta = trial;
        g = gt;
        obj = ot;
        mu = std::max(mu / 5.0, 1e-12);
        accepted = true;
        break;
      }
      mu *= 4.0;
    }
    if (!accepted || prev - obj <= 1e-18 * std::max(prev, 1e-300)) {
      s.gradient_norm = prob.gradient(beta, omega).norm();
      s.converged = s.gradient_norm <= opts.tol * 100.0;
      break;
    }
  }
  s.beta = beta;
  s.objective = obj;
  if (s.converged) s.gradient_norm = prob.gradient(beta, omega).norm();
  return s;
}

double min_singular_ratio(const MatrixXd& J, double* min_sv) {
  Eigen::JacobiSVD<MatrixXd> svd(J);
  const auto& sv = svd.singularValues();
  *min_sv = sv(sv.size() - 1);
  return sv(0) > 0 ? sv(sv.size() - 1) / sv(0) : 0.0;
}

}  // namespace

GmmFit fit_beta(const MergedSample& merged, const PropensityFit& prop, double q_hat,
                const MatrixXd& E, const LambdaModel& model, const GmmOptions& opts) {
  if (E.cols() < model.size()) {
    std::ostringstream os;
    os << "order condition fails: " << E.cols() << " moment functions for " << model.size()
       << " outcome-model coefficients (need d_e >= d_beta)";
    throw ValidationError(os.str());
  }
  GmmProblem prob(merged, prop, q_hat, E, model);
  MatrixXd omega = opts.omega ? *opts.omega : MatrixXd::Identity(E.cols(), E.cols());
  if (omega.rows() != E.cols() || omega.cols() != E.cols())
    throw ValidationError("weighting matrix has the wrong dimension");
  if (Eigen::LLT<MatrixXd>(omega).info() != Eigen::Success)
    throw ValidationError("weighting matrix is not positive definite");

  auto solve_with_starts = [&](const MatrixXd& om, const VectorXd& first, int& starts) {
    Solve best = levenberg_marquardt(prob, om, first, opts);
    double min_sv = 0.0;
    double ratio = min_singular_ratio(prob.jacobian(best.beta), &min_sv);
    starts = 1;
    if (best.converged && ratio > opts.flat_threshold) return best;
    std::mt19937_64 rng(opts.seed);
    std::normal_distribution<double> jitter(0.0, 1.0);
    for (int k = 0; k < opts.multistart; ++k) {
      VectorXd b0 = first;
      for (Index j = 0; j < b0.size(); ++j) b0(j) += jitter(rng);
      Solve s = levenberg_marquardt(prob, om, b0, opts);
      ++starts;
      if ((s.converged && !best.converged) ||
          (s.converged == best.converged && s.objective < best.objective))
        best = s;
    }
    return best;
  };

  int starts = 0;
  Solve sol = solve_with_starts(omega, prob.start(), starts);
  int total_starts = starts;
  if (!opts.omega && opts.weighting == GmmWeighting::twostep) {
    MatrixXd G = prob.moments(sol.beta);
    MatrixXd centered = G.rowwise() - G.colwise().mean();
    MatrixXd S = centered.transpose() * centered / static_cast<double>(G.rows());
    omega = S.ldlt().solve(MatrixXd::Identity(S.rows(), S.cols()));
    omega = 0.5 * (omega + omega.transpose()).eval();
    sol = solve_with_starts(omega, sol.beta, starts);
    total_starts += starts;
  }

  GmmFit fit;
  fit.beta = sol.beta;
  fit.objective = sol.objective;
  fit.moment_mean = prob.mean_moment(sol.beta);
  fit.omega = omega;
  fit.converged = sol.converged;
  fit.iterations = sol.iterations;
  fit.gradient_norm = sol.gradient_norm;
  fit.starts_used = total_starts;
  double ratio = min_singular_ratio(prob.jacobian(sol.beta), &fit.jacobian_min_sv);
  if (ratio <= opts.flat_threshold) {
    std::ostringstream os;
    os << "flat GMM objective (rank condition fails): smallest Jacobian singular value "
       << fit.jacobian_min_sv;
    throw NumericalError(Step::gmm, os.str());
  }
  if (!fit.converged) {
    std::ostringstream os;
    os << "GMM did not converge (gradient norm " << fit.gradient_norm << " after "
       << fit.iterations << " iterations, " << total_starts << " starts)";
    throw NumericalError(Step::gmm, os.str());
  }
  return fit;
}

}  // namespace uqe
