#include "uqe/uqe.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "uqe/errors.hpp"

namespace uqe {

namespace {

constexpr double z975 = 1.959963984540054;

struct AuxDesign {
  MatrixXd Ka;
  MatrixXd Ta;
  MatrixXd F;  // outcome-index features at auxiliary rows
  MatrixXd D;  // their x-derivatives
};

AuxDesign aux_design(const MergedSample& m, const ThetaEstimate& th) {
  const Index na = m.n_aux();
  AuxDesign ad;
  ad.Ka = th.propensity.K.bottomRows(na);
  ad.Ta = th.propensity.T.bottomRows(na);
  th.lambda.design(m.x(), m.z1(), m.n_study(), ad.F, ad.D);
  return ad;
}

// Derivatives of the likelihood ratio in (gamma, lambda_s, lambda_a) per auxiliary row.
MatrixXd ratio_derivatives(const AuxDesign& ad, const ThetaPoint& at, const LinkFunction& link,
                           const VectorXd& ell) {
  const Index na = ad.Ka.rows();
  const Index dk = ad.Ka.cols();
  const Index dt = ad.Ta.cols();
  MatrixXd dl(na, dk + 2 * dt);
  VectorXd idx0 = ad.Ka * at.gamma;
  for (Index a = 0; a < na; ++a) {
    LinkValue vs = link.eval(idx0(a) + ad.Ta.row(a).dot(at.lambda_s));
    LinkValue va = link.eval(idx0(a) + ad.Ta.row(a).dot(at.lambda_a));
    double rs = vs.d1 / vs.value;
    double ra = va.d1 / va.complement;
    dl.row(a).segment(0, dk) = ell(a) * (rs + ra) * ad.Ka.row(a);
    dl.row(a).segment(dk, dt) = ell(a) * rs * ad.Ta.row(a);
    dl.row(a).segment(dk + dt, dt) = ell(a) * ra * ad.Ta.row(a);
  }
  return dl;
}

struct Core {
  double d = 0.0;
  Index n_kept = 0;
  std::vector<char> kept;
  VectorXd g, gF, gf, lam_x, Fv, fv;  // by auxiliary index
  double S = 0.0;
  WeightedEcdf ecdf;
  std::vector<Index> slot;  // sorted slot of each auxiliary index
  VectorXd grad;
};

template <class Fn>
void window_pass(const std::vector<double>& xs, double b, Fn&& visit) {
  const Index na = static_cast<Index>(xs.size());
  Index lo = 0, hi = 0;
  for (Index k = 0; k < na; ++k) {
    while (xs[lo] <= xs[k] - b) ++lo;
    while (hi < na && xs[hi] < xs[k] + b) ++hi;
    for (Index j = lo; j < hi; ++j) visit(k, j);
  }
}

Core d_core(const MergedSample& m, const ThetaEstimate& th, const AuxDesign& ad,
            const VectorXd& ell, const VectorXd& beta, const CounterfactualDistribution& G,
            ShiftKind kind, const MatrixXd* dl, const std::vector<char>* fixed_keep) {
  const Index na = m.n_aux();
  const VectorXd& x = m.x();
  Core c;
  c.ecdf = WeightedEcdf(x, ell);
  const auto& xs = c.ecdf.sorted_x();
  const auto& ord = c.ecdf.order();
  c.slot.resize(na);
  for (Index k = 0; k < na; ++k) c.slot[ord[k]] = k;
  c.S = ell.sum();

  const LinkFunction& link = th.lambda.link();
  VectorXd idx = ad.F * beta;
  VectorXd dI = ad.D * beta;
  c.lam_x.resize(na);
  for (Index a = 0; a < na; ++a) c.lam_x(a) = link.eval(idx(a)).d1 * dI(a);

  c.Fv.resize(na);
  for (Index a = 0; a < na; ++a) c.Fv(a) = c.ecdf.value_sorted(c.slot[a]);

  const double b = th.b_x;
  const Kernel& kx = th.kernel_x;
  c.fv = VectorXd::Zero(na);
  if (kind == ShiftKind::mds) {
    window_pass(xs, b, [&](Index k, Index j) {
      c.fv(ord[k]) += c.ecdf.mass_sorted(j) * kx((xs[j] - xs[k]) / b);
    });
    c.fv /= b;
  }

  c.kept.assign(na, 1);
  if (kind == ShiftKind::mds) {
    if (fixed_keep) {
      c.kept = *fixed_keep;
    } else {
      double floor = th.density_floor * c.fv.maxCoeff();
      double lo = xs.front() + b * Kernel::diameter() / 2.0;
      double hi = xs.back() - b * Kernel::diameter() / 2.0;
      for (Index a = 0; a < na; ++a)
        c.kept[a] = (x(a) >= lo && x(a) <= hi && c.fv(a) >= floor && c.fv(a) > 0.0) ? 1 : 0;
    }
  }
  c.n_kept = std::count(c.kept.begin(), c.kept.end(), 1);
  if (c.n_kept == 0)
    throw NumericalError(Step::nuisance, "every auxiliary row was trimmed; the covariate bandwidth is too wide");

  c.g = VectorXd::Zero(na);
  c.gF = VectorXd::Zero(na);
  c.gf = VectorXd::Zero(na);
  for (Index a = 0; a < na; ++a) {
    if (!c.kept[a]) continue;
    switch (kind) {
      case ShiftKind::mls: c.g(a) = 1.0; break;
      case ShiftKind::mqs: {
        // midpoint of the jump keeps G^{-1} finite at the largest observation
        double u = c.Fv(a) - 0.5 * c.ecdf.mass_sorted(c.slot[a]);
        c.g(a) = G.quantile(u) - x(a);
        c.gF(a) = G.quantile_slope(u);
        break;
      }
      case ShiftKind::mds: {
        double diff = G.cdf(x(a)) - c.Fv(a);
        c.g(a) = -diff / c.fv(a);
        c.gF(a) = 1.0 / c.fv(a);
        c.gf(a) = diff / (c.fv(a) * c.fv(a));
        break;
      }
    }
    if (!std::isfinite(c.g(a)) || !std::isfinite(c.gF(a))) {
      std::ostringstream os;
      os << "shift direction is not finite at auxiliary row " << a << " (x = " << x(a) << ")";
      throw NumericalError(Step::nuisance, os.str());
    }
  }
  double sum = 0.0;
  for (Index a = 0; a < na; ++a)
    if (c.kept[a]) sum += ell(a) * c.lam_x(a) * c.g(a);
  c.d = sum / static_cast<double>(c.n_kept);

  if (!dl) return c;

  const Index p1 = dl->cols();
  const Index pb = beta.size();
  const double nk = static_cast<double>(c.n_kept);
  Eigen::RowVectorXd dS = dl->colwise().sum();
  // cumulative derivative sums in sorted order, read at the end of each tie group
  MatrixXd cum(na, p1);
  Eigen::RowVectorXd run = Eigen::RowVectorXd::Zero(p1);
  for (Index k = 0; k < na; ++k) {
    run += dl->row(ord[k]);
    cum.row(k) = run;
  }
  std::vector<Index> tie_end(na);
  for (Index k = na; k-- > 0;) tie_end[k] = (k + 1 < na && xs[k + 1] == xs[k]) ? tie_end[k + 1] : k;

  MatrixXd dfv;
  if (kind == ShiftKind::mds) {
    dfv = MatrixXd::Zero(na, p1);
    window_pass(xs, b, [&](Index k, Index j) {
      dfv.row(ord[k]) += dl->row(ord[j]) * kx((xs[j] - xs[k]) / b);
    });
    dfv /= b;
  }

  c.grad = VectorXd::Zero(p1 + pb);
  for (Index a = 0; a < na; ++a) {
    if (!c.kept[a]) continue;
    Index k = c.slot[a];
    Eigen::RowVectorXd dg = Eigen::RowVectorXd::Zero(p1);
    if (kind != ShiftKind::mls) {
      Eigen::RowVectorXd dF = (cum.row(tie_end[k]) - c.Fv(a) * dS) / c.S;
      if (kind == ShiftKind::mqs) {
        Eigen::RowVectorXd dw = (dl->row(a) - c.ecdf.mass_sorted(k) * dS) / c.S;
        dg = c.gF(a) * (dF - 0.5 * dw);
      } else {
        Eigen::RowVectorXd df = (dfv.row(a) - c.fv(a) * dS) / c.S;
        dg = c.gF(a) * dF + c.gf(a) * df;
      }
    }
    c.grad.head(p1) += (dl->row(a) * c.lam_x(a) * c.g(a) + ell(a) * c.lam_x(a) * dg).transpose();
    LinkValue v = link.eval(idx(a));
    c.grad.tail(pb) +=
        ell(a) * c.g(a) * (v.d2 * dI(a) * ad.F.row(a) + v.d1 * ad.D.row(a)).transpose();
  }
  c.grad /= nk;
  return c;
}

}  // namespace

ThetaEstimate fit_nuisances(const MergedSample& merged, double tau, const EstimatorConfig& cfg) {
  if (!(tau > 0.0 && tau < 1.0)) throw ValidationError("tau must lie in (0,1)");
  ThetaEstimate th;
  th.tau = tau;
  th.q_hat = empirical_quantile(merged, tau);
  th.k_basis = Basis::parse(cfg.k_terms, merged.z1_names(), merged.z2_names(), false, true);
  th.t_basis = Basis::parse(cfg.t_terms, merged.z1_names(), merged.z2_names(), false, true);
  th.e_basis = Basis::parse(cfg.e_terms, merged.z1_names(), merged.z2_names(), false, true);
  if (!th.t_basis.constant_first())
    throw ValidationError("tilting basis must start with the constant term '1'");
  th.lambda = LambdaModel(
      Basis::parse(cfg.lambda_index, merged.z1_names(), merged.z2_names(), true, false),
      LinkFunction(cfg.lambda_link));

  th.propensity = fit_propensity_model(merged, th.k_basis, th.t_basis,
                                       LinkFunction(cfg.propensity_link), cfg.solver);

  th.E = th.e_basis.design(merged.z1(), merged.z2());
  GmmOptions gopts;
  gopts.weighting = cfg.weighting;
  gopts.tol = cfg.gmm_tol;
  gopts.max_iter = cfg.gmm_max_iter;
  th.gmm = fit_beta(merged, th.propensity, th.q_hat, th.E, th.lambda, gopts);

  th.kernel_y = Kernel(cfg.kernel_y);
  th.kernel_x = Kernel(cfg.kernel_x);
  th.density_floor = cfg.density_floor;
  try {
    th.b_y = cfg.bandwidth_y ? *cfg.bandwidth_y : rule_of_thumb_bandwidth(merged.y());
    th.b_x = cfg.bandwidth_x ? *cfg.bandwidth_x
                             : covariate_bandwidth(merged.x(), th.propensity.ell_hat);
  } catch (const ValidationError& e) {
    throw NumericalError(Step::nuisance, e.what());
  }
  if (!(th.b_y > 0.0) || !(th.b_x > 0.0)) throw ValidationError("bandwidths must be positive");

  th.f_y = kde(merged.y(), th.q_hat, th.b_y, th.kernel_y);
  DensityDerivatives dd = kde_derivatives(merged.y(), th.q_hat,
                                          cfg.derivative_bandwidth_factor * th.b_y,
                                          Kernel(KernelKind::biweight));
  th.f_y_d1 = dd.d1;
  th.f_y_d2 = dd.d2;
  th.F_hat = WeightedEcdf(merged.x(), th.propensity.ell_hat);
  th.f_x = CovariateDensity(merged.x(), th.propensity.ell_hat, th.b_x, th.kernel_x);
  return th;
}

CounterfactualDistribution status_quo(const ThetaEstimate& theta) {
  return CounterfactualDistribution::from_weighted_ecdf(theta.F_hat);
}

ThetaPoint ThetaPoint::from(const ThetaEstimate& th) {
  return {th.propensity.gamma, th.propensity.lambda_s, th.propensity.lambda_a, th.gmm.beta};
}

VectorXd ThetaPoint::flatten() const {
  VectorXd v(gamma.size() + lambda_s.size() + lambda_a.size() + beta.size());
  v << gamma, lambda_s, lambda_a, beta;
  return v;
}

ThetaPoint ThetaPoint::with(const VectorXd& flat) const {
  ThetaPoint p = *this;
  Index o = 0;
  p.gamma = flat.segment(o, gamma.size());
  o += gamma.size();
  p.lambda_s = flat.segment(o, lambda_s.size());
  o += lambda_s.size();
  p.lambda_a = flat.segment(o, lambda_a.size());
  o += lambda_a.size();
  p.beta = flat.segment(o, beta.size());
  return p;
}

DEvaluation evaluate_d(const MergedSample& merged, const ThetaEstimate& theta, const ThetaPoint& at,
                       const CounterfactualDistribution& G, ShiftKind kind, bool with_gradient,
                       const std::vector<char>* fixed_keep) {
  AuxDesign ad = aux_design(merged, theta);
  const LinkFunction& link = theta.propensity.link;
  VectorXd ell = likelihood_ratio(ad.Ka, ad.Ta, at.gamma, at.lambda_s, at.lambda_a, link,
                                  merged.n_study(), merged.n_aux());
  MatrixXd dl;
  if (with_gradient) dl = ratio_derivatives(ad, at, link, ell);
  Core c = d_core(merged, theta, ad, ell, at.beta, G, kind, with_gradient ? &dl : nullptr,
                  fixed_keep);
  return {c.d, c.grad, c.n_kept, c.kept};
}

double estimate_d(const MergedSample& merged, const ThetaEstimate& theta,
                  const CounterfactualDistribution& G, ShiftKind kind) {
  AuxDesign ad = aux_design(merged, theta);
  return d_core(merged, theta, ad, theta.propensity.ell_hat, theta.gmm.beta, G, kind, nullptr,
                nullptr)
      .d;
}

double bias_term(double d_hat, double f_y, double f_y_d2, double b_y, const Kernel& kernel) {
  if (d_hat == 0.0) return 0.0;
  return b_y * b_y * f_y_d2 * d_hat / (2.0 * f_y * f_y) * kernel.second_moment();
}

double plugin_se(double d_hat, double f_y, double q0_hat, const Kernel& kernel, Index n, double b_y) {
  double sigma = d_hat * d_hat / (f_y * f_y * f_y * q0_hat) * kernel.roughness();
  return std::sqrt(sigma / (static_cast<double>(n) * b_y));
}

double improved_se(const InfluenceComponents& comp) {
  const double n = static_cast<double>(comp.psi.size());
  return std::sqrt(comp.psi.squaredNorm() / n / n);
}

ZeroTest zero_effect_test(const InfluenceComponents& comp, double d_hat) {
  if (d_hat == 0.0) return {0.0, 1.0};
  const double n = static_cast<double>(comp.psi_d.size());
  double v = comp.psi_d.squaredNorm() / n;
  if (!(v > 0.0))
    throw NumericalError(Step::uqe, "zero-effect test: influence variance is zero while d_hat is not");
  double stat = std::sqrt(n) * d_hat / std::sqrt(v);
  return {stat, std::erfc(std::abs(stat) / std::sqrt(2.0))};
}

namespace {

struct Analysis {
  Core core;
  InfluenceComponents comp;
};

Analysis analyze(const MergedSample& m, const ThetaEstimate& th,
                 const CounterfactualDistribution& G, ShiftKind kind) {
  const Index n = m.n();
  const Index ns = m.n_study();
  const Index na = m.n_aux();
  const double nd = static_cast<double>(n);
  const double Q = m.q0_hat();
  const PropensityFit& pf = th.propensity;
  const LinkFunction& link = pf.link;
  const Index dk = pf.K.cols();
  const Index dt = pf.T.cols();
  const Index db = th.gmm.beta.size();
  const Index de = th.E.cols();
  const Index og = 1, os = 1 + dk, oa = 1 + dk + dt, ob = 1 + dk + 2 * dt;
  const Index P = ob + db;

  AuxDesign ad = aux_design(m, th);
  ThetaPoint at = ThetaPoint::from(th);
  const VectorXd& ell = pf.ell_hat;
  MatrixXd dl = ratio_derivatives(ad, at, link, ell);

  Analysis out;
  Core& c = out.core;
  c = d_core(m, th, ad, ell, th.gmm.beta, G, kind, &dl, nullptr);
  const double d = c.d;
  const double nk = static_cast<double>(c.n_kept);

  // Stacked estimating equations and their Jacobian.
  MatrixXd Psi = MatrixXd::Zero(n, P);
  MatrixXd H = MatrixXd::Zero(P, P);
  MatrixXd Gm(n, de);
  MatrixXd Gg = MatrixXd::Zero(de, dk), Gs = MatrixXd::Zero(de, dt), Ga = MatrixXd::Zero(de, dt);
  VectorXd Gq = VectorXd::Zero(de);
  MatrixXd J = MatrixXd::Zero(de, db);
  const VectorXd& gamma = pf.gamma;
  for (Index i = 0; i < n; ++i) {
    const bool study = m.is_study(i);
    const double R = study ? 1.0 : 0.0;
    auto k = pf.K.row(i);
    auto t = pf.T.row(i);
    double i0 = k.dot(gamma);
    LinkValue v0 = link.eval(i0);
    LinkValue vs = link.eval(i0 + t.dot(pf.lambda_s));
    LinkValue va = link.eval(i0 + t.dot(pf.lambda_a));

    double ind = 0.0;
    if (study) {
      ind = m.y()(i) <= th.q_hat ? 1.0 : 0.0;
      Psi(i, 0) = ind - th.tau;
    }
    LogLinkDerivatives ld = log_link_derivatives(link, i0);
    Psi.row(i).segment(og, dk) = (study ? ld.dlog : ld.dlogc) * k;
    H.block(og, og, dk, dk).noalias() += (study ? ld.d2log : ld.d2logc) * k.transpose() * k;

    Psi.row(i).segment(os, dt) = (R / vs.value - 1.0) * v0.value * t;
    H.block(os, og, dt, dk).noalias() +=
        (-R * vs.d1 / (vs.value * vs.value) * v0.value + (R / vs.value - 1.0) * v0.d1) *
        t.transpose() * k;
    H.block(os, os, dt, dt).noalias() +=
        (-R * vs.d1 * v0.value / (vs.value * vs.value)) * t.transpose() * t;

    const double A = 1.0 - R;
    Psi.row(i).segment(oa, dt) = (A / va.complement - 1.0) * v0.value * t;
    H.block(oa, og, dt, dk).noalias() +=
        (A * va.d1 / (va.complement * va.complement) * v0.value +
         (A / va.complement - 1.0) * v0.d1) *
        t.transpose() * k;
    H.block(oa, oa, dt, dt).noalias() +=
        (A * va.d1 * v0.value / (va.complement * va.complement)) * t.transpose() * t;

    auto e = th.E.row(i);
    if (study) {
      double ps = pf.pi_s(i);
      Gm.row(i) = ps * ind * e;
      if (ind > 0) {
        Gg.noalias() += e.transpose() * (ps * (v0.d1 / v0.value - vs.d1 / vs.value) * k);
        Gs.noalias() += e.transpose() * (-ps * vs.d1 / vs.value * t);
      }
      double kq = th.kernel_y((m.y()(i) - th.q_hat) / th.b_y) / th.b_y;
      if (kq != 0.0) Gq.noalias() += ps * kq * e.transpose();
    } else {
      Index a = i - ns;
      double pa = pf.pi_a(i);
      LinkValue lv = th.lambda.link().eval(ad.F.row(a).dot(th.gmm.beta));
      Gm.row(i) = -pa * lv.value * e;
      Gg.noalias() -= lv.value * e.transpose() * (pa * (v0.d1 / v0.value + va.d1 / va.complement) * k);
      Ga.noalias() -= lv.value * e.transpose() * (pa * va.d1 / va.complement * t);
      J.noalias() -= pa * lv.d1 * e.transpose() * ad.F.row(a);
    }
  }
  H /= nd;
  Gg /= nd;
  Gs /= nd;
  Ga /= nd;
  Gq /= nd;
  J /= nd;
  H(0, 0) = Q * th.f_y;
  MatrixXd Aw = J.transpose() * th.gmm.omega;
  H.block(ob, 0, db, 1) = Aw * Gq;
  H.block(ob, og, db, dk) = Aw * Gg;
  H.block(ob, os, db, dt) = Aw * Gs;
  H.block(ob, oa, db, dt) = Aw * Ga;
  H.block(ob, ob, db, db) = Aw * J;
  Psi.rightCols(db) = Gm * Aw.transpose();

  InfluenceComponents& comp = out.comp;
  comp.stacked_jacobian = H;
  Eigen::JacobiSVD<MatrixXd> svd(H);
  const auto& sv = svd.singularValues();
  comp.condition = sv(sv.size() - 1) > 0 ? sv(0) / sv(sv.size() - 1)
                                         : std::numeric_limits<double>::infinity();
  Eigen::PartialPivLU<MatrixXd> lu(H);
  comp.psi_theta = -(lu.solve(Psi.transpose())).transpose();
  comp.M = c.grad;
  comp.psi_theta_term = comp.psi_theta.rightCols(P - 1) * c.grad;

  // Nonparametric correction from estimating F (and f for MDS) inside g.
  comp.psi_g = VectorXd::Zero(n);
  comp.pi_x = VectorXd::Zero(na);
  if (kind != ShiftKind::mls) {
    const auto& xs = c.ecdf.sorted_x();
    const auto& ord = c.ecdf.order();
    VectorXd coefF = VectorXd::Zero(na), coeff = VectorXd::Zero(na);
    double centerF = 0.0, centerf = 0.0;
    for (Index a = 0; a < na; ++a) {
      if (!c.kept[a]) continue;
      coefF(a) = ell(a) * c.lam_x(a) * c.gF(a);
      coeff(a) = ell(a) * c.lam_x(a) * c.gf(a);
      centerF += coefF(a) * c.Fv(a);
      centerf += coeff(a) * c.fv(a);
    }
    // suffix sums over sorted slots: sum of coefF over x_i >= x_slot
    std::vector<double> suffix(na + 1, 0.0);
    for (Index k = na; k-- > 0;) suffix[k] = suffix[k + 1] + coefF(ord[k]);
    if (kind == ShiftKind::mds) {
      const double b = th.b_x;
      window_pass(xs, b, [&](Index k, Index j) {
        comp.pi_x(ord[k]) += coeff(ord[j]) * th.kernel_x((xs[j] - xs[k]) / b);
      });
      comp.pi_x /= (b * nk);
    }
    for (Index a = 0; a < na; ++a) {
      auto first = std::lower_bound(xs.begin(), xs.end(), m.x()(a));
      double sF = suffix[static_cast<std::size_t>(first - xs.begin())];
      double term = (sF - centerF) / nk;
      if (kind == ShiftKind::mds) term += comp.pi_x(a) - centerf / nk;
      comp.psi_g(ns + a) = ell(a) * (nd / c.S) * term;
    }
  }

  comp.psi_avg = VectorXd::Zero(n);
  for (Index i = 0; i < ns; ++i) comp.psi_avg(i) = -d / Q;
  for (Index a = 0; a < na; ++a)
    if (c.kept[a]) comp.psi_avg(ns + a) = (nd / nk) * ell(a) * c.lam_x(a) * c.g(a);

  comp.psi_d = comp.psi_theta_term + comp.psi_g + comp.psi_avg;

  comp.psi_fy = VectorXd::Zero(n);
  const double f = th.f_y;
  if (d != 0.0) {
    for (Index i = 0; i < ns; ++i) {
      double y = m.y()(i);
      double kq = th.kernel_y((y - th.q_hat) / th.b_y) / th.b_y;
      double ind = y <= th.q_hat ? 1.0 : 0.0;
      comp.psi_fy(i) = d / (f * f) / Q * (kq - f - (ind - th.tau) * th.f_y_d1 / f);
    }
  }
  comp.psi = comp.psi_fy - comp.psi_d / f;
  comp.kept = c.kept;
  return out;
}

}  // namespace

InfluenceComponents influence_components(const MergedSample& merged, const ThetaEstimate& theta,
                                         const CounterfactualDistribution& G, ShiftKind kind) {
  return analyze(merged, theta, G, kind).comp;
}

UqeResult estimate_uqe(const MergedSample& merged, const ThetaEstimate& theta,
                       const CounterfactualDistribution& G, ShiftKind kind,
                       const EstimatorConfig& cfg, InfluenceComponents* components) {
  if (!(theta.f_y > 1e-10)) {
    std::ostringstream os;
    os << "outcome density at q_hat = " << theta.q_hat << " is " << theta.f_y
       << "; tau is too extreme for the data";
    throw NumericalError(Step::uqe, os.str());
  }
  Analysis an = analyze(merged, theta, G, kind);
  UqeResult r;
  r.tau = theta.tau;
  r.kind = kind;
  r.d_hat = an.core.d;
  r.f_y_at_q = theta.f_y;
  r.point = -r.d_hat / r.f_y_at_q;
  r.n_kept = an.core.n_kept;
  r.n_trimmed = merged.n_aux() - an.core.n_kept;
  r.bias = bias_term(r.d_hat, theta.f_y, theta.f_y_d2, theta.b_y, theta.kernel_y);
  r.se_plugin = plugin_se(r.d_hat, theta.f_y, merged.q0_hat(), theta.kernel_y, merged.n(), theta.b_y);
  r.jacobian_condition = an.comp.condition;
  if (!std::isfinite(an.comp.condition) || an.comp.condition > 1e12 || !an.comp.psi.allFinite()) {
    std::ostringstream os;
    os << "stacked Jacobian is singular (condition number " << an.comp.condition
       << "); using the plug-in standard error";
    r.warnings.push_back(os.str());
    r.plugin_fallback = true;
    r.se_improved = r.se_plugin;
    r.statistic = 0.0;
    r.p_value = 1.0;
    if (r.d_hat != 0.0) {
      r.statistic = r.point / r.se_plugin;
      r.p_value = std::erfc(std::abs(r.statistic) / std::sqrt(2.0));
    }
  } else {
    r.se_improved = improved_se(an.comp);
    ZeroTest zt = zero_effect_test(an.comp, r.d_hat);
    r.statistic = zt.statistic;
    r.p_value = zt.p_value;
  }
  double z = z975;
  if (cfg.ci_level != 0.95) {
    double alpha = 1.0 - cfg.ci_level;
    z = LinkFunction(LinkKind::probit).inverse(1.0 - alpha / 2.0);
  }
  double center = cfg.recenter_ci ? r.point - r.bias : r.point;
  r.ci_lo = center - z * r.se_improved;
  r.ci_hi = center + z * r.se_improved;
  if (components) *components = std::move(an.comp);
  return r;
}

}  // namespace uqe
