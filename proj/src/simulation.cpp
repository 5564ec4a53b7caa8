#include "uqe/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include "uqe/errors.hpp"
#include "uqe/propensity.hpp"

namespace uqe {

namespace {

constexpr double inv_sqrt2 = 0.70710678118654752440;
constexpr double inv_sqrt2pi = 0.39894228040143267794;

double Phi(double z) { return 0.5 * std::erfc(-z * inv_sqrt2); }
double phi(double z) { return inv_sqrt2pi * std::exp(-0.5 * z * z); }

// Gauss-Hermite rule for E[h(Z)], Z ~ N(0,1) (Golub-Welsch on the probabilists' recurrence).
void gauss_hermite(int m, std::vector<double>& nodes, std::vector<double>& weights) {
  MatrixXd T = MatrixXd::Zero(m, m);
  for (int k = 1; k < m; ++k) T(k, k - 1) = T(k - 1, k) = std::sqrt(static_cast<double>(k));
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(T);
  nodes.resize(m);
  weights.resize(m);
  for (int k = 0; k < m; ++k) {
    nodes[k] = es.eigenvalues()(k);
    double v = es.eigenvectors()(0, k);
    weights[k] = v * v;
  }
}

struct Row {
  std::vector<double> z1, z2;
};

double dot_with_constant(const std::vector<double>& coef, const std::vector<double>& v) {
  double s = coef[0];
  for (std::size_t j = 0; j < v.size(); ++j) s += coef[j + 1] * v[j];
  return s;
}

double hermite(double p0, double p1, double m0, double m1, double h, double t) {
  double t2 = t * t, t3 = t2 * t;
  return (2 * t3 - 3 * t2 + 1) * p0 + (t3 - 2 * t2 + t) * h * m0 + (-2 * t3 + 3 * t2) * p1 +
         (t3 - t2) * h * m1;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

void DgpSpec::validate() const {
  if (gamma_s2.empty()) throw ValidationError("gamma_s2 needs at least the intercept");
  if (delta_1.size() != gamma_s2.size())
    throw ValidationError("delta_1 and gamma_s2 must both cover (1, z1)");
  if (delta_2.empty()) throw ValidationError("delta_2 must have at least one entry");
  if (std::all_of(delta_2.begin(), delta_2.end(), [](double v) { return v == 0.0; }))
    throw ValidationError("delta_2 must be nonzero (instrument relevance)");
  if (gamma_prop.size() != 1 + static_cast<std::size_t>(d_z1() + d_z2()))
    throw ValidationError("gamma_prop must cover (1, z1, z2)");
  if (!(psi_y > 0.0) || !(psi_x > 0.0)) throw ValidationError("psi_y and psi_x must be positive");
  if (z1_law == Z1Law::bernoulli && !(z1_p > 0.0 && z1_p < 1.0))
    throw ValidationError("z1_p must lie in (0,1)");
  if (!std::is_sorted(x_thresholds.begin(), x_thresholds.end()))
    throw ValidationError("x_thresholds must be increasing");
  if (n < 4) throw ValidationError("n must be at least 4");
}

std::pair<StudySample, AuxSample> generate_dgp(const DgpSpec& spec) {
  spec.validate();
  const Index d1 = spec.d_z1(), d2 = spec.d_z2();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  LinkFunction link(spec.propensity_link);
  const double sx = std::sqrt(spec.psi_x), sy = std::sqrt(spec.psi_y);

  std::vector<double> ys, xs;
  std::vector<Row> srows, arows;
  Row row;
  row.z1.resize(d1);
  row.z2.resize(d2);
  for (Index i = 0; i < spec.n; ++i) {
    for (Index j = 0; j < d1; ++j)
      row.z1[j] = spec.z1_law == DgpSpec::Z1Law::normal ? normal(rng)
                                                         : (unif(rng) < spec.z1_p ? 1.0 : 0.0);
    for (Index j = 0; j < d2; ++j) row.z2[j] = normal(rng);
    double u = spec.gamma_prop[0];
    for (Index j = 0; j < d1; ++j) u += spec.gamma_prop[1 + j] * row.z1[j];
    for (Index j = 0; j < d2; ++j) u += spec.gamma_prop[1 + d1 + j] * row.z2[j];
    bool study = unif(rng) < link.cdf(u);
    double eta = normal(rng);
    double eps = normal(rng);

    double latent = dot_with_constant(spec.delta_1, row.z1);
    for (Index j = 0; j < d2; ++j) latent += spec.delta_2[j] * row.z2[j];
    latent += sx * eta + (study ? 0.0 : spec.aux_x_shift);
    double x = latent;
    if (spec.discrete_x())
      x = static_cast<double>(std::count_if(spec.x_thresholds.begin(), spec.x_thresholds.end(),
                                            [&](double c) { return latent > c; }));
    if (study) {
      ys.push_back(spec.gamma_s1 * x + dot_with_constant(spec.gamma_s2, row.z1) + sy * eps);
      srows.push_back(row);
    } else {
      xs.push_back(x);
      arows.push_back(row);
    }
  }
  if (ys.empty() || xs.empty())
    throw ValidationError("simulated design produced an empty study or auxiliary sample");

  auto fill = [&](const std::vector<Row>& rows, MatrixXd& z1, MatrixXd& z2) {
    z1.resize(static_cast<Index>(rows.size()), d1);
    z2.resize(static_cast<Index>(rows.size()), d2);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (Index j = 0; j < d1; ++j) z1(i, j) = rows[i].z1[j];
      for (Index j = 0; j < d2; ++j) z2(i, j) = rows[i].z2[j];
    }
  };
  StudySample s;
  s.y = Eigen::Map<VectorXd>(ys.data(), static_cast<Index>(ys.size()));
  fill(srows, s.z1, s.z2);
  s.z1_names = default_names("z1", d1);
  s.z2_names = default_names("z2", d2);
  AuxSample a;
  a.x = Eigen::Map<VectorXd>(xs.data(), static_cast<Index>(xs.size()));
  fill(arows, a.z1, a.z2);
  a.z1_names = s.z1_names;
  a.z2_names = s.z2_names;
  return {std::move(s), std::move(a)};
}

DgpTruth::DgpTruth(const DgpSpec& spec, int nodes) : spec_(spec) {
  spec.validate();
  const Index d1 = spec.d_z1(), d2 = spec.d_z2();
  const bool z1_normal = spec.z1_law == DgpSpec::Z1Law::normal;
  const Index m = (z1_normal ? d1 : 0) + d2;
  if (m > 3) throw ValidationError("quadrature truth supports at most three normal instruments");
  if (m == 3) nodes = std::min(nodes, 24);
  std::vector<double> gx, gw;
  gauss_hermite(nodes, gx, gw);
  LinkFunction link(spec.propensity_link);

  Index combos = z1_normal ? 1 : (Index{1} << d1);
  Index tensor = 1;
  for (Index k = 0; k < m; ++k) tensor *= nodes;
  std::vector<double> z1(d1), z2(d2), zeta(m);
  double total = 0.0;
  for (Index cmb = 0; cmb < combos; ++cmb) {
    double pc = 1.0;
    if (!z1_normal) {
      for (Index j = 0; j < d1; ++j) {
        bool on = (cmb >> j) & 1;
        z1[j] = on ? 1.0 : 0.0;
        pc *= on ? spec.z1_p : 1.0 - spec.z1_p;
      }
    }
    for (Index t = 0; t < tensor; ++t) {
      Index rest = t;
      double w = pc;
      for (Index k = 0; k < m; ++k) {
        Index id = rest % nodes;
        rest /= nodes;
        zeta[k] = gx[id];
        w *= gw[id];
      }
      Index o = 0;
      if (z1_normal)
        for (Index j = 0; j < d1; ++j) z1[j] = zeta[o++];
      for (Index j = 0; j < d2; ++j) z2[j] = zeta[o++];
      double u = spec.gamma_prop[0];
      for (Index j = 0; j < d1; ++j) u += spec.gamma_prop[1 + j] * z1[j];
      for (Index j = 0; j < d2; ++j) u += spec.gamma_prop[1 + d1 + j] * z2[j];
      double wl = w * link.cdf(u);
      total += wl;
      if (wl < 1e-18) continue;
      double v = dot_with_constant(spec.delta_1, z1);
      for (Index j = 0; j < d2; ++j) v += spec.delta_2[j] * z2[j];
      double c = dot_with_constant(spec.gamma_s2, z1);
      nodes_.push_back({wl, v, spec.gamma_s1 * v + c, c});
    }
  }
  share_ = total;
  for (auto& nd : nodes_) nd.weight /= total;

  if (spec.discrete_x()) {
    double m1 = 0.0, m2 = 0.0, prev = 0.0;
    for (std::size_t k = 0; k <= spec.x_thresholds.size(); ++k) {
      double cdf = x_level_cdf(static_cast<int>(k));
      m1 += k * (cdf - prev);
      m2 += k * k * (cdf - prev);
      prev = cdf;
    }
    x_mean_ = m1;
    x_sd_ = std::sqrt(std::max(m2 - m1 * m1, 0.0));
    return;
  }
  double m1 = 0.0, m2 = 0.0;
  for (const auto& nd : nodes_) {
    m1 += nd.weight * nd.v;
    m2 += nd.weight * (nd.v * nd.v + spec.psi_x);
  }
  x_mean_ = m1;
  x_sd_ = std::sqrt(m2 - m1 * m1);
  const int points = 4001;
  grid_lo_ = x_mean_ - 10.0 * x_sd_;
  grid_h_ = 20.0 * x_sd_ / (points - 1);
  tF_.resize(points);
  tf_.resize(points);
  tf1_.resize(points);
  tf2_.resize(points);
  for (int k = 0; k < points; ++k) {
    double x = grid_lo_ + k * grid_h_;
    tF_[k] = x_sum(x, 0);
    tf_[k] = x_sum(x, 1);
    tf1_[k] = x_sum(x, 2);
    tf2_[k] = x_sum(x, 3);
  }
}

double DgpTruth::x_sum(double x, int order) const {
  const double s = std::sqrt(spec_.psi_x);
  double acc = 0.0;
  for (const auto& nd : nodes_) {
    double z = (x - nd.v) / s;
    switch (order) {
      case 0: acc += nd.weight * Phi(z); break;
      case 1: acc += nd.weight * phi(z) / s; break;
      case 2: acc += nd.weight * (-z * phi(z)) / (s * s); break;
      default: acc += nd.weight * (z * z - 1.0) * phi(z) / (s * s * s); break;
    }
  }
  return acc;
}

double DgpTruth::F_x(double x) const {
  if (spec_.discrete_x()) {
    int level = static_cast<int>(std::floor(x));
    if (level < 0) return 0.0;
    return x_level_cdf(std::min<int>(level, static_cast<int>(spec_.x_thresholds.size())));
  }
  double pos = (x - grid_lo_) / grid_h_;
  if (pos <= 0) return 0.0;
  if (pos >= static_cast<double>(tF_.size() - 1)) return 1.0;
  auto k = static_cast<std::size_t>(pos);
  return hermite(tF_[k], tF_[k + 1], tf_[k], tf_[k + 1], grid_h_, pos - k);
}

double DgpTruth::f_x(double x) const {
  if (spec_.discrete_x()) return 0.0;
  double pos = (x - grid_lo_) / grid_h_;
  if (pos <= 0 || pos >= static_cast<double>(tf_.size() - 1)) return 0.0;
  auto k = static_cast<std::size_t>(pos);
  return hermite(tf_[k], tf_[k + 1], tf1_[k], tf1_[k + 1], grid_h_, pos - k);
}

double DgpTruth::f_x_d1(double x) const {
  if (spec_.discrete_x()) return 0.0;
  double pos = (x - grid_lo_) / grid_h_;
  if (pos <= 0 || pos >= static_cast<double>(tf1_.size() - 1)) return 0.0;
  auto k = static_cast<std::size_t>(pos);
  return hermite(tf1_[k], tf1_[k + 1], tf2_[k], tf2_[k + 1], grid_h_, pos - k);
}

double DgpTruth::x_quantile(double u) const {
  if (spec_.discrete_x()) {
    for (std::size_t k = 0; k <= spec_.x_thresholds.size(); ++k)
      if (x_level_cdf(static_cast<int>(k)) >= u) return static_cast<double>(k);
    return static_cast<double>(spec_.x_thresholds.size());
  }
  double lo = grid_lo_, hi = grid_lo_ + grid_h_ * (tF_.size() - 1);
  double x = x_mean_;
  for (int it = 0; it < 100; ++it) {
    double F = F_x(x) - u;
    if (F > 0) hi = x; else lo = x;
    double f = f_x(x);
    double nx = f > 0 ? x - F / f : 0.5 * (lo + hi);
    if (!(nx > lo && nx < hi)) nx = 0.5 * (lo + hi);
    if (std::abs(nx - x) < 1e-13 * std::max(1.0, std::abs(x))) return nx;
    x = nx;
  }
  return x;
}

double DgpTruth::x_level_cdf(int level) const {
  if (!spec_.discrete_x()) throw ValidationError("x_level_cdf needs a discrete design");
  if (level < 0) return 0.0;
  if (level >= static_cast<int>(spec_.x_thresholds.size())) return 1.0;
  const double s = std::sqrt(spec_.psi_x);
  double acc = 0.0;
  for (const auto& nd : nodes_) acc += nd.weight * Phi((spec_.x_thresholds[level] - nd.v) / s);
  return acc;
}

double DgpTruth::y_sum(double y, int order) const {
  double acc = 0.0;
  auto term = [&](double mean, double s, double w) {
    double z = (y - mean) / s;
    switch (order) {
      case 0: acc += w * Phi(z); break;
      case 1: acc += w * phi(z) / s; break;
      case 2: acc += w * (-z * phi(z)) / (s * s); break;
      default: acc += w * (z * z - 1.0) * phi(z) / (s * s * s); break;
    }
  };
  if (!spec_.discrete_x()) {
    const double s = std::sqrt(spec_.gamma_s1 * spec_.gamma_s1 * spec_.psi_x + spec_.psi_y);
    for (const auto& nd : nodes_) term(nd.w, s, nd.weight);
    return acc;
  }
  const double sx = std::sqrt(spec_.psi_x), sy = std::sqrt(spec_.psi_y);
  const auto& c = spec_.x_thresholds;
  for (const auto& nd : nodes_) {
    double prev = 0.0;
    for (std::size_t k = 0; k <= c.size(); ++k) {
      double cum = k < c.size() ? Phi((c[k] - nd.v) / sx) : 1.0;
      double pk = cum - prev;
      prev = cum;
      if (pk > 0) term(spec_.gamma_s1 * static_cast<double>(k) + nd.c, sy, nd.weight * pk);
    }
  }
  return acc;
}

double DgpTruth::F_y(double y) const { return y_sum(y, 0); }
double DgpTruth::f_y(double y) const { return y_sum(y, 1); }
double DgpTruth::f_y_d1(double y) const { return y_sum(y, 2); }
double DgpTruth::f_y_d2(double y) const { return y_sum(y, 3); }

double DgpTruth::q_y(double tau) const {
  if (!(tau > 0.0 && tau < 1.0)) throw ValidationError("tau must lie in (0,1)");
  double lo = -1.0, hi = 1.0;
  while (F_y(lo) > tau) lo *= 2.0;
  while (F_y(hi) < tau) hi *= 2.0;
  double y = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    double F = F_y(y) - tau;
    if (F > 0) hi = y; else lo = y;
    double f = f_y(y);
    double ny = f > 0 ? y - F / f : 0.5 * (lo + hi);
    if (!(ny > lo && ny < hi)) ny = 0.5 * (lo + hi);
    if (std::abs(ny - y) < 1e-14 * std::max(1.0, std::abs(y))) return ny;
    y = ny;
  }
  return y;
}

double DgpTruth::lambda(double q, double x, const std::vector<double>& z1) const {
  return Phi((q - spec_.gamma_s1 * x - dot_with_constant(spec_.gamma_s2, z1)) /
             std::sqrt(spec_.psi_y));
}

CounterfactualDistribution default_counterfactual(const DgpTruth& truth, double shift, double scale) {
  return CounterfactualDistribution::normal(truth.x_mean() + shift, scale * truth.x_sd());
}

std::uint64_t replication_seed(std::uint64_t master, std::uint64_t rep) {
  return splitmix64(splitmix64(master) ^ splitmix64(rep + 0x632be59bd9b4e019ULL));
}

OracleResult oracle_uqe(const DgpSpec& spec, const DgpTruth& truth, double tau,
                        const CounterfactualDistribution& G, ShiftKind kind,
                        const OracleOptions& opts) {
  if (spec.discrete_x()) throw ValidationError("the transport oracle needs a continuous covariate");
  if (!(opts.t_step > 0.0) || opts.n_draws < 1000) throw ValidationError("bad oracle options");
  const Index d1 = spec.d_z1(), d2 = spec.d_z2();
  const Index N = opts.n_draws;
  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  LinkFunction link(spec.propensity_link);
  const double sx = std::sqrt(spec.psi_x), sy = std::sqrt(spec.psi_y);

  std::vector<double> X(N), C(N), Eps(N), U(N);
  std::vector<double> z1(d1), z2(d2);
  for (Index i = 0; i < N;) {
    for (Index j = 0; j < d1; ++j)
      z1[j] = spec.z1_law == DgpSpec::Z1Law::normal ? normal(rng) : (unif(rng) < spec.z1_p ? 1.0 : 0.0);
    for (Index j = 0; j < d2; ++j) z2[j] = normal(rng);
    double u = spec.gamma_prop[0];
    for (Index j = 0; j < d1; ++j) u += spec.gamma_prop[1 + j] * z1[j];
    for (Index j = 0; j < d2; ++j) u += spec.gamma_prop[1 + d1 + j] * z2[j];
    double eta = normal(rng);
    double eps = normal(rng);
    if (!(unif(rng) < link.cdf(u))) continue;
    double x = dot_with_constant(spec.delta_1, z1);
    for (Index j = 0; j < d2; ++j) x += spec.delta_2[j] * z2[j];
    X[i] = x + sx * eta;
    C[i] = dot_with_constant(spec.gamma_s2, z1);
    Eps[i] = sy * eps;
    U[i] = truth.F_x(X[i]);
    ++i;
  }

  auto transported = [&](Index i, double t) {
    double x = X[i];
    switch (kind) {
      case ShiftKind::mls: return x + t;
      case ShiftKind::mqs: return x + t * (G.quantile(U[i]) - x);
      default: {
        // solve (1 - t) F(x) + t G(x) = U by safeguarded Newton from the status quo
        double target = U[i];
        double xt = x;
        for (int it = 0; it < 50; ++it) {
          double H = (1.0 - t) * truth.F_x(xt) + t * G.cdf(xt) - target;
          double dH = (1.0 - t) * truth.f_x(xt) + t * G.pdf(xt);
          if (!(dH > 0.0)) break;
          double step = H / dH;
          xt -= std::clamp(step, -1.0, 1.0);
          if (std::abs(step) < 1e-12) break;
        }
        return xt;
      }
    }
  };

  std::vector<double> work;
  auto quantile_at = [&](double t, Index from, Index to) {
    const Index m = to - from;
    work.resize(m);
    for (Index i = from; i < to; ++i)
      work[i - from] = spec.gamma_s1 * transported(i, t) + C[i] + (opts.rao_blackwell ? 0.0 : Eps[i]);
    auto k = static_cast<Index>(std::ceil(static_cast<double>(m) * tau - 1e-9));
    k = std::clamp<Index>(k, 1, m);
    std::vector<double> sorted = work;
    std::nth_element(sorted.begin(), sorted.begin() + (k - 1), sorted.end());
    double y = sorted[k - 1];
    if (!opts.rao_blackwell) return y;
    // quantile of the normal mixture: mean Phi((y - m_i)/sy) = tau
    auto [mn, mx] = std::minmax_element(work.begin(), work.end());
    double lo = *mn - 10.0 * sy, hi = *mx + 10.0 * sy;
    y = std::clamp(y, lo, hi);
    for (int it = 0; it < 100; ++it) {
      double F = 0.0, f = 0.0;
      for (double mi : work) {
        double z = (y - mi) / sy;
        F += Phi(z);
        f += phi(z);
      }
      F = F / m - tau;
      f = f / (m * sy);
      if (F > 0) hi = y; else lo = y;
      double ny = f > 0 ? y - F / f : 0.5 * (lo + hi);
      if (!(ny > lo && ny < hi)) ny = 0.5 * (lo + hi);
      if (std::abs(ny - y) < 1e-12) return ny;
      y = ny;
    }
    return y;
  };

  const double t = opts.t_step;
  auto central = [&](double h, Index from, Index to) {
    return (quantile_at(h, from, to) - quantile_at(-h, from, to)) / (2.0 * h);
  };
  OracleResult res;
  res.value = central(t, 0, N);
  double half = central(0.5 * t, 0, N);
  res.discretization_error = std::abs(res.value - half);
  res.refined = (4.0 * half - res.value) / 3.0;
  if (opts.batches >= 2) {
    std::vector<double> b;
    Index size = N / opts.batches;
    for (int k = 0; k < opts.batches; ++k) b.push_back(central(t, k * size, (k + 1) * size));
    double mean = 0.0;
    for (double v : b) mean += v;
    mean /= b.size();
    double ss = 0.0;
    for (double v : b) ss += (v - mean) * (v - mean);
    res.mc_se = std::sqrt(ss / (b.size() - 1)) / std::sqrt(static_cast<double>(b.size()));
  }
  if (!(res.discretization_error <= opts.tolerance)) {
    std::ostringstream os;
    os << "oracle finite difference is unstable: |D(t) - D(t/2)| = " << res.discretization_error
       << " exceeds " << opts.tolerance;
    throw NumericalError(Step::none, os.str());
  }
  return res;
}

EstimatorConfig simulation_estimator_config() {
  EstimatorConfig cfg;
  cfg.lambda_link = LinkKind::probit;
  cfg.lambda_index = {"1", "z1_*", "x"};
  return cfg;
}

ReplicationEstimate run_replication(const DgpSpec& spec, const EstimatorConfig& cfg,
                                    const std::vector<double>& taus,
                                    const std::vector<ShiftKind>& kinds,
                                    const CounterfactualDistribution& G) {
  auto [study, aux] = generate_dgp(spec);
  MergedSample merged = merge_samples(study, aux);
  ReplicationEstimate out;
  for (double tau : taus) {
    ThetaEstimate th = fit_nuisances(merged, tau, cfg);
    for (ShiftKind kind : kinds) out.results.push_back(estimate_uqe(merged, th, G, kind, cfg));
  }
  return out;
}

McReport run_monte_carlo(const DgpSpec& spec, const EstimatorConfig& cfg, const McSettings& settings) {
  spec.validate();
  auto start = std::chrono::steady_clock::now();
  const Index reps = settings.n_reps;
  if (reps < 1) throw ValidationError("n_reps must be at least 1");
  const std::size_t cells = settings.taus.size() * settings.kinds.size();
  if (cells == 0) throw ValidationError("no (tau, kind) cells to simulate");

  std::optional<DgpTruth> truth;
  auto G = [&]() {
    if (!settings.counterfactual && spec.discrete_x())
      throw ValidationError("discrete designs need an explicit counterfactual");
    truth.emplace(spec);
    return settings.counterfactual ? settings.counterfactual(*truth) : default_counterfactual(*truth);
  }();

  McReport report;
  report.n_reps = reps;
  report.cells.resize(cells);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::size_t ci = 0;
  for (double tau : settings.taus)
    for (ShiftKind kind : settings.kinds) {
      McCell& c = report.cells[ci++];
      c.tau = tau;
      c.kind = kind;
      for (auto* v : {&c.point, &c.d_hat, &c.se_improved, &c.se_plugin, &c.ci_lo, &c.ci_hi, &c.p_value})
        v->assign(reps, nan);
      if (settings.compute_oracle && !spec.discrete_x()) {
        OracleResult o = oracle_uqe(spec, *truth, tau, G, kind, settings.oracle);
        c.oracle = o.value;
        c.oracle_se = o.mc_se;
      }
    }

  std::vector<std::string> errors(reps);
  std::atomic<Index> next{0};
  auto worker = [&]() {
    for (Index r = next++; r < reps; r = next++) {
      DgpSpec s = spec;
      s.seed = replication_seed(settings.seed, static_cast<std::uint64_t>(r));
      try {
        ReplicationEstimate est = run_replication(s, cfg, settings.taus, settings.kinds, G);
        for (std::size_t k = 0; k < cells; ++k) {
          const UqeResult& u = est.results[k];
          McCell& c = report.cells[k];
          c.point[r] = u.point;
          c.d_hat[r] = u.d_hat;
          c.se_improved[r] = u.se_improved;
          c.se_plugin[r] = u.se_plugin;
          c.ci_lo[r] = u.ci_lo;
          c.ci_hi[r] = u.ci_hi;
          c.p_value[r] = u.p_value;
        }
      } catch (const std::exception& e) {
        errors[r] = e.what();
        if (errors[r].empty()) errors[r] = "unknown failure";
      }
    }
  };
  int threads = std::max(1, settings.threads);
  std::vector<std::thread> pool;
  for (int k = 1; k < threads; ++k) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  for (Index r = 0; r < reps; ++r)
    if (!errors[r].empty()) {
      ++report.failures;
      report.failure_messages.push_back("replication " + std::to_string(r) + ": " + errors[r]);
    }
  for (McCell& c : report.cells) {
    double s1 = 0, s2 = 0, cover = 0, reject = 0, sei = 0, sep = 0, d1 = 0, d2 = 0;
    for (Index r = 0; r < reps; ++r) {
      if (std::isnan(c.point[r])) continue;
      ++c.n_ok;
      s1 += c.point[r];
      s2 += c.point[r] * c.point[r];
      d1 += c.d_hat[r];
      d2 += c.d_hat[r] * c.d_hat[r];
      cover += (c.ci_lo[r] <= c.oracle && c.oracle <= c.ci_hi[r]) ? 1 : 0;
      reject += c.p_value[r] < 0.05 ? 1 : 0;
      sei += c.se_improved[r];
      sep += c.se_plugin[r];
    }
    if (c.n_ok == 0) continue;
    double k = static_cast<double>(c.n_ok);
    c.mean = s1 / k;
    c.bias = c.mean - c.oracle;
    c.sd = c.n_ok > 1 ? std::sqrt(std::max(0.0, (s2 - k * c.mean * c.mean) / (k - 1))) : 0.0;
    c.rmse = std::sqrt(c.bias * c.bias + c.sd * c.sd * (k - 1) / k);
    double dm = d1 / k;
    c.d_sd = c.n_ok > 1 ? std::sqrt(std::max(0.0, (d2 - k * dm * dm) / (k - 1))) : 0.0;
    c.coverage = cover / k;
    c.rejection_rate = reject / k;
    c.mean_se_improved = sei / k;
    c.mean_se_plugin = sep / k;
  }
  report.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace uqe
