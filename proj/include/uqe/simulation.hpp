#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "uqe/counterfactual.hpp"
#include "uqe/link.hpp"
#include "uqe/sample.hpp"
#include "uqe/uqe.hpp"

namespace uqe {

// Conditional-normal linear design:
//   Y = gamma_s1 X + gamma_s2'(1, Z1) + eps,  X = delta_1'(1, Z1) + delta_2'Z2 + eta,
//   R ~ Bernoulli(L(gamma_prop'(1, Z1, Z2))), eps ~ N(0, psi_y), eta ~ N(0, psi_x).
// With x_thresholds set, X is the number of thresholds the latent index exceeds.
struct DgpSpec {
  enum class Z1Law { normal, bernoulli };

  double gamma_s1 = 0.5;
  std::vector<double> gamma_s2{0.5, 0.5};
  std::vector<double> delta_1{0.0, 1.0};
  std::vector<double> delta_2{1.0};
  double psi_y = 1.0;
  double psi_x = 1.0;
  std::vector<double> gamma_prop{-0.4, 0.3, -0.3};
  LinkKind propensity_link = LinkKind::logit;
  Z1Law z1_law = Z1Law::normal;
  double z1_p = 0.5;
  std::vector<double> x_thresholds;
  // Misspecification toggle: shifts the auxiliary covariate equation, so the
  // conditional law of X given Z differs across the two populations.
  double aux_x_shift = 0.0;
  Index n = 5000;
  std::uint64_t seed = 1;

  Index d_z1() const { return static_cast<Index>(gamma_s2.size()) - 1; }
  Index d_z2() const { return static_cast<Index>(delta_2.size()); }
  bool discrete_x() const { return !x_thresholds.empty(); }
  void validate() const;
};

std::pair<StudySample, AuxSample> generate_dgp(const DgpSpec& spec);

// Population quantities of the study population, by Gauss-Hermite quadrature.
class DgpTruth {
 public:
  explicit DgpTruth(const DgpSpec& spec, int nodes = 40);

  const DgpSpec& spec() const { return spec_; }
  double study_share() const { return share_; }

  // X | R = 1 (continuous designs use interpolated tables).
  double F_x(double x) const;
  double f_x(double x) const;
  double f_x_d1(double x) const;
  double x_mean() const { return x_mean_; }
  double x_sd() const { return x_sd_; }
  double x_quantile(double u) const;
  // Discrete designs: P(X <= level | R = 1) for level = 0..#thresholds.
  double x_level_cdf(int level) const;

  // Y | R = 1.
  double F_y(double y) const;
  double f_y(double y) const;
  double f_y_d1(double y) const;
  double f_y_d2(double y) const;
  double q_y(double tau) const;

  // P(Y <= q | X = x, Z1 = z1, R = 1), z1 without the leading constant.
  double lambda(double q, double x, const std::vector<double>& z1) const;

 private:
  struct Node {
    double weight;  // quadrature weight times L(propensity index), normalized
    double v;       // mean of the latent covariate index
    double w;       // mean of Y given Z (continuous X)
    double c;       // gamma_s2'(1, z1)
  };
  DgpSpec spec_;
  std::vector<Node> nodes_;
  double share_ = 0.0;
  double x_mean_ = 0.0;
  double x_sd_ = 1.0;
  double grid_lo_ = 0.0;
  double grid_h_ = 1.0;
  std::vector<double> tF_, tf_, tf1_, tf2_;

  double x_sum(double x, int order) const;
  double y_sum(double y, int order) const;
};

CounterfactualDistribution default_counterfactual(const DgpTruth& truth, double shift = 0.25,
                                                  double scale = 1.1);

struct OracleOptions {
  double t_step = 0.01;
  Index n_draws = 1'000'000;
  std::uint64_t seed = 20240611;
  bool rao_blackwell = true;  // integrate eps analytically instead of sampling it
  double tolerance = 0.05;     // allowed |D(t) - D(t/2)|
  int batches = 10;
};

struct OracleResult {
  double value = 0.0;                 // central difference at t_step
  double refined = 0.0;               // Richardson combination of t and t/2
  double discretization_error = 0.0;  // |D(t) - D(t/2)|
  double mc_se = 0.0;                 // batch-means standard error of value
};

OracleResult oracle_uqe(const DgpSpec& spec, const DgpTruth& truth, double tau,
                        const CounterfactualDistribution& G, ShiftKind kind,
                        const OracleOptions& opts = {});

std::uint64_t replication_seed(std::uint64_t master, std::uint64_t rep);

struct McSettings {
  std::vector<double> taus{0.5};
  std::vector<ShiftKind> kinds{ShiftKind::mqs};
  Index n_reps = 100;
  std::uint64_t seed = 1;
  int threads = 1;
  bool compute_oracle = true;
  OracleOptions oracle{};
  std::function<CounterfactualDistribution(const DgpTruth&)> counterfactual;  // default_counterfactual when empty
};

struct McCell {
  double tau = 0.0;
  ShiftKind kind = ShiftKind::mqs;
  double oracle = 0.0;
  double oracle_se = 0.0;
  std::vector<double> point, d_hat, se_improved, se_plugin, ci_lo, ci_hi, p_value;  // NaN on failure
  Index n_ok = 0;
  double mean = 0.0;
  double bias = 0.0;
  double sd = 0.0;
  double rmse = 0.0;
  double coverage = 0.0;
  double rejection_rate = 0.0;
  double mean_se_improved = 0.0;
  double mean_se_plugin = 0.0;
  double d_sd = 0.0;
};

struct McReport {
  Index n_reps = 0;
  Index failures = 0;
  std::vector<std::string> failure_messages;
  std::vector<McCell> cells;
  double runtime_seconds = 0.0;
};

struct ReplicationEstimate {
  std::vector<UqeResult> results;  // taus x kinds, tau-major
};

// One replication: generate with the derived seed, estimate every (tau, kind).
ReplicationEstimate run_replication(const DgpSpec& spec, const EstimatorConfig& cfg,
                                    const std::vector<double>& taus,
                                    const std::vector<ShiftKind>& kinds,
                                    const CounterfactualDistribution& G);

McReport run_monte_carlo(const DgpSpec& spec, const EstimatorConfig& cfg, const McSettings& settings);

// Estimator settings matched to the linear design: probit Lambda with index
// (1, z1, x) and k = t = e = (1, z1, z2).
EstimatorConfig simulation_estimator_config();

}  // namespace uqe
