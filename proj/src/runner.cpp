#include "uqe/runner.hpp"

#include <algorithm>
#include <cstdio>
#include <iomanip>
#include <sstream>

#include "uqe/errors.hpp"
#include "uqe/io.hpp"

namespace uqe {

using nlohmann::ordered_json;

namespace {

std::pair<std::string, std::string> split_spec(const std::string& spec) {
  auto colon = spec.find(':');
  if (colon == std::string::npos) return {spec, ""};
  return {spec.substr(0, colon), spec.substr(colon + 1)};
}

std::vector<double> numbers(const std::string& text, const std::string& spec) {
  std::vector<double> out;
  std::istringstream is(text);
  std::string cell;
  while (std::getline(is, cell, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(cell, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0) throw ValidationError("counterfactual '" + spec + "': bad number '" + cell + "'");
    out.push_back(v);
  }
  return out;
}

std::vector<double> expect(const std::string& text, const std::string& spec, std::size_t count) {
  auto v = numbers(text, spec);
  if (v.size() != count)
    throw ValidationError("counterfactual '" + spec + "' needs " + std::to_string(count) + " numbers");
  return v;
}

// Shared by the data-driven and the simulation builders.
std::optional<CounterfactualDistribution> parametric(const std::string& spec) {
  auto [kind, arg] = split_spec(spec);
  if (kind == "normal") {
    auto v = expect(arg, spec, 2);
    return CounterfactualDistribution::normal(v[0], v[1]);
  }
  if (kind == "uniform") {
    auto v = expect(arg, spec, 2);
    return CounterfactualDistribution::uniform(v[0], v[1]);
  }
  if (kind == "file") {
    CsvTable t = read_csv_file(arg);
    std::vector<double> s;
    for (const auto& row : t.rows) s.push_back(row[0]);
    return CounterfactualDistribution::from_sample(std::move(s));
  }
  if (kind == "quantiles") {
    CsvTable t = read_csv_file(arg);
    if (t.header.size() < 2) throw ValidationError("quantile table '" + arg + "' needs columns u,q");
    std::vector<double> u, q;
    for (const auto& row : t.rows) {
      u.push_back(row[0]);
      q.push_back(row[1]);
    }
    return CounterfactualDistribution::from_quantile_table(std::move(u), std::move(q));
  }
  return std::nullopt;
}

std::vector<double> support_points(const MergedSample& merged) {
  std::vector<double> pts(merged.x().data(), merged.x().data() + merged.n_aux());
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  return pts;
}

ordered_json vec(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

ordered_json labeled(const std::vector<std::string>& labels, const VectorXd& v) {
  ordered_json j = ordered_json::object();
  for (Index k = 0; k < v.size(); ++k) j[labels[k]] = v(k);
  return j;
}

ordered_json nuisance_json(const ThetaEstimate& th) {
  ordered_json j;
  j["tau"] = th.tau;
  j["q_hat"] = th.q_hat;
  j["b_y"] = th.b_y;
  j["b_x"] = th.b_x;
  j["f_y"] = th.f_y;
  j["f_y_d1"] = th.f_y_d1;
  j["f_y_d2"] = th.f_y_d2;
  const PropensityFit& p = th.propensity;
  j["propensity"] = {{"link", p.link.name()},
                     {"gamma", labeled(th.k_basis.labels(), p.gamma)},
                     {"lambda_s", labeled(th.t_basis.labels(), p.lambda_s)},
                     {"lambda_a", labeled(th.t_basis.labels(), p.lambda_a)},
                     {"mle_iterations", p.mle.iterations},
                     {"mle_score_norm", p.mle.gradient_norm},
                     {"tilt_residual_s", p.tilt_s.gradient_norm},
                     {"tilt_residual_a", p.tilt_a.gradient_norm}};
  const GmmFit& g = th.gmm;
  j["gmm"] = {{"beta", labeled(th.lambda.index().labels(), g.beta)},
              {"link", th.lambda.link().name()},
              {"objective", g.objective},
              {"moment_mean", vec(g.moment_mean)},
              {"converged", g.converged},
              {"iterations", g.iterations},
              {"gradient_norm", g.gradient_norm},
              {"jacobian_min_sv", g.jacobian_min_sv},
              {"starts_used", g.starts_used}};
  return j;
}

ordered_json overlap_json(const OverlapReport& rep) {
  ordered_json cols = ordered_json::array();
  for (const auto& c : rep.columns)
    cols.push_back({{"name", c.name},
                    {"study_min", c.study_min},
                    {"study_max", c.study_max},
                    {"aux_min", c.aux_min},
                    {"aux_max", c.aux_max},
                    {"excess", c.excess},
                    {"flagged", c.flagged}});
  return cols;
}

ordered_json sample_json(const MergedSample& m) {
  return {{"n", m.n()}, {"n_study", m.n_study()}, {"n_aux", m.n_aux()}, {"q0_hat", m.q0_hat()}};
}

std::string fmt(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

std::string upper(std::string s) {
  for (auto& ch : s) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return s;
}

std::string default_counterfactual_spec(Command c) {
  switch (c) {
    case Command::estimate: return "location:1";
    case Command::bounds: return "mass-shift:0.1";
    default: return "default";
  }
}

}  // namespace

MergedSample load_data(const RunConfig& cfg) {
  if (cfg.dgp) {
    auto [s, a] = generate_dgp(*cfg.dgp);
    return merge_samples(s, a);
  }
  if (!cfg.study_path || !cfg.aux_path) throw ValidationError("no data source configured");
  return merge_samples(read_study_csv(*cfg.study_path), read_aux_csv(*cfg.aux_path));
}

CounterfactualDistribution build_counterfactual(const std::string& spec, const MergedSample& merged,
                                                const ThetaEstimate& theta) {
  if (auto g = parametric(spec)) return *g;
  auto [kind, arg] = split_spec(spec);
  if (kind == "location") {
    double d = expect(arg, spec, 1)[0];
    std::vector<double> s(merged.x().data(), merged.x().data() + merged.n_aux());
    for (double& v : s) v += d;
    return CounterfactualDistribution::from_sample(std::move(s));
  }
  if (kind == "status-quo") return status_quo(theta);
  if (kind == "levels") {
    auto pts = support_points(merged);
    return discrete_counterfactual(pts, expect(arg, spec, pts.size()));
  }
  if (kind == "mass-shift") {
    double t = expect(arg, spec, 1)[0];
    if (!(t >= 0.0 && t <= 1.0)) throw ValidationError("counterfactual '" + spec + "': t must lie in [0,1]");
    auto pts = support_points(merged);
    std::vector<double> cdf;
    for (std::size_t j = 0; j < pts.size(); ++j)
      cdf.push_back(j + 1 < pts.size() ? std::max(theta.F_hat(pts[j]) - t, 0.0) : 1.0);
    return discrete_counterfactual(pts, cdf);
  }
  throw ValidationError("unknown counterfactual spec '" + spec + "'");
}

CounterfactualDistribution build_counterfactual(const std::string& spec, const DgpTruth& truth) {
  if (spec.empty() || spec == "default") return default_counterfactual(truth);
  if (auto g = parametric(spec)) return *g;
  throw ValidationError("counterfactual '" + spec + "' is not available for simulate");
}

ordered_json result_to_json(const UqeResult& r, double ci_level) {
  ordered_json j;
  j["tau"] = r.tau;
  j["shift"] = shift_name(r.kind);
  j["point"] = r.point;
  j["se_improved"] = r.se_improved;
  j["se_plugin"] = r.se_plugin;
  j["ci_level"] = ci_level;
  j["ci_lo"] = r.ci_lo;
  j["ci_hi"] = r.ci_hi;
  j["statistic"] = r.statistic;
  j["p_value"] = r.p_value;
  j["d_hat"] = r.d_hat;
  j["f_y_at_q"] = r.f_y_at_q;
  j["bias"] = r.bias;
  j["n_kept"] = r.n_kept;
  j["n_trimmed"] = r.n_trimmed;
  j["jacobian_condition"] = r.jacobian_condition;
  j["plugin_fallback"] = r.plugin_fallback;
  j["warnings"] = r.warnings;
  return j;
}

std::string format_table(const std::vector<UqeResult>& results, const std::vector<double>& taus,
                         const std::vector<ShiftKind>& shifts) {
  std::ostringstream os;
  os << std::left << std::setw(16) << "";
  for (double t : taus) os << std::right << std::setw(14) << ("tau=" + fmt(t, 2));
  os << '\n';
  for (ShiftKind k : shifts) {
    auto find = [&](double t) -> const UqeResult* {
      for (const auto& r : results)
        if (r.kind == k && r.tau == t) return &r;
      return nullptr;
    };
    auto line = [&](const std::string& label, auto cell) {
      os << std::left << std::setw(16) << label;
      for (double t : taus) {
        const UqeResult* r = find(t);
        os << std::right << std::setw(14) << (r ? cell(*r) : std::string("-"));
      }
      os << '\n';
    };
    line(upper(shift_name(k)) + " estimate", [](const UqeResult& r) { return fmt(r.point); });
    line("  (se)", [](const UqeResult& r) { return "(" + fmt(r.se_improved) + ")"; });
    line("  zero-test p", [](const UqeResult& r) { return fmt(r.p_value, 3); });
  }
  return os.str();
}

ResultDocument run_estimate(const RunConfig& cfg) {
  if (cfg.discrete_x) return run_bounds(cfg);
  MergedSample merged = load_data(cfg);
  const std::string gspec = cfg.counterfactual.empty() ? default_counterfactual_spec(cfg.command)
                                                       : cfg.counterfactual;
  ResultDocument out;
  ordered_json estimates = ordered_json::array();
  ordered_json nuisances = ordered_json::array();
  std::vector<UqeResult> results;
  for (double tau : cfg.taus) {
    ThetaEstimate th = fit_nuisances(merged, tau, cfg.estimator);
    CounterfactualDistribution G = build_counterfactual(gspec, merged, th);
    for (ShiftKind k : cfg.shifts) {
      UqeResult r = estimate_uqe(merged, th, G, k, cfg.estimator);
      estimates.push_back(result_to_json(r, cfg.estimator.ci_level));
      results.push_back(std::move(r));
    }
    nuisances.push_back(nuisance_json(th));
  }
  OverlapReport overlap = validate_overlap(merged, cfg.overlap_tolerance);

  ordered_json config = config_to_json(cfg);
  config["counterfactual"] = gspec;
  out.doc["config"] = config;
  out.doc["estimates"] = estimates;
  ordered_json diag;
  diag["sample"] = sample_json(merged);
  diag["overlap"] = overlap_json(overlap);
  diag["overlap_flagged"] = overlap.flagged_count();
  diag["nuisances"] = nuisances;
  out.doc["diagnostics"] = diag;

  std::ostringstream plot;
  plot << "tau,shift,point,ci_lo,ci_hi\n" << std::setprecision(10);
  for (const auto& r : results)
    plot << r.tau << ',' << shift_name(r.kind) << ',' << r.point << ',' << r.ci_lo << ',' << r.ci_hi << '\n';
  out.plot_csv = plot.str();
  out.table = format_table(results, cfg.taus, cfg.shifts);
  return out;
}

ResultDocument run_bounds(const RunConfig& cfg) {
  MergedSample merged = load_data(cfg);
  const std::string gspec = cfg.counterfactual.empty() ? default_counterfactual_spec(Command::bounds)
                                                       : cfg.counterfactual;
  ResultDocument out;
  ordered_json bounds = ordered_json::array();
  ordered_json nuisances = ordered_json::array();
  std::ostringstream plot, table;
  plot << "tau,lower,upper\n" << std::setprecision(10);
  table << std::left << std::setw(10) << "tau" << std::right << std::setw(14) << "lower"
        << std::setw(14) << "upper" << std::setw(12) << "collapsed" << '\n';
  BoundsOptions bopts;
  bopts.max_levels = cfg.max_levels;
  for (double tau : cfg.taus) {
    ThetaEstimate th = fit_nuisances(merged, tau, cfg.estimator);
    CounterfactualDistribution G = build_counterfactual(gspec, merged, th);
    BoundsResult b = estimate_bounds(merged, th, G, bopts);
    ordered_json j;
    j["tau"] = tau;
    j["shift"] = "mds";
    j["lower"] = b.lower;
    j["upper"] = b.upper;
    j["collapsed"] = b.collapsed;
    j["f_y_at_q"] = b.f_y_at_q;
    j["support"] = {{"points", b.support.points}, {"F_hat", b.support.F_hat}, {"G", b.support.G}};
    ordered_json periods = ordered_json::array();
    auto zrow = [&](Index k) { return vec(b.z1_search.row(k).transpose()); };
    for (const auto& p : b.periods)
      periods.push_back({{"j", p.j},
                         {"x_prev", p.x_prev},
                         {"x", p.x},
                         {"G_prev", p.G_prev},
                         {"F_prev", p.F_prev},
                         {"set", p.in_j_plus ? "J+" : "J-"},
                         {"z_star", zrow(p.z_star)},
                         {"z_dagger", zrow(p.z_dagger)},
                         {"h_star", p.h_star},
                         {"h_dagger", p.h_dagger}});
    j["periods"] = periods;
    j["z1_search_size"] = b.z1_search.rows();
    bounds.push_back(j);
    nuisances.push_back(nuisance_json(th));
    plot << tau << ',' << b.lower << ',' << b.upper << '\n';
    table << std::left << std::setw(10) << fmt(tau, 2) << std::right << std::setw(14) << fmt(b.lower)
          << std::setw(14) << fmt(b.upper) << std::setw(12) << (b.collapsed ? "yes" : "no") << '\n';
  }
  ordered_json config = config_to_json(cfg);
  config["counterfactual"] = gspec;
  out.doc["config"] = config;
  out.doc["bounds"] = bounds;
  ordered_json diag;
  diag["sample"] = sample_json(merged);
  diag["overlap"] = overlap_json(validate_overlap(merged, cfg.overlap_tolerance));
  diag["nuisances"] = nuisances;
  out.doc["diagnostics"] = diag;
  out.plot_csv = plot.str();
  out.table = table.str();
  return out;
}

ResultDocument run_simulate(const RunConfig& cfg) {
  if (!cfg.dgp) throw ValidationError("simulate needs a dgp");
  const DgpSpec& spec = *cfg.dgp;
  McSettings ms;
  ms.taus = cfg.taus;
  ms.kinds = cfg.shifts;
  ms.n_reps = cfg.reps;
  ms.seed = cfg.seed;
  ms.threads = cfg.threads;
  ms.compute_oracle = cfg.compute_oracle;
  ms.oracle = cfg.oracle;
  const std::string gspec = cfg.counterfactual.empty() ? "default" : cfg.counterfactual;
  ms.counterfactual = [gspec](const DgpTruth& truth) { return build_counterfactual(gspec, truth); };
  McReport rep = run_monte_carlo(spec, cfg.estimator, ms);

  ResultDocument out;
  ordered_json config = config_to_json(cfg);
  config["counterfactual"] = gspec;
  out.doc["config"] = config;
  ordered_json cells = ordered_json::array();
  std::vector<UqeResult> means;
  for (const auto& c : rep.cells) {
    cells.push_back({{"tau", c.tau},
                     {"shift", shift_name(c.kind)},
                     {"oracle", c.oracle},
                     {"oracle_se", c.oracle_se},
                     {"n_ok", c.n_ok},
                     {"mean", c.mean},
                     {"bias", c.bias},
                     {"sd", c.sd},
                     {"rmse", c.rmse},
                     {"coverage", c.coverage},
                     {"rejection_rate", c.rejection_rate},
                     {"mean_se_improved", c.mean_se_improved},
                     {"mean_se_plugin", c.mean_se_plugin},
                     {"d_hat_sd", c.d_sd}});
  }
  out.doc["estimates"] = cells;
  out.doc["diagnostics"] = {{"replications", rep.n_reps},
                            {"failures", rep.failures},
                            {"failure_messages", rep.failure_messages}};

  std::ostringstream table;
  table << std::left << std::setw(8) << "tau" << std::setw(6) << "shift" << std::right
        << std::setw(10) << "oracle" << std::setw(10) << "mean" << std::setw(10) << "bias"
        << std::setw(10) << "sd" << std::setw(10) << "rmse" << std::setw(10) << "cover"
        << std::setw(10) << "reject" << '\n';
  std::ostringstream plot;
  plot << "tau,shift,oracle,mean,sd\n" << std::setprecision(10);
  for (const auto& c : rep.cells) {
    table << std::left << std::setw(8) << fmt(c.tau, 2) << std::setw(6) << shift_name(c.kind)
          << std::right << std::setw(10) << fmt(c.oracle) << std::setw(10) << fmt(c.mean)
          << std::setw(10) << fmt(c.bias) << std::setw(10) << fmt(c.sd) << std::setw(10)
          << fmt(c.rmse) << std::setw(10) << fmt(c.coverage, 3) << std::setw(10)
          << fmt(c.rejection_rate, 3) << '\n';
    plot << c.tau << ',' << shift_name(c.kind) << ',' << c.oracle << ',' << c.mean << ',' << c.sd << '\n';
  }
  out.table = table.str();
  out.plot_csv = plot.str();

  std::ostringstream reps;
  reps << "rep,seed,tau,shift,point,d_hat,se_improved,se_plugin,ci_lo,ci_hi,p_value\n"
       << std::setprecision(12);
  for (Index r = 0; r < rep.n_reps; ++r)
    for (const auto& c : rep.cells)
      reps << r << ',' << replication_seed(cfg.seed, static_cast<std::uint64_t>(r)) << ',' << c.tau
           << ',' << shift_name(c.kind) << ',' << c.point[r] << ',' << c.d_hat[r] << ','
           << c.se_improved[r] << ',' << c.se_plugin[r] << ',' << c.ci_lo[r] << ',' << c.ci_hi[r]
           << ',' << c.p_value[r] << '\n';
  out.replications_csv = reps.str();
  std::fprintf(stderr, "simulate: %ld replications, %ld failures, %.1f s\n",
               static_cast<long>(rep.n_reps), static_cast<long>(rep.failures), rep.runtime_seconds);
  return out;
}

ResultDocument run(const RunConfig& cfg) {
  switch (cfg.command) {
    case Command::estimate: return run_estimate(cfg);
    case Command::bounds: return run_bounds(cfg);
    default: return run_simulate(cfg);
  }
}

int exit_code(const std::exception& e) {
  if (dynamic_cast<const ValidationError*>(&e)) return 2;
  return 3;
}

ordered_json error_payload(const std::exception& e) {
  ordered_json j;
  if (dynamic_cast<const ValidationError*>(&e)) {
    j["kind"] = "validation";
  } else if (auto* n = dynamic_cast<const NumericalError*>(&e)) {
    j["kind"] = "numerical";
    j["step"] = step_name(n->step());
  } else {
    j["kind"] = "internal";
  }
  j["message"] = e.what();
  return {{"error", j}};
}

}  // namespace uqe
