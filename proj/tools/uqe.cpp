#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "uqe/errors.hpp"
#include "uqe/io.hpp"
#include "uqe/runner.hpp"

using nlohmann::json;

namespace {

struct Flags {
  std::string config;
  std::string study, aux, counterfactual, output, plot, table, replications_csv;
  std::vector<double> tau;
  std::vector<std::string> shift;
  std::string link, lambda_link, kernel, weighting;
  std::vector<std::string> lambda_index;
  std::optional<double> bandwidth_y, bandwidth_x;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<long> reps, n, max_levels;
  bool discrete_x = false, recenter = false, no_oracle = false;
};

void add_common(CLI::App* app, Flags& f, bool data) {
  app->add_option("--config", f.config, "JSON config file; flags override its values");
  if (data) {
    app->add_option("--study", f.study, "study CSV (y, z1_*, z2_*)");
    app->add_option("--aux", f.aux, "auxiliary CSV (x, z1_*, z2_*)");
  }
  app->add_option("--tau", f.tau, "quantile levels")->delimiter(',');
  app->add_option("--counterfactual", f.counterfactual, "counterfactual spec, e.g. normal:0,1 or file:g.csv");
  app->add_option("--link", f.link, "propensity link (logit, probit)");
  app->add_option("--lambda-link", f.lambda_link, "link of the Lambda model");
  app->add_option("--lambda-index", f.lambda_index, "Lambda index terms, e.g. 1,z1_*,x")->delimiter(',');
  app->add_option("--kernel", f.kernel, "kernel for both densities");
  app->add_option("--weighting", f.weighting, "GMM weighting (identity, twostep)");
  app->add_option("--bandwidth-y", f.bandwidth_y, "outcome bandwidth");
  app->add_option("--bandwidth-x", f.bandwidth_x, "covariate bandwidth");
  app->add_flag("--recenter", f.recenter, "subtract the bias estimate from the CI");
  app->add_option("--seed", f.seed, "master seed");
  app->add_option("--threads", f.threads, "worker threads");
  app->add_option("-o,--output", f.output, "result document (default stdout)");
  app->add_option("--plot", f.plot, "plot-data CSV");
  app->add_option("--table", f.table, "text table");
}

json overrides(const Flags& f) {
  json o = json::object();
  if (!f.study.empty()) o["study"] = f.study;
  if (!f.aux.empty()) o["aux"] = f.aux;
  if (!f.tau.empty()) o["tau"] = f.tau;
  if (!f.shift.empty()) o["shift"] = f.shift;
  if (!f.counterfactual.empty()) o["counterfactual"] = f.counterfactual;
  if (!f.link.empty()) o["propensity_link"] = f.link;
  if (!f.lambda_link.empty()) o["lambda_link"] = f.lambda_link;
  if (!f.lambda_index.empty()) o["lambda_index"] = f.lambda_index;
  if (!f.kernel.empty()) o["kernel_y"] = o["kernel_x"] = f.kernel;
  if (!f.weighting.empty()) o["weighting"] = f.weighting;
  if (f.bandwidth_y) o["bandwidth_y"] = *f.bandwidth_y;
  if (f.bandwidth_x) o["bandwidth_x"] = *f.bandwidth_x;
  if (f.recenter) o["recenter_ci"] = true;
  if (f.seed) o["seed"] = *f.seed;
  if (f.threads) o["threads"] = *f.threads;
  if (f.reps) o["reps"] = *f.reps;
  if (f.max_levels) o["max_levels"] = *f.max_levels;
  if (f.discrete_x) o["discrete_x"] = true;
  if (f.no_oracle) o["compute_oracle"] = false;
  if (f.n) o["dgp"]["n"] = *f.n;
  if (!f.output.empty()) o["output"] = f.output;
  if (!f.plot.empty()) o["plot"] = f.plot;
  if (!f.table.empty()) o["table"] = f.table;
  if (!f.replications_csv.empty()) o["replications_csv"] = f.replications_csv;
  return o;
}

json read_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw uqe::ValidationError("cannot open config '" + path + "'");
  try {
    return json::parse(in, nullptr, true, true);
  } catch (const json::exception& e) {
    throw uqe::ValidationError("config '" + path + "' is not valid JSON: " + e.what());
  }
}

int fail(const std::exception& e) {
  std::cerr << uqe::error_payload(e).dump() << '\n';
  return uqe::exit_code(e);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-sample unconditional quantile effects"};
  app.require_subcommand(1);
  Flags f;
  auto* est = app.add_subcommand("estimate", "estimate UQEs from study and auxiliary CSVs");
  add_common(est, f, true);
  est->add_option("--shift", f.shift, "shift kinds (mds, mqs, mls)")->delimiter(',');
  est->add_flag("--discrete-x", f.discrete_x, "treat x as discrete and report bounds");
  est->add_option("--max-levels", f.max_levels, "largest number of x levels for bounds");
  auto* sim = app.add_subcommand("simulate", "Monte Carlo study on the simulated design");
  add_common(sim, f, false);
  sim->add_option("--shift", f.shift, "shift kinds (mds, mqs, mls)")->delimiter(',');
  sim->add_option("--reps", f.reps, "replications");
  sim->add_option("--n", f.n, "sample size per replication");
  sim->add_flag("--no-oracle", f.no_oracle, "skip the brute-force oracle");
  sim->add_option("--replications-csv", f.replications_csv, "per-replication CSV");
  auto* bnd = app.add_subcommand("bounds", "bounds on the MDS effect for a discrete covariate");
  add_common(bnd, f, true);
  bnd->add_option("--max-levels", f.max_levels, "largest number of x levels");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return fail(uqe::ValidationError(e.what()));
  }

  try {
    std::string name = app.get_subcommands().front()->get_name();
    uqe::Command command = uqe::parse_command(name);
    json doc = uqe::merge_config(read_config(f.config), overrides(f));
    uqe::RunConfig cfg = uqe::parse_config(command, doc);
    uqe::ResultDocument res = uqe::run(cfg);
    std::string text = res.doc.dump(2) + "\n";
    if (cfg.output.empty()) std::cout << text;
    else uqe::write_text_file(cfg.output, text);
    if (!cfg.plot.empty()) uqe::write_text_file(cfg.plot, res.plot_csv);
    if (!cfg.table.empty()) uqe::write_text_file(cfg.table, res.table);
    else if (!cfg.output.empty()) std::cerr << res.table;
    if (!cfg.replications_csv.empty()) uqe::write_text_file(cfg.replications_csv, res.replications_csv);
    return 0;
  } catch (const std::exception& e) {
    return fail(e);
  }
}
