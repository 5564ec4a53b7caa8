#include "uqe/config.hpp"

#include <algorithm>
#include <set>

#include "uqe/errors.hpp"

namespace uqe {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& known, const std::string& where) {
  if (!obj.is_object()) throw ValidationError(where + " must be a JSON object");
  for (const auto& [key, value] : obj.items())
    if (!known.count(key)) throw ValidationError("unknown config key '" + where + key + "'");
}

template <class T>
T get(const json& obj, const std::string& key, const std::string& where) {
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError("config key '" + where + key + "' has the wrong type: " + e.what());
  }
}

template <class T>
void read(const json& obj, const std::string& key, T& out, const std::string& where = "") {
  if (obj.contains(key) && !obj.at(key).is_null()) out = get<T>(obj, key, where);
}

template <class T>
void read(const json& obj, const std::string& key, std::optional<T>& out, const std::string& where = "") {
  if (obj.contains(key) && !obj.at(key).is_null()) out = get<T>(obj, key, where);
}

// A scalar or a list of scalars.
template <class T>
std::vector<T> list(const json& obj, const std::string& key) {
  const json& v = obj.at(key);
  if (v.is_array()) return get<std::vector<T>>(obj, key, "");
  return {get<T>(obj, key, "")};
}

// A positive number, or "rule-of-thumb" for the data-driven default.
void read_bandwidth(const json& obj, const std::string& key, std::optional<double>& out) {
  if (!obj.contains(key) || obj.at(key).is_null()) return;
  if (obj.at(key).is_string()) {
    if (obj.at(key).get<std::string>() != "rule-of-thumb")
      throw ValidationError("config key '" + key + "' must be a number or \"rule-of-thumb\"");
    out.reset();
    return;
  }
  out = get<double>(obj, key, "");
}

template <class F>
auto wrap(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const ValidationError& e) {
    throw ValidationError("config key '" + key + "': " + e.what());
  } catch (const std::invalid_argument& e) {
    throw ValidationError("config key '" + key + "': " + e.what());
  }
}

DgpSpec parse_dgp(const json& obj) {
  static const std::set<std::string> known{
      "gamma_s1", "gamma_s2",   "delta_1", "delta_2",      "psi_y",       "psi_x", "gamma_prop",
      "propensity_link", "z1_law", "z1_p", "x_thresholds", "aux_x_shift", "n",     "seed"};
  reject_unknown(obj, known, "dgp.");
  DgpSpec s;
  const std::string w = "dgp.";
  read(obj, "gamma_s1", s.gamma_s1, w);
  read(obj, "gamma_s2", s.gamma_s2, w);
  read(obj, "delta_1", s.delta_1, w);
  read(obj, "delta_2", s.delta_2, w);
  read(obj, "psi_y", s.psi_y, w);
  read(obj, "psi_x", s.psi_x, w);
  read(obj, "gamma_prop", s.gamma_prop, w);
  if (obj.contains("propensity_link"))
    s.propensity_link = wrap("dgp.propensity_link", [&] {
      return LinkFunction::parse(get<std::string>(obj, "propensity_link", w)).kind();
    });
  if (obj.contains("z1_law")) {
    auto law = get<std::string>(obj, "z1_law", w);
    if (law == "normal") s.z1_law = DgpSpec::Z1Law::normal;
    else if (law == "bernoulli") s.z1_law = DgpSpec::Z1Law::bernoulli;
    else throw ValidationError("config key 'dgp.z1_law' must be normal or bernoulli");
  }
  read(obj, "z1_p", s.z1_p, w);
  read(obj, "x_thresholds", s.x_thresholds, w);
  read(obj, "aux_x_shift", s.aux_x_shift, w);
  read(obj, "n", s.n, w);
  read(obj, "seed", s.seed, w);
  wrap("dgp", [&] { s.validate(); return 0; });
  return s;
}

}  // namespace

Command parse_command(const std::string& name) {
  if (name == "estimate") return Command::estimate;
  if (name == "simulate") return Command::simulate;
  if (name == "bounds") return Command::bounds;
  throw ValidationError("unknown command '" + name + "'");
}

std::string command_name(Command c) {
  switch (c) {
    case Command::estimate: return "estimate";
    case Command::simulate: return "simulate";
    default: return "bounds";
  }
}

json merge_config(json base, const json& overrides) {
  if (!base.is_object()) base = json::object();
  for (const auto& [key, value] : overrides.items()) {
    if (value.is_object() && base.contains(key) && base[key].is_object())
      base[key] = merge_config(base[key], value);
    else
      base[key] = value;
  }
  return base;
}

RunConfig parse_config(Command command, const json& doc) {
  static const std::set<std::string> known{
      "study",        "aux",          "dgp",           "tau",         "shift",
      "counterfactual", "propensity_link", "lambda_link", "k_terms",   "t_terms",
      "e_terms",      "lambda_index", "kernel_y",      "kernel_x",    "bandwidth_y",
      "bandwidth_x",  "derivative_bandwidth_factor",   "weighting",   "gmm_tol",
      "gmm_max_iter", "density_floor", "recenter_ci",  "ci_level",    "discrete_x",
      "max_levels",   "overlap_tolerance", "output",   "plot",        "table",
      "replications_csv", "seed",     "threads",       "reps",        "compute_oracle",
      "oracle",       "solver"};
  const json obj = doc.is_null() ? json::object() : doc;
  reject_unknown(obj, known, "");

  RunConfig c;
  c.command = command;
  if (command == Command::simulate) c.estimator = simulation_estimator_config();
  EstimatorConfig& e = c.estimator;

  read(obj, "study", c.study_path);
  read(obj, "aux", c.aux_path);
  if (obj.contains("dgp") && !obj["dgp"].is_null()) c.dgp = parse_dgp(obj["dgp"]);
  if (obj.contains("tau")) c.taus = list<double>(obj, "tau");
  if (obj.contains("shift")) {
    c.shifts.clear();
    for (const auto& s : list<std::string>(obj, "shift"))
      c.shifts.push_back(wrap("shift", [&] { return parse_shift(s); }));
  }
  read(obj, "counterfactual", c.counterfactual);
  if (obj.contains("propensity_link"))
    e.propensity_link = wrap("propensity_link", [&] {
      return LinkFunction::parse(get<std::string>(obj, "propensity_link", "")).kind();
    });
  if (obj.contains("lambda_link"))
    e.lambda_link = wrap("lambda_link", [&] {
      return LinkFunction::parse(get<std::string>(obj, "lambda_link", "")).kind();
    });
  if (obj.contains("k_terms")) e.k_terms = list<std::string>(obj, "k_terms");
  if (obj.contains("t_terms")) e.t_terms = list<std::string>(obj, "t_terms");
  if (obj.contains("e_terms")) e.e_terms = list<std::string>(obj, "e_terms");
  if (obj.contains("lambda_index")) e.lambda_index = list<std::string>(obj, "lambda_index");
  if (obj.contains("kernel_y"))
    e.kernel_y = wrap("kernel_y", [&] { return Kernel::parse(get<std::string>(obj, "kernel_y", "")).kind(); });
  if (obj.contains("kernel_x"))
    e.kernel_x = wrap("kernel_x", [&] { return Kernel::parse(get<std::string>(obj, "kernel_x", "")).kind(); });
  read_bandwidth(obj, "bandwidth_y", e.bandwidth_y);
  read_bandwidth(obj, "bandwidth_x", e.bandwidth_x);
  read(obj, "derivative_bandwidth_factor", e.derivative_bandwidth_factor);
  if (obj.contains("weighting")) {
    auto w = get<std::string>(obj, "weighting", "");
    if (w == "identity") e.weighting = GmmWeighting::identity;
    else if (w == "twostep") e.weighting = GmmWeighting::twostep;
    else throw ValidationError("config key 'weighting' must be identity or twostep");
  }
  read(obj, "gmm_tol", e.gmm_tol);
  read(obj, "gmm_max_iter", e.gmm_max_iter);
  read(obj, "density_floor", e.density_floor);
  read(obj, "recenter_ci", e.recenter_ci);
  read(obj, "ci_level", e.ci_level);
  if (obj.contains("solver")) {
    const json& s = obj["solver"];
    reject_unknown(s, {"tol", "max_iter", "prob_floor"}, "solver.");
    read(s, "tol", e.solver.tol, "solver.");
    read(s, "max_iter", e.solver.max_iter, "solver.");
    read(s, "prob_floor", e.solver.prob_floor, "solver.");
  }
  read(obj, "discrete_x", c.discrete_x);
  read(obj, "max_levels", c.max_levels);
  read(obj, "overlap_tolerance", c.overlap_tolerance);
  read(obj, "output", c.output);
  read(obj, "plot", c.plot);
  read(obj, "table", c.table);
  read(obj, "replications_csv", c.replications_csv);
  read(obj, "seed", c.seed);
  read(obj, "threads", c.threads);
  read(obj, "reps", c.reps);
  read(obj, "compute_oracle", c.compute_oracle);
  if (obj.contains("oracle")) {
    const json& o = obj["oracle"];
    reject_unknown(o, {"t_step", "n_draws", "seed", "rao_blackwell", "tolerance", "batches"}, "oracle.");
    read(o, "t_step", c.oracle.t_step, "oracle.");
    read(o, "n_draws", c.oracle.n_draws, "oracle.");
    read(o, "seed", c.oracle.seed, "oracle.");
    read(o, "rao_blackwell", c.oracle.rao_blackwell, "oracle.");
    read(o, "tolerance", c.oracle.tolerance, "oracle.");
    read(o, "batches", c.oracle.batches, "oracle.");
  }

  if (c.taus.empty()) throw ValidationError("config key 'tau' needs at least one value");
  for (double t : c.taus)
    if (!(t > 0.0 && t < 1.0))
      throw ValidationError("config key 'tau' must lie in (0,1), got " + std::to_string(t));
  if (c.shifts.empty()) throw ValidationError("config key 'shift' needs at least one value");
  bool files = c.study_path || c.aux_path;
  if (files && c.dgp) throw ValidationError("config keys 'study'/'aux' and 'dgp' are mutually exclusive");
  if (files && !(c.study_path && c.aux_path))
    throw ValidationError("config keys 'study' and 'aux' must be given together");
  if (command == Command::simulate) {
    if (files) throw ValidationError("simulate takes 'dgp', not 'study'/'aux'");
    if (!c.dgp) c.dgp = DgpSpec{};
  } else if (!files && !c.dgp) {
    throw ValidationError("no data source: set 'study' and 'aux', or 'dgp'");
  }
  if (!(e.ci_level > 0.0 && e.ci_level < 1.0)) throw ValidationError("config key 'ci_level' must lie in (0,1)");
  if (e.bandwidth_y && !(*e.bandwidth_y > 0.0)) throw ValidationError("config key 'bandwidth_y' must be positive");
  if (e.bandwidth_x && !(*e.bandwidth_x > 0.0)) throw ValidationError("config key 'bandwidth_x' must be positive");
  if (!(e.derivative_bandwidth_factor > 0.0))
    throw ValidationError("config key 'derivative_bandwidth_factor' must be positive");
  if (!(e.density_floor >= 0.0 && e.density_floor < 1.0))
    throw ValidationError("config key 'density_floor' must lie in [0,1)");
  if (c.threads < 1) throw ValidationError("config key 'threads' must be at least 1");
  if (c.reps < 1) throw ValidationError("config key 'reps' must be at least 1");
  if (c.max_levels < 2) throw ValidationError("config key 'max_levels' must be at least 2");
  if (c.command == Command::bounds) c.discrete_x = true;
  if (c.discrete_x) {
    bool only_mds = std::all_of(c.shifts.begin(), c.shifts.end(),
                                [](ShiftKind k) { return k == ShiftKind::mds; });
    if (obj.contains("shift") && !only_mds)
      throw ValidationError("config key 'shift': only mds is defined for a discrete covariate");
    c.shifts = {ShiftKind::mds};
  }
  return c;
}

ordered_json dgp_to_json(const DgpSpec& s) {
  ordered_json j;
  j["gamma_s1"] = s.gamma_s1;
  j["gamma_s2"] = s.gamma_s2;
  j["delta_1"] = s.delta_1;
  j["delta_2"] = s.delta_2;
  j["psi_y"] = s.psi_y;
  j["psi_x"] = s.psi_x;
  j["gamma_prop"] = s.gamma_prop;
  j["propensity_link"] = LinkFunction(s.propensity_link).name();
  j["z1_law"] = s.z1_law == DgpSpec::Z1Law::normal ? "normal" : "bernoulli";
  j["z1_p"] = s.z1_p;
  j["x_thresholds"] = s.x_thresholds;
  j["aux_x_shift"] = s.aux_x_shift;
  j["n"] = s.n;
  j["seed"] = s.seed;
  return j;
}

ordered_json config_to_json(const RunConfig& c) {
  const EstimatorConfig& e = c.estimator;
  ordered_json j;
  j["command"] = command_name(c.command);
  if (c.study_path) j["study"] = *c.study_path;
  if (c.aux_path) j["aux"] = *c.aux_path;
  if (c.dgp) j["dgp"] = dgp_to_json(*c.dgp);
  j["tau"] = c.taus;
  std::vector<std::string> shifts;
  for (ShiftKind k : c.shifts) shifts.push_back(shift_name(k));
  j["shift"] = shifts;
  j["counterfactual"] = c.counterfactual;
  j["propensity_link"] = LinkFunction(e.propensity_link).name();
  j["lambda_link"] = LinkFunction(e.lambda_link).name();
  j["k_terms"] = e.k_terms;
  j["t_terms"] = e.t_terms;
  j["e_terms"] = e.e_terms;
  j["lambda_index"] = e.lambda_index;
  j["kernel_y"] = Kernel(e.kernel_y).name();
  j["kernel_x"] = Kernel(e.kernel_x).name();
  j["bandwidth_y"] = e.bandwidth_y ? ordered_json(*e.bandwidth_y) : ordered_json("rule-of-thumb");
  j["bandwidth_x"] = e.bandwidth_x ? ordered_json(*e.bandwidth_x) : ordered_json("rule-of-thumb");
  j["derivative_bandwidth_factor"] = e.derivative_bandwidth_factor;
  j["weighting"] = e.weighting == GmmWeighting::identity ? "identity" : "twostep";
  j["gmm_tol"] = e.gmm_tol;
  j["gmm_max_iter"] = e.gmm_max_iter;
  j["density_floor"] = e.density_floor;
  j["recenter_ci"] = e.recenter_ci;
  j["ci_level"] = e.ci_level;
  j["solver"] = {{"tol", e.solver.tol}, {"max_iter", e.solver.max_iter}, {"prob_floor", e.solver.prob_floor}};
  j["discrete_x"] = c.discrete_x;
  j["max_levels"] = c.max_levels;
  j["overlap_tolerance"] = c.overlap_tolerance;
  j["seed"] = c.seed;
  if (c.command == Command::simulate) {
    j["reps"] = c.reps;
    j["compute_oracle"] = c.compute_oracle;
    j["oracle"] = {{"t_step", c.oracle.t_step},
                   {"n_draws", c.oracle.n_draws},
                   {"seed", c.oracle.seed},
                   {"rao_blackwell", c.oracle.rao_blackwell},
                   {"tolerance", c.oracle.tolerance},
                   {"batches", c.oracle.batches}};
  }
  return j;
}

}  // namespace uqe
