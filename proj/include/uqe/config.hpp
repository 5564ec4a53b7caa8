#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include "uqe/simulation.hpp"
#include "uqe/uqe.hpp"

namespace uqe {

enum class Command { estimate, simulate, bounds };

Command parse_command(const std::string& name);
std::string command_name(Command c);

struct RunConfig {
  Command command = Command::estimate;
  std::optional<std::string> study_path;
  std::optional<std::string> aux_path;
  std::optional<DgpSpec> dgp;
  std::vector<double> taus{0.5};
  std::vector<ShiftKind> shifts{ShiftKind::mqs};
  std::string counterfactual;  // empty: command default
  EstimatorConfig estimator;
  bool discrete_x = false;
  Index max_levels = 50;
  double overlap_tolerance = 0.0;
  std::string output;  // empty: stdout
  std::string plot;
  std::string table;
  std::string replications_csv;
  std::uint64_t seed = 1;
  int threads = 1;
  Index reps = 100;
  bool compute_oracle = true;
  OracleOptions oracle;
};

// Resolves a JSON object (config file with flag values merged over it) into a
// RunConfig. Unknown keys, type mismatches and inconsistent sources throw
// ValidationError naming the key.
RunConfig parse_config(Command command, const nlohmann::json& doc);

// Overwrites keys of base with those of overrides (objects merged recursively).
nlohmann::json merge_config(nlohmann::json base, const nlohmann::json& overrides);

nlohmann::ordered_json config_to_json(const RunConfig& cfg);
nlohmann::ordered_json dgp_to_json(const DgpSpec& spec);

}  // namespace uqe
