#pragma once

#include <exception>
#include <string>
#include <vector>

#include "uqe/config.hpp"
#include "uqe/discrete_bounds.hpp"

namespace uqe {

struct ResultDocument {
  nlohmann::ordered_json doc;  // config echo, estimates, diagnostics
  std::string plot_csv;
  std::string table;
  std::string replications_csv;  // simulate only
};

MergedSample load_data(const RunConfig& cfg);

// Counterfactual specs:
//   location:d          auxiliary covariate sample shifted by d, interpolated
//   normal:mu,sd        uniform:a,b
//   file:path           CSV whose first column is a sample from G, interpolated
//   quantiles:path      CSV with columns u,q (quantile table)
//   status-quo          the fitted covariate distribution itself
//   levels:c1,...,cl    discrete G with cdf c_j at the j-th support point
//   mass-shift:t        discrete G(x^j) = max(F_hat(x^j) - t, 0) below the top level
CounterfactualDistribution build_counterfactual(const std::string& spec, const MergedSample& merged,
                                                const ThetaEstimate& theta);
CounterfactualDistribution build_counterfactual(const std::string& spec, const DgpTruth& truth);

ResultDocument run_estimate(const RunConfig& cfg);
ResultDocument run_bounds(const RunConfig& cfg);
ResultDocument run_simulate(const RunConfig& cfg);
ResultDocument run(const RunConfig& cfg);

std::string format_table(const std::vector<UqeResult>& results, const std::vector<double>& taus,
                         const std::vector<ShiftKind>& shifts);

nlohmann::ordered_json result_to_json(const UqeResult& r, double ci_level);

// Exit code contract: 0 success, 2 validation error, 3 numerical failure.
int exit_code(const std::exception& e);
nlohmann::ordered_json error_payload(const std::exception& e);

}  // namespace uqe
