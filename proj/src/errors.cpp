#include "uqe/errors.hpp"

namespace uqe {

const char* step_name(Step step) {
  switch (step) {
    case Step::quantile: return "1:quantile";
    case Step::propensity: return "2:propensity";
    case Step::tilting: return "3:tilting";
    case Step::gmm: return "4:gmm";
    case Step::nuisance: return "5:nuisance";
    case Step::uqe: return "6:uqe";
    default: return "0:none";
  }
}

}  // namespace uqe
