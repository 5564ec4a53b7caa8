#pragma once

#include <stdexcept>
#include <string>

namespace uqe {

// Bad input: malformed data, inconsistent configuration, violated preconditions.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Pipeline steps, numbered as in the estimation algorithm.
enum class Step {
  none = 0,
  quantile = 1,
  propensity = 2,
  tilting = 3,
  gmm = 4,
  nuisance = 5,
  uqe = 6,
};

const char* step_name(Step step);

// A numerical failure inside a pipeline step (non-convergence, degenerate fit).
class NumericalError : public std::runtime_error {
 public:
  NumericalError(Step step, const std::string& message)
      : std::runtime_error(message), step_(step) {}
  Step step() const { return step_; }

 private:
  Step step_;
};

}  // namespace uqe
