#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace nmrl {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed inputs: bad indices, non-stochastic rows, invalid configs.
struct ValidationError : Error {
  using Error::Error;
};

// A Bayes update conditioned on an observation that has probability zero
// under the current predictor. Carries the offending evidence.
struct DegenerateEvidenceError : Error {
  DegenerateEvidenceError(std::string msg, std::vector<double> mu, int obs)
      : Error(std::move(msg)), predictor(std::move(mu)), observation(obs) {}
  std::vector<double> predictor;
  int observation;
};

// Chain has no unique invariant distribution (reducible or periodic).
struct ReducibilityError : Error {
  using Error::Error;
};

// A Gram or gain matrix is numerically singular. Carries the minimum
// eigenvalue that triggered the failure.
struct RankDeficiencyError : Error {
  RankDeficiencyError(std::string msg, double sigma_min_)
      : Error(std::move(msg)), sigma_min(sigma_min_) {}
  double sigma_min;
};

// A state-action pair required by the construction has zero stationary mass.
struct CoverageError : Error {
  using Error::Error;
};

// An exact enumeration would exceed the configured budget.
struct BudgetError : Error {
  BudgetError(std::string msg, std::uint64_t required_)
      : Error(std::move(msg)), required(required_) {}
  std::uint64_t required;
};

// A learner iterate left the admissible region (norm above the sentinel).
struct DivergenceError : Error {
  DivergenceError(std::string msg, long step_, double norm_)
      : Error(std::move(msg)), step(step_), norm(norm_) {}
  long step;
  double norm;
};

}  // namespace nmrl
