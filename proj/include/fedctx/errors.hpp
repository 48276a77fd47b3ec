#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <string>
#include <utility>

namespace fedctx {

// Arguments violating a function's preconditions.
struct InvalidInput : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Malformed input files (IDX pairs, CSV tables, experiment specs).
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Local optimization produced non-finite parameters. Carries the last
// finite iterate so callers can inspect how far the run got.
struct DivergedError : std::runtime_error {
  Eigen::VectorXd last_iterate;

  DivergedError(const std::string& msg, Eigen::VectorXd last)
      : std::runtime_error(msg), last_iterate(std::move(last)) {}
};

// Aggregation could not produce usable weights.
struct AggregationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A federated round failed; wraps the cause with the round index.
struct RunError : std::runtime_error {
  int round;

  RunError(int round_index, const std::string& cause)
      : std::runtime_error("round " + std::to_string(round_index) + ": " + cause),
        round(round_index) {}
};

}  // namespace fedctx
