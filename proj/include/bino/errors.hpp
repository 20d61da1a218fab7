#pragma once

#include <stdexcept>
#include <string>

namespace bino {

// Exit codes used by the command-line front end.
enum class ExitCode : int { ok = 0, config = 2, data = 3, numerical = 4 };

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// IO failures, malformed files, missing checkpoints.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// NaN/Inf produced anywhere along the forward or optimizer path.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

}  // namespace bino
