#pragma once

#include <stdexcept>
#include <string>

namespace splice {

/// Error families map onto CLI exit codes: config -> 2, io -> 3, numeric -> 4.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace splice
