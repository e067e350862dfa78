#pragma once

#include <stdexcept>
#include <string>

namespace dejavu {

struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidSpecError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised when a loss term is non-finite; the trainer turns it into a
// diagnostic dump and aborts the run.
struct NonFiniteLossError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct UndefinedLossError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace dejavu
