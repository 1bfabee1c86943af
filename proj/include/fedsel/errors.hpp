#pragma once

#include <stdexcept>
#include <string>

namespace fedsel {

// Error taxonomy used across the library:
//   ConfigError     invalid user-facing configuration or input data
//   InternalError   broken internal contract (a bug, not a user mistake)
//   NumericError    a solver failed to converge or produced garbage
//   DivergenceError training blew up (non-finite loss or parameters)

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InternalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require_config(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

inline void require_internal(bool ok, const std::string& msg) {
  if (!ok) throw InternalError(msg);
}

}  // namespace fedsel
