#pragma once

#include <stdexcept>
#include <string>

namespace omnipose {

// Operand shapes disagree or describe an impossible geometry.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A configuration value violates its documented invariant.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A file parsed but its contents break the expected schema. The message
// always carries the JSON path of the offending field.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Unreadable or malformed files (missing paths, truncated payloads, ...).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace omnipose
