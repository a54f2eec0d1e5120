#pragma once

#include <stdexcept>
#include <string>

namespace qkdsim {

/// Bad user input: invalid configuration fields, malformed data files.
/// The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Structurally valid input that yields no usable result (empty trace,
/// fully masked grid). The CLI maps this to exit code 3.
class EmptyResultError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Query outside a model's declared validity range; models refuse to
/// extrapolate silently.
class RangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

}  // namespace qkdsim
