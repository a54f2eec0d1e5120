#pragma once

#include <cmath>
#include <string>

#include "qkdsim/rng.hpp"

namespace qkdsim::test {

inline std::string source_dir() { return QKDSIM_SOURCE_DIR; }

inline std::string data_path(const std::string& name) {
  return source_dir() + "/data/" + name;
}

inline std::string config_path(const std::string& name) {
  return source_dir() + "/configs/" + name;
}

/// Three-sigma band half-width for a binomial proportion estimate.
inline double binom3(double p, double n) {
  return 3.0 * std::sqrt(p * (1.0 - p) / n);
}

}  // namespace qkdsim::test
