#pragma once

// Deterministic random-number utilities. All simulation randomness flows
// through SplitMix64 so that a given seed reproduces a run bit-exactly on
// any platform (std:: distribution implementations differ between stdlibs).

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace qkdsim {

namespace detail {
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}
}  // namespace detail

class SplitMix64 {
 public:
  SplitMix64() = default;
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    state_ += 0x9e3779b97f4a7c15ull;
    return detail::mix64(state_);
  }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  bool bernoulli(double p) { return uniform() < p; }

  int bit() { return static_cast<int>(next() >> 63); }

  double gaussian(double mean, double sigma) {
    // Box-Muller, cosine branch only; two uniforms per sample.
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + sigma * r * std::cos(6.283185307179586 * u2);
  }

  /// Exponential inter-arrival time for a Poisson process of given rate.
  double exponential(double rate) {
    return -std::log(1.0 - uniform()) / rate;
  }

  /// Poisson sample: Knuth's product method for small means, normal
  /// approximation above the direct limit (only reached by extreme
  /// configurations; all shipped scenarios stay in the direct regime).
  long poisson(double mean) {
    if (mean <= 0.0) return 0;
    if (mean < 30.0) {
      const double limit = std::exp(-mean);
      long n = 0;
      double prod = uniform();
      while (prod > limit) {
        ++n;
        prod *= uniform();
      }
      return n;
    }
    const double x = gaussian(mean, std::sqrt(mean));
    return x > 0.0 ? std::lround(x) : 0;
  }

 private:
  std::uint64_t state_ = 0x853c49e6748fea9bull;
};

/// Folds a list of words into one seed. Used to derive independent streams
/// (per slot, per detector, per sweep cell) from a master seed; stable
/// across executions and platforms, independent of evaluation order
/// elsewhere in the program.
inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> words) {
  std::uint64_t h = 0x6a09e667f3bcc909ull;
  for (std::uint64_t w : words) {
    h = detail::mix64(h ^ (w + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2)));
  }
  return h;
}

}  // namespace qkdsim
