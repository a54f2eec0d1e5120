#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "qkdsim/rng.hpp"

using qkdsim::SplitMix64;
using qkdsim::derive_seed;
using qkdsim::test::binom3;

TEST_CASE("same seed reproduces the same stream bit-exactly") {
  SplitMix64 a(12345), b(12345);
  for (int i = 0; i < 1000; ++i) {
    CHECK(a.next() == b.next());
  }
  SplitMix64 c(12345), d(54321);
  bool all_equal = true;
  for (int i = 0; i < 16; ++i) all_equal &= c.next() == d.next();
  CHECK_FALSE(all_equal);
}

TEST_CASE("uniform stays in [0,1) with the right mean") {
  SplitMix64 rng(7);
  double sum = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  CHECK(std::abs(sum / n - 0.5) < 3.0 * std::sqrt(1.0 / 12.0 / n));
}

TEST_CASE("poisson matches its first moments") {
  SplitMix64 rng(11);
  const int n = 1000000;
  const double mu = 0.5;
  long sum = 0;
  long twos = 0;
  for (int i = 0; i < n; ++i) {
    const long k = rng.poisson(mu);
    sum += k;
    if (k == 2) ++twos;
  }
  CHECK(std::abs(static_cast<double>(sum) / n - mu) <
        3.0 * std::sqrt(mu / n));
  const double p2 = mu * mu * std::exp(-mu) / 2.0;
  CHECK(std::abs(static_cast<double>(twos) / n - p2) < binom3(p2, n));
  CHECK(SplitMix64(3).poisson(0.0) == 0);
}

TEST_CASE("gaussian matches mean and width") {
  SplitMix64 rng(23);
  const int n = 200000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.gaussian(2.0, 3.0);
    sum += x;
    sum2 += x * x;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  CHECK(std::abs(mean - 2.0) < 3.0 * 3.0 / std::sqrt(double(n)));
  CHECK(std::abs(std::sqrt(var) - 3.0) < 0.05);
}

TEST_CASE("derived seeds are order-sensitive and reproducible") {
  CHECK(derive_seed({1, 2, 3}) == derive_seed({1, 2, 3}));
  CHECK(derive_seed({1, 2, 3}) != derive_seed({3, 2, 1}));
  CHECK(derive_seed({1}) != derive_seed({1, 0}));
}
