#include <doctest.h>

#include <cmath>
#include <set>

#include "voltrack/common.hpp"

using namespace voltrack;

TEST_SUITE_BEGIN("common");

TEST_CASE("rng streams are deterministic and seed-sensitive") {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) {
    const uint64_t x = a.next_u64();
    CHECK(x == b.next_u64());
  }
  bool any_diff = false;
  Rng a2(42);
  for (int i = 0; i < 100; ++i) any_diff |= (a2.next_u64() != c.next_u64());
  CHECK(any_diff);
}

TEST_CASE("uniform stays in range and covers it") {
  Rng rng(7);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  CHECK(lo < 0.01);
  CHECK(hi > 0.99);
}

TEST_CASE("uniform_int covers inclusive endpoints") {
  Rng rng(9);
  std::set<int> seen;
  for (int i = 0; i < 1000; ++i) seen.insert(rng.uniform_int(-2, 3));
  CHECK(seen.count(-2) == 1);
  CHECK(seen.count(3) == 1);
  CHECK(seen.size() == 6);
  CHECK_THROWS_AS((void)rng.uniform_int(4, 3), ConfigInvalid);
}

TEST_CASE("normal moments match a standard gaussian") {
  Rng rng(1234);
  const int n = 200000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sumsq += x * x;
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("derive_seed separates streams by tag and root") {
  const uint64_t a = derive_seed(5, "alpha");
  CHECK(a == derive_seed(5, "alpha"));
  CHECK(a != derive_seed(5, "beta"));
  CHECK(a != derive_seed(6, "alpha"));
}

TEST_CASE("error types are catchable as the base error") {
  CHECK_THROWS_AS(throw IllConditioned("x"), Error);
  CHECK_THROWS_AS(throw ConfigInvalid("x"), Error);
}

TEST_SUITE_END();
