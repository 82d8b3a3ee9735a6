#include "advconform/random.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <vector>

using namespace advconform;

TEST_SUITE("random")
{
  TEST_CASE("mix64 matches the reference splitmix64 output for state 0")
  {
    // reference splitmix64 output for seed 0
    CHECK(mix64(0) == 0xe220a8397b1dcdafULL);
  }

  TEST_CASE("equal seeds give equal streams, different seeds differ")
  {
    Rng a(42);
    Rng b(42);
    Rng c(43);
    int same = 0;
    for (int i = 0; i < 1000; ++i) {
      const auto x = a.next();
      CHECK(x == b.next());
      same += x == c.next() ? 1 : 0;
    }
    CHECK(same == 0);
  }

  TEST_CASE("uniform draws lie in [0, 1) with mean near 1/2")
  {
    Rng rng(7);
    double total = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
      const double u = rng.uniform();
      REQUIRE(u >= 0.0);
      REQUIRE(u < 1.0);
      total += u;
    }
    // sd of the mean is sqrt(1/12 / n) ~ 6.5e-4
    CHECK(std::abs(total / n - 0.5) < 4e-3);
  }

  TEST_CASE("normal draws have zero mean and unit variance")
  {
    Rng rng(11);
    const int n = 200000;
    double s1 = 0.0;
    double s2 = 0.0;
    for (int i = 0; i < n; ++i) {
      const double z = rng.normal();
      s1 += z;
      s2 += z * z;
    }
    const double mean = s1 / n;
    const double var = s2 / n - mean * mean;
    CHECK(std::abs(mean) < 0.01);
    CHECK(std::abs(var - 1.0) < 0.02);
  }

  TEST_CASE("bounded integers are in range and pass a chi-square check")
  {
    Rng rng(3);
    const std::uint64_t k = 7;
    std::vector<int> counts(k, 0);
    const int n = 70000;
    for (int i = 0; i < n; ++i) {
      const auto v = rng.below(k);
      REQUIRE(v < k);
      ++counts[v];
    }
    const double expected = static_cast<double>(n) / k;
    double chi2 = 0.0;
    for (int c : counts)
      chi2 += (c - expected) * (c - expected) / expected;
    // 6 degrees of freedom; the 0.999 quantile is 22.46
    CHECK(chi2 < 22.46);
    CHECK(rng.below(1) == 0);
  }

  TEST_CASE("shuffle is a permutation and is reproducible")
  {
    std::vector<int> a(100);
    std::iota(a.begin(), a.end(), 0);
    std::vector<int> b = a;
    Rng r1(5);
    Rng r2(5);
    r1.shuffle(a);
    r2.shuffle(b);
    CHECK(a == b);
    std::vector<int> sorted = a;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 100; ++i)
      CHECK(sorted[static_cast<std::size_t>(i)] == i);
    CHECK_FALSE(std::is_sorted(a.begin(), a.end()));
  }

  TEST_CASE("shuffle reaches every permutation of three items about equally often")
  {
    Rng rng(9);
    std::map<std::vector<int>, int> counts;
    const int n = 60000;
    for (int i = 0; i < n; ++i) {
      std::vector<int> v{ 0, 1, 2 };
      rng.shuffle(v);
      ++counts[v];
    }
    REQUIRE(counts.size() == 6);
    for (const auto& [perm, c] : counts)
      CHECK(std::abs(c - n / 6.0) < 0.05 * n / 6.0);
  }

  TEST_CASE("derived seeds depend on every coordinate and on their order")
  {
    std::set<std::uint64_t> seen;
    for (std::uint64_t a = 0; a < 20; ++a)
      for (std::uint64_t b = 0; b < 20; ++b)
        seen.insert(derive_seed(1, { a, b }));
    CHECK(seen.size() == 400);
    CHECK(derive_seed(1, { 2, 3 }) != derive_seed(1, { 3, 2 }));
    CHECK(derive_seed(1, { 2 }) != derive_seed(2, { 2 }));
    CHECK(derive_seed(1, { 2 }) != derive_seed(1, { 2, 0 }));
    CHECK(derive_seed(8, { 1, 2, 3 }) == derive_seed(8, { 1, 2, 3 }));
  }

  TEST_CASE("seed coordinates identify signed zeros and separate nearby values")
  {
    CHECK(seed_coordinate(0.0) == seed_coordinate(-0.0));
    CHECK(seed_coordinate(8.0 / 255.0) != seed_coordinate(std::nextafter(8.0 / 255.0, 1.0)));
  }
}
