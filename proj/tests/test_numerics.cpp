// Copyright (C) 2026 The lsgg Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "lsgg/error.hpp"
#include "lsgg/numerics.hpp"
#include "support/oracles.hpp"

using namespace lsgg;
using lsgg::testing::oracle_topk;
using lsgg::testing::random_vec;

namespace {

Vec v(std::initializer_list<double> xs) {
  Vec out(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) out(i++) = x;
  return out;
}

// Straight transcription of the published xoshiro256** and SplitMix64.
struct ReferenceXoshiro {
  std::uint64_t s[4];
  explicit ReferenceXoshiro(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& w : s) {
      std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      w = z ^ (z >> 31);
    }
  }
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::uint64_t next() {
    const std::uint64_t result = rotl(s[1] * 5, 7) * 9;
    const std::uint64_t t = s[1] << 17;
    s[2] ^= s[0];
    s[3] ^= s[1];
    s[1] ^= s[2];
    s[0] ^= s[3];
    s[2] ^= t;
    s[3] = rotl(s[3], 45);
    return result;
  }
};

}  // namespace

TEST_CASE("splitmix64 known answer") {
  CHECK(splitmix64(0) == 0xe220a8397b1dcdafULL);
}

TEST_CASE("generator follows the reference xoshiro256** stream") {
  for (std::uint64_t seed : {0ULL, 1ULL, 42ULL, 0xdeadbeefULL}) {
    SeededRng rng(seed);
    ReferenceXoshiro ref(seed);
    for (int i = 0; i < 1000; ++i) REQUIRE(rng.next_u64() == ref.next());
  }
}

TEST_CASE("generator determinism and sub-streams") {
  SeededRng a(9), b(9);
  for (int i = 0; i < 100; ++i) CHECK(a.gaussian() == b.gaussian());
  const SeededRng root(5);
  SeededRng d1 = root.derive(1), d1b = root.derive(1), d2 = root.derive(2);
  const auto x = d1.next_u64();
  CHECK(x == d1b.next_u64());
  CHECK(x != d2.next_u64());
  SeededRng again(5);
  SeededRng untouched(5);
  (void)again.derive(3);
  CHECK(again.next_u64() == untouched.next_u64());
}

TEST_CASE("uniform draws stay in range") {
  SeededRng rng(3);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    REQUIRE(rng.uniform_index(7) < 7);
  }
  CHECK_THROWS_AS(rng.uniform_index(0), Error);
}

TEST_CASE("uniform_index is close to uniform") {
  SeededRng rng(11);
  std::vector<int> hist(5, 0);
  const int n = 50000;
  for (int i = 0; i < n; ++i) ++hist[rng.uniform_index(5)];
  const double p = 0.2, sd = std::sqrt(n * p * (1 - p));
  for (int h : hist) CHECK(std::abs(h - n * p) < 4 * sd);
}

TEST_CASE("cosine examples") {
  CHECK(cosine(v({1, 0}), v({0, 1})) == doctest::Approx(0.0));
  CHECK(cosine(v({1, 2, 3}), v({1, 2, 3})) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine(v({1, 0}), v({1, 1})) == doctest::Approx(0.70710678).epsilon(1e-8));
}

TEST_CASE("cosine rejects mismatched and degenerate input") {
  CHECK_THROWS_AS(cosine(v({1, 0}), v({1, 0, 0})), Error);
  CHECK_THROWS_AS(cosine(v({0, 0}), v({1, 0})), Error);
  CHECK_THROWS_AS(cosine(v({1, NAN}), v({1, 0})), Error);
}

TEST_CASE("cosine symmetry and scale invariance") {
  SeededRng rng(21);
  for (int t = 0; t < 200; ++t) {
    const Vec a = random_vec(7, rng), b = random_vec(7, rng);
    REQUIRE(cosine(a, b) == cosine(b, a));
    const double c = 0.01 + 100.0 * rng.uniform();
    REQUIRE(std::abs(cosine(c * a, b) - cosine(a, b)) <= 1e-12);
    REQUIRE(std::abs(cosine(a, b) - testing::naive_cosine(a, b)) <= 1e-12);
  }
}

TEST_CASE("top_k_indices examples") {
  const std::vector<Vec> keys{v({1, 0}), v({0, 1}), v({-1, 0})};
  CHECK(top_k_indices(v({1, 0}), keys, 2) == std::vector<std::size_t>{0, 1});
  const std::vector<Vec> same{v({1, 1}), v({1, 1}), v({1, 1}), v({1, 1})};
  CHECK(top_k_indices(v({0.3, 1}), same, 3) == std::vector<std::size_t>{0, 1, 2});
  CHECK_THROWS_AS(top_k_indices(v({1, 0}), keys, 4), Error);
  CHECK_THROWS_AS(top_k_indices(v({1, 0}), std::vector<Vec>{}, 1), Error);
  CHECK_THROWS_AS(top_k_indices(v({1, 0}), keys, 0), Error);
}

TEST_CASE("top_k_indices matches a full sort") {
  SeededRng rng(4);
  for (int t = 0; t < 200; ++t) {
    std::vector<Vec> keys;
    for (int i = 0; i < 100; ++i) keys.push_back(random_unit_vector(6, rng));
    // Duplicates create exact ties.
    for (int i = 0; i < 10; ++i) keys[rng.uniform_index(100)] = keys[rng.uniform_index(100)];
    const Vec q = random_vec(6, rng);
    REQUIRE(top_k_indices(q, keys, 5) == oracle_topk(q, keys, 5));
    // K = |keys| is the full permutation.
    const auto all = top_k_indices(q, keys, keys.size());
    REQUIRE(all == oracle_topk(q, keys, keys.size()));
  }
}

TEST_CASE("softmax examples") {
  const Vec p = softmax(v({0, 0}));
  CHECK(p(0) == doctest::Approx(0.5));
  CHECK(p(1) == doctest::Approx(0.5));
  const Vec big = softmax(v({1000, 1000}));
  CHECK(big(0) == doctest::Approx(0.5));
  CHECK(std::isfinite(big(1)));
  CHECK_THROWS_AS(softmax(Vec()), Error);
}

TEST_CASE("softmax against extended precision") {
  const Vec p = softmax(v({1, 2, 3}));
  long double z = std::exp(1.0L) + std::exp(2.0L) + std::exp(3.0L);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(p(i) - static_cast<double>(std::exp(static_cast<long double>(i + 1)) / z)) <= 1e-12);
}

TEST_CASE("softmax sums to one") {
  SeededRng rng(8);
  for (int n : {1, 2, 17, 1000, 1000000}) {
    Vec x(n);
    for (int i = 0; i < n; ++i) x(i) = 50.0 * rng.gaussian();
    const Vec p = softmax(x);
    CHECK(std::abs(p.sum() - 1.0) <= 1e-9);
    CHECK((p.array() >= 0.0).all());
  }
}

TEST_CASE("argmax breaks ties low") {
  const std::vector<double> x{1, 3, 3, 2};
  CHECK(argmax(x) == 1);
}

TEST_CASE("random_gaussian_matrix") {
  SeededRng a(1), b(1);
  CHECK(random_gaussian_matrix(3, 4, 0.5, a) == random_gaussian_matrix(3, 4, 0.5, b));
  SeededRng c(2);
  CHECK(random_gaussian_matrix(2, 2, 0.0, c).isZero(0.0));
  SeededRng d(3);
  const Matrix m = random_gaussian_matrix(100, 100, 1.0, d);
  const double mean = m.mean();
  const double sd = std::sqrt((m.array() - mean).square().sum() / (m.size() - 1));
  CHECK(sd >= 0.97);
  CHECK(sd <= 1.03);
  CHECK(std::abs(mean) < 0.04);
}

TEST_CASE("random_unit_vector has unit norm") {
  SeededRng rng(6);
  for (int i = 0; i < 50; ++i) CHECK(random_unit_vector(9, rng).norm() == doctest::Approx(1.0).epsilon(1e-14));
}
