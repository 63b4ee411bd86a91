// Copyright (C) 2026 The lsgg Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <set>

#include "lsgg/error.hpp"
#include "lsgg/prompt_pool.hpp"
#include "lsgg/text_io.hpp"
#include "support/oracles.hpp"
#include "support/tempdir.hpp"

using namespace lsgg;
using testing::random_instance;
using testing::random_vec;

namespace {

const FeatureDims kDims{5, 4, 3, 4, 100};

PromptPool small_pool(std::size_t n_t, std::size_t n_e, std::uint64_t seed) {
  SeededRng rng(seed);
  return PromptPool::init(PoolShape{n_t, 3, 4, static_cast<std::size_t>(kDims.d_c), n_e}, rng);
}

}  // namespace

TEST_CASE("init_pool") {
  SeededRng a(1), b(1);
  const auto p = PromptPool::init(PoolShape{100, 8, 16, 12, 20}, a);
  CHECK(p.capacity() == 2000);
  CHECK(p.size() == 100);
  CHECK(p.stored() == 0);
  for (const auto& e : p.entries()) {
    CHECK(e.key.norm() == doctest::Approx(1.0));
    CHECK(e.tokens.rows() == 8);
    CHECK(e.tokens.cols() == 16);
  }
  CHECK(p == PromptPool::init(PoolShape{100, 8, 16, 12, 20}, b));
  const auto one = small_pool(1, 5, 3);
  CHECK(one.size() == 1);
  CHECK(one.entry(0).store.empty());
}

TEST_CASE("retrieve_topk_prompts examples") {
  auto pool = small_pool(4, 2, 1);
  for (std::size_t i = 0; i < 4; ++i) {
    pool.entry(i).key = Vec::Zero(kDims.d_c);
    pool.entry(i).key(static_cast<Eigen::Index>(i)) = 1.0;
  }
  const auto r = retrieve_topk_prompts(pool, pool.entry(2).key, 1);
  REQUIRE(r.size() == 1);
  CHECK(r[0].entry == 2);
  CHECK(r[0].similarity == doctest::Approx(1.0));

  for (std::size_t i = 0; i < 4; ++i) pool.entry(i).key = Vec::Ones(kDims.d_c);
  const auto ties = retrieve_topk_prompts(pool, Vec::LinSpaced(kDims.d_c, 1, 2), 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(ties[i].entry == i);
    CHECK(ties[i].similarity == ties[0].similarity);
  }
  CHECK_THROWS_AS(retrieve_topk_prompts(pool, Vec::Ones(kDims.d_c), 0), Error);
  CHECK_THROWS_AS(retrieve_topk_prompts(pool, Vec::Ones(kDims.d_c), 5), Error);
}

TEST_CASE("retrieval matches full-sort oracles and never mutates the pool") {
  SeededRng rng(77);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n_t = 1 + rng.uniform_index(30);
    auto pool = small_pool(n_t, 6, rng.next_u64());
    // Tie cases: duplicated keys and duplicated exemplar features.
    if (n_t > 2 && rng.uniform() < 0.5) pool.entry(rng.uniform_index(n_t)).key = pool.entry(0).key;
    for (int i = 0; i < 15; ++i) admit_exemplar(pool, random_instance(kDims, 0, rng), rng);
    auto& e = pool.entry(rng.uniform_index(n_t));
    if (e.store.size() > 2) e.store[1].f_r = 3.0 * e.store[0].f_r;

    const PromptPool before = pool;
    const Vec q = random_vec(kDims.d_c, rng);
    const std::size_t k = 1 + rng.uniform_index(n_t);
    std::vector<Vec> keys;
    for (const auto& en : pool.entries()) keys.push_back(en.key);
    const auto got = retrieve_topk_prompts(pool, q, k);
    const auto want = testing::oracle_topk(q, keys, k);
    REQUIRE(got.size() == k);
    for (std::size_t i = 0; i < k; ++i) {
      REQUIRE(got[i].entry == want[i]);
      REQUIRE(got[i].similarity == cosine(q, keys[want[i]]));
    }
    // K = 1 is the head of K = n_t.
    REQUIRE(retrieve_topk_prompts(pool, q, 1)[0].entry == retrieve_topk_prompts(pool, q, n_t)[0].entry);

    const Vec fr = e.store.empty() || rng.uniform() < 0.5 ? random_vec(kDims.d_r, rng) : e.store[0].f_r;
    REQUIRE(retrieve_exemplar(e, fr) == testing::oracle_best_exemplar(e, fr));
    REQUIRE(pool == before);
  }
}

TEST_CASE("retrieve_exemplar examples") {
  auto pool = small_pool(1, 50, 2);
  SeededRng rng(5);
  CHECK_FALSE(retrieve_exemplar(pool.entry(0), random_vec(kDims.d_r, rng)).has_value());
  for (int i = 0; i < 50; ++i) admit_exemplar(pool, random_instance(kDims, i, rng), rng);
  const auto& e = pool.entry(0);
  REQUIRE(e.store.size() == 50);
  const auto hit = retrieve_exemplar(e, e.store[17].f_r);
  REQUIRE(hit.has_value());
  CHECK(*hit == 17);
  CHECK(cosine(e.store[*hit].f_r, e.store[17].f_r) == doctest::Approx(1.0));
  // Excluding the best slot falls back to the next best.
  const auto other = retrieve_exemplar(e, e.store[17].f_r, std::size_t{17});
  REQUIRE(other.has_value());
  CHECK(*other != 17);
}

TEST_CASE("admission routes to the nearest key and respects capacity") {
  auto pool = small_pool(5, 2, 4);
  SeededRng rng(6);
  auto inst = random_instance(kDims, 1, rng);
  inst.f_c = pool.entry(3).key;
  const auto where = admit_exemplar(pool, inst, rng);
  REQUIRE(where.has_value());
  CHECK(*where == 3);
  CHECK(pool.entry(3).store.size() == 1);
  for (int i = 0; i < 500; ++i) {
    admit_exemplar(pool, random_instance(kDims, 2, rng), rng);
    for (const auto& e : pool.entries()) REQUIRE(e.store.size() <= 2);
  }
  CHECK(pool.stored() <= pool.capacity());
  pool.check_invariants();
}

TEST_CASE("single-entry admissions count every offer") {
  for (std::size_t n : {1u, 7u, 20u, 63u}) {
    auto pool = small_pool(1, 20, n);
    SeededRng rng(n);
    for (std::size_t i = 0; i < n; ++i) admit_exemplar(pool, random_instance(kDims, 0, rng), rng);
    CHECK(pool.entry(0).seen_count == n);
    CHECK(pool.entry(0).store.size() == std::min<std::size_t>(n, 20));
  }
}

TEST_CASE("reservoir: second of two offers kept half the time") {
  const int trials = 10000;
  int kept = 0;
  SeededRng rng(2024);
  for (int t = 0; t < trials; ++t) {
    auto pool = small_pool(1, 1, 1);
    admit_exemplar(pool, random_instance(kDims, 0, rng), rng);
    admit_exemplar(pool, random_instance(kDims, 1, rng), rng);
    kept += pool.entry(0).store[0].predicate == 1 ? 1 : 0;
  }
  const double rate = static_cast<double>(kept) / trials;
  const double sigma = std::sqrt(0.25 / trials);
  CHECK(std::abs(rate - 0.5) <= 3 * sigma);
}

TEST_CASE("reservoir: each of N offers retained with probability n_e / N") {
  const int trials = 3000, n = 100, n_e = 10;
  std::vector<int> retained(n, 0);
  SeededRng rng(99);
  for (int t = 0; t < trials; ++t) {
    auto pool = small_pool(1, n_e, 1);
    for (int i = 0; i < n; ++i) admit_exemplar(pool, random_instance(kDims, i, rng), rng);
    for (const auto& e : pool.entry(0).store) ++retained[static_cast<std::size_t>(e.predicate)];
  }
  const double p = static_cast<double>(n_e) / n;
  const double sigma = std::sqrt(p * (1 - p) / trials);
  for (int i : {0, 1, n / 2, n - 2, n - 1}) CHECK(std::abs(retained[i] / double(trials) - p) <= 3 * sigma);
}

TEST_CASE("pool files round-trip exactly") {
  testing::TempDir tmp;
  const auto fresh = small_pool(3, 4, 8);
  serialize_pool(fresh, tmp / "fresh.pool");
  CHECK(deserialize_pool(tmp / "fresh.pool") == fresh);

  SeededRng rng(3);
  PromptPool full = PromptPool::init(PoolShape{100, 8, 4, static_cast<std::size_t>(kDims.d_c), 20}, rng);
  while (full.stored() < full.capacity()) admit_exemplar(full, random_instance(kDims, 1, rng), rng);
  CHECK(full.stored() == 2000);
  serialize_pool(full, tmp / "full.pool");
  const auto back = deserialize_pool(tmp / "full.pool");
  CHECK(back == full);
  CHECK(back.entry(5).seen_count == full.entry(5).seen_count);
}

TEST_CASE("pool files are validated") {
  testing::TempDir tmp;
  const auto pool = small_pool(2, 2, 1);
  serialize_pool(pool, tmp / "p.pool");
  std::string text = text::read_file(tmp / "p.pool");

  text::write_file(tmp / "magic.pool", "LSGG-POOL 9" + text.substr(text.find('\n')));
  try {
    deserialize_pool(tmp / "magic.pool");
    FAIL("expected a version error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kVersion);
  }
  text::write_file(tmp / "other.pool", "NOT-A-POOL 1\n");
  try {
    deserialize_pool(tmp / "other.pool");
    FAIL("expected a version error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kVersion);
  }
  text::write_file(tmp / "cut.pool", text.substr(0, text.size() / 2));
  CHECK_THROWS_AS(deserialize_pool(tmp / "cut.pool"), Error);
  CHECK_THROWS_AS(deserialize_pool(tmp / "missing.pool"), Error);
}

TEST_CASE("sample_stored is uniform over stored exemplars") {
  auto pool = small_pool(3, 5, 1);
  SeededRng rng(1);
  CHECK_FALSE(pool.sample_stored(rng).has_value());
  pool.entry(0).store.push_back(to_exemplar(random_instance(kDims, 0, rng)));
  for (int i = 0; i < 3; ++i) pool.entry(2).store.push_back(to_exemplar(random_instance(kDims, 1, rng)));
  std::map<std::pair<std::size_t, std::size_t>, int> hist;
  for (int i = 0; i < 8000; ++i) ++hist[*pool.sample_stored(rng)];
  CHECK(hist.size() == 4);
  for (const auto& [slot, c] : hist) CHECK(std::abs(c - 2000) < 4 * std::sqrt(8000 * 0.25 * 0.75));
}

TEST_CASE("class-balanced buffer keeps capacity / M per class") {
  ClassBalancedBuffer buf(20);
  SeededRng rng(4);
  for (int i = 0; i < 100; ++i) buf.add(random_instance(kDims, 0, rng), rng);
  CHECK(buf.size() == 20);
  CHECK(buf.count(0) == 20);
  for (int i = 0; i < 100; ++i) buf.add(random_instance(kDims, 1, rng), rng);
  CHECK(buf.quota() == 10);
  CHECK(buf.count(0) == 10);
  CHECK(buf.count(1) == 10);
  for (Label l = 2; l < 5; ++l) {
    for (int i = 0; i < 30; ++i) buf.add(random_instance(kDims, l, rng), rng);
  }
  CHECK(buf.size() <= 20);
  for (Label l = 0; l < 5; ++l) CHECK(buf.count(l) == 4);
  CHECK(buf.sample(rng) != nullptr);
}
