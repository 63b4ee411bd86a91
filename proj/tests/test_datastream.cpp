// Copyright (C) 2026 The lsgg Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "lsgg/datastream.hpp"
#include "lsgg/error.hpp"
#include "lsgg/text_io.hpp"
#include "support/oracles.hpp"
#include "support/tempdir.hpp"

using namespace lsgg;

namespace {

std::vector<Label> range_labels(int n) {
  std::vector<Label> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), 0);
  return v;
}

void check_partition(const TaskSchedule& s, const std::vector<Label>& vocab) {
  std::multiset<Label> all;
  for (const auto& st : s.stages) {
    REQUIRE(!st.empty());
    all.insert(st.begin(), st.end());
  }
  REQUIRE(all == std::multiset<Label>(vocab.begin(), vocab.end()));
  s.validate(vocab);
}

}  // namespace

TEST_CASE("split_random: 50 predicates into five tasks of ten") {
  const auto vocab = range_labels(50);
  SeededRng rng(1);
  const auto s = split_random(vocab, 5, rng);
  REQUIRE(s.num_stages() == 5);
  for (const auto& st : s.stages) CHECK(st.size() == 10);
  check_partition(s, vocab);
}

TEST_CASE("split_random: singletons, determinism, sizes within one") {
  const auto three = range_labels(3);
  SeededRng r1(4);
  for (const auto& st : split_random(three, 3, r1).stages) CHECK(st.size() == 1);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const int n = 1 + static_cast<int>(seed % 23);
    const std::size_t t = 1 + seed % static_cast<std::uint64_t>(n);
    const auto vocab = range_labels(n);
    SeededRng a(seed), b(seed);
    const auto sa = split_random(vocab, t, a);
    CHECK(sa.stages == split_random(vocab, t, b).stages);
    check_partition(sa, vocab);
    std::size_t lo = 1000, hi = 0;
    for (const auto& st : sa.stages) {
      lo = std::min(lo, st.size());
      hi = std::max(hi, st.size());
    }
    CHECK(hi - lo <= 1);
  }
  SeededRng r2(0);
  CHECK_THROWS_AS(split_random(three, 4, r2), Error);
}

TEST_CASE("split_by_frequency examples") {
  const std::vector<Label> vocab{0, 1, 2, 3};  // a b c d
  const auto s = split_by_frequency(vocab, {{0, 100}, {1, 50}, {2, 10}, {3, 5}}, 2);
  CHECK(s.stages == std::vector<std::vector<Label>>{{0, 1}, {2, 3}});
  const auto eq = split_by_frequency(range_labels(6), {{0, 7}, {1, 7}, {2, 7}, {3, 7}, {4, 7}, {5, 7}}, 3);
  CHECK(eq.stages == std::vector<std::vector<Label>>{{0, 1}, {2, 3}, {4, 5}});
  CHECK_THROWS_AS(split_by_frequency(vocab, {{0, 1}, {1, 1}, {2, 1}}, 2), Error);
}

TEST_CASE("split_by_frequency on zipf counts puts the head first") {
  SynthConfig cfg;
  SeededRng rng(3);
  const auto synth = synth_generate(cfg, rng);
  const auto counts = label_counts(synth.dataset.instances);
  const auto vocab = range_labels(cfg.n_pred);
  const auto s = split_by_frequency(vocab, counts, 5);
  check_partition(s, vocab);
  auto total = [&](const std::vector<Label>& st) {
    std::size_t n = 0;
    for (auto l : st) n += counts.at(l);
    return n;
  };
  for (std::size_t i = 1; i < 5; ++i) CHECK(total(s.stages[i - 1]) >= total(s.stages[i]));
}

TEST_CASE("make_stage_datasets: one instance per label into singleton stages") {
  SeededRng rng(2);
  const FeatureDims dims{4, 4, 3, 5, 4};
  std::vector<RelationInstance> data;
  for (Label l = 0; l < 4; ++l) data.push_back(testing::random_instance(dims, l, rng, l));
  TaskSchedule s{{{0}, {1}, {2}, {3}}};
  const auto stages = make_stage_datasets(data, s, {0.7, 0.1, 0.2});
  REQUIRE(stages.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(stages[i].train.size() + stages[i].val.size() + stages[i].test.size() == 1);
  }
  TaskSchedule partial{{{0}, {1}}};
  CHECK_THROWS_AS(make_stage_datasets(data, partial, {0.7, 0.1, 0.2}), Error);
  CHECK_THROWS_AS(make_stage_datasets(data, s, {0.7, 0.2, 0.2}), Error);
}

TEST_CASE("make_stage_datasets: routing, proportions and order independence") {
  SynthConfig cfg;
  SeededRng rng(5);
  const auto synth = synth_generate(cfg, rng);
  const auto& data = synth.dataset.instances;
  REQUIRE(data.size() == 10000);
  SeededRng srng(6);
  const auto s = split_random(range_labels(cfg.n_pred), 5, srng);
  const auto stages = make_stage_datasets(data, s, {0.7, 0.1, 0.2});

  std::size_t covered = 0;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& st = stages[i];
    const std::set<Label> labels(s.stages[i].begin(), s.stages[i].end());
    for (const auto* split : {&st.train, &st.val, &st.test}) {
      for (const auto& r : *split) REQUIRE(labels.contains(r.predicate));
    }
    const double n = static_cast<double>(st.train.size() + st.val.size() + st.test.size());
    covered += static_cast<std::size_t>(n);
    CHECK(std::abs(static_cast<double>(st.train.size()) - 0.7 * n) <= 1.0);
    CHECK(std::abs(static_cast<double>(st.val.size()) - 0.1 * n) <= 1.0);
    CHECK(std::abs(static_cast<double>(st.test.size()) - 0.2 * n) <= 1.0);
  }
  CHECK(covered == data.size());

  // Reordering images (keeping each image's own relation order) changes nothing.
  std::map<std::int64_t, std::vector<RelationInstance>> by_image;
  for (const auto& r : data) by_image[r.image_id].push_back(r);
  std::vector<std::int64_t> ids;
  for (const auto& [id, v] : by_image) ids.push_back(id);
  SeededRng shuf(9);
  shuf.shuffle(ids);
  std::vector<RelationInstance> reordered;
  for (auto id : ids) reordered.insert(reordered.end(), by_image[id].begin(), by_image[id].end());
  const auto again = make_stage_datasets(reordered, s, {0.7, 0.1, 0.2});
  for (std::size_t i = 0; i < stages.size(); ++i) {
    CHECK(stages[i].train == again[i].train);
    CHECK(stages[i].test == again[i].test);
  }
}

TEST_CASE("zipf_counts") {
  const auto flat = zipf_counts(7, 0.0, 100);
  for (auto c : flat) CHECK(std::abs(c - 100.0 / 7.0) <= 1.0);
  const auto z = zipf_counts(50, 0.8, 10000);
  CHECK(std::accumulate(z.begin(), z.end(), std::int64_t{0}) == 10000);
  for (std::size_t i = 1; i < z.size(); ++i) CHECK(z[i - 1] >= z[i]);
  // Largest-remainder rounding stays within one of the exact share.
  double norm = 0;
  for (int r = 1; r <= 50; ++r) norm += std::pow(r, -0.8);
  for (int r = 1; r <= 50; ++r) CHECK(std::abs(z[r - 1] - 10000.0 * std::pow(r, -0.8) / norm) < 1.0);
}

TEST_CASE("synth_generate: counts, determinism, group structure") {
  SynthConfig cfg;
  cfg.sigma = 0.3;
  SeededRng a(11), b(11);
  const auto s1 = synth_generate(cfg, a);
  const auto s2 = synth_generate(cfg, b);
  CHECK(s1.dataset.instances == s2.dataset.instances);
  const auto counts = label_counts(s1.dataset.instances);
  std::size_t sum = 0;
  for (const auto& [l, c] : counts) sum += c;
  CHECK(sum == 10000);
  const auto expected = zipf_counts(cfg.n_pred, cfg.zipf_s, cfg.total_n);
  for (Label l = 0; l < cfg.n_pred; ++l) CHECK(counts.at(l) == static_cast<std::size_t>(expected[static_cast<std::size_t>(l)]));
  for (Label l = 1; l < cfg.n_pred; ++l) CHECK(counts.at(l - 1) >= counts.at(l));
  REQUIRE(s1.group_of_predicate.size() == 50);
  for (const auto& m : s1.relation_means) CHECK(m.norm() == doctest::Approx(1.0));
  for (const auto& m : s1.context_means) CHECK(m.norm() == doctest::Approx(1.0));
  for (const auto& r : s1.dataset.instances) {
    REQUIRE(r.boxes.has_value());
    CHECK((*r.boxes)[0].valid());
    CHECK((*r.boxes)[1].valid());
    CHECK(r.f_c.allFinite());
  }
}

TEST_CASE("synth_generate: flat zipf and noiseless clusters") {
  SynthConfig cfg;
  cfg.zipf_s = 0.0;
  cfg.total_n = 1000;
  cfg.sigma = 0.0;
  SeededRng rng(2);
  const auto s = synth_generate(cfg, rng);
  for (const auto& [l, c] : label_counts(s.dataset.instances)) CHECK(std::abs(static_cast<double>(c) - 20.0) <= 1.0);
  // Nearest class mean recovers every relation label.
  std::size_t correct = 0;
  for (const auto& r : s.dataset.instances) {
    std::size_t best = 0;
    double bd = 1e300;
    for (std::size_t c = 0; c < s.relation_means.size(); ++c) {
      const double d = (r.f_r - s.relation_means[c]).squaredNorm();
      if (d < bd) {
        bd = d;
        best = c;
      }
    }
    correct += static_cast<Label>(best) == r.predicate ? 1 : 0;
  }
  CHECK(correct == s.dataset.instances.size());
  SynthConfig bad;
  bad.d_c = 1;
  SeededRng r2(0);
  CHECK_THROWS_AS(synth_generate(bad, r2), Error);
}

TEST_CASE("embedding files round-trip") {
  testing::TempDir tmp;
  Dataset empty;
  save_embeddings(empty, tmp / "empty.emb");
  const auto back = load_embeddings(tmp / "empty.emb");
  CHECK(back.instances.empty());
  CHECK(back.dims == empty.dims);

  SynthConfig cfg;
  cfg.total_n = 100;
  SeededRng rng(4);
  auto ds = synth_generate(cfg, rng).dataset;
  ds.instances[3].confidence = 0.25;
  ds.instances[4].boxes.reset();
  save_embeddings(ds, tmp / "d.emb");
  const auto got = load_embeddings(tmp / "d.emb");
  CHECK(got.dims == ds.dims);
  REQUIRE(got.instances.size() == ds.instances.size());
  for (std::size_t i = 0; i < ds.instances.size(); ++i) REQUIRE(got.instances[i] == ds.instances[i]);
}

TEST_CASE("embedding loader reports the offending line") {
  testing::TempDir tmp;
  std::string text = "LSGG-EMB 1 3 2 2 4 5\n# comment\n";
  text += "1 0 1 2 0 - 1 2 3 4 5 6 7 8 9\n";  // 3+2+2+2 values
  text += "2 0 1 2 0 - 1 2 4 5 6 7 8 9\n";    // one short
  text::write_file(tmp / "bad.emb", text);
  try {
    load_embeddings(tmp / "bad.emb");
    FAIL("expected a parse error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kParse);
    CHECK(std::string(e.what()).find(":4") != std::string::npos);
  }
  text::write_file(tmp / "nan.emb", "LSGG-EMB 1 1 1 1 1 1\n0 0 0 0 0 - nan 1 2 3\n");
  CHECK_THROWS_AS(load_embeddings(tmp / "nan.emb"), Error);
  text::write_file(tmp / "ver.emb", "LSGG-EMB 2 1 1 1 1 1\n");
  try {
    load_embeddings(tmp / "ver.emb");
    FAIL("expected a version error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kVersion);
  }
  text::write_file(tmp / "hdr.emb", "0 0 0 0 0 - 1 2 3 4\n");
  CHECK_THROWS_AS(load_embeddings(tmp / "hdr.emb"), Error);
}

TEST_CASE("schedule files round-trip") {
  testing::TempDir tmp;
  SeededRng rng(8);
  const auto s = split_random(range_labels(13), 4, rng);
  save_schedule(s, tmp / "s.txt");
  CHECK(load_schedule(tmp / "s.txt").stages == s.stages);
  text::write_file(tmp / "bad.txt", "LSGG-SCHEDULE 1 3\n0 1\n2\n");
  CHECK_THROWS_AS(load_schedule(tmp / "bad.txt"), Error);
}

TEST_CASE("schedule validation") {
  TaskSchedule overlap{{{0, 1}, {1, 2}}};
  CHECK_THROWS_AS(overlap.validate({}), Error);
  TaskSchedule empty_stage{{{0}, {}}};
  CHECK_THROWS_AS(empty_stage.validate({}), Error);
  TaskSchedule s{{{0, 2}, {1}}};
  const std::vector<Label> vocab{0, 1, 2};
  s.validate(vocab);
  const std::vector<Label> more{0, 1, 2, 3};
  CHECK_THROWS_AS(s.validate(more), Error);
  CHECK(s.stage_of(2) == 0);
  CHECK(s.labels_through(1) == std::vector<Label>{0, 1, 2});
}

TEST_CASE("box overlap") {
  const Box a{0, 0, 10, 10}, b{5, 0, 15, 10};
  CHECK(iou(a, b) == doctest::Approx(50.0 / 150.0));
  CHECK(iou(a, a) == doctest::Approx(1.0));
  CHECK(iou(a, Box{20, 20, 30, 30}) == 0.0);
  CHECK(union_box(a, b) == Box{0, 0, 15, 10});
}
