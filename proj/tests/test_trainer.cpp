// Copyright (C) 2026 The lsgg Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <set>

#include "lsgg/error.hpp"
#include "lsgg/text_io.hpp"
#include "lsgg/trainer.hpp"
#include "support/oracles.hpp"
#include "support/tempdir.hpp"

using namespace lsgg;
using testing::GradCase;
using testing::make_grad_case;
using testing::random_instance;
using testing::random_vec;

namespace {

Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

std::vector<double> flatten(ModelState& s, bool with_scorer) {
  std::vector<double> out;
  for_each_trainable(s, with_scorer, [&](const std::string&, std::span<double> v) { out.insert(out.end(), v.begin(), v.end()); });
  return out;
}

void check_gradients(GradCase& c, const RelationInstance& q, const RoutingFlags& flags, const TrainConfig& config,
                     bool replay, double weight = 1.0,
                     std::optional<std::pair<std::size_t, std::size_t>> exclude = std::nullopt) {
  SeededRng rng(3);
  const Route route = plan_route(c.state, features_of(q), flags, rng, exclude);
  const auto r = testing::gradient_check(c, q, route, config, replay, flags.finetune_scorer, weight);
  CAPTURE(r.worst_name);
  CAPTURE(r.worst);
  CHECK(r.checked > 500);
  CHECK(r.failures == 0);
}

StageDataset make_stage(std::size_t index, std::vector<Label> labels, std::size_t n, const FeatureDims& dims, SeededRng& rng) {
  StageDataset s;
  s.stage = index;
  s.labels = labels;
  for (std::size_t i = 0; i < n; ++i) {
    auto r = random_instance(dims, labels[i % labels.size()], rng, static_cast<std::int64_t>(i));
    // Give each label a direction so there is something to learn.
    r.f_r(static_cast<Eigen::Index>(r.predicate % dims.d_r)) += 3.0;
    s.train.push_back(r);
  }
  return s;
}

TrainConfig small_train() {
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 8;
  c.lr = 0.01;
  return c;
}

}  // namespace

TEST_CASE("loss examples") {
  TrainConfig c;
  CHECK(loss_total(1, 1, 1, c) == doctest::Approx(1.7));
  const std::vector<Vec> parallel{v2(2, 0)};
  CHECK(loss_key_alignment(v2(1, 0), parallel) == doctest::Approx(0.0));
  const std::vector<Vec> anti{v2(-3, 0)};
  CHECK(loss_key_alignment(v2(1, 0), anti) == doctest::Approx(2.0));
  const std::vector<Vec> both{v2(2, 0), v2(0, 1)};
  CHECK(loss_key_alignment(v2(1, 0), both) == doctest::Approx(1.0));
  CHECK_THROWS_AS(loss_key_alignment(v2(1, 0), std::vector<Vec>{}), Error);

  const auto vocab = testing::tiny_vocab();
  const std::vector<Vec> uniform(2, Vec::Constant(10, 0.1));
  CHECK(loss_predicate_ce(uniform, 0, vocab) == doctest::Approx(std::log(10.0)));
  CHECK(loss_predicate_ce(uniform, 1, vocab) == doctest::Approx(2 * std::log(10.0)));

  Matrix unit = Matrix::Identity(3, 3);
  CHECK(loss_token_unit_norm(unit) == doctest::Approx(0.0));
  CHECK(loss_token_unit_norm(std::sqrt(2.0) * unit) == doctest::Approx(1.0));
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.rho = 1.0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = TrainConfig{};
  c.lr = -1;
  CHECK_THROWS_AS(c.validate(), Error);
  c = TrainConfig{};
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("routes") {
  auto c = make_grad_case(1);
  const auto q = features_of(c.queries[0]);
  SeededRng rng(1);
  RoutingFlags f;
  const Route full = plan_route(c.state, q, f, rng);
  REQUIRE(full.items.size() == 3);
  CHECK(full.items[0].exemplar == nullptr);
  CHECK(full.items[1].exemplar != nullptr);
  CHECK(full.selected_keys.size() == 3);
  const auto top = retrieve_topk_prompts(c.state.pool, c.queries[0].f_c, 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(full.items[i].entry == top[i].entry);

  f.in_context = false;
  const Route single = plan_route(c.state, q, f, rng);
  CHECK(single.items.size() == 1);
  CHECK(single.selected_keys.empty());

  f = RoutingFlags{};
  f.top_k = 5;
  CHECK_THROWS_AS(plan_route(c.state, q, f, rng), Error);

  // Excluding the only stored exemplar leaves the item without one.
  auto c2 = make_grad_case(2);
  for (std::size_t e = 0; e < c2.state.pool.size(); ++e) c2.state.pool.entry(e).store.resize(1);
  RoutingFlags one;
  one.top_k = 2;
  const auto q2 = features_of(c2.queries[1]);
  const auto second = retrieve_topk_prompts(c2.state.pool, c2.queries[1].f_c, 2)[1].entry;
  const Route ex = plan_route(c2.state, q2, one, rng, std::make_pair(second, std::size_t{0}));
  CHECK(ex.items[1].exemplar == nullptr);
}

TEST_CASE("analytic gradients: full method") {
  auto c = make_grad_case(11);
  check_gradients(c, c.queries[0], RoutingFlags{}, TrainConfig{}, false);
}

TEST_CASE("analytic gradients: single-token target") {
  auto c = make_grad_case(12);
  auto q = c.queries[1];
  q.predicate = 2;
  check_gradients(c, q, RoutingFlags{}, TrainConfig{}, false);
}

TEST_CASE("analytic gradients: replayed exemplar with its slot excluded") {
  auto c = make_grad_case(13);
  const auto stored = c.state.pool.entry(1).store[0];
  RelationInstance q;
  q.f_c = stored.f_c;
  q.f_r = stored.f_r;
  q.f_s = stored.f_s;
  q.f_o = stored.f_o;
  q.predicate = 3;
  check_gradients(c, q, RoutingFlags{}, TrainConfig{}, true, 1.0, std::make_pair(std::size_t{1}, std::size_t{0}));
}

TEST_CASE("analytic gradients: shuffled order and random retrieval") {
  auto c = make_grad_case(14);
  RoutingFlags f;
  f.ascending_order = false;
  f.knowledge_retrieval = false;
  f.exemplar_retrieval = false;
  check_gradients(c, c.queries[2], f, TrainConfig{}, false);
}

TEST_CASE("analytic gradients: no in-context prompt") {
  auto c = make_grad_case(15);
  RoutingFlags f;
  f.in_context = false;
  f.top_k = 1;
  check_gradients(c, c.queries[0], f, TrainConfig{}, false);
}

TEST_CASE("analytic gradients: fine-tuned scorer with the token-norm term") {
  auto c = make_grad_case(16);
  RoutingFlags f;
  f.finetune_scorer = true;
  TrainConfig t;
  t.aux = AuxLoss::kTokenUnitNorm;
  t.alpha = 0.7;
  check_gradients(c, c.queries[1], f, t, false);
}

TEST_CASE("analytic gradients: deeper mapper, several projected rows, weighted") {
  auto c = make_grad_case(17, 2, 2);
  check_gradients(c, c.queries[2], RoutingFlags{}, TrainConfig{}, false, 0.5);
}

TEST_CASE("replayed items contribute classification only") {
  auto c = make_grad_case(18);
  SeededRng rng(1);
  const auto q = c.queries[0];
  const Route r = plan_route(c.state, features_of(q), RoutingFlags{}, rng);
  TrainConfig t;
  t.aux = AuxLoss::kTokenUnitNorm;
  const auto fresh = instance_loss(c.state, c.vocab, features_of(q), q.predicate, r, t, false, nullptr);
  const auto replay = instance_loss(c.state, c.vocab, features_of(q), q.predicate, r, t, true, nullptr);
  CHECK(replay.total == replay.ce);
  CHECK(replay.key == 0.0);
  CHECK(fresh.ce == replay.ce);
  CHECK(fresh.total == doctest::Approx(loss_total(fresh.aux, fresh.key, fresh.ce, t)));
  CHECK(fresh.key > 0.0);
  Gradients g = Gradients::zeros_for(c.state, false);
  instance_loss(c.state, c.vocab, features_of(q), q.predicate, r, t, true, &g);
  for (const auto& k : g.keys) CHECK(k.isZero(0.0));
}

TEST_CASE("AdamW matches a scalar transcription") {
  auto c = make_grad_case(20);
  TrainConfig t;
  t.lr = 0.05;
  t.weight_decay = 0.01;
  AdamW opt(t);
  auto before = flatten(c.state, false);
  std::vector<double> m(before.size(), 0.0), v(before.size(), 0.0), want = before;
  SeededRng rng(2);
  for (int step = 1; step <= 3; ++step) {
    Gradients g = Gradients::zeros_for(c.state, false);
    std::vector<double> flat;
    for_each_gradient(g, [&](const std::string&, std::span<double> s) {
      for (auto& x : s) {
        x = rng.gaussian();
        flat.push_back(x);
      }
    });
    opt.step(c.state, g, false);
    for (std::size_t i = 0; i < want.size(); ++i) {
      m[i] = 0.9 * m[i] + 0.1 * flat[i];
      v[i] = 0.999 * v[i] + 0.001 * flat[i] * flat[i];
      const double mh = m[i] / (1 - std::pow(0.9, step)), vh = v[i] / (1 - std::pow(0.999, step));
      want[i] -= 0.05 * (mh / (std::sqrt(vh) + 1e-8) + 0.01 * want[i]);
    }
  }
  const auto got = flatten(c.state, false);
  for (std::size_t i = 0; i < got.size(); ++i) REQUIRE(std::abs(got[i] - want[i]) <= 1e-12);
  CHECK(opt.steps() == 3);
  Gradients wrong = Gradients::zeros_for(c.state, true);
  CHECK_THROWS_AS(opt.step(c.state, wrong, false), Error);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  auto c = make_grad_case(21);
  TrainConfig t;
  t.lr = 0.0;
  AdamW opt(t);
  const auto before = flatten(c.state, true);
  std::vector<BatchItem> batch;
  for (const auto& q : c.queries) batch.push_back({features_of(q), q.predicate, false, std::nullopt});
  Gradients scratch = Gradients::zeros_for(c.state, true);
  RoutingFlags f;
  f.finetune_scorer = true;
  SeededRng rng(1);
  grad_step(c.state, c.vocab, batch, t, f, opt, scratch, rng);
  CHECK(flatten(c.state, true) == before);
}

TEST_CASE("frozen scorer stays frozen") {
  auto c = make_grad_case(22);
  const auto scorer = c.state.scorer;
  TrainConfig t;
  AdamW opt(t);
  std::vector<BatchItem> batch;
  for (const auto& q : c.queries) batch.push_back({features_of(q), q.predicate, false, std::nullopt});
  Gradients scratch = Gradients::zeros_for(c.state, false);
  SeededRng rng(1);
  for (int i = 0; i < 5; ++i) grad_step(c.state, c.vocab, batch, t, RoutingFlags{}, opt, scratch, rng);
  CHECK(c.state.scorer.embedding == scorer.embedding);
  CHECK(c.state.scorer.readout == scorer.readout);
  CHECK(c.state.scorer.position_logits == scorer.position_logits);
}

TEST_CASE("loss decreases on a fixed batch") {
  auto c = make_grad_case(23);
  TrainConfig t;
  t.lr = 0.01;
  AdamW opt(t);
  std::vector<BatchItem> batch;
  for (const auto& q : c.queries) batch.push_back({features_of(q), q.predicate, false, std::nullopt});
  Gradients scratch = Gradients::zeros_for(c.state, false);
  SeededRng rng(1);
  const double first = grad_step(c.state, c.vocab, batch, t, RoutingFlags{}, opt, scratch, rng);
  double last = first;
  for (int i = 0; i < 49; ++i) last = grad_step(c.state, c.vocab, batch, t, RoutingFlags{}, opt, scratch, rng);
  CHECK(last < 0.75 * first);
}

TEST_CASE("stages admit only their own labels, up to the quota") {
  auto c = make_grad_case(30);
  for (std::size_t e = 0; e < c.state.pool.size(); ++e) {
    c.state.pool.entry(e).store.clear();
    c.state.pool.entry(e).seen_count = 0;
  }
  SeededRng data(4);
  const auto s0 = make_stage(0, {0, 1, 2}, 40, c.dims, data);
  const auto s1 = make_stage(1, {3, 4, 5}, 40, c.dims, data);
  const auto t = small_train();
  LearnerState learner{c.state, AdamW(t), std::nullopt};
  SeededRng rng(5);
  const auto sum0 = train_stage(s0, 2, learner, c.vocab, t, RoutingFlags{}, rng);
  // Capacity 12 over two stages.
  CHECK(sum0.offered == 6);
  CHECK(sum0.admitted == 6);
  CHECK(sum0.steps == 2 * 7);
  CHECK(sum0.epoch_loss.size() == 2);
  for (const auto& e : learner.model.pool.entries()) {
    for (const auto& x : e.store) CHECK(x.predicate <= 2);
  }
  std::size_t seen_total = 0, expect_stored = 0;
  for (const auto& e : learner.model.pool.entries()) {
    seen_total += e.seen_count;
    expect_stored += std::min<std::size_t>(e.seen_count, 3);
  }
  CHECK(seen_total == 6);
  CHECK(learner.model.pool.stored() == expect_stored);
  const auto sum1 = train_stage(s1, 2, learner, c.vocab, t, RoutingFlags{}, rng);
  CHECK(sum1.replayed == sum1.steps * 2);
  std::set<Label> seen;
  for (const auto& e : learner.model.pool.entries()) {
    for (const auto& x : e.store) seen.insert(x.predicate);
  }
  CHECK(*seen.rbegin() <= 5);
  CHECK(learner.model.pool.stored() <= learner.model.pool.capacity());
  learner.model.pool.check_invariants();
}

TEST_CASE("class-balanced rehearsal uses its own buffer") {
  auto c = make_grad_case(31);
  SeededRng data(4);
  const auto s0 = make_stage(0, {0, 1}, 30, c.dims, data);
  const auto t = small_train();
  LearnerState learner{c.state, AdamW(t), std::nullopt};
  const auto stores_before = learner.model.pool.stored();
  RoutingFlags f;
  f.buffer = BufferPolicy::kClassBalanced;
  SeededRng rng(5);
  const auto sum = train_stage(s0, 1, learner, c.vocab, t, f, rng);
  REQUIRE(learner.balanced.has_value());
  CHECK(learner.balanced->size() == sum.admitted);
  CHECK(learner.model.pool.stored() == stores_before);
}

TEST_CASE("training is deterministic") {
  auto run = [] {
    auto c = make_grad_case(40);
    SeededRng data(4);
    const auto s0 = make_stage(0, {0, 1, 2}, 30, c.dims, data);
    const auto t = small_train();
    LearnerState learner{c.state, AdamW(t), std::nullopt};
    SeededRng rng(9);
    const auto sum = train_stage(s0, 2, learner, c.vocab, t, RoutingFlags{}, rng);
    return std::make_pair(std::move(learner.model), sum.epoch_loss);
  };
  auto [a, la] = run();
  auto [b, lb] = run();
  CHECK(la == lb);
  CHECK(a.pool == b.pool);
  CHECK(flatten(a, true) == flatten(b, true));
}

TEST_CASE("empty train split is rejected") {
  auto c = make_grad_case(41);
  LearnerState learner{c.state, AdamW(TrainConfig{}), std::nullopt};
  SeededRng rng(1);
  StageDataset empty;
  CHECK_THROWS_AS(train_stage(empty, 1, learner, c.vocab, TrainConfig{}, RoutingFlags{}, rng), Error);
}

TEST_CASE("predict ranks every candidate") {
  auto c = make_grad_case(42);
  SeededRng rng(1);
  const auto r = predict(c.state, c.vocab, features_of(c.queries[0]), RoutingFlags{}, {}, rng);
  CHECK(r.size() == 6);
  for (std::size_t i = 1; i < r.size(); ++i) CHECK(r[i - 1].score >= r[i].score);
}

TEST_CASE("checkpoints round-trip every tensor") {
  testing::TempDir tmp;
  auto c = make_grad_case(50);
  const std::vector<std::pair<std::string, std::string>> echo{{"seed", "3"}, {"model.tokens", "default"}};
  save_checkpoint(c.state, echo, "pool.txt", tmp / "ckpt.txt");
  const auto ck = read_checkpoint(tmp / "ckpt.txt");
  CHECK(ck.config_echo == echo);
  CHECK(ck.pool_ref == "pool.txt");
  auto other = make_grad_case(51);
  CHECK(flatten(other.state, true) != flatten(c.state, true));
  restore_checkpoint(ck, other.state);
  CHECK(flatten(other.state, true) == flatten(c.state, true));

  const std::string text = text::read_file(tmp / "ckpt.txt");
  text::write_file(tmp / "v2.txt", "LSGG-CKPT 2" + text.substr(text.find('\n')));
  try {
    read_checkpoint(tmp / "v2.txt");
    FAIL("expected a version error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kVersion);
  }
  text::write_file(tmp / "cut.txt", text.substr(0, text.size() / 2));
  CHECK_THROWS_AS(read_checkpoint(tmp / "cut.txt"), Error);

  auto deeper = make_grad_case(50, 2);
  CHECK_THROWS_AS(restore_checkpoint(ck, deeper.state), Error);
}
