// Copyright (C) 2026 The lsgg Authors
// SPDX-License-Identifier: Apache-2.0

// Uses only the public C header and the shared library.

#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "lsgg/lsgg.h"
#include "support/tempdir.hpp"

namespace {

struct Config {
  lsgg_config* c = nullptr;
  Config() { REQUIRE(lsgg_config_create(&c) == LSGG_OK); }
  ~Config() { lsgg_config_destroy(c); }
};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string get(const lsgg_config* c, const char* key) {
  std::size_t needed = 0;
  REQUIRE(lsgg_config_get(c, key, nullptr, 0, &needed) == LSGG_OK);
  std::string out(needed, '\0');
  REQUIRE(lsgg_config_get(c, key, out.data(), out.size(), &needed) == LSGG_OK);
  out.resize(needed - 1);
  return out;
}

}  // namespace

TEST_CASE("version and status names") {
  CHECK(std::strlen(lsgg_version()) > 0);
  CHECK(std::string(lsgg_status_name(LSGG_OK)) != std::string(lsgg_status_name(LSGG_ERR_PARSE)));
}

TEST_CASE("config handle") {
  Config cfg;
  CHECK(get(cfg.c, "train.epochs") == "20");
  CHECK(lsgg_config_set(cfg.c, "seed", "9") == LSGG_OK);
  CHECK(get(cfg.c, "seed") == "9");

  CHECK(lsgg_config_set(cfg.c, "bogus", "1") == LSGG_ERR_INVALID_ARGUMENT);
  CHECK(std::string(lsgg_last_error()).find("bogus") != std::string::npos);
  CHECK(lsgg_config_set(nullptr, "seed", "1") == LSGG_ERR_INVALID_ARGUMENT);
  CHECK(lsgg_config_set(cfg.c, nullptr, "1") == LSGG_ERR_INVALID_ARGUMENT);

  char small[2];
  std::size_t needed = 0;
  CHECK(lsgg_config_get(cfg.c, "model.tokens", small, sizeof(small), &needed) == LSGG_ERR_INVALID_ARGUMENT);
  CHECK(needed == std::strlen("default") + 1);

  CHECK(lsgg_config_apply_preset(cfg.c, "w/o-inc") == LSGG_OK);
  CHECK(get(cfg.c, "model.k") == "1");
  CHECK(lsgg_config_apply_preset(cfg.c, "nope") == LSGG_ERR_INVALID_ARGUMENT);
  CHECK(lsgg_config_validate(cfg.c) == LSGG_OK);
  CHECK(lsgg_config_set(cfg.c, "train.lr", "fast") == LSGG_OK);
  CHECK(lsgg_config_validate(cfg.c) != LSGG_OK);
  CHECK(lsgg_config_create(nullptr) == LSGG_ERR_INVALID_ARGUMENT);
  lsgg_config_destroy(nullptr);
}

TEST_CASE("config files") {
  lsgg::testing::TempDir tmp;
  Config a, b;
  REQUIRE(lsgg_config_apply_preset(a.c, "w-sc") == LSGG_OK);
  const auto path = (tmp / "x.cfg").string();
  REQUIRE(lsgg_config_save(a.c, path.c_str()) == LSGG_OK);
  REQUIRE(lsgg_config_load(b.c, path.c_str()) == LSGG_OK);
  CHECK(get(b.c, "model.tokens") == "small");
  CHECK(lsgg_config_load(b.c, (tmp / "missing.cfg").string().c_str()) == LSGG_ERR_IO);
}

TEST_CASE("end to end through the C interface") {
  lsgg::testing::TempDir tmp;
  Config cfg;
  REQUIRE(lsgg_config_apply_preset(cfg.c, "smoke") == LSGG_OK);
  const auto emb = (tmp / "data.emb").string(), vocab = (tmp / "vocab.txt").string(),
             sched = (tmp / "schedule.txt").string();
  REQUIRE(lsgg_synth(cfg.c, emb.c_str(), vocab.c_str()) == LSGG_OK);
  REQUIRE(lsgg_split(cfg.c, sched.c_str()) == LSGG_OK);
  REQUIRE(lsgg_config_set(cfg.c, "data.embeddings", emb.c_str()) == LSGG_OK);
  REQUIRE(lsgg_config_set(cfg.c, "data.vocab", vocab.c_str()) == LSGG_OK);
  REQUIRE(lsgg_config_set(cfg.c, "data.schedule", sched.c_str()) == LSGG_OK);

  lsgg_results* r = nullptr;
  REQUIRE(lsgg_run_experiment(cfg.c, &r) == LSGG_OK);
  std::size_t stages = 0;
  CHECK(lsgg_results_stage_count(r, &stages) == LSGG_OK);
  CHECK(stages == 2);
  double r50 = -1, m50 = -1, mr50 = -1;
  CHECK(lsgg_results_metric(r, "R@50", &r50) == LSGG_OK);
  CHECK(lsgg_results_metric(r, "mR@50", &mr50) == LSGG_OK);
  CHECK(lsgg_results_metric(r, "M@50", &m50) == LSGG_OK);
  CHECK(m50 == (r50 + mr50) / 2.0);
  CHECK(lsgg_results_metric(r, "R@7", &r50) == LSGG_ERR_INVALID_ARGUMENT);
  const auto dir = (tmp / "run").string();
  REQUIRE(lsgg_results_write(r, dir.c_str()) == LSGG_OK);
  lsgg_results_destroy(r);

  lsgg_results* back = nullptr;
  REQUIRE(lsgg_results_read(dir.c_str(), &back) == LSGG_OK);
  double again = -1;
  CHECK(lsgg_results_metric(back, "M@50", &again) == LSGG_OK);
  CHECK(again == m50);
  lsgg_results_destroy(back);

  lsgg_dump_metrics dm{};
  REQUIRE(lsgg_eval_dump((tmp / "run" / "predictions.txt").string().c_str(), (tmp / "run" / "gt.txt").string().c_str(), 50,
                         &dm) == LSGG_OK);
  CHECK(dm.recall == doctest::Approx(r50));
  CHECK(dm.m == doctest::Approx((dm.recall + dm.mean_recall) / 2.0));
  CHECK(lsgg_eval_dump("/nonexistent/p.txt", "/nonexistent/g.txt", 50, &dm) != LSGG_OK);

  const char* dirs[] = {dir.c_str()};
  std::size_t needed = 0;
  REQUIRE(lsgg_report(dirs, 1, "csv", nullptr, nullptr, 0, &needed) == LSGG_OK);
  std::string text(needed, '\0');
  REQUIRE(lsgg_report(dirs, 1, "csv", nullptr, text.data(), text.size(), &needed) == LSGG_OK);
  CHECK(text.find("mR@50") != std::string::npos);
  const auto out = (tmp / "report.txt").string();
  CHECK(lsgg_report(dirs, 1, "text", out.c_str(), nullptr, 0, nullptr) == LSGG_OK);
  CHECK(!slurp(out).empty());
  CHECK(lsgg_report(dirs, 1, "xml", nullptr, nullptr, 0, &needed) == LSGG_ERR_INVALID_ARGUMENT);

  const auto table = (tmp / "ablate.csv").string();
  REQUIRE(lsgg_ablation_run(cfg.c, "full,w/o-inc", "1", nullptr, table.c_str()) == LSGG_OK);
  CHECK(slurp(table).find("w/o-inc") != std::string::npos);
}

TEST_CASE("failures surface as status codes") {
  Config cfg;
  REQUIRE(lsgg_config_set(cfg.c, "data.embeddings", "/nonexistent/data.emb") == LSGG_OK);
  lsgg_results* r = nullptr;
  CHECK(lsgg_run_experiment(cfg.c, &r) == LSGG_ERR_IO);
  CHECK(r == nullptr);
  CHECK(std::strlen(lsgg_last_error()) > 0);
  CHECK(lsgg_results_read("/nonexistent/run", &r) != LSGG_OK);
  CHECK(lsgg_results_metric(nullptr, "R@50", nullptr) == LSGG_ERR_INVALID_ARGUMENT);
}
