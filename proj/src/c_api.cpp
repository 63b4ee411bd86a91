// Copyright (C) 2026 The lsgg Authors
// SPDX-License-Identifier: Apache-2.0

#include "lsgg/lsgg.h"

#include <cstring>
#include <exception>
#include <new>
#include <string>

#include "lsgg/error.hpp"
#include "lsgg/harness.hpp"
#include "lsgg/text_io.hpp"

struct lsgg_config {
  lsgg::ExperimentConfig impl;
};

struct lsgg_results {
  lsgg::ResultsBundle impl;
};

namespace {

thread_local std::string g_last_error;

template <typename F>
lsgg_status guarded(F&& f) noexcept {
  try {
    f();
    g_last_error.clear();
    return LSGG_OK;
  } catch (const lsgg::Error& e) {
    g_last_error = e.what();
    return static_cast<lsgg_status>(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return LSGG_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return LSGG_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown exception";
    return LSGG_ERR_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  if (p == nullptr) lsgg::fail(lsgg::ErrorCode::kInvalidArgument, std::string(what) + " is NULL");
}

void copy_out(const std::string& s, char* buf, std::size_t cap, std::size_t* needed) {
  if (needed) *needed = s.size() + 1;
  if (buf == nullptr) return;
  if (cap < s.size() + 1) lsgg::fail(lsgg::ErrorCode::kInvalidArgument, "buffer too small");
  std::memcpy(buf, s.c_str(), s.size() + 1);
}

std::vector<std::string> csv_items(const char* s) {
  std::vector<std::string> out;
  std::string cur;
  for (const char* p = s; *p; ++p) {
    if (*p == ',') {
      if (!lsgg::text::trim(cur).empty()) out.push_back(lsgg::text::trim(cur));
      cur.clear();
    } else {
      cur += *p;
    }
  }
  if (!lsgg::text::trim(cur).empty()) out.push_back(lsgg::text::trim(cur));
  return out;
}

}  // namespace

extern "C" {

const char* lsgg_version(void) { return lsgg::kVersion; }

const char* lsgg_status_name(lsgg_status status) {
  switch (status) {
    case LSGG_OK:
      return "ok";
    case LSGG_ERR_INVALID_ARGUMENT:
      return "invalid argument";
    case LSGG_ERR_IO:
      return "i/o error";
    case LSGG_ERR_PARSE:
      return "parse error";
    case LSGG_ERR_NUMERIC:
      return "numeric error";
    case LSGG_ERR_VERSION:
      return "version mismatch";
    case LSGG_ERR_STATE:
      return "invalid state";
    case LSGG_ERR_INTERNAL:
      return "internal error";
  }
  return "unknown status";
}

const char* lsgg_last_error(void) { return g_last_error.c_str(); }

lsgg_status lsgg_config_create(lsgg_config** out) {
  return guarded([&] {
    need(out, "out");
    *out = new lsgg_config{};
  });
}

void lsgg_config_destroy(lsgg_config* config) { delete config; }

lsgg_status lsgg_config_set(lsgg_config* config, const char* key, const char* value) {
  return guarded([&] {
    need(config, "config");
    need(key, "key");
    need(value, "value");
    config->impl.set(key, value);
  });
}

lsgg_status lsgg_config_get(const lsgg_config* config, const char* key, char* buf, size_t cap, size_t* needed) {
  return guarded([&] {
    need(config, "config");
    need(key, "key");
    copy_out(config->impl.get(key), buf, cap, needed);
  });
}

lsgg_status lsgg_config_load(lsgg_config* config, const char* path) {
  return guarded([&] {
    need(config, "config");
    need(path, "path");
    config->impl.load(path);
  });
}

lsgg_status lsgg_config_save(const lsgg_config* config, const char* path) {
  return guarded([&] {
    need(config, "config");
    need(path, "path");
    config->impl.save(path);
  });
}

lsgg_status lsgg_config_apply_preset(lsgg_config* config, const char* name) {
  return guarded([&] {
    need(config, "config");
    need(name, "name");
    config->impl.apply_preset(name);
  });
}

lsgg_status lsgg_config_validate(const lsgg_config* config) {
  return guarded([&] {
    need(config, "config");
    (void)lsgg::resolve(config->impl);
  });
}

lsgg_status lsgg_synth(const lsgg_config* config, const char* embeddings_path, const char* vocab_path) {
  return guarded([&] {
    need(config, "config");
    need(embeddings_path, "embeddings_path");
    const auto rc = lsgg::resolve(config->impl);
    lsgg::SeededRng rng(rc.synth_seed);
    const auto result = lsgg::synth_generate(rc.synth, rng);
    lsgg::save_embeddings(result.dataset, embeddings_path);
    if (vocab_path) lsgg::PredicateVocab::synthetic(rc.synth.n_pred).save(vocab_path);
  });
}

lsgg_status lsgg_split(const lsgg_config* config, const char* schedule_path) {
  return guarded([&] {
    need(config, "config");
    need(schedule_path, "schedule_path");
    auto rc = lsgg::resolve(config->impl);
    rc.schedule_file.clear();
    const auto data = lsgg::prepare_data(rc);
    lsgg::save_schedule(data.schedule, schedule_path);
  });
}

lsgg_status lsgg_run_experiment(const lsgg_config* config, lsgg_results** out) {
  return guarded([&] {
    need(config, "config");
    need(out, "out");
    *out = nullptr;
    auto bundle = lsgg::run_experiment(config->impl);
    *out = new lsgg_results{std::move(bundle)};
  });
}

lsgg_status lsgg_results_read(const char* dir, lsgg_results** out) {
  return guarded([&] {
    need(dir, "dir");
    need(out, "out");
    *out = nullptr;
    auto bundle = lsgg::read_results(dir);
    *out = new lsgg_results{std::move(bundle)};
  });
}

void lsgg_results_destroy(lsgg_results* results) { delete results; }

lsgg_status lsgg_results_write(lsgg_results* results, const char* dir) {
  return guarded([&] {
    need(results, "results");
    need(dir, "dir");
    lsgg::write_results(results->impl, dir);
  });
}

lsgg_status lsgg_results_stage_count(const lsgg_results* results, size_t* out) {
  return guarded([&] {
    need(results, "results");
    need(out, "out");
    *out = results->impl.stages.size();
  });
}

lsgg_status lsgg_results_metric(const lsgg_results* results, const char* name, double* out) {
  return guarded([&] {
    need(results, "results");
    need(name, "name");
    need(out, "out");
    const auto h = lsgg::headline(results->impl);
    const auto it = h.find(name);
    if (it == h.end()) lsgg::fail(lsgg::ErrorCode::kInvalidArgument, std::string("no metric named '") + name + "'");
    *out = it->second;
  });
}

lsgg_status lsgg_ablation_run(const lsgg_config* base, const char* presets, const char* seeds, const char* out_dir,
                              const char* table_path) {
  return guarded([&] {
    need(base, "base");
    need(table_path, "table_path");
    const auto rc = lsgg::resolve(base->impl);
    const auto names = presets ? csv_items(presets) : lsgg::ablation_presets();
    std::vector<std::uint64_t> seed_list = rc.seeds;
    if (seeds) {
      seed_list.clear();
      for (const auto& s : csv_items(seeds)) seed_list.push_back(lsgg::text::parse_uint(s, "seeds"));
    }
    std::optional<std::filesystem::path> out;
    if (out_dir) out = out_dir;
    const auto rows = lsgg::run_ablation_suite(base->impl, names, seed_list, out);
    lsgg::text::write_file(table_path, lsgg::report_csv(lsgg::Report{{lsgg::ablation_table(rows)}}));
  });
}

lsgg_status lsgg_report(const char* const* dirs, size_t n_dirs, const char* format, const char* out_path, char* buf,
                        size_t cap, size_t* needed) {
  return guarded([&] {
    need(dirs, "dirs");
    need(format, "format");
    const std::string fmt(format);
    if (fmt != "csv" && fmt != "text") lsgg::fail(lsgg::ErrorCode::kInvalidArgument, "format must be csv or text");
    std::vector<lsgg::ResultsBundle> bundles;
    for (std::size_t i = 0; i < n_dirs; ++i) {
      need(dirs[i], "dirs[i]");
      bundles.push_back(lsgg::read_results(dirs[i]));
    }
    const auto rep = lsgg::make_report(bundles);
    const std::string s = fmt == "csv" ? lsgg::report_csv(rep) : lsgg::report_text(rep);
    if (out_path) lsgg::text::write_file(out_path, s);
    if (buf || needed) copy_out(s, buf, cap, needed);
  });
}

lsgg_status lsgg_eval_dump(const char* predictions_path, const char* gt_path, size_t k, lsgg_dump_metrics* out) {
  return guarded([&] {
    need(predictions_path, "predictions_path");
    need(gt_path, "gt_path");
    need(out, "out");
    const auto preds = lsgg::read_predictions(predictions_path);
    const auto gt = lsgg::read_ground_truth(gt_path);
    lsgg_dump_metrics m{};
    m.recall = lsgg::recall_at_k(preds, gt, k);
    m.mean_recall = lsgg::mean_recall_at_k(preds, gt, k);
    m.m = lsgg::m_at_k(m.recall, m.mean_recall);
    m.wmap_rel = lsgg::weighted_map(preds, gt, lsgg::MapMode::kRelation);
    m.wmap_phr = lsgg::weighted_map(preds, gt, lsgg::MapMode::kPhrase);
    m.score_wtd = lsgg::score_wtd(m.recall, m.wmap_rel, m.wmap_phr);
    *out = m;
  });
}

}  // extern "C"
