// Copyright (C) 2026 The lsgg Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end; talks to the library only through lsgg.h.

#include <CLI11.hpp>

#include <cstdio>
#include <string>
#include <vector>

#include "lsgg/lsgg.h"

namespace {

struct ConfigArgs {
  std::string file;
  std::string preset;
  std::vector<std::string> sets;
  std::string seed;
};

void add_config_args(CLI::App* cmd, ConfigArgs& a) {
  cmd->add_option("--config", a.file, "key=value configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--preset", a.preset, "named preset applied after the file (e.g. w/o-inc, smoke)");
  cmd->add_option("--set", a.sets, "override, key=value (repeatable)");
  cmd->add_option("--seed", a.seed, "run seed");
}

int report_failure(lsgg_status s) {
  std::fprintf(stderr, "lsgg: %s: %s\n", lsgg_status_name(s), lsgg_last_error());
  return static_cast<int>(s);
}

// Builds the config; returns nullptr after printing the error.
lsgg_config* make_config(const ConfigArgs& a, lsgg_status* status) {
  lsgg_config* c = nullptr;
  auto check = [&](lsgg_status s) {
    *status = s;
    return s == LSGG_OK;
  };
  if (!check(lsgg_config_create(&c))) return nullptr;
  bool ok = true;
  if (ok && !a.file.empty()) ok = check(lsgg_config_load(c, a.file.c_str()));
  if (ok && !a.preset.empty()) ok = check(lsgg_config_apply_preset(c, a.preset.c_str()));
  for (const auto& kv : a.sets) {
    if (!ok) break;
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "lsgg: --set expects key=value, got '%s'\n", kv.c_str());
      *status = LSGG_ERR_INVALID_ARGUMENT;
      lsgg_config_destroy(c);
      return nullptr;
    }
    ok = check(lsgg_config_set(c, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()));
  }
  if (ok && !a.seed.empty()) ok = check(lsgg_config_set(c, "seed", a.seed.c_str()));
  if (ok) ok = check(lsgg_config_validate(c));
  if (!ok) {
    report_failure(*status);
    lsgg_config_destroy(c);
    return nullptr;
  }
  return c;
}

void print_metric(const lsgg_results* r, const char* name) {
  double v = 0.0;
  if (lsgg_results_metric(r, name, &v) == LSGG_OK) std::printf("%-10s %.4f\n", name, v);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lifelong scene-graph learner with in-context prompts"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(lsgg_version()));

  ConfigArgs synth_cfg, split_cfg, train_cfg, ablate_cfg;
  std::string synth_out, synth_vocab, split_out, train_out, ablate_out, ablate_presets, ablate_seeds, ablate_table;
  std::string eval_pred, eval_gt, report_format = "text", report_out;
  std::size_t eval_k = 50;
  std::vector<std::string> report_dirs;

  auto* synth = app.add_subcommand("synth", "generate the synthetic benchmark as an embedding file");
  add_config_args(synth, synth_cfg);
  synth->add_option("--out", synth_out, "embedding file to write")->required();
  synth->add_option("--vocab", synth_vocab, "also write the predicate vocabulary");

  auto* split = app.add_subcommand("split", "partition the predicates into stages");
  add_config_args(split, split_cfg);
  split->add_option("--out", split_out, "schedule file to write")->required();

  auto* train = app.add_subcommand("train", "run the staged protocol and write a results directory");
  add_config_args(train, train_cfg);
  train->add_option("--out", train_out, "results directory")->required();

  auto* eval = app.add_subcommand("eval", "score a prediction dump against ground truth");
  eval->add_option("--pred", eval_pred, "prediction dump")->required()->check(CLI::ExistingFile);
  eval->add_option("--gt", eval_gt, "ground-truth file")->required()->check(CLI::ExistingFile);
  eval->add_option("--k", eval_k, "recall cut-off")->check(CLI::PositiveNumber);

  auto* ablate = app.add_subcommand("ablate", "run ablation presets over seeds");
  add_config_args(ablate, ablate_cfg);
  ablate->add_option("--presets", ablate_presets, "comma list (default: the standard suite)");
  ablate->add_option("--seeds", ablate_seeds, "comma list (default: config 'seeds')");
  ablate->add_option("--out", ablate_out, "directory for per-run results");
  ablate->add_option("--table", ablate_table, "comparison table CSV")->required();

  auto* report = app.add_subcommand("report", "aggregate results directories");
  report->add_option("dirs", report_dirs, "results directories")->required()->check(CLI::ExistingDirectory);
  report->add_option("--format", report_format, "csv or text")->check(CLI::IsMember({"csv", "text"}));
  report->add_option("--out", report_out, "write to file instead of stdout");

  CLI11_PARSE(app, argc, argv);

  lsgg_status s = LSGG_OK;
  if (synth->parsed()) {
    lsgg_config* c = make_config(synth_cfg, &s);
    if (!c) return static_cast<int>(s);
    s = lsgg_synth(c, synth_out.c_str(), synth_vocab.empty() ? nullptr : synth_vocab.c_str());
    lsgg_config_destroy(c);
    return s == LSGG_OK ? 0 : report_failure(s);
  }
  if (split->parsed()) {
    lsgg_config* c = make_config(split_cfg, &s);
    if (!c) return static_cast<int>(s);
    s = lsgg_split(c, split_out.c_str());
    lsgg_config_destroy(c);
    return s == LSGG_OK ? 0 : report_failure(s);
  }
  if (train->parsed()) {
    lsgg_config* c = make_config(train_cfg, &s);
    if (!c) return static_cast<int>(s);
    lsgg_results* r = nullptr;
    s = lsgg_run_experiment(c, &r);
    lsgg_config_destroy(c);
    if (s != LSGG_OK) return report_failure(s);
    s = lsgg_results_write(r, train_out.c_str());
    if (s == LSGG_OK) {
      for (const char* m : {"R@50", "mR@50", "M@50", "R@100", "mR@100", "M@100", "FM@50", "FM@100", "score_wtd"}) {
        print_metric(r, m);
      }
    }
    lsgg_results_destroy(r);
    return s == LSGG_OK ? 0 : report_failure(s);
  }
  if (eval->parsed()) {
    lsgg_dump_metrics m{};
    s = lsgg_eval_dump(eval_pred.c_str(), eval_gt.c_str(), eval_k, &m);
    if (s != LSGG_OK) return report_failure(s);
    std::printf("R@%zu %.4f\nmR@%zu %.4f\nM@%zu %.4f\nwmAP_rel %.4f\nwmAP_phr %.4f\nscore_wtd %.4f\n", eval_k, m.recall,
                eval_k, m.mean_recall, eval_k, m.m, m.wmap_rel, m.wmap_phr, m.score_wtd);
    return 0;
  }
  if (ablate->parsed()) {
    lsgg_config* c = make_config(ablate_cfg, &s);
    if (!c) return static_cast<int>(s);
    s = lsgg_ablation_run(c, ablate_presets.empty() ? nullptr : ablate_presets.c_str(),
                          ablate_seeds.empty() ? nullptr : ablate_seeds.c_str(),
                          ablate_out.empty() ? nullptr : ablate_out.c_str(), ablate_table.c_str());
    lsgg_config_destroy(c);
    return s == LSGG_OK ? 0 : report_failure(s);
  }
  if (report->parsed()) {
    std::vector<const char*> dirs;
    for (const auto& d : report_dirs) dirs.push_back(d.c_str());
    if (!report_out.empty()) {
      s = lsgg_report(dirs.data(), dirs.size(), report_format.c_str(), report_out.c_str(), nullptr, 0, nullptr);
      return s == LSGG_OK ? 0 : report_failure(s);
    }
    std::size_t needed = 0;
    s = lsgg_report(dirs.data(), dirs.size(), report_format.c_str(), nullptr, nullptr, 0, &needed);
    if (s != LSGG_OK) return report_failure(s);
    std::string buf(needed, '\0');
    s = lsgg_report(dirs.data(), dirs.size(), report_format.c_str(), nullptr, buf.data(), buf.size(), &needed);
    if (s != LSGG_OK) return report_failure(s);
    std::fputs(buf.c_str(), stdout);
    return 0;
  }
  return 0;
}
