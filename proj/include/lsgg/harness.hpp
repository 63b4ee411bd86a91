// Copyright (C) 2026 The lsgg Authors
// SPDX-License-Identifier: Apache-2.0

// Experiment orchestration: flat key=value configuration, the staged
// train/evaluate protocol, ablation presets, results directories and reports.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lsgg/datastream.hpp"
#include "lsgg/metrics.hpp"
#include "lsgg/scorer.hpp"
#include "lsgg/trainer.hpp"

namespace lsgg {

inline constexpr const char* kVersion = "0.1.0";

// Every key has a default; unknown keys are rejected. Values stay strings
// until resolve() parses and cross-checks them.
class ExperimentConfig {
 public:
  ExperimentConfig();

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  bool has(const std::string& key) const { return values_.contains(key); }

  // "key = value" lines, '#' comments.
  void load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  // Known presets: full, w/o-kap, w/o-toe, w/o-aso, w/o-inc, w-1k, w-ft, w-sc,
  // w-lc, w-frq, and "smoke" (tiny sizes for quick checks).
  void apply_preset(const std::string& name);

  // Keys in registration order with current values.
  std::vector<std::pair<std::string, std::string>> echo() const;
  // Keys whose values differ from `other`.
  std::vector<std::string> diff(const ExperimentConfig& other) const;

  friend bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) { return a.values_ == b.values_; }

 private:
  std::vector<std::string> order_;
  std::map<std::string, std::string> values_;
};

// Fields each ablation preset is allowed to change.
std::vector<std::string> preset_fields(const std::string& name);
std::vector<std::string> ablation_presets();

struct ResolvedConfig {
  std::uint64_t seed = 1;
  std::vector<std::uint64_t> seeds;
  std::string embeddings;
  std::string schedule_file;
  std::string vocab_file;
  SynthConfig synth;
  std::uint64_t synth_seed = 7;
  std::string schedule_mode = "random";
  std::size_t tasks = 5;
  SplitFractions split;
  PoolShape pool;
  MapperConfig mapper;
  TrainConfig train;
  RoutingFlags routing;
  std::vector<std::size_t> ks;
};

ResolvedConfig resolve(const ExperimentConfig& config);

// Data side of an experiment: dataset, vocabulary and stage schedule.
struct ExperimentData {
  Dataset dataset;
  PredicateVocab vocab;
  TaskSchedule schedule;
};

ExperimentData prepare_data(const ResolvedConfig& rc);

struct StageMetrics {
  std::size_t stage = 0;
  std::map<std::size_t, double> recall;       // by K
  std::map<std::size_t, double> mean_recall;  // by K
  std::map<std::size_t, double> m;            // by K
  double wmap_rel = 0.0;
  double wmap_phr = 0.0;
  double score = 0.0;
};

struct ResultsBundle {
  std::vector<std::pair<std::string, std::string>> config;
  std::uint64_t seed = 0;
  std::vector<StageMetrics> stages;
  std::map<std::size_t, AccuracyMatrix> accuracy;  // by K, per-task mR@K
  std::map<std::size_t, double> forgetting;        // by K; empty when T = 1
  std::vector<StageSummary> training;
  std::vector<double> stage_seconds;
  std::vector<std::string> invariants;
  std::vector<PredictionRecord> predictions;  // after the last stage
  std::vector<GroundTruth> ground_truth;
  std::optional<ModelState> model;
};

// Runs all stages. Every stage failure is rethrown with the stage index.
ResultsBundle run_experiment(const ExperimentConfig& config);

// Writes metrics.csv, accuracy_k<K>.csv, summary.csv, manifest.json,
// predictions.txt, gt.txt, checkpoint.txt, pool.txt and timing.csv (the only
// file that is not reproducible).
void write_results(ResultsBundle& bundle, const std::filesystem::path& dir);
// Reads back what report() needs: config, seed, stage metrics, accuracy, FM.
ResultsBundle read_results(const std::filesystem::path& dir);

// Final-stage headline values of a bundle, keyed "R@50", "mR@50", "M@50",
// "FM@50", "wmAP_rel", "wmAP_phr", "score_wtd" and so on.
std::map<std::string, double> headline(const ResultsBundle& bundle);

struct ReportTable {
  std::string title;
  std::vector<std::string> columns;  // first column is the row label
  std::vector<std::vector<std::string>> rows;

  friend bool operator==(const ReportTable&, const ReportTable&) = default;
};

struct Report {
  std::vector<ReportTable> tables;

  friend bool operator==(const Report&, const Report&) = default;
};

// Per-stage, final and forgetting tables; mean and std over bundles (std
// omitted for a single bundle). Bundles must share every config key but the seed.
Report make_report(const std::vector<ResultsBundle>& bundles);
std::string report_csv(const Report& report);
Report parse_report_csv(const std::string& csv);
std::string report_text(const Report& report);

struct AblationRow {
  std::string preset;
  std::vector<std::string> changed;
  std::map<std::string, std::pair<double, double>> values;  // metric -> mean, std
};

// Runs every preset over `seeds`; optionally writes each run under out/<preset>/seed<N>.
std::vector<AblationRow> run_ablation_suite(const ExperimentConfig& base, const std::vector<std::string>& presets,
                                            const std::vector<std::uint64_t>& seeds,
                                            const std::optional<std::filesystem::path>& out);
ReportTable ablation_table(const std::vector<AblationRow>& rows);

}  // namespace lsgg
