// Copyright (C) 2026 The lsgg Authors
// SPDX-License-Identifier: Apache-2.0

// Task streams: relation instances, the stage schedule over predicate labels,
// per-stage train/val/test datasets, the synthetic benchmark generator and the
// LSGG-EMB embedding file format.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "lsgg/numerics.hpp"

namespace lsgg {

using Label = std::int32_t;

struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  bool valid() const { return x1 < x2 && y1 < y2; }
  double area() const { return (x2 - x1) * (y2 - y1); }
  friend bool operator==(const Box&, const Box&) = default;
};

double iou(const Box& a, const Box& b);
Box union_box(const Box& a, const Box& b);

// One annotated subject-object pair with its four feature vectors.
struct RelationInstance {
  std::int64_t image_id = 0;
  Vec f_c;  // global image context
  Vec f_r;  // union region of the pair
  Vec f_s;
  Vec f_o;
  Label subject_class = 0;
  Label object_class = 0;
  Label predicate = 0;
  std::optional<std::array<Box, 2>> boxes;  // subject, object
  std::optional<double> confidence;

  friend bool operator==(const RelationInstance& a, const RelationInstance& b);
};

// Exact equality of same-sized vectors; false on size mismatch.
bool same_values(const Vec& a, const Vec& b);

struct FeatureDims {
  int d_c = 64;
  int d_r = 64;
  int d_o = 32;
  int n_obj = 20;
  int n_pred = 50;

  friend bool operator==(const FeatureDims&, const FeatureDims&) = default;
};

struct Dataset {
  FeatureDims dims;
  std::vector<RelationInstance> instances;
};

// Ordered partition of the predicate vocabulary into disjoint, non-empty stages.
struct TaskSchedule {
  std::vector<std::vector<Label>> stages;  // each sorted ascending

  std::size_t num_stages() const { return stages.size(); }
  // Stage index owning `label`; throws kInvalidArgument if none does.
  std::size_t stage_of(Label label) const;
  // Labels of stages 0..stage inclusive, ascending.
  std::vector<Label> labels_through(std::size_t stage) const;
  // Checks disjointness, non-emptiness and (when given) coverage of `vocab`.
  void validate(std::span<const Label> vocab) const;
};

struct SplitFractions {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

struct StageDataset {
  std::size_t stage = 0;
  std::vector<Label> labels;
  std::vector<RelationInstance> train;
  std::vector<RelationInstance> val;
  std::vector<RelationInstance> test;
};

TaskSchedule split_random(std::span<const Label> vocab, std::size_t num_tasks, SeededRng& rng);
TaskSchedule split_by_frequency(std::span<const Label> vocab, const std::map<Label, std::size_t>& counts,
                                std::size_t num_tasks);

std::vector<StageDataset> make_stage_datasets(std::span<const RelationInstance> dataset,
                                              const TaskSchedule& schedule, const SplitFractions& fractions);

std::map<Label, std::size_t> label_counts(std::span<const RelationInstance> instances);
std::vector<Label> predicate_vocab(const FeatureDims& dims);

struct SynthConfig {
  int n_pred = 50;
  int n_groups = 5;
  int n_obj = 20;
  int d_c = 64;
  int d_r = 64;
  int d_o = 32;
  double sigma = 0.35;
  double zipf_s = 0.8;
  std::int64_t total_n = 10000;
  int max_rels_per_image = 4;
  bool with_boxes = true;

  void validate() const;
};

struct SynthResult {
  Dataset dataset;
  std::vector<int> group_of_predicate;  // knowledge group per predicate label
  std::vector<Vec> relation_means;      // per predicate, unit norm
  std::vector<Vec> context_means;       // per knowledge group, unit norm
};

// Per-class instance counts: Zipf weights (rank+1)^-s scaled to `total`,
// rounded by largest remainder (ties to the lower rank).
std::vector<std::int64_t> zipf_counts(int n, double s, std::int64_t total);

SynthResult synth_generate(const SynthConfig& config, SeededRng& rng);

Dataset load_embeddings(const std::filesystem::path& path);
void save_embeddings(const Dataset& dataset, const std::filesystem::path& path);

// "LSGG-SCHEDULE 1 <T>" followed by one line of labels per stage.
void save_schedule(const TaskSchedule& schedule, const std::filesystem::path& path);
TaskSchedule load_schedule(const std::filesystem::path& path);

}  // namespace lsgg
