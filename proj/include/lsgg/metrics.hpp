// Copyright (C) 2026 The lsgg Authors
// SPDX-License-Identifier: Apache-2.0

// Scene-graph evaluation: R@K, mR@K, M@K, forgetting, weighted mAP and the
// weighted summary score, plus the prediction / ground-truth dump formats.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "lsgg/datastream.hpp"

namespace lsgg {

struct TripletPrediction {
  Label subject = 0;
  Label predicate = 0;
  Label object = 0;
  double confidence = 0.0;
  std::optional<std::array<Box, 2>> boxes;  // subject, object
  // Instance id of the pair this prediction is about (predicate-classification
  // dumps); enables exact id matching instead of box overlap.
  std::optional<std::int64_t> gt_id;
};

// Predictions of one image, best first (confidence non-increasing).
struct PredictionRecord {
  std::int64_t image_id = 0;
  std::vector<TripletPrediction> predictions;
};

struct GroundTruth {
  std::int64_t image_id = 0;
  std::int64_t gt_id = 0;
  Label subject = 0;
  Label predicate = 0;
  Label object = 0;
  std::optional<std::array<Box, 2>> boxes;
};

enum class MapMode { kRelation, kPhrase };

// Prediction/GT correspondence: classes must agree; then id equality when the
// prediction carries an id, else box overlap (IoU >= 0.5) per `mode`.
bool triplet_matches(const TripletPrediction& p, const GroundTruth& g, MapMode mode = MapMode::kRelation);

// Greedy by rank within each image: a prediction claims the first unclaimed
// matching GT (GT file order). Entry i is the GT index (into `gt`) claimed by
// prediction i of the image, considering only the top `k` predictions.
std::vector<std::optional<std::size_t>> match_image(std::span<const TripletPrediction> predictions,
                                                    std::span<const GroundTruth> gt, std::size_t k);

double recall_at_k(std::span<const PredictionRecord> records, std::span<const GroundTruth> gt, std::size_t k);
// Recall per predicate class, pooling each class's GT over all images (percent).
std::map<Label, double> per_class_recall_at_k(std::span<const PredictionRecord> records,
                                              std::span<const GroundTruth> gt, std::size_t k);
double mean_recall_at_k(std::span<const PredictionRecord> records, std::span<const GroundTruth> gt, std::size_t k);
double m_at_k(double r, double mr);

// a[l][j]: metric of task j after stage l, j <= l (row l holds l+1 values).
struct AccuracyMatrix {
  std::vector<std::vector<double>> a;

  std::size_t stages() const { return a.size(); }
  void validate() const;
};

// (1/(T-1)) sum_{j<T} [ max_{j<=l<T} a[l][j] - a[T][j] ] with 1-based T.
double forgetting_measure(const AccuracyMatrix& acc);

// GT-count-weighted mean over predicate classes of the all-point average
// precision under the monotone precision envelope (percent).
double weighted_map(std::span<const PredictionRecord> records, std::span<const GroundTruth> gt, MapMode mode);

double score_wtd(double r50, double wmap_rel, double wmap_phr);

// "<image_id> <rank> <subj> <pred> <obj> <conf> [8 box coords] [<gt_id>|-]"
void write_predictions(std::span<const PredictionRecord> records, const std::filesystem::path& path);
std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path);
// "<image_id> <gt_id> <subj> <pred> <obj> [8 box coords]"
void write_ground_truth(std::span<const GroundTruth> gt, const std::filesystem::path& path);
std::vector<GroundTruth> read_ground_truth(const std::filesystem::path& path);

}  // namespace lsgg
