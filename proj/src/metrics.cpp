// Copyright (C) 2026 The lsgg Authors
// SPDX-License-Identifier: Apache-2.0

#include "lsgg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <tuple>

#include "lsgg/error.hpp"
#include "lsgg/text_io.hpp"

namespace lsgg {

namespace {

constexpr double kIouThreshold = 0.5;

void require_percent(double v, const char* what) {
  if (!(v >= 0.0 && v <= 100.0)) fail(ErrorCode::kInvalidArgument, std::string(what) + " must lie in [0, 100]");
}

using GtIndex = std::map<std::int64_t, std::vector<std::size_t>>;

GtIndex index_gt(std::span<const GroundTruth> gt) {
  GtIndex by_image;
  for (std::size_t i = 0; i < gt.size(); ++i) by_image[gt[i].image_id].push_back(i);
  return by_image;
}

void check_ranked(const PredictionRecord& r) {
  for (std::size_t i = 1; i < r.predictions.size(); ++i) {
    if (r.predictions[i].confidence > r.predictions[i - 1].confidence) {
      fail(ErrorCode::kInvalidArgument,
           "image " + std::to_string(r.image_id) + ": predictions are not ranked by descending confidence");
    }
  }
}

// Per record (sorted by image id): claimed GT indices within the top k.
struct Claims {
  std::vector<char> claimed;  // per GT
};

Claims claim_all(std::span<const PredictionRecord> records, std::span<const GroundTruth> gt, std::size_t k) {
  require(k >= 1, "K must be >= 1");
  const auto by_image = index_gt(gt);
  Claims c;
  c.claimed.assign(gt.size(), 0);
  std::set<std::int64_t> seen;
  for (const auto& r : records) {
    if (!seen.insert(r.image_id).second) {
      fail(ErrorCode::kInvalidArgument, "image " + std::to_string(r.image_id) + " has more than one record");
    }
    check_ranked(r);
    const auto it = by_image.find(r.image_id);
    if (it == by_image.end()) {
      if (r.predictions.empty()) continue;
      fail(ErrorCode::kInvalidArgument, "image " + std::to_string(r.image_id) + " has predictions but no ground truth");
    }
    std::vector<GroundTruth> local;
    for (auto i : it->second) local.push_back(gt[i]);
    const auto m = match_image(r.predictions, local, k);
    for (const auto& g : m) {
      if (g) c.claimed[it->second[*g]] = 1;
    }
  }
  return c;
}

}  // namespace

bool triplet_matches(const TripletPrediction& p, const GroundTruth& g, MapMode mode) {
  if (p.subject != g.subject || p.predicate != g.predicate || p.object != g.object) return false;
  if (p.gt_id) return *p.gt_id == g.gt_id;
  if (!p.boxes || !g.boxes) fail(ErrorCode::kInvalidArgument, "box matching needs boxes on predictions and ground truth");
  const auto& pb = *p.boxes;
  const auto& gb = *g.boxes;
  if (mode == MapMode::kPhrase) return iou(union_box(pb[0], pb[1]), union_box(gb[0], gb[1])) >= kIouThreshold;
  return iou(pb[0], gb[0]) >= kIouThreshold && iou(pb[1], gb[1]) >= kIouThreshold;
}

std::vector<std::optional<std::size_t>> match_image(std::span<const TripletPrediction> predictions,
                                                    std::span<const GroundTruth> gt, std::size_t k) {
  std::vector<std::optional<std::size_t>> out(predictions.size());
  std::vector<char> taken(gt.size(), 0);
  const std::size_t n = std::min(k, predictions.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t g = 0; g < gt.size(); ++g) {
      if (!taken[g] && triplet_matches(predictions[i], gt[g])) {
        taken[g] = 1;
        out[i] = g;
        break;
      }
    }
  }
  return out;
}

double recall_at_k(std::span<const PredictionRecord> records, std::span<const GroundTruth> gt, std::size_t k) {
  const auto claims = claim_all(records, gt, k);
  const auto by_image = index_gt(gt);
  if (by_image.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& [image, idx] : by_image) {
    std::size_t hit = 0;
    for (auto i : idx) hit += claims.claimed[i] ? 1 : 0;
    sum += static_cast<double>(hit) / static_cast<double>(idx.size());
  }
  return 100.0 * sum / static_cast<double>(by_image.size());
}

std::map<Label, double> per_class_recall_at_k(std::span<const PredictionRecord> records,
                                              std::span<const GroundTruth> gt, std::size_t k) {
  const auto claims = claim_all(records, gt, k);
  std::map<Label, std::pair<std::size_t, std::size_t>> counts;  // hit, total
  for (std::size_t i = 0; i < gt.size(); ++i) {
    auto& c = counts[gt[i].predicate];
    c.first += claims.claimed[i] ? 1 : 0;
    ++c.second;
  }
  std::map<Label, double> out;
  for (const auto& [label, c] : counts) {
    out[label] = 100.0 * static_cast<double>(c.first) / static_cast<double>(c.second);
  }
  return out;
}

double mean_recall_at_k(std::span<const PredictionRecord> records, std::span<const GroundTruth> gt, std::size_t k) {
  const auto per_class = per_class_recall_at_k(records, gt, k);
  if (per_class.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& [label, r] : per_class) sum += r;
  return sum / static_cast<double>(per_class.size());
}

double m_at_k(double r, double mr) {
  require_percent(r, "R@K");
  require_percent(mr, "mR@K");
  return (r + mr) / 2.0;
}

void AccuracyMatrix::validate() const {
  for (std::size_t l = 0; l < a.size(); ++l) {
    if (a[l].size() != l + 1) {
      fail(ErrorCode::kInvalidArgument, "accuracy matrix row " + std::to_string(l) + " must hold " +
                                            std::to_string(l + 1) + " values (lower-triangular)");
    }
    for (double v : a[l]) require_percent(v, "accuracy");
  }
}

double forgetting_measure(const AccuracyMatrix& acc) {
  acc.validate();
  const std::size_t t = acc.stages();
  require(t >= 2, "forgetting measure needs at least two stages");
  double sum = 0.0;
  for (std::size_t j = 0; j + 1 < t; ++j) {
    double best = acc.a[j][j];
    for (std::size_t l = j + 1; l + 1 < t; ++l) best = std::max(best, acc.a[l][j]);
    sum += best - acc.a[t - 1][j];
  }
  return sum / static_cast<double>(t - 1);
}

double weighted_map(std::span<const PredictionRecord> records, std::span<const GroundTruth> gt, MapMode mode) {
  const auto by_image = index_gt(gt);
  std::map<Label, std::size_t> gt_count;
  for (const auto& g : gt) ++gt_count[g.predicate];
  if (gt_count.empty()) return 0.0;

  struct Flat {
    double confidence;
    std::int64_t image;
    std::size_t rank;
    const TripletPrediction* p;
  };
  std::map<Label, std::vector<Flat>> by_class;
  std::set<std::int64_t> seen;
  for (const auto& r : records) {
    if (!seen.insert(r.image_id).second) {
      fail(ErrorCode::kInvalidArgument, "image " + std::to_string(r.image_id) + " has more than one record");
    }
    check_ranked(r);
    if (!r.predictions.empty() && !by_image.contains(r.image_id)) {
      fail(ErrorCode::kInvalidArgument, "image " + std::to_string(r.image_id) + " has predictions but no ground truth");
    }
    for (std::size_t i = 0; i < r.predictions.size(); ++i) {
      by_class[r.predictions[i].predicate].push_back({r.predictions[i].confidence, r.image_id, i, &r.predictions[i]});
    }
  }

  std::size_t total_gt = 0;
  for (const auto& [c, n] : gt_count) total_gt += n;
  double weighted = 0.0;
  for (const auto& [label, n_gt] : gt_count) {
    auto& preds = by_class[label];
    std::sort(preds.begin(), preds.end(), [](const Flat& a, const Flat& b) {
      return std::tie(b.confidence, a.image, a.rank) < std::tie(a.confidence, b.image, b.rank);
    });
    std::vector<char> taken(gt.size(), 0);
    std::vector<double> precision, recall;
    std::size_t tp = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      bool hit = false;
      const auto it = by_image.find(preds[i].image);
      if (it != by_image.end()) {
        for (auto g : it->second) {
          if (!taken[g] && triplet_matches(*preds[i].p, gt[g], mode)) {
            taken[g] = 1;
            hit = true;
            break;
          }
        }
      }
      tp += hit ? 1 : 0;
      precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
      recall.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
    }
    // Precision envelope, then area over the recall steps.
    for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
    double ap = 0.0;
    double prev_recall = 0.0;
    for (std::size_t i = 0; i < precision.size(); ++i) {
      ap += (recall[i] - prev_recall) * precision[i];
      prev_recall = recall[i];
    }
    weighted += ap * static_cast<double>(n_gt);
  }
  return 100.0 * weighted / static_cast<double>(total_gt);
}

double score_wtd(double r50, double wmap_rel, double wmap_phr) {
  require_percent(r50, "R@50");
  require_percent(wmap_rel, "wmAP_rel");
  require_percent(wmap_phr, "wmAP_phr");
  return 0.2 * r50 + 0.4 * wmap_rel + 0.4 * wmap_phr;
}

// ---------------------------------------------------------------------------
// Dumps

namespace {

void append_boxes(std::string& out, const std::optional<std::array<Box, 2>>& boxes) {
  if (!boxes) return;
  for (const auto& b : *boxes) {
    for (double v : {b.x1, b.y1, b.x2, b.y2}) out += ' ' + text::format_exact(v);
  }
}

std::array<Box, 2> parse_boxes(std::span<const std::string_view> t, const std::string& ctx) {
  std::array<Box, 2> b;
  for (std::size_t i = 0; i < 2; ++i) {
    b[i] = {text::parse_double(t[4 * i], ctx), text::parse_double(t[4 * i + 1], ctx),
            text::parse_double(t[4 * i + 2], ctx), text::parse_double(t[4 * i + 3], ctx)};
    if (!b[i].valid()) fail(ErrorCode::kParse, ctx + ": degenerate box");
  }
  return b;
}

Label parse_label(std::string_view t, const std::string& ctx) {
  const auto v = text::parse_int(t, ctx);
  if (v < 0 || v > INT32_MAX) fail(ErrorCode::kParse, ctx + ": label out of range");
  return static_cast<Label>(v);
}

}  // namespace

void write_predictions(std::span<const PredictionRecord> records, const std::filesystem::path& path) {
  std::string out;
  for (const auto& r : records) {
    for (std::size_t i = 0; i < r.predictions.size(); ++i) {
      const auto& p = r.predictions[i];
      out += std::to_string(r.image_id) + ' ' + std::to_string(i + 1) + ' ' + std::to_string(p.subject) + ' ' +
             std::to_string(p.predicate) + ' ' + std::to_string(p.object) + ' ' + text::format_exact(p.confidence);
      append_boxes(out, p.boxes);
      out += p.gt_id ? ' ' + std::to_string(*p.gt_id) : std::string(" -");
      out += '\n';
    }
  }
  text::write_file(path, out);
}

std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path) {
  auto in = text::open_in(path);
  std::map<std::int64_t, std::vector<std::pair<std::uint64_t, TripletPrediction>>> by_image;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string ctx = path.string() + ":" + std::to_string(line_no);
    const auto t = text::split_ws(line);
    if (t.empty() || t[0].starts_with('#')) continue;
    if (t.size() != 6 && t.size() != 7 && t.size() != 14 && t.size() != 15) {
      fail(ErrorCode::kParse, ctx + ": expected 6, 7, 14 or 15 fields, got " + std::to_string(t.size()));
    }
    TripletPrediction p;
    const auto image = text::parse_int(t[0], ctx);
    const auto rank = text::parse_uint(t[1], ctx);
    p.subject = parse_label(t[2], ctx);
    p.predicate = parse_label(t[3], ctx);
    p.object = parse_label(t[4], ctx);
    p.confidence = text::parse_double(t[5], ctx);
    if (t.size() >= 14) p.boxes = parse_boxes(std::span(t).subspan(6, 8), ctx);
    if (t.size() == 7 || t.size() == 15) {
      if (t.back() != "-") p.gt_id = text::parse_int(t.back(), ctx);
    }
    by_image[image].emplace_back(rank, p);
  }
  std::vector<PredictionRecord> out;
  for (auto& [image, preds] : by_image) {
    std::stable_sort(preds.begin(), preds.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    PredictionRecord r;
    r.image_id = image;
    for (auto& [rank, p] : preds) r.predictions.push_back(p);
    out.push_back(std::move(r));
  }
  return out;
}

void write_ground_truth(std::span<const GroundTruth> gt, const std::filesystem::path& path) {
  std::string out;
  for (const auto& g : gt) {
    out += std::to_string(g.image_id) + ' ' + std::to_string(g.gt_id) + ' ' + std::to_string(g.subject) + ' ' +
           std::to_string(g.predicate) + ' ' + std::to_string(g.object);
    append_boxes(out, g.boxes);
    out += '\n';
  }
  text::write_file(path, out);
}

std::vector<GroundTruth> read_ground_truth(const std::filesystem::path& path) {
  auto in = text::open_in(path);
  std::vector<GroundTruth> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string ctx = path.string() + ":" + std::to_string(line_no);
    const auto t = text::split_ws(line);
    if (t.empty() || t[0].starts_with('#')) continue;
    if (t.size() != 5 && t.size() != 13) {
      fail(ErrorCode::kParse, ctx + ": expected 5 or 13 fields, got " + std::to_string(t.size()));
    }
    GroundTruth g;
    g.image_id = text::parse_int(t[0], ctx);
    g.gt_id = text::parse_int(t[1], ctx);
    g.subject = parse_label(t[2], ctx);
    g.predicate = parse_label(t[3], ctx);
    g.object = parse_label(t[4], ctx);
    if (t.size() == 13) g.boxes = parse_boxes(std::span(t).subspan(5, 8), ctx);
    out.push_back(g);
  }
  return out;
}

}  // namespace lsgg
