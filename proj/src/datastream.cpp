// Copyright (C) 2026 The lsgg Authors
// SPDX-License-Identifier: Apache-2.0

#include "lsgg/datastream.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>

#include "lsgg/error.hpp"
#include "lsgg/text_io.hpp"

namespace lsgg {

double iou(const Box& a, const Box& b) {
  const double ix1 = std::max(a.x1, b.x1);
  const double iy1 = std::max(a.y1, b.y1);
  const double ix2 = std::min(a.x2, b.x2);
  const double iy2 = std::min(a.y2, b.y2);
  const double inter = std::max(0.0, ix2 - ix1) * std::max(0.0, iy2 - iy1);
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

Box union_box(const Box& a, const Box& b) {
  return {std::min(a.x1, b.x1), std::min(a.y1, b.y1), std::max(a.x2, b.x2), std::max(a.y2, b.y2)};
}

bool same_values(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) return false;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (a(i) != b(i)) return false;
  }
  return true;
}

bool operator==(const RelationInstance& a, const RelationInstance& b) {
  return a.image_id == b.image_id && same_values(a.f_c, b.f_c) && same_values(a.f_r, b.f_r) &&
         same_values(a.f_s, b.f_s) && same_values(a.f_o, b.f_o) && a.subject_class == b.subject_class &&
         a.object_class == b.object_class && a.predicate == b.predicate && a.boxes == b.boxes &&
         a.confidence == b.confidence;
}

// ---------------------------------------------------------------------------
// Schedules

std::size_t TaskSchedule::stage_of(Label label) const {
  for (std::size_t s = 0; s < stages.size(); ++s) {
    if (std::binary_search(stages[s].begin(), stages[s].end(), label)) return s;
  }
  fail(ErrorCode::kInvalidArgument, "predicate " + std::to_string(label) + " is not in the schedule");
}

std::vector<Label> TaskSchedule::labels_through(std::size_t stage) const {
  require(stage < stages.size(), "labels_through: stage out of range");
  std::vector<Label> out;
  for (std::size_t s = 0; s <= stage; ++s) out.insert(out.end(), stages[s].begin(), stages[s].end());
  std::sort(out.begin(), out.end());
  return out;
}

void TaskSchedule::validate(std::span<const Label> vocab) const {
  require(!stages.empty(), "schedule has no stages");
  std::set<Label> seen;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    require(!stages[s].empty(), "schedule stage " + std::to_string(s + 1) + " is empty");
    require(std::is_sorted(stages[s].begin(), stages[s].end()), "schedule stage labels must be sorted");
    for (Label l : stages[s]) {
      require(seen.insert(l).second, "schedule stages overlap on predicate " + std::to_string(l));
    }
  }
  if (!vocab.empty()) {
    const std::set<Label> expected(vocab.begin(), vocab.end());
    require(seen == expected, "schedule does not cover the predicate vocabulary exactly");
  }
}

namespace {

TaskSchedule chunk(const std::vector<Label>& ordered, std::size_t num_tasks) {
  TaskSchedule schedule;
  const std::size_t n = ordered.size();
  const std::size_t base = n / num_tasks;
  const std::size_t extra = n % num_tasks;
  std::size_t pos = 0;
  for (std::size_t t = 0; t < num_tasks; ++t) {
    const std::size_t size = base + (t < extra ? 1 : 0);
    std::vector<Label> stage(ordered.begin() + static_cast<std::ptrdiff_t>(pos),
                             ordered.begin() + static_cast<std::ptrdiff_t>(pos + size));
    std::sort(stage.begin(), stage.end());
    schedule.stages.push_back(std::move(stage));
    pos += size;
  }
  return schedule;
}

std::vector<Label> sorted_unique(std::span<const Label> vocab) {
  std::vector<Label> v(vocab.begin(), vocab.end());
  std::sort(v.begin(), v.end());
  require(std::adjacent_find(v.begin(), v.end()) == v.end(), "predicate vocabulary has duplicates");
  return v;
}

}  // namespace

TaskSchedule split_random(std::span<const Label> vocab, std::size_t num_tasks, SeededRng& rng) {
  require(num_tasks >= 1, "split_random: need at least one task");
  require(vocab.size() >= num_tasks, "split_random: " + std::to_string(num_tasks) + " tasks but only " +
                                         std::to_string(vocab.size()) + " predicates");
  auto labels = sorted_unique(vocab);
  rng.shuffle(labels);
  return chunk(labels, num_tasks);
}

TaskSchedule split_by_frequency(std::span<const Label> vocab, const std::map<Label, std::size_t>& counts,
                                std::size_t num_tasks) {
  require(num_tasks >= 1, "split_by_frequency: need at least one task");
  require(vocab.size() >= num_tasks, "split_by_frequency: fewer predicates than tasks");
  auto labels = sorted_unique(vocab);
  for (Label l : labels) {
    require(counts.contains(l), "split_by_frequency: missing count for predicate " + std::to_string(l));
  }
  std::stable_sort(labels.begin(), labels.end(),
                   [&](Label a, Label b) { return counts.at(a) > counts.at(b); });
  return chunk(labels, num_tasks);
}

std::map<Label, std::size_t> label_counts(std::span<const RelationInstance> instances) {
  std::map<Label, std::size_t> counts;
  for (const auto& r : instances) ++counts[r.predicate];
  return counts;
}

std::vector<Label> predicate_vocab(const FeatureDims& dims) {
  std::vector<Label> v(static_cast<std::size_t>(dims.n_pred));
  std::iota(v.begin(), v.end(), Label{0});
  return v;
}

std::vector<StageDataset> make_stage_datasets(std::span<const RelationInstance> dataset,
                                              const TaskSchedule& schedule, const SplitFractions& fractions) {
  require(fractions.train > 0 && fractions.val > 0 && fractions.test > 0,
          "split fractions must be positive");
  require(std::abs(fractions.train + fractions.val + fractions.test - 1.0) < 1e-9,
          "split fractions must sum to 1");
  schedule.validate({});

  // Ordinal of each instance within its image: a key that survives reordering of images.
  std::map<std::int64_t, std::uint64_t> next_ordinal;
  struct Keyed {
    std::uint64_t hash;
    std::int64_t image_id;
    std::uint64_t ordinal;
    std::size_t index;
  };
  std::vector<std::vector<Keyed>> per_stage(schedule.num_stages());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& r = dataset[i];
    const std::size_t stage = schedule.stage_of(r.predicate);
    const std::uint64_t ordinal = next_ordinal[r.image_id]++;
    const std::uint64_t h = splitmix64(splitmix64(static_cast<std::uint64_t>(r.image_id)) ^ ordinal);
    per_stage[stage].push_back({h, r.image_id, ordinal, i});
  }

  std::vector<StageDataset> out(schedule.num_stages());
  for (std::size_t s = 0; s < schedule.num_stages(); ++s) {
    auto& keyed = per_stage[s];
    std::sort(keyed.begin(), keyed.end(), [](const Keyed& a, const Keyed& b) {
      if (a.hash != b.hash) return a.hash < b.hash;
      if (a.image_id != b.image_id) return a.image_id < b.image_id;
      return a.ordinal < b.ordinal;
    });
    const std::size_t n = keyed.size();
    std::size_t n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * fractions.train));
    std::size_t n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * fractions.val));
    n_train = std::min(n_train, n);
    n_val = std::min(n_val, n - n_train);

    auto& sd = out[s];
    sd.stage = s;
    sd.labels = schedule.stages[s];
    for (std::size_t k = 0; k < n; ++k) {
      const auto& inst = dataset[keyed[k].index];
      if (k < n_train) {
        sd.train.push_back(inst);
      } else if (k < n_train + n_val) {
        sd.val.push_back(inst);
      } else {
        sd.test.push_back(inst);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic benchmark

void SynthConfig::validate() const {
  require(n_pred >= 1, "synth: n_pred must be >= 1");
  require(n_groups >= 1, "synth: n_groups must be >= 1");
  require(n_obj >= 1, "synth: n_obj must be >= 1");
  require(d_c >= 2 && d_r >= 2 && d_o >= 2, "synth: feature dimensions must be >= 2");
  require(sigma >= 0.0 && std::isfinite(sigma), "synth: sigma must be >= 0");
  require(zipf_s >= 0.0 && std::isfinite(zipf_s), "synth: zipf_s must be >= 0");
  require(total_n >= 0, "synth: total_n must be >= 0");
  require(max_rels_per_image >= 1, "synth: max_rels_per_image must be >= 1");
}

std::vector<std::int64_t> zipf_counts(int n, double s, std::int64_t total) {
  require(n >= 1, "zipf_counts: n must be >= 1");
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int c = 0; c < n; ++c) w[static_cast<std::size_t>(c)] = std::pow(static_cast<double>(c + 1), -s);
  const double sum = std::accumulate(w.begin(), w.end(), 0.0);
  std::vector<std::int64_t> counts(w.size());
  std::vector<double> remainder(w.size());
  std::int64_t assigned = 0;
  for (std::size_t c = 0; c < w.size(); ++c) {
    const double exact = static_cast<double>(total) * w[c] / sum;
    counts[c] = static_cast<std::int64_t>(std::floor(exact));
    remainder[c] = exact - static_cast<double>(counts[c]);
    assigned += counts[c];
  }
  std::vector<std::size_t> order(w.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t k = 0; assigned < total; ++k, ++assigned) ++counts[order[k % order.size()]];
  return counts;
}

namespace {

Vec noisy(const Vec& mean, double sigma, SeededRng& rng) {
  Vec v = mean;
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) += sigma * rng.gaussian();
  return v;
}

Box random_box(SeededRng& rng) {
  constexpr double kWidth = 640.0;
  constexpr double kHeight = 480.0;
  const double w = 24.0 + rng.uniform() * 200.0;
  const double h = 24.0 + rng.uniform() * 160.0;
  const double x1 = rng.uniform() * (kWidth - w);
  const double y1 = rng.uniform() * (kHeight - h);
  return {x1, y1, x1 + w, y1 + h};
}

}  // namespace

SynthResult synth_generate(const SynthConfig& cfg, SeededRng& rng) {
  cfg.validate();
  SynthResult out;
  out.dataset.dims = {cfg.d_c, cfg.d_r, cfg.d_o, cfg.n_obj, cfg.n_pred};

  // Balanced random assignment of predicates to knowledge groups.
  std::vector<int> classes(static_cast<std::size_t>(cfg.n_pred));
  std::iota(classes.begin(), classes.end(), 0);
  rng.shuffle(classes);
  out.group_of_predicate.assign(classes.size(), 0);
  for (std::size_t i = 0; i < classes.size(); ++i) {
    out.group_of_predicate[static_cast<std::size_t>(classes[i])] = static_cast<int>(i % cfg.n_groups);
  }

  for (int g = 0; g < cfg.n_groups; ++g) out.context_means.push_back(random_unit_vector(cfg.d_c, rng));
  for (int c = 0; c < cfg.n_pred; ++c) out.relation_means.push_back(random_unit_vector(cfg.d_r, rng));
  std::vector<Vec> object_means;
  for (int o = 0; o < cfg.n_obj; ++o) object_means.push_back(random_unit_vector(cfg.d_o, rng));
  std::vector<std::pair<Label, Label>> preferred_pair;
  for (int c = 0; c < cfg.n_pred; ++c) {
    preferred_pair.emplace_back(static_cast<Label>(rng.uniform_index(static_cast<std::uint64_t>(cfg.n_obj))),
                                static_cast<Label>(rng.uniform_index(static_cast<std::uint64_t>(cfg.n_obj))));
  }

  const auto counts = zipf_counts(cfg.n_pred, cfg.zipf_s, cfg.total_n);

  // Images hold relations of one knowledge group and share its context feature.
  struct Image {
    int group;
    std::vector<Label> predicates;
  };
  std::vector<Image> images;
  for (int g = 0; g < cfg.n_groups; ++g) {
    std::vector<Label> pool;
    for (int c = 0; c < cfg.n_pred; ++c) {
      if (out.group_of_predicate[static_cast<std::size_t>(c)] != g) continue;
      pool.insert(pool.end(), static_cast<std::size_t>(counts[static_cast<std::size_t>(c)]), c);
    }
    rng.shuffle(pool);
    std::size_t pos = 0;
    while (pos < pool.size()) {
      const auto size = 1 + rng.uniform_index(static_cast<std::uint64_t>(cfg.max_rels_per_image));
      const std::size_t end = std::min(pool.size(), pos + static_cast<std::size_t>(size));
      images.push_back({g, std::vector<Label>(pool.begin() + static_cast<std::ptrdiff_t>(pos),
                                              pool.begin() + static_cast<std::ptrdiff_t>(end))});
      pos = end;
    }
  }
  rng.shuffle(images);

  constexpr double kPreferredPairProb = 0.6;
  auto& instances = out.dataset.instances;
  instances.reserve(static_cast<std::size_t>(cfg.total_n));
  for (std::size_t id = 0; id < images.size(); ++id) {
    const auto& img = images[id];
    const Vec f_c = noisy(out.context_means[static_cast<std::size_t>(img.group)], cfg.sigma, rng);
    for (Label pred : img.predicates) {
      RelationInstance r;
      r.image_id = static_cast<std::int64_t>(id);
      r.predicate = pred;
      r.f_c = f_c;
      r.f_r = noisy(out.relation_means[static_cast<std::size_t>(pred)], cfg.sigma, rng);
      if (rng.uniform() < kPreferredPairProb) {
        r.subject_class = preferred_pair[static_cast<std::size_t>(pred)].first;
        r.object_class = preferred_pair[static_cast<std::size_t>(pred)].second;
      } else {
        r.subject_class = static_cast<Label>(rng.uniform_index(static_cast<std::uint64_t>(cfg.n_obj)));
        r.object_class = static_cast<Label>(rng.uniform_index(static_cast<std::uint64_t>(cfg.n_obj)));
      }
      r.f_s = noisy(object_means[static_cast<std::size_t>(r.subject_class)], cfg.sigma, rng);
      r.f_o = noisy(object_means[static_cast<std::size_t>(r.object_class)], cfg.sigma, rng);
      if (cfg.with_boxes) r.boxes = std::array<Box, 2>{random_box(rng), random_box(rng)};
      instances.push_back(std::move(r));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// LSGG-EMB v1

namespace {

constexpr std::string_view kEmbMagic = "LSGG-EMB";

void append_vec(std::string& out, const Vec& v) {
  out += ' ';
  text::append_values(out, as_span(v), /*hex=*/false);
}

}  // namespace

void save_embeddings(const Dataset& dataset, const std::filesystem::path& path) {
  const auto& d = dataset.dims;
  std::string out = std::string(kEmbMagic) + " 1 " + std::to_string(d.d_c) + ' ' + std::to_string(d.d_r) + ' ' +
                    std::to_string(d.d_o) + ' ' + std::to_string(d.n_obj) + ' ' + std::to_string(d.n_pred) + '\n';
  for (const auto& r : dataset.instances) {
    require(r.f_c.size() == d.d_c && r.f_r.size() == d.d_r && r.f_s.size() == d.d_o && r.f_o.size() == d.d_o,
            "save_embeddings: feature dimension does not match the dataset header");
    out += std::to_string(r.image_id) + ' ' + std::to_string(r.subject_class) + ' ' +
           std::to_string(r.object_class) + ' ' + std::to_string(r.predicate) + ' ' + (r.boxes ? "1" : "0");
    if (r.boxes) {
      for (const auto& b : *r.boxes) {
        for (double v : {b.x1, b.y1, b.x2, b.y2}) out += ' ' + text::format_exact(v);
      }
    }
    out += ' ';
    out += r.confidence ? text::format_exact(*r.confidence) : "-";
    append_vec(out, r.f_c);
    append_vec(out, r.f_r);
    append_vec(out, r.f_s);
    append_vec(out, r.f_o);
    out += '\n';
  }
  text::write_file(path, out);
}

Dataset load_embeddings(const std::filesystem::path& path) {
  auto in = text::open_in(path);
  Dataset ds;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  const std::string name = path.string();
  while (std::getline(in, line)) {
    ++line_no;
    const std::string ctx = name + ":" + std::to_string(line_no);
    const auto toks = text::split_ws(line);
    if (toks.empty() || toks[0].starts_with('#')) continue;
    if (!have_header) {
      if (toks.size() != 7 || toks[0] != kEmbMagic) fail(ErrorCode::kParse, ctx + ": malformed LSGG-EMB header");
      if (toks[1] != "1") fail(ErrorCode::kVersion, ctx + ": unsupported LSGG-EMB version " + std::string(toks[1]));
      auto dim = [&](std::size_t i) {
        const auto v = text::parse_int(toks[i], ctx);
        if (v < 1) fail(ErrorCode::kParse, ctx + ": header dimensions must be positive");
        return static_cast<int>(v);
      };
      ds.dims = {dim(2), dim(3), dim(4), dim(5), dim(6)};
      have_header = true;
      continue;
    }
    const auto& d = ds.dims;
    if (toks.size() < 5) fail(ErrorCode::kParse, ctx + ": truncated record");
    RelationInstance r;
    r.image_id = text::parse_int(toks[0], ctx);
    r.subject_class = static_cast<Label>(text::parse_int(toks[1], ctx));
    r.object_class = static_cast<Label>(text::parse_int(toks[2], ctx));
    r.predicate = static_cast<Label>(text::parse_int(toks[3], ctx));
    const auto has_boxes = text::parse_int(toks[4], ctx);
    if (has_boxes != 0 && has_boxes != 1) fail(ErrorCode::kParse, ctx + ": has_boxes must be 0 or 1");
    const std::size_t n_feat = static_cast<std::size_t>(d.d_c + d.d_r + 2 * d.d_o);
    const std::size_t expected = 5 + (has_boxes ? 8 : 0) + 1 + n_feat;
    if (toks.size() != expected) {
      fail(ErrorCode::kParse, ctx + ": expected " + std::to_string(expected) + " fields, found " +
                                  std::to_string(toks.size()) + " (dimension mismatch)");
    }
    if (r.predicate < 0 || r.predicate >= d.n_pred) fail(ErrorCode::kParse, ctx + ": predicate out of range");
    if (r.subject_class < 0 || r.subject_class >= d.n_obj || r.object_class < 0 || r.object_class >= d.n_obj) {
      fail(ErrorCode::kParse, ctx + ": object class out of range");
    }
    std::size_t pos = 5;
    if (has_boxes) {
      std::array<Box, 2> boxes;
      for (auto& b : boxes) {
        b.x1 = text::parse_double(toks[pos++], ctx);
        b.y1 = text::parse_double(toks[pos++], ctx);
        b.x2 = text::parse_double(toks[pos++], ctx);
        b.y2 = text::parse_double(toks[pos++], ctx);
        if (!b.valid()) fail(ErrorCode::kParse, ctx + ": box must satisfy x1<x2 and y1<y2");
      }
      r.boxes = boxes;
    }
    if (toks[pos] != "-") {
      const double conf = text::parse_double(toks[pos], ctx);
      if (conf < 0.0 || conf > 1.0) fail(ErrorCode::kParse, ctx + ": confidence outside [0,1]");
      r.confidence = conf;
    }
    ++pos;
    auto read_vec = [&](int dim) {
      Vec v(dim);
      for (int i = 0; i < dim; ++i) v(i) = text::parse_double(toks[pos++], ctx);
      return v;
    };
    r.f_c = read_vec(d.d_c);
    r.f_r = read_vec(d.d_r);
    r.f_s = read_vec(d.d_o);
    r.f_o = read_vec(d.d_o);
    ds.instances.push_back(std::move(r));
  }
  if (!have_header) fail(ErrorCode::kParse, name + ": missing LSGG-EMB header");
  return ds;
}

void save_schedule(const TaskSchedule& schedule, const std::filesystem::path& path) {
  std::string out = "LSGG-SCHEDULE 1 " + std::to_string(schedule.num_stages()) + '\n';
  for (const auto& stage : schedule.stages) {
    for (std::size_t i = 0; i < stage.size(); ++i) {
      if (i) out += ' ';
      out += std::to_string(stage[i]);
    }
    out += '\n';
  }
  text::write_file(path, out);
}

TaskSchedule load_schedule(const std::filesystem::path& path) {
  auto in = text::open_in(path);
  std::string line;
  std::size_t line_no = 0;
  TaskSchedule schedule;
  std::size_t expected = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string ctx = path.string() + ":" + std::to_string(line_no);
    const auto toks = text::split_ws(line);
    if (toks.empty() || toks[0].starts_with('#')) continue;
    if (!have_header) {
      if (toks.size() != 3 || toks[0] != "LSGG-SCHEDULE") fail(ErrorCode::kParse, ctx + ": malformed header");
      if (toks[1] != "1") fail(ErrorCode::kVersion, ctx + ": unsupported schedule version");
      expected = text::parse_uint(toks[2], ctx);
      have_header = true;
      continue;
    }
    std::vector<Label> stage;
    for (auto t : toks) stage.push_back(static_cast<Label>(text::parse_int(t, ctx)));
    std::sort(stage.begin(), stage.end());
    schedule.stages.push_back(std::move(stage));
  }
  if (!have_header) fail(ErrorCode::kParse, path.string() + ": missing schedule header");
  if (schedule.stages.size() != expected) fail(ErrorCode::kParse, path.string() + ": truncated schedule");
  schedule.validate({});
  return schedule;
}

}  // namespace lsgg
