// Copyright (C) 2026 The lsgg Authors
// SPDX-License-Identifier: Apache-2.0

#include "lsgg/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include <json.hpp>

#include "lsgg/error.hpp"
#include "lsgg/text_io.hpp"

namespace lsgg {

using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Configuration

namespace {

const std::vector<std::pair<std::string, std::string>>& defaults() {
  static const std::vector<std::pair<std::string, std::string>> kDefaults = {
      {"seed", "1"},
      {"seeds", "1,2,3,4,5"},
      {"data.embeddings", ""},
      {"data.schedule", ""},
      {"data.vocab", ""},
      {"synth.seed", "7"},
      {"synth.n_pred", "50"},
      {"synth.n_groups", "5"},
      {"synth.n_obj", "20"},
      {"synth.d_c", "64"},
      {"synth.d_r", "64"},
      {"synth.d_o", "32"},
      {"synth.sigma", "0.35"},
      {"synth.zipf", "0.8"},
      {"synth.total", "10000"},
      {"synth.max_rels", "4"},
      {"synth.boxes", "true"},
      {"schedule.mode", "random"},
      {"schedule.tasks", "5"},
      {"split.train", "0.7"},
      {"split.val", "0.1"},
      {"split.test", "0.2"},
      {"pool.n_t", "100"},
      {"pool.n_e", "20"},
      {"pool.n_p", "8"},
      {"model.d_tok", "64"},
      {"model.depth", "1"},
      {"model.proj_rows", "0"},
      {"model.tokens", "default"},
      {"model.k", "3"},
      {"train.alpha", "0.2"},
      {"train.lambda", "0.5"},
      {"train.lr", "0.002"},
      {"train.weight_decay", "0.0001"},
      {"train.epochs", "20"},
      {"train.batch", "64"},
      {"train.rho", "0.25"},
      {"train.aux", "none"},
      {"train.quota", "0"},
      {"train.scorer_lr_scale", "0.1"},
      {"buffer.policy", "reservoir"},
      {"ablate.random_prompts", "false"},
      {"ablate.random_exemplar", "false"},
      {"ablate.shuffle_order", "false"},
      {"ablate.no_in_context", "false"},
      {"ablate.finetune_scorer", "false"},
      {"eval.ks", "50,100"},
  };
  return kDefaults;
}

const std::map<std::string, std::vector<std::pair<std::string, std::string>>>& presets() {
  static const std::map<std::string, std::vector<std::pair<std::string, std::string>>> kPresets = {
      {"full", {}},
      {"w/o-kap", {{"ablate.random_prompts", "true"}}},
      {"w/o-toe", {{"ablate.random_exemplar", "true"}}},
      {"w/o-aso", {{"ablate.shuffle_order", "true"}}},
      {"w/o-inc", {{"ablate.no_in_context", "true"}, {"model.k", "1"}, {"train.rho", "0"}}},
      {"w-1k", {{"pool.n_e", "10"}}},
      {"w-ft", {{"ablate.finetune_scorer", "true"}}},
      {"w-sc", {{"model.tokens", "small"}}},
      {"w-lc", {{"model.tokens", "large"}}},
      {"w-frq", {{"schedule.mode", "frequency"}}},
      {"smoke",
       {{"synth.n_pred", "10"},
        {"synth.n_groups", "2"},
        {"synth.n_obj", "6"},
        {"synth.d_c", "16"},
        {"synth.d_r", "16"},
        {"synth.d_o", "8"},
        {"synth.total", "400"},
        {"schedule.tasks", "2"},
        {"pool.n_t", "8"},
        {"pool.n_e", "4"},
        {"pool.n_p", "2"},
        {"model.d_tok", "8"},
        {"model.k", "2"},
        {"train.epochs", "1"},
        {"train.batch", "16"}}},
  };
  return kPresets;
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  fail(ErrorCode::kInvalidArgument, "config: " + key + " expects true/false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : v) {
    if (c == ',') {
      out.push_back(text::trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!text::trim(cur).empty()) out.push_back(text::trim(cur));
  return out;
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  for (const auto& [k, v] : defaults()) {
    order_.push_back(k);
    values_[k] = v;
  }
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  const auto it = values_.find(key);
  if (it == values_.end()) fail(ErrorCode::kInvalidArgument, "config: unknown key '" + key + "'");
  if (value.find('\n') != std::string::npos) fail(ErrorCode::kInvalidArgument, "config: value of " + key + " spans lines");
  it->second = text::trim(value);
}

const std::string& ExperimentConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) fail(ErrorCode::kInvalidArgument, "config: unknown key '" + key + "'");
  return it->second;
}

void ExperimentConfig::load(const std::filesystem::path& path) {
  auto in = text::open_in(path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = text::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      fail(ErrorCode::kParse, path.string() + ":" + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = text::trim(t.substr(0, eq));
    if (!values_.contains(key)) {
      fail(ErrorCode::kParse, path.string() + ":" + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    set(key, t.substr(eq + 1));
  }
}

void ExperimentConfig::save(const std::filesystem::path& path) const {
  std::string out;
  for (const auto& [k, v] : echo()) out += k + " = " + v + "\n";
  text::write_file(path, out);
}

void ExperimentConfig::apply_preset(const std::string& name) {
  const auto it = presets().find(name);
  if (it == presets().end()) fail(ErrorCode::kInvalidArgument, "unknown preset '" + name + "'");
  for (const auto& [k, v] : it->second) set(k, v);
}

std::vector<std::pair<std::string, std::string>> ExperimentConfig::echo() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : order_) out.emplace_back(k, values_.at(k));
  return out;
}

std::vector<std::string> ExperimentConfig::diff(const ExperimentConfig& other) const {
  std::vector<std::string> out;
  for (const auto& k : order_) {
    if (values_.at(k) != other.get(k)) out.push_back(k);
  }
  return out;
}

std::vector<std::string> preset_fields(const std::string& name) {
  const auto it = presets().find(name);
  if (it == presets().end()) fail(ErrorCode::kInvalidArgument, "unknown preset '" + name + "'");
  std::vector<std::string> out;
  for (const auto& [k, v] : it->second) out.push_back(k);
  return out;
}

std::vector<std::string> ablation_presets() {
  return {"full", "w/o-kap", "w/o-toe", "w/o-aso", "w/o-inc", "w-1k", "w-sc", "w-lc", "w-frq"};
}

ResolvedConfig resolve(const ExperimentConfig& c) {
  ResolvedConfig r;
  auto ctx = [](const std::string& k) { return "config " + k; };
  auto u64 = [&](const std::string& k) { return text::parse_uint(c.get(k), ctx(k)); };
  auto i32 = [&](const std::string& k) {
    const auto v = text::parse_int(c.get(k), ctx(k));
    if (v < INT32_MIN || v > INT32_MAX) fail(ErrorCode::kInvalidArgument, ctx(k) + ": out of range");
    return static_cast<int>(v);
  };
  auto real = [&](const std::string& k) { return text::parse_double(c.get(k), ctx(k)); };
  auto flag = [&](const std::string& k) { return parse_bool(c.get(k), k); };

  r.seed = u64("seed");
  for (const auto& s : split_list(c.get("seeds"))) r.seeds.push_back(text::parse_uint(s, ctx("seeds")));
  r.embeddings = c.get("data.embeddings");
  r.schedule_file = c.get("data.schedule");
  r.vocab_file = c.get("data.vocab");

  r.synth_seed = u64("synth.seed");
  r.synth.n_pred = i32("synth.n_pred");
  r.synth.n_groups = i32("synth.n_groups");
  r.synth.n_obj = i32("synth.n_obj");
  r.synth.d_c = i32("synth.d_c");
  r.synth.d_r = i32("synth.d_r");
  r.synth.d_o = i32("synth.d_o");
  r.synth.sigma = real("synth.sigma");
  r.synth.zipf_s = real("synth.zipf");
  r.synth.total_n = text::parse_int(c.get("synth.total"), ctx("synth.total"));
  r.synth.max_rels_per_image = i32("synth.max_rels");
  r.synth.with_boxes = flag("synth.boxes");
  r.synth.validate();

  r.schedule_mode = c.get("schedule.mode");
  require(r.schedule_mode == "random" || r.schedule_mode == "frequency",
          "config schedule.mode must be random or frequency");
  r.tasks = u64("schedule.tasks");
  require(r.tasks >= 1, "config schedule.tasks must be >= 1");
  r.split = {real("split.train"), real("split.val"), real("split.test")};
  require(r.split.train > 0 && r.split.val >= 0 && r.split.test > 0 &&
              std::abs(r.split.train + r.split.val + r.split.test - 1.0) < 1e-9,
          "config split fractions must be positive and sum to 1");

  r.pool.n_t = u64("pool.n_t");
  r.pool.n_e = u64("pool.n_e");
  r.pool.n_p = u64("pool.n_p");
  require(r.pool.n_t >= 1 && r.pool.n_p >= 1, "config pool.n_t and pool.n_p must be >= 1");
  r.mapper.d_tok = i32("model.d_tok");
  r.mapper.depth = i32("model.depth");
  r.mapper.proj_rows = i32("model.proj_rows");
  r.mapper.tokens = token_preset(c.get("model.tokens"));
  r.pool.d_tok = static_cast<std::size_t>(r.mapper.d_tok);

  auto& t = r.train;
  t.alpha = real("train.alpha");
  t.lambda = real("train.lambda");
  t.lr = real("train.lr");
  t.weight_decay = real("train.weight_decay");
  t.epochs = i32("train.epochs");
  t.batch_size = i32("train.batch");
  t.rho = real("train.rho");
  const auto& aux = c.get("train.aux");
  if (aux == "none") {
    t.aux = AuxLoss::kNone;
  } else if (aux == "unit_norm") {
    t.aux = AuxLoss::kTokenUnitNorm;
  } else {
    fail(ErrorCode::kInvalidArgument, "config train.aux must be none or unit_norm");
  }
  t.admission_quota = u64("train.quota");
  t.scorer_lr_scale = real("train.scorer_lr_scale");
  t.validate();

  auto& f = r.routing;
  f.knowledge_retrieval = !flag("ablate.random_prompts");
  f.exemplar_retrieval = !flag("ablate.random_exemplar");
  f.ascending_order = !flag("ablate.shuffle_order");
  f.in_context = !flag("ablate.no_in_context");
  f.finetune_scorer = flag("ablate.finetune_scorer");
  f.top_k = u64("model.k");
  const auto& policy = c.get("buffer.policy");
  if (policy == "reservoir") {
    f.buffer = BufferPolicy::kReservoir;
  } else if (policy == "class_balanced") {
    f.buffer = BufferPolicy::kClassBalanced;
  } else {
    fail(ErrorCode::kInvalidArgument, "config buffer.policy must be reservoir or class_balanced");
  }
  require(f.top_k >= 1 && f.top_k <= r.pool.n_t, "config model.k must lie in [1, pool.n_t]");
  if (!f.in_context) {
    require(f.top_k == 1 && t.rho == 0.0, "config: ablate.no_in_context requires model.k = 1 and train.rho = 0");
  }

  for (const auto& k : split_list(c.get("eval.ks"))) {
    const auto v = text::parse_uint(k, ctx("eval.ks"));
    require(v >= 1, "config eval.ks entries must be >= 1");
    r.ks.push_back(v);
  }
  require(!r.ks.empty(), "config eval.ks must list at least one K");
  std::sort(r.ks.begin(), r.ks.end());
  r.ks.erase(std::unique(r.ks.begin(), r.ks.end()), r.ks.end());
  return r;
}

ExperimentData prepare_data(const ResolvedConfig& rc) {
  ExperimentData d;
  if (rc.embeddings.empty()) {
    SeededRng rng(rc.synth_seed);
    d.dataset = synth_generate(rc.synth, rng).dataset;
  } else {
    d.dataset = load_embeddings(rc.embeddings);
  }
  d.vocab = rc.vocab_file.empty() ? PredicateVocab::synthetic(d.dataset.dims.n_pred) : PredicateVocab::load(rc.vocab_file);
  const auto labels = predicate_vocab(d.dataset.dims);
  for (Label l : labels) {
    if (!d.vocab.contains(l)) fail(ErrorCode::kInvalidArgument, "predicate " + std::to_string(l) + " missing from vocabulary");
  }
  if (!rc.schedule_file.empty()) {
    d.schedule = load_schedule(rc.schedule_file);
  } else if (rc.schedule_mode == "frequency") {
    d.schedule = split_by_frequency(labels, label_counts(d.dataset.instances), rc.tasks);
  } else {
    SeededRng rng = SeededRng(rc.seed).derive(1);
    d.schedule = split_random(labels, rc.tasks, rng);
  }
  d.schedule.validate(labels);
  return d;
}

// ---------------------------------------------------------------------------
// Experiment

namespace {

struct Evaluation {
  std::vector<PredictionRecord> records;
  std::vector<GroundTruth> gt;
};

Evaluation evaluate_stage(const ModelState& model, const PredicateVocab& vocab, const std::vector<StageDataset>& stages,
                          std::size_t upto, const std::vector<Label>& seen, const RoutingFlags& flags, SeededRng& rng) {
  Evaluation ev;
  std::map<std::int64_t, std::vector<TripletPrediction>> by_image;
  std::int64_t gid = 0;
  for (std::size_t j = 0; j <= upto; ++j) {
    for (const auto& inst : stages[j].test) {
      const auto ranked = predict(model, vocab, features_of(inst), flags, seen, rng);
      TripletPrediction p;
      p.subject = inst.subject_class;
      p.predicate = ranked.front().label;
      p.object = inst.object_class;
      p.confidence = std::exp(ranked.front().score);
      p.boxes = inst.boxes;
      p.gt_id = gid;
      by_image[inst.image_id].push_back(p);
      ev.gt.push_back({inst.image_id, gid, inst.subject_class, inst.predicate, inst.object_class, inst.boxes});
      ++gid;
    }
  }
  for (auto& [image, preds] : by_image) {
    std::stable_sort(preds.begin(), preds.end(), [](const TripletPrediction& a, const TripletPrediction& b) {
      return a.confidence > b.confidence;
    });
    ev.records.push_back({image, std::move(preds)});
  }
  return ev;
}

// Box-overlap copy of the records for the weighted mAP, when every pair has boxes.
std::vector<PredictionRecord> box_records(const Evaluation& ev) {
  for (const auto& g : ev.gt) {
    if (!g.boxes) return ev.records;
  }
  auto out = ev.records;
  for (auto& r : out) {
    for (auto& p : r.predictions) p.gt_id.reset();
  }
  return out;
}

std::string stage_prefix(std::size_t t) { return "stage " + std::to_string(t + 1) + ": "; }

}  // namespace

ResultsBundle run_experiment(const ExperimentConfig& config) {
  const ResolvedConfig rc = resolve(config);
  ExperimentData data = prepare_data(rc);
  const auto labels = predicate_vocab(data.dataset.dims);

  ResultsBundle b;
  b.config = config.echo();
  b.seed = rc.seed;
  b.invariants.push_back("schedule_disjoint");

  const auto stages = make_stage_datasets(data.dataset.instances, data.schedule, rc.split);
  data.dataset.instances.clear();  // from here on only per-stage views exist
  const std::size_t T = stages.size();

  SeededRng root(rc.seed);
  SeededRng init_rng = root.derive(2);
  SeededRng train_rng = root.derive(3);

  ModelShape shape;
  shape.mapper = rc.mapper;
  shape.mapper.d_c = data.dataset.dims.d_c;
  shape.mapper.d_r = data.dataset.dims.d_r;
  shape.mapper.d_o = data.dataset.dims.d_o;
  shape.pool = rc.pool;
  shape.pool.d_c = static_cast<std::size_t>(data.dataset.dims.d_c);
  LearnerState learner{init_model(shape, data.vocab, init_rng), AdamW(rc.train), std::nullopt};

  for (auto k : rc.ks) b.accuracy[k] = AccuracyMatrix{};
  for (std::size_t t = 0; t < T; ++t) {
    const auto start = std::chrono::steady_clock::now();
    const auto seen = data.schedule.labels_through(t);
    Evaluation ev;
    try {
      b.training.push_back(train_stage(stages[t], T, learner, data.vocab, rc.train, rc.routing, train_rng));

      // Capacity and access checks on the pool after every stage.
      const auto& pool = learner.model.pool;
      pool.check_invariants();
      if (pool.stored() > pool.capacity()) fail(ErrorCode::kState, "pool exceeds its capacity");
      const std::set<Label> allowed(seen.begin(), seen.end());
      for (const auto& e : pool.entries()) {
        for (const auto& x : e.store) {
          if (!allowed.contains(x.predicate)) fail(ErrorCode::kState, "pool holds an exemplar from a future stage");
        }
      }
      if (learner.balanced) {
        for (const auto& [label, xs] : learner.balanced->classes()) {
          if (!allowed.contains(label)) fail(ErrorCode::kState, "buffer holds an exemplar from a future stage");
        }
      }

      SeededRng eval_rng = root.derive(100 + t);
      ev = evaluate_stage(learner.model, data.vocab, stages, t, seen, rc.routing, eval_rng);
    } catch (const Error& e) {
      fail(e.code(), stage_prefix(t) + e.what());
    }

    StageMetrics sm;
    sm.stage = t + 1;
    for (auto k : rc.ks) {
      sm.recall[k] = recall_at_k(ev.records, ev.gt, k);
      const auto per_class = per_class_recall_at_k(ev.records, ev.gt, k);
      double sum = 0.0;
      for (const auto& [l, v] : per_class) sum += v;
      sm.mean_recall[k] = per_class.empty() ? 0.0 : sum / static_cast<double>(per_class.size());
      sm.m[k] = m_at_k(sm.recall[k], sm.mean_recall[k]);
      if (sm.m[k] != (sm.recall[k] + sm.mean_recall[k]) / 2.0) fail(ErrorCode::kInternal, "M@K is not exact");

      std::vector<double> row;
      for (std::size_t j = 0; j <= t; ++j) {
        double s = 0.0;
        std::size_t n = 0;
        for (Label l : data.schedule.stages[j]) {
          const auto it = per_class.find(l);
          if (it != per_class.end()) {
            s += it->second;
            ++n;
          }
        }
        row.push_back(n ? s / static_cast<double>(n) : 0.0);
      }
      b.accuracy[k].a.push_back(std::move(row));
      b.accuracy[k].validate();
    }
    const auto boxed = box_records(ev);
    sm.wmap_rel = weighted_map(boxed, ev.gt, MapMode::kRelation);
    sm.wmap_phr = weighted_map(boxed, ev.gt, MapMode::kPhrase);
    const std::size_t k50 = rc.ks.front();
    sm.score = score_wtd(sm.recall[k50], sm.wmap_rel, sm.wmap_phr);
    b.stages.push_back(sm);
    if (t + 1 == T) {
      b.predictions = std::move(ev.records);
      b.ground_truth = std::move(ev.gt);
    }
    b.stage_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  }
  if (T >= 2) {
    for (auto k : rc.ks) b.forgetting[k] = forgetting_measure(b.accuracy[k]);
  }
  b.invariants.insert(b.invariants.end(), {"stage_isolation", "pool_capacity", "m_at_k_exact", "accuracy_lower_triangular"});
  b.model = std::move(learner.model);
  return b;
}

// ---------------------------------------------------------------------------
// Results files

namespace {

std::string fmt(double v) { return text::format_exact(v); }

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text::read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cur;
    for (char c : line) {
      if (c == ',') {
        cells.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    cells.push_back(cur);
    rows.push_back(std::move(cells));
  }
  return rows;
}

}  // namespace

std::map<std::string, double> headline(const ResultsBundle& b) {
  std::map<std::string, double> out;
  if (b.stages.empty()) return out;
  const auto& last = b.stages.back();
  for (const auto& [k, v] : last.recall) out["R@" + std::to_string(k)] = v;
  for (const auto& [k, v] : last.mean_recall) out["mR@" + std::to_string(k)] = v;
  for (const auto& [k, v] : last.m) out["M@" + std::to_string(k)] = v;
  for (const auto& [k, v] : b.forgetting) out["FM@" + std::to_string(k)] = v;
  out["wmAP_rel"] = last.wmap_rel;
  out["wmAP_phr"] = last.wmap_phr;
  out["score_wtd"] = last.score;
  return out;
}

void write_results(ResultsBundle& b, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::string metrics = "stage,K,R,mR,M,wmAP_rel,wmAP_phr,score_wtd\n";
  for (const auto& s : b.stages) {
    for (const auto& [k, r] : s.recall) {
      metrics += std::to_string(s.stage) + ',' + std::to_string(k) + ',' + fmt(r) + ',' + fmt(s.mean_recall.at(k)) +
                 ',' + fmt(s.m.at(k)) + ',' + fmt(s.wmap_rel) + ',' + fmt(s.wmap_phr) + ',' + fmt(s.score) + '\n';
    }
  }
  text::write_file(dir / "metrics.csv", metrics);

  for (const auto& [k, acc] : b.accuracy) {
    const std::size_t T = acc.stages();
    std::string out = "after_stage";
    for (std::size_t j = 0; j < T; ++j) out += ",task" + std::to_string(j + 1);
    out += '\n';
    for (std::size_t l = 0; l < T; ++l) {
      out += std::to_string(l + 1);
      for (std::size_t j = 0; j < T; ++j) out += ',' + (j <= l ? fmt(acc.a[l][j]) : std::string());
      out += '\n';
    }
    text::write_file(dir / ("accuracy_k" + std::to_string(k) + ".csv"), out);
  }

  std::string summary = "metric,value\n";
  for (const auto& [name, v] : headline(b)) summary += name + ',' + fmt(v) + '\n';
  text::write_file(dir / "summary.csv", summary);

  ordered_json m;
  m["format"] = "lsgg-run 1";
  m["version"] = kVersion;
  m["seed"] = b.seed;
  ordered_json cfg = ordered_json::object();
  for (const auto& [k, v] : b.config) cfg[k] = v;
  m["config"] = cfg;
  m["invariants"] = b.invariants;
  ordered_json training = ordered_json::array();
  for (const auto& s : b.training) {
    ordered_json j;
    j["stage"] = s.stage + 1;
    j["steps"] = s.steps;
    j["offered"] = s.offered;
    j["admitted"] = s.admitted;
    j["replayed"] = s.replayed;
    std::vector<std::string> losses;
    for (double l : s.epoch_loss) losses.push_back(fmt(l));
    j["epoch_loss"] = losses;
    training.push_back(j);
  }
  m["training"] = training;
  m["files"] = {"metrics.csv", "summary.csv", "predictions.txt", "gt.txt", "checkpoint.txt", "pool.txt"};
  text::write_file(dir / "manifest.json", m.dump(2) + "\n");

  write_predictions(b.predictions, dir / "predictions.txt");
  write_ground_truth(b.ground_truth, dir / "gt.txt");
  if (b.model) {
    serialize_pool(b.model->pool, dir / "pool.txt");
    save_checkpoint(*b.model, b.config, "pool.txt", dir / "checkpoint.txt");
  }

  std::string timing = "stage,seconds\n";
  for (std::size_t i = 0; i < b.stage_seconds.size(); ++i) {
    timing += std::to_string(i + 1) + ',' + fmt(b.stage_seconds[i]) + '\n';
  }
  text::write_file(dir / "timing.csv", timing);
}

ResultsBundle read_results(const std::filesystem::path& dir) {
  ResultsBundle b;
  ordered_json m;
  try {
    m = ordered_json::parse(text::read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, (dir / "manifest.json").string() + ": " + e.what());
  }
  if (m.value("format", "") != "lsgg-run 1") fail(ErrorCode::kVersion, (dir / "manifest.json").string() + ": unknown format");
  b.seed = m.at("seed").get<std::uint64_t>();
  for (const auto& [k, v] : m.at("config").items()) b.config.emplace_back(k, v.get<std::string>());
  b.invariants = m.at("invariants").get<std::vector<std::string>>();

  const auto path = dir / "metrics.csv";
  const auto rows = read_csv(path);
  if (rows.empty() || rows[0].size() != 8) fail(ErrorCode::kParse, path.string() + ": bad header");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const std::string ctx = path.string() + ":" + std::to_string(i + 1);
    if (r.size() != 8) fail(ErrorCode::kParse, ctx + ": expected 8 columns");
    const auto stage = text::parse_uint(r[0], ctx);
    const auto k = text::parse_uint(r[1], ctx);
    if (b.stages.empty() || b.stages.back().stage != stage) {
      b.stages.emplace_back();
      b.stages.back().stage = stage;
    }
    auto& s = b.stages.back();
    s.recall[k] = text::parse_double(r[2], ctx);
    s.mean_recall[k] = text::parse_double(r[3], ctx);
    s.m[k] = text::parse_double(r[4], ctx);
    s.wmap_rel = text::parse_double(r[5], ctx);
    s.wmap_phr = text::parse_double(r[6], ctx);
    s.score = text::parse_double(r[7], ctx);
  }
  if (!b.stages.empty()) {
    for (const auto& [k, v] : b.stages.front().recall) {
      const auto apath = dir / ("accuracy_k" + std::to_string(k) + ".csv");
      const auto arows = read_csv(apath);
      AccuracyMatrix acc;
      for (std::size_t l = 1; l < arows.size(); ++l) {
        std::vector<double> row;
        for (std::size_t j = 1; j <= l && j < arows[l].size(); ++j) {
          row.push_back(text::parse_double(arows[l][j], apath.string() + ":" + std::to_string(l + 1)));
        }
        acc.a.push_back(std::move(row));
      }
      acc.validate();
      b.accuracy[k] = acc;
      if (acc.stages() >= 2) b.forgetting[k] = forgetting_measure(acc);
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// Reports

namespace {

std::string fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

std::pair<double, double> mean_std(const std::vector<double>& xs) {
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  if (xs.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

void check_compatible(const std::vector<ResultsBundle>& bundles) {
  auto stripped = [](const ResultsBundle& b) {
    std::map<std::string, std::string> m(b.config.begin(), b.config.end());
    m.erase("seed");
    m.erase("seeds");
    return m;
  };
  const auto ref = stripped(bundles.front());
  for (std::size_t i = 1; i < bundles.size(); ++i) {
    const auto other = stripped(bundles[i]);
    if (other == ref) continue;
    for (const auto& [k, v] : ref) {
      const auto it = other.find(k);
      if (it == other.end() || it->second != v) {
        fail(ErrorCode::kInvalidArgument, "incompatible results: config key '" + k + "' differs between runs");
      }
    }
    fail(ErrorCode::kInvalidArgument, "incompatible results: config key sets differ between runs");
  }
}

void add_columns(std::vector<std::string>& cols, const std::string& metric, bool with_std) {
  cols.push_back(metric + " mean");
  if (with_std) cols.push_back(metric + " std");
}

void add_values(std::vector<std::string>& row, const std::vector<double>& xs, bool with_std) {
  const auto [m, s] = mean_std(xs);
  row.push_back(fixed(m));
  if (with_std) row.push_back(fixed(s));
}

}  // namespace

Report make_report(const std::vector<ResultsBundle>& bundles) {
  require(!bundles.empty(), "report: no results given");
  check_compatible(bundles);
  const bool with_std = bundles.size() > 1;
  const auto& ref = bundles.front();
  for (const auto& b : bundles) {
    if (b.stages.size() != ref.stages.size()) fail(ErrorCode::kInvalidArgument, "report: runs have different stage counts");
  }
  std::vector<std::size_t> ks;
  for (const auto& [k, v] : ref.stages.front().recall) ks.push_back(k);

  Report rep;
  ReportTable per_stage{"per_stage", {"stage"}, {}};
  for (auto k : ks) {
    for (const char* name : {"R@", "mR@", "M@"}) add_columns(per_stage.columns, name + std::to_string(k), with_std);
  }
  for (std::size_t t = 0; t < ref.stages.size(); ++t) {
    std::vector<std::string> row{std::to_string(t + 1)};
    for (auto k : ks) {
      std::vector<double> r, mr, m;
      for (const auto& b : bundles) {
        r.push_back(b.stages[t].recall.at(k));
        mr.push_back(b.stages[t].mean_recall.at(k));
        m.push_back(b.stages[t].m.at(k));
      }
      add_values(row, r, with_std);
      add_values(row, mr, with_std);
      add_values(row, m, with_std);
    }
    per_stage.rows.push_back(std::move(row));
  }
  rep.tables.push_back(std::move(per_stage));

  ReportTable final_table{"final", {"runs"}, {}};
  ReportTable fm_table{"forgetting", {"runs"}, {}};
  std::vector<std::string> final_row{std::to_string(bundles.size())};
  std::vector<std::string> fm_row{std::to_string(bundles.size())};
  for (const auto& [name, v] : headline(ref)) {
    std::vector<double> xs;
    for (const auto& b : bundles) xs.push_back(headline(b).at(name));
    auto& table = name.starts_with("FM@") ? fm_table : final_table;
    auto& row = name.starts_with("FM@") ? fm_row : final_row;
    add_columns(table.columns, name, with_std);
    add_values(row, xs, with_std);
  }
  final_table.rows.push_back(final_row);
  rep.tables.push_back(std::move(final_table));
  if (fm_table.columns.size() > 1) {
    fm_table.rows.push_back(fm_row);
    rep.tables.push_back(std::move(fm_table));
  }
  return rep;
}

std::string report_csv(const Report& report) {
  std::string out;
  auto join = [](const std::vector<std::string>& cells) {
    std::string s;
    for (std::size_t i = 0; i < cells.size(); ++i) s += (i ? "," : "") + cells[i];
    return s + "\n";
  };
  for (const auto& t : report.tables) {
    out += "# " + t.title + "\n";
    out += join(t.columns);
    for (const auto& r : t.rows) out += join(r);
    out += "\n";
  }
  return out;
}

Report parse_report_csv(const std::string& csv) {
  Report rep;
  std::istringstream in(csv);
  std::string line;
  ReportTable* cur = nullptr;
  bool want_header = false;
  auto split = [](const std::string& l) {
    std::vector<std::string> cells;
    std::string c;
    for (char ch : l) {
      if (ch == ',') {
        cells.push_back(c);
        c.clear();
      } else {
        c += ch;
      }
    }
    cells.push_back(c);
    return cells;
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.starts_with("# ")) {
      rep.tables.push_back({line.substr(2), {}, {}});
      cur = &rep.tables.back();
      want_header = true;
    } else if (!cur) {
      fail(ErrorCode::kParse, "report csv: row before any table title");
    } else if (want_header) {
      cur->columns = split(line);
      want_header = false;
    } else {
      auto row = split(line);
      if (row.size() != cur->columns.size()) fail(ErrorCode::kParse, "report csv: row width differs from header");
      cur->rows.push_back(std::move(row));
    }
  }
  return rep;
}

std::string report_text(const Report& report) {
  std::string out;
  for (const auto& t : report.tables) {
    std::vector<std::size_t> width(t.columns.size());
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
      width[c] = t.columns[c].size();
      for (const auto& r : t.rows) width[c] = std::max(width[c], r[c].size());
    }
    auto line = [&](const std::vector<std::string>& cells) {
      std::string s;
      for (std::size_t c = 0; c < cells.size(); ++c) {
        s += (c ? "  " : "") + cells[c] + std::string(width[c] - cells[c].size(), ' ');
      }
      while (!s.empty() && s.back() == ' ') s.pop_back();
      return s + "\n";
    };
    out += "== " + t.title + " ==\n";
    out += line(t.columns);
    for (const auto& r : t.rows) out += line(r);
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ablations

std::vector<AblationRow> run_ablation_suite(const ExperimentConfig& base, const std::vector<std::string>& presets_to_run,
                                            const std::vector<std::uint64_t>& seeds,
                                            const std::optional<std::filesystem::path>& out) {
  require(!seeds.empty(), "ablation: no seeds given");
  std::vector<AblationRow> rows;
  for (const auto& name : presets_to_run) {
    ExperimentConfig cfg = base;
    cfg.apply_preset(name);
    AblationRow row;
    row.preset = name;
    row.changed = cfg.diff(base);
    const auto allowed = preset_fields(name);
    for (const auto& k : row.changed) {
      if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) {
        fail(ErrorCode::kInternal, "preset " + name + " changed undocumented key " + k);
      }
    }
    std::map<std::string, std::vector<double>> samples;
    for (auto seed : seeds) {
      cfg.set("seed", std::to_string(seed));
      auto bundle = run_experiment(cfg);
      if (out) {
        std::string dirname = name;
        std::replace(dirname.begin(), dirname.end(), '/', '_');
        write_results(bundle, *out / dirname / ("seed" + std::to_string(seed)));
      }
      for (const auto& [metric, v] : headline(bundle)) samples[metric].push_back(v);
    }
    for (const auto& [metric, xs] : samples) row.values[metric] = mean_std(xs);
    rows.push_back(std::move(row));
  }
  return rows;
}

ReportTable ablation_table(const std::vector<AblationRow>& rows) {
  ReportTable t{"ablation", {"preset", "changed"}, {}};
  if (rows.empty()) return t;
  std::vector<std::string> metrics;
  for (const auto& [m, v] : rows.front().values) metrics.push_back(m);
  for (const auto& m : metrics) {
    t.columns.push_back(m + " mean");
    t.columns.push_back(m + " std");
  }
  for (const auto& r : rows) {
    std::string changed;
    for (const auto& k : r.changed) changed += (changed.empty() ? "" : ";") + k;
    std::vector<std::string> cells{r.preset, changed.empty() ? "-" : changed};
    for (const auto& m : metrics) {
      const auto it = r.values.find(m);
      cells.push_back(it == r.values.end() ? "" : fixed(it->second.first));
      cells.push_back(it == r.values.end() ? "" : fixed(it->second.second));
    }
    t.rows.push_back(std::move(cells));
  }
  return t;
}

}  // namespace lsgg
