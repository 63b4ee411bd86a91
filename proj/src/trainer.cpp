// Copyright (C) 2026 The lsgg Authors
// SPDX-License-Identifier: Apache-2.0

#include "lsgg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "lsgg/error.hpp"
#include "lsgg/text_io.hpp"

namespace lsgg {

void TrainConfig::validate() const {
  require(alpha >= 0.0 && lambda >= 0.0, "train: alpha and lambda must be >= 0");
  require(rho >= 0.0 && rho < 1.0, "train: rho must lie in [0, 1)");
  require(lr >= 0.0 && std::isfinite(lr), "train: learning rate must be finite and >= 0");
  require(weight_decay >= 0.0, "train: weight decay must be >= 0");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && eps > 0.0, "train: invalid moment settings");
  require(epochs >= 1 && batch_size >= 1, "train: epochs and batch size must be >= 1");
  require(scorer_lr_scale >= 0.0, "train: scorer lr scale must be >= 0");
}

ModelState init_model(const ModelShape& shape, const PredicateVocab& vocab, SeededRng& rng) {
  require(vocab.vocab_size() >= 2, "model: empty predicate vocabulary");
  require(shape.pool.d_tok == static_cast<std::size_t>(shape.mapper.d_tok), "model: pool and mapper d_tok differ");
  require(shape.pool.d_c == static_cast<std::size_t>(shape.mapper.d_c), "model: pool key width differs from d_c");
  ModelState s;
  s.mapper = MapperParams::init(shape.mapper, rng);
  s.pool = PromptPool::init(shape.pool, rng);
  ScorerConfig sc;
  sc.vocab_size = vocab.vocab_size();
  sc.d_tok = shape.mapper.d_tok;
  sc.mask_len = vocab.mask_length();
  const auto per_item = shape.pool.n_p + static_cast<std::size_t>(shape.mapper.tokens.total() + vocab.mask_length());
  sc.max_positions = shape.max_positions > 0 ? shape.max_positions : static_cast<int>(shape.pool.n_t * per_item);
  s.scorer = ScorerParams::init(sc, rng);
  const double scale = 1.0 / std::sqrt(static_cast<double>(shape.mapper.d_tok));
  s.mask_tokens = random_gaussian_matrix(vocab.mask_length(), shape.mapper.d_tok, scale, rng);
  return s;
}

Gradients Gradients::zeros_for(const ModelState& state, bool with_scorer) {
  Gradients g;
  g.mapper = MapperParams::zeros_like(state.mapper);
  g.mask_tokens = Matrix::Zero(state.mask_tokens.rows(), state.mask_tokens.cols());
  for (const auto& e : state.pool.entries()) {
    g.prompt_tokens.push_back(Matrix::Zero(e.tokens.rows(), e.tokens.cols()));
    g.keys.push_back(Vec::Zero(e.key.size()));
  }
  if (with_scorer) g.scorer = ScorerParams::zeros_like(state.scorer);
  return g;
}

void Gradients::set_zero() {
  for_each_gradient(*this, [](const std::string&, std::span<double> v) { std::fill(v.begin(), v.end(), 0.0); });
}

void for_each_trainable(ModelState& state, bool with_scorer, const TensorVisitor& fn) {
  state.mapper.for_each(fn);
  fn("mask_tokens", as_span(state.mask_tokens));
  for (std::size_t i = 0; i < state.pool.size(); ++i) {
    auto& e = state.pool.entry(i);
    const std::string p = "pool.entry" + std::to_string(i);
    fn(p + ".tokens", as_span(e.tokens));
    fn(p + ".key", as_span(e.key));
  }
  if (with_scorer) state.scorer.for_each(fn);
}

void for_each_gradient(Gradients& grads, const TensorVisitor& fn) {
  grads.mapper.for_each(fn);
  fn("mask_tokens", as_span(grads.mask_tokens));
  for (std::size_t i = 0; i < grads.prompt_tokens.size(); ++i) {
    const std::string p = "pool.entry" + std::to_string(i);
    fn(p + ".tokens", as_span(grads.prompt_tokens[i]));
    fn(p + ".key", as_span(grads.keys[i]));
  }
  if (grads.scorer) grads.scorer->for_each(fn);
}

// ---------------------------------------------------------------------------
// Routing

namespace {

std::optional<std::size_t> random_slot(const PromptEntry& entry, std::optional<std::size_t> exclude, SeededRng& rng) {
  const std::size_t n = entry.store.size();
  const std::size_t eligible = n - (exclude && *exclude < n ? 1 : 0);
  if (eligible == 0) return std::nullopt;
  auto j = static_cast<std::size_t>(rng.uniform_index(eligible));
  if (exclude && j >= *exclude) ++j;
  return j;
}

}  // namespace

Route plan_route(const ModelState& state, const FeatureSet& query, const RoutingFlags& flags, SeededRng& rng,
                 std::optional<std::pair<std::size_t, std::size_t>> exclude) {
  const auto& pool = state.pool;
  require(pool.size() >= 1, "route: empty prompt pool");
  const Vec& f_c = query.of(FeatureKind::kContext);
  Route r;
  if (!flags.in_context) {
    // Single shared prompt in front of the query; nothing is retrieved.
    r.items.push_back({0, 1.0, nullptr});
    return r;
  }
  require(flags.top_k >= 1 && flags.top_k <= pool.size(), "route: K must lie in [1, n_t]");

  std::vector<RetrievedPrompt> chosen;
  if (flags.knowledge_retrieval) {
    chosen = retrieve_topk_prompts(pool, f_c, flags.top_k);
  } else {
    std::vector<std::size_t> idx(pool.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < flags.top_k; ++i) {
      const auto j = i + static_cast<std::size_t>(rng.uniform_index(idx.size() - i));
      std::swap(idx[i], idx[j]);
      chosen.push_back({idx[i], cosine(f_c, pool.entry(idx[i]).key)});
    }
    std::stable_sort(chosen.begin(), chosen.end(), [](const RetrievedPrompt& a, const RetrievedPrompt& b) {
      return a.similarity > b.similarity || (a.similarity == b.similarity && a.entry < b.entry);
    });
  }

  const Vec& f_r = query.of(FeatureKind::kRelation);
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    ContextItem item{chosen[i].entry, chosen[i].similarity, nullptr};
    r.selected_keys.push_back(item.entry);
    if (i > 0) {
      const auto& entry = pool.entry(item.entry);
      std::optional<std::size_t> skip;
      if (exclude && exclude->first == item.entry) skip = exclude->second;
      const auto slot = flags.exemplar_retrieval ? retrieve_exemplar(entry, f_r, skip) : random_slot(entry, skip, rng);
      if (slot) item.exemplar = &entry.store[*slot];
    }
    r.items.push_back(item);
  }
  if (!flags.ascending_order) {
    r.shuffled = true;
    r.shuffle_seed = rng.next_u64();
  }
  return r;
}

AssembledPrompt assemble_for_route(const ModelState& state, const PredicateVocab& vocab, const Route& route,
                                   const FeatureSet& query, bool record_tapes) {
  AssemblyInputs in{&state.pool, &state.mapper, &state.scorer, &state.mask_tokens, &vocab};
  if (route.shuffled) {
    SeededRng order_rng(route.shuffle_seed);
    return assemble_prompt(in, route.items, query, SegmentOrder::kShuffled, &order_rng, record_tapes);
  }
  return assemble_prompt(in, route.items, query, SegmentOrder::kAscendingSimilarity, nullptr, record_tapes);
}

// ---------------------------------------------------------------------------
// Losses

double loss_key_alignment(const Vec& f_c, std::span<const Vec> keys) {
  require(!keys.empty(), "loss_key_alignment: no selected keys");
  double s = 0.0;
  for (const auto& k : keys) s += 1.0 - cosine(f_c, k);
  return s;
}

double loss_predicate_ce(std::span<const Vec> distributions, Label target, const PredicateVocab& vocab) {
  const auto& toks = vocab.tokens(target);
  require(distributions.size() >= toks.size(), "loss_predicate_ce: fewer distributions than target tokens");
  double s = 0.0;
  for (std::size_t j = 0; j < toks.size(); ++j) {
    const Vec& p = distributions[j];
    if (toks[j] < 0 || toks[j] >= p.size()) fail(ErrorCode::kInvalidArgument, "loss_predicate_ce: target token outside V");
    s -= std::log(p(toks[j]));
  }
  return s;
}

double loss_total(double l1_aux, double l2, double l3, const TrainConfig& config) {
  return config.alpha * l1_aux + config.lambda * l2 + l3;
}

double loss_token_unit_norm(const Matrix& tokens) {
  if (tokens.rows() == 0) return 0.0;
  const Vec sq = tokens.rowwise().squaredNorm();
  return (sq.array() - 1.0).square().mean();
}

namespace {

bool is_feature(SegmentKind k) {
  return k == SegmentKind::kContext || k == SegmentKind::kRelation || k == SegmentKind::kSubject ||
         k == SegmentKind::kObject;
}

}  // namespace

InstanceLoss instance_loss(const ModelState& state, const PredicateVocab& vocab, const FeatureSet& query, Label target,
                           const Route& route, const TrainConfig& config, bool replay, Gradients* grads,
                           double weight) {
  const AssembledPrompt x = assemble_for_route(state, vocab, route, query, grads != nullptr);
  ScoreCache cache;
  InstanceLoss out;
  out.probs = score(state.scorer, x, &cache);
  out.ce = loss_predicate_ce(out.probs, target, vocab);

  const bool use_aux = !replay && config.aux == AuxLoss::kTokenUnitNorm;
  std::vector<Eigen::Index> query_rows;
  if (use_aux) {
    for (const auto& s : x.segments) {
      if (s.source == -1 && is_feature(s.kind)) {
        for (Eigen::Index i = 0; i < s.rows; ++i) query_rows.push_back(s.begin + i);
      }
    }
    out.aux = loss_token_unit_norm(x.tokens(query_rows, Eigen::all));
  }
  const Vec& f_c = query.of(FeatureKind::kContext);
  if (!replay && !route.selected_keys.empty()) {
    std::vector<Vec> keys;
    for (auto i : route.selected_keys) keys.push_back(state.pool.entry(i).key);
    out.key = loss_key_alignment(f_c, keys);
  }
  out.total = replay ? out.ce : loss_total(out.aux, out.key, out.ce, config);
  if (!std::isfinite(out.total)) {
    std::ostringstream msg;
    msg << "non-finite loss (aux " << out.aux << ", key " << out.key << ", ce " << out.ce << ", target " << target
        << ")";
    fail(ErrorCode::kNumeric, msg.str());
  }
  if (grads == nullptr) return out;

  // Softmax cross-entropy: dlogit = p - onehot, only on the target's real tokens.
  const auto& toks = vocab.tokens(target);
  std::vector<Vec> d_logits;
  for (std::size_t j = 0; j < out.probs.size(); ++j) {
    if (j < toks.size()) {
      Vec d = out.probs[j] * weight;
      d(toks[j]) -= weight;
      d_logits.push_back(std::move(d));
    } else {
      d_logits.push_back(Vec::Zero(out.probs[j].size()));
    }
  }
  ScorerParams* sg = grads->scorer ? &*grads->scorer : nullptr;
  Matrix dx = score_backward(state.scorer, x, cache, d_logits, sg);

  if (use_aux && !query_rows.empty() && config.alpha != 0.0) {
    const double c = weight * config.alpha * 4.0 / static_cast<double>(query_rows.size());
    for (auto r : query_rows) {
      const double sq = x.tokens.row(r).squaredNorm();
      dx.row(r) += c * (sq - 1.0) * x.tokens.row(r);
    }
  }

  std::vector<Matrix> d_features(x.tape.kinds.size());
  for (const auto& s : x.segments) {
    const auto block = dx.middleRows(s.begin, s.rows);
    switch (s.kind) {
      case SegmentKind::kPrompt:
        grads->prompt_tokens[static_cast<std::size_t>(s.entry)] += block;
        break;
      case SegmentKind::kMask:
        grads->mask_tokens += block;
        break;
      case SegmentKind::kLabel:
        if (sg) {
          for (std::size_t j = 0; j < s.label_tokens.size(); ++j) {
            sg->embedding.row(s.label_tokens[j]) += block.row(static_cast<Eigen::Index>(j));
          }
        }
        break;
      default:
        d_features[static_cast<std::size_t>(s.tape)] = block;
        break;
    }
  }
  encode_features_backward(state.mapper, x.tape, d_features, grads->mapper);

  if (!replay && config.lambda != 0.0) {
    const double fn = f_c.norm();
    for (auto i : route.selected_keys) {
      const Vec& k = state.pool.entry(i).key;
      const double kn = k.norm();
      const double c = f_c.dot(k) / (fn * kn);
      grads->keys[i] -= weight * config.lambda * (f_c / (fn * kn) - c * k / (kn * kn));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer

void AdamW::step(ModelState& state, Gradients& grads, bool with_scorer) {
  require(grads.scorer.has_value() == with_scorer, "AdamW: gradient set does not match the trainable set");
  std::vector<std::pair<std::string, std::span<double>>> params;
  std::vector<std::span<double>> gs;
  for_each_trainable(state, with_scorer, [&](const std::string& n, std::span<double> v) { params.emplace_back(n, v); });
  for_each_gradient(grads, [&](const std::string&, std::span<double> v) { gs.push_back(v); });
  require(params.size() == gs.size(), "AdamW: gradient set does not match the trainable set");
  if (m_.empty()) {
    for (const auto& [n, v] : params) {
      m_.push_back(Vec::Zero(static_cast<Eigen::Index>(v.size())));
      v_.push_back(Vec::Zero(static_cast<Eigen::Index>(v.size())));
    }
  }
  require(m_.size() == params.size(), "AdamW: parameter layout changed between steps");
  ++t_;
  const auto& c = config_;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].second;
    auto g = gs[i];
    require(p.size() == g.size(), "AdamW: tensor size mismatch for " + params[i].first);
    const double lr = params[i].first.starts_with("scorer.") ? c.lr * c.scorer_lr_scale : c.lr;
    double* m = m_[i].data();
    double* v = v_[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
      const double mh = m[k] / bc1;
      const double vh = v[k] / bc2;
      p[k] -= lr * (mh / (std::sqrt(vh) + c.eps) + c.weight_decay * p[k]);
    }
  }
}

double grad_step(ModelState& state, const PredicateVocab& vocab, std::span<const BatchItem> batch,
                 const TrainConfig& config, const RoutingFlags& flags, AdamW& optimizer, Gradients& scratch,
                 SeededRng& rng) {
  require(!batch.empty(), "grad_step: empty batch");
  scratch.set_zero();
  const double w = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (const auto& item : batch) {
    const Route r = plan_route(state, item.features, flags, rng, item.exclude);
    total += w * instance_loss(state, vocab, item.features, item.target, r, config, item.replay, &scratch, w).total;
  }
  optimizer.step(state, scratch, flags.finetune_scorer);
  return total;
}

// ---------------------------------------------------------------------------
// Stage loop

FeatureSet features_of(const RelationInstance& r) { return FeatureSet{&r.f_c, &r.f_r, &r.f_s, &r.f_o}; }
FeatureSet features_of(const Exemplar& e) { return FeatureSet{&e.f_c, &e.f_r, &e.f_s, &e.f_o}; }

StageSummary train_stage(const StageDataset& stage, std::size_t num_stages, LearnerState& learner,
                         const PredicateVocab& vocab, const TrainConfig& config, const RoutingFlags& flags,
                         SeededRng& rng) {
  config.validate();
  require(!stage.train.empty(), "train_stage: stage " + std::to_string(stage.stage) + " has an empty train split");
  require(num_stages >= 1, "train_stage: number of stages must be >= 1");
  auto& model = learner.model;
  const bool balanced = flags.buffer == BufferPolicy::kClassBalanced;
  if (balanced && !learner.balanced) learner.balanced.emplace(model.pool.capacity());

  StageSummary summary;
  summary.stage = stage.stage;
  const std::size_t n = stage.train.size();
  const auto batch = static_cast<std::size_t>(config.batch_size);
  const bool rehearse = flags.in_context || balanced;
  const std::size_t n_replay = rehearse ? static_cast<std::size_t>(std::llround(config.rho * static_cast<double>(batch))) : 0;
  const std::size_t n_current = std::max<std::size_t>(1, batch - std::min(n_replay, batch - 1));
  const std::size_t steps_per_epoch = (n + n_current - 1) / n_current;
  const std::size_t total_steps = steps_per_epoch * static_cast<std::size_t>(config.epochs);

  // Admission candidates for this stage, spread evenly over all steps.
  std::size_t quota = 0;
  if (rehearse) {
    quota = config.admission_quota > 0 ? config.admission_quota : model.pool.capacity() / num_stages;
    quota = std::min(quota, n);
  }
  std::vector<std::size_t> candidates(n);
  std::iota(candidates.begin(), candidates.end(), std::size_t{0});
  rng.shuffle(candidates);
  candidates.resize(quota);

  Gradients scratch = Gradients::zeros_for(model, flags.finetune_scorer);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<BatchItem> items;
  std::size_t step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
      items.clear();
      const std::size_t end = std::min(n, (s + 1) * n_current);
      for (std::size_t i = s * n_current; i < end; ++i) {
        const auto& inst = stage.train[order[i]];
        items.push_back({features_of(inst), inst.predicate, false, std::nullopt});
      }
      for (std::size_t i = 0; i < n_replay; ++i) {
        if (balanced) {
          const Exemplar* e = learner.balanced->sample(rng);
          if (!e) break;
          items.push_back({features_of(*e), e->predicate, true, std::nullopt});
        } else {
          const auto slot = model.pool.sample_stored(rng);
          if (!slot) break;
          const auto& e = model.pool.entry(slot->first).store[slot->second];
          items.push_back({features_of(e), e.predicate, true, slot});
        }
        ++summary.replayed;
      }
      epoch_loss += grad_step(model, vocab, items, config, flags, learner.optimizer, scratch, rng);

      const std::size_t due = (step + 1) * quota / total_steps;
      while (summary.offered < due) {
        const auto& inst = stage.train[candidates[summary.offered++]];
        if (balanced) {
          learner.balanced->add(inst, rng);
          ++summary.admitted;
        } else if (admit_exemplar(model.pool, inst, rng)) {
          ++summary.admitted;
        }
      }
    }
    summary.epoch_loss.push_back(epoch_loss / static_cast<double>(steps_per_epoch));
  }
  summary.steps = step;
  model.pool.check_invariants();
  return summary;
}

std::vector<RankedPredicate> predict(const ModelState& state, const PredicateVocab& vocab, const FeatureSet& query,
                                     const RoutingFlags& flags, std::span<const Label> candidates, SeededRng& rng) {
  const Route r = plan_route(state, query, flags, rng);
  const AssembledPrompt x = assemble_for_route(state, vocab, r, query, false);
  const auto probs = score(state.scorer, x);
  return rank_predicates(probs, vocab, candidates);
}

// ---------------------------------------------------------------------------
// Checkpoint

void save_checkpoint(ModelState& state, const std::vector<std::pair<std::string, std::string>>& config_echo,
                     const std::string& pool_ref, const std::filesystem::path& path) {
  std::string out = "LSGG-CKPT 1\n";
  for (const auto& [k, v] : config_echo) {
    require(k.find_first_of(" \t\n") == std::string::npos && v.find('\n') == std::string::npos,
            "checkpoint: config keys must be single words");
    out += "config " + k + " " + v + "\n";
  }
  out += "pool " + pool_ref + "\n";
  for_each_trainable(state, true, [&](const std::string& name, std::span<double> v) {
    out += "tensor " + name + " " + std::to_string(v.size()) + "\n";
    text::append_values(out, v, true);
    out += '\n';
  });
  out += "end\n";
  text::write_file(path, out);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  auto in = text::open_in(path);
  std::string line;
  std::size_t line_no = 0;
  auto next = [&](const char* what) {
    if (!std::getline(in, line)) fail(ErrorCode::kParse, path.string() + ": truncated checkpoint (expected " + what + ")");
    ++line_no;
  };
  auto ctx = [&] { return path.string() + ":" + std::to_string(line_no); };
  next("header");
  const auto head = text::split_ws(line);
  if (head.size() != 2 || head[0] != "LSGG-CKPT") fail(ErrorCode::kVersion, ctx() + ": not a checkpoint file");
  if (head[1] != "1") fail(ErrorCode::kVersion, ctx() + ": unsupported checkpoint version " + std::string(head[1]));
  Checkpoint c;
  bool have_pool = false;
  for (;;) {
    next("'end'");
    const auto toks = text::split_ws(line);
    if (toks.empty()) continue;
    if (toks[0] == "end") break;
    if (toks[0] == "config") {
      if (toks.size() < 2) fail(ErrorCode::kParse, ctx() + ": config line without key");
      const auto key_pos = line.find(toks[1]);
      std::string value = text::trim(line.substr(key_pos + toks[1].size()));
      c.config_echo.emplace_back(std::string(toks[1]), value);
    } else if (toks[0] == "pool") {
      c.pool_ref = toks.size() > 1 ? text::trim(line.substr(line.find("pool") + 4)) : "";
      have_pool = true;
    } else if (toks[0] == "tensor") {
      if (toks.size() != 3) fail(ErrorCode::kParse, ctx() + ": malformed tensor header");
      const std::string name(toks[1]);
      const auto count = static_cast<std::size_t>(text::parse_uint(toks[2], ctx()));
      next("tensor values");
      const auto vals = text::split_ws(line);
      if (vals.size() != count) fail(ErrorCode::kParse, ctx() + ": tensor " + name + " has wrong value count");
      std::vector<double> v;
      v.reserve(count);
      for (auto t : vals) v.push_back(text::parse_double(t, ctx()));
      c.tensors.emplace_back(name, std::move(v));
    } else {
      fail(ErrorCode::kParse, ctx() + ": unexpected line '" + std::string(toks[0]) + "'");
    }
  }
  if (!have_pool) fail(ErrorCode::kParse, path.string() + ": checkpoint lacks a pool reference");
  return c;
}

void restore_checkpoint(const Checkpoint& ckpt, ModelState& state) {
  std::map<std::string, const std::vector<double>*> by_name;
  for (const auto& [n, v] : ckpt.tensors) by_name[n] = &v;
  for_each_trainable(state, true, [&](const std::string& name, std::span<double> v) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) fail(ErrorCode::kParse, "checkpoint lacks tensor " + name);
    if (it->second->size() != v.size()) fail(ErrorCode::kParse, "checkpoint tensor " + name + " has the wrong size");
    std::copy(it->second->begin(), it->second->end(), v.begin());
  });
}

}  // namespace lsgg
