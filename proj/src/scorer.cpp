// Copyright (C) 2026 The lsgg Authors
// SPDX-License-Identifier: Apache-2.0

#include "lsgg/scorer.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "lsgg/error.hpp"
#include "lsgg/text_io.hpp"

namespace lsgg {

// ---------------------------------------------------------------------------
// PredicateVocab

PredicateVocab::PredicateVocab(const std::map<Label, std::vector<std::string>>& words) {
  std::map<std::string, int> ids;
  for (const auto& [label, seq] : words) {
    require(!seq.empty(), "predicate " + std::to_string(label) + " has no words");
    std::vector<int> toks;
    for (const auto& w : seq) {
      require(!w.empty() && w != "<pad>", "invalid predicate word '" + w + "'");
      auto [it, inserted] = ids.emplace(w, static_cast<int>(words_.size()));
      if (inserted) words_.push_back(w);
      toks.push_back(it->second);
    }
    max_len_ = std::max(max_len_, static_cast<int>(toks.size()));
    tokens_[label] = std::move(toks);
    names_[label] = seq;
  }
}

PredicateVocab PredicateVocab::load(const std::filesystem::path& path) {
  auto in = text::open_in(path);
  std::map<Label, std::vector<std::string>> words;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string ctx = path.string() + ":" + std::to_string(line_no);
    const auto toks = text::split_ws(line);
    if (toks.empty() || toks[0].starts_with('#')) continue;
    if (toks.size() < 2) fail(ErrorCode::kParse, ctx + ": predicate with zero tokens");
    const auto label = static_cast<Label>(text::parse_int(toks[0], ctx));
    if (words.contains(label)) fail(ErrorCode::kParse, ctx + ": duplicate predicate id");
    auto& seq = words[label];
    for (std::size_t i = 1; i < toks.size(); ++i) seq.emplace_back(toks[i]);
  }
  return PredicateVocab(words);
}

void PredicateVocab::save(const std::filesystem::path& path) const {
  std::string out;
  for (const auto& [label, seq] : names_) {
    out += std::to_string(label);
    for (const auto& w : seq) out += ' ' + w;
    out += '\n';
  }
  text::write_file(path, out);
}

PredicateVocab PredicateVocab::synthetic(int n_pred) {
  require(n_pred >= 1, "synthetic vocabulary needs at least one predicate");
  static const char* kParticles[] = {"on", "in", "at", "of"};
  std::map<Label, std::vector<std::string>> words;
  for (int c = 0; c < n_pred; ++c) {
    auto& seq = words[c];
    seq.push_back("rel" + std::to_string(c));
    if (c % 3 == 1) seq.emplace_back(kParticles[(c / 3) % 4]);
  }
  return PredicateVocab(words);
}

const std::vector<int>& PredicateVocab::tokens(Label label) const {
  const auto it = tokens_.find(label);
  if (it == tokens_.end()) fail(ErrorCode::kInvalidArgument, "predicate " + std::to_string(label) + " not in vocabulary");
  return it->second;
}

std::vector<int> PredicateVocab::padded(Label label) const {
  auto t = tokens(label);
  t.resize(static_cast<std::size_t>(max_len_), kPad);
  return t;
}

std::vector<Label> PredicateVocab::labels() const {
  std::vector<Label> out;
  for (const auto& [label, toks] : tokens_) out.push_back(label);
  return out;
}

std::string PredicateVocab::name(Label label) const {
  std::string out;
  for (const auto& w : names_.at(label)) out += (out.empty() ? "" : " ") + w;
  return out;
}

// ---------------------------------------------------------------------------
// ScorerParams

ScorerParams ScorerParams::init(const ScorerConfig& config, SeededRng& rng) {
  require(config.vocab_size >= 2, "scorer: vocabulary must hold padding plus at least one word");
  require(config.d_tok >= 1 && config.mask_len >= 1 && config.max_positions >= 1, "scorer: invalid shape");
  ScorerParams p;
  const auto v = static_cast<Eigen::Index>(config.vocab_size);
  const auto d = static_cast<Eigen::Index>(config.d_tok);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  p.embedding = random_gaussian_matrix(v, d, scale, rng);
  // Readouts are tied to the embedding table, as in GPT-style decoders, with a
  // small per-slot perturbation so each mask position has its own head.
  for (int j = 0; j < config.mask_len; ++j) {
    p.readout.push_back(p.embedding + random_gaussian_matrix(v, d, config.readout_noise * scale, rng));
  }
  p.position_logits = Vec::Zero(config.max_positions);
  return p;
}

ScorerParams ScorerParams::zeros_like(const ScorerParams& other) {
  ScorerParams p = other;
  p.for_each([](const std::string&, std::span<double> v) { std::fill(v.begin(), v.end(), 0.0); });
  return p;
}

void ScorerParams::for_each(const std::function<void(const std::string&, std::span<double>)>& fn) {
  fn("scorer.embedding", as_span(embedding));
  for (std::size_t j = 0; j < readout.size(); ++j) fn("scorer.readout" + std::to_string(j), as_span(readout[j]));
  fn("scorer.position_logits", as_span(position_logits));
}

// ---------------------------------------------------------------------------
// Assembly

namespace {

SegmentKind segment_kind(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::kContext:
      return SegmentKind::kContext;
    case FeatureKind::kRelation:
      return SegmentKind::kRelation;
    case FeatureKind::kSubject:
      return SegmentKind::kSubject;
    case FeatureKind::kObject:
      return SegmentKind::kObject;
  }
  return SegmentKind::kContext;
}

class Builder {
 public:
  Builder(const AssemblyInputs& in, bool record) : in_(in), record_(record) {}

  void prompt(std::size_t entry) {
    const auto& tokens = in_.pool->entry(entry).tokens;
    Segment s;
    s.kind = SegmentKind::kPrompt;
    s.entry = static_cast<long>(entry);
    push(s, tokens);
  }

  // Encoded later, all features of the prompt in one batch.
  void features(const FeatureSet& f, int source) {
    for (auto kind : kFeatureKinds) {
      Segment s;
      s.kind = segment_kind(kind);
      s.source = source;
      s.tape = static_cast<int>(pending_.size());
      pending_.push_back({&f.of(kind), kind});
      pending_segment_.push_back(out_.segments.size());
      push(s, Matrix(in_.mapper->config.tokens.of(kind), in_.scorer->d_tok()));
    }
  }

  void label(Label predicate, int source) {
    Segment s;
    s.kind = SegmentKind::kLabel;
    s.source = source;
    s.label_tokens = in_.vocab->padded(predicate);
    Matrix rows(static_cast<Eigen::Index>(s.label_tokens.size()), in_.scorer->d_tok());
    for (std::size_t j = 0; j < s.label_tokens.size(); ++j) {
      const int tok = s.label_tokens[j];
      if (tok >= in_.scorer->vocab_size()) fail(ErrorCode::kInvalidArgument, "label token outside scorer vocabulary");
      rows.row(static_cast<Eigen::Index>(j)) = in_.scorer->embedding.row(tok);
    }
    push(s, rows);
  }

  void mask() {
    Segment s;
    s.kind = SegmentKind::kMask;
    const Eigen::Index begin = rows_;
    push(s, *in_.mask_tokens);
    for (Eigen::Index j = 0; j < in_.mask_tokens->rows(); ++j) out_.mask_rows.push_back(begin + j);
  }

  AssembledPrompt finish() {
    auto encoded = encode_features(*in_.mapper, pending_, record_ ? &out_.tape : nullptr);
    for (std::size_t i = 0; i < encoded.size(); ++i) blocks_[pending_segment_[i]] = std::move(encoded[i]);
    out_.tokens.resize(rows_, in_.scorer->d_tok());
    for (std::size_t i = 0; i < out_.segments.size(); ++i) {
      out_.tokens.middleRows(out_.segments[i].begin, out_.segments[i].rows) = blocks_[i];
    }
    return std::move(out_);
  }

  AssembledPrompt& result() { return out_; }

 private:
  void push(Segment s, const Matrix& block) {
    if (block.cols() != in_.scorer->d_tok()) {
      fail(ErrorCode::kInvalidArgument, "assemble_prompt: token width differs from scorer d_tok");
    }
    s.begin = rows_;
    s.rows = block.rows();
    rows_ += block.rows();
    out_.segments.push_back(std::move(s));
    blocks_.push_back(block);
  }

  const AssemblyInputs& in_;
  bool record_;
  AssembledPrompt out_;
  std::vector<Matrix> blocks_;
  std::vector<FeatureRef> pending_;
  std::vector<std::size_t> pending_segment_;
  Eigen::Index rows_ = 0;
};

}  // namespace

AssembledPrompt assemble_prompt(const AssemblyInputs& in, std::span<const ContextItem> retrieved,
                                const FeatureSet& query, SegmentOrder order, SeededRng* rng, bool record_tapes) {
  require(in.pool && in.mapper && in.scorer && in.mask_tokens && in.vocab, "assemble_prompt: incomplete inputs");
  require(!retrieved.empty(), "assemble_prompt: K must be at least 1");
  require(in.mask_tokens->rows() == in.vocab->mask_length(),
          "assemble_prompt: mask token count differs from the vocabulary's mask length");

  std::vector<ContextItem> items(retrieved.begin(), retrieved.end());
  std::stable_sort(items.begin(), items.end(), [](const ContextItem& a, const ContextItem& b) {
    return a.similarity > b.similarity || (a.similarity == b.similarity && a.entry < b.entry);
  });
  const ContextItem top = items.front();
  std::vector<std::pair<ContextItem, int>> context;  // item, rank among the descending list
  for (std::size_t i = items.size(); i-- > 1;) context.emplace_back(items[i], static_cast<int>(i));
  if (order == SegmentOrder::kShuffled) {
    require(rng != nullptr, "assemble_prompt: shuffled order needs an rng");
    rng->shuffle(context);
  }

  Builder b(in, record_tapes);
  for (const auto& [item, rank] : context) {
    b.prompt(item.entry);
    b.result().order.push_back({item.entry, item.similarity});
    if (item.exemplar) {
      const auto& e = *item.exemplar;
      b.features(FeatureSet{&e.f_c, &e.f_r, &e.f_s, &e.f_o}, rank);
      b.label(e.predicate, rank);
    }
  }
  b.prompt(top.entry);
  b.result().order.push_back({top.entry, top.similarity});
  b.features(query, -1);
  b.mask();
  return b.finish();
}

// ---------------------------------------------------------------------------
// Scoring

std::vector<Vec> score(const ScorerParams& params, const AssembledPrompt& x, ScoreCache* cache) {
  const Eigen::Index n = x.tokens.rows();
  if (x.tokens.cols() != params.d_tok()) fail(ErrorCode::kInvalidArgument, "score: row dimension mismatch");
  if (static_cast<int>(x.mask_rows.size()) != params.mask_len()) {
    fail(ErrorCode::kInvalidArgument, "score: mask slot count differs from the scorer's");
  }
  if (n > params.position_logits.size()) {
    fail(ErrorCode::kInvalidArgument, "score: prompt longer than the scorer's position table");
  }
  ScoreCache local;
  ScoreCache& c = cache ? *cache : local;
  c.weights = softmax(params.position_logits.head(n));
  c.pooled = x.tokens.transpose() * c.weights;
  c.hidden.clear();
  c.probs.clear();
  for (std::size_t j = 0; j < x.mask_rows.size(); ++j) {
    Vec h = c.pooled + x.tokens.row(x.mask_rows[j]).transpose();
    c.probs.push_back(softmax(params.readout[j] * h));
    c.hidden.push_back(std::move(h));
  }
  return c.probs;
}

Matrix score_backward(const ScorerParams& params, const AssembledPrompt& x, const ScoreCache& cache,
                      std::span<const Vec> d_logits, ScorerParams* grads) {
  require(d_logits.size() == x.mask_rows.size(), "score_backward: one logit gradient per mask slot");
  const Eigen::Index n = x.tokens.rows();
  Vec d_pooled = Vec::Zero(params.d_tok());
  Matrix d_tokens = Matrix::Zero(n, params.d_tok());
  for (std::size_t j = 0; j < d_logits.size(); ++j) {
    const Vec dh = params.readout[j].transpose() * d_logits[j];
    d_pooled += dh;
    d_tokens.row(x.mask_rows[j]) += dh.transpose();
    if (grads) grads->readout[j].noalias() += d_logits[j] * cache.hidden[j].transpose();
  }
  d_tokens.noalias() += cache.weights * d_pooled.transpose();
  if (grads) {
    const Vec row_dots = x.tokens * d_pooled;
    const double mean_dot = cache.pooled.dot(d_pooled);
    grads->position_logits.head(n).array() += cache.weights.array() * (row_dots.array() - mean_dot);
  }
  return d_tokens;
}

std::vector<RankedPredicate> rank_predicates(std::span<const Vec> distributions, const PredicateVocab& vocab,
                                             std::span<const Label> candidates) {
  require(static_cast<int>(distributions.size()) == vocab.mask_length(),
          "rank_predicates: expected one distribution per mask slot");
  std::vector<Label> labels = candidates.empty() ? vocab.labels() : std::vector<Label>(candidates.begin(), candidates.end());
  std::vector<RankedPredicate> out;
  out.reserve(labels.size());
  for (Label l : labels) {
    const auto& toks = vocab.tokens(l);
    if (toks.empty()) fail(ErrorCode::kInvalidArgument, "rank_predicates: predicate with zero tokens");
    double s = 0.0;
    for (std::size_t j = 0; j < toks.size(); ++j) {
      const Vec& p = distributions[j];
      if (toks[j] >= p.size()) fail(ErrorCode::kInvalidArgument, "rank_predicates: token outside distribution");
      s += std::log(p(toks[j]));
    }
    out.push_back({l, s / static_cast<double>(toks.size())});
  }
  std::sort(out.begin(), out.end(), [](const RankedPredicate& a, const RankedPredicate& b) {
    return a.score > b.score || (a.score == b.score && a.label < b.label);
  });
  return out;
}

}  // namespace lsgg
