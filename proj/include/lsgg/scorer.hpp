// Copyright (C) 2026 The lsgg Authors
// SPDX-License-Identifier: Apache-2.0

// In-context prompt assembly and the frozen scoring model that stands in for a
// pretrained language model.

#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "lsgg/datastream.hpp"
#include "lsgg/numerics.hpp"
#include "lsgg/prompt_pool.hpp"
#include "lsgg/token_mapper.hpp"

namespace lsgg {

// Closed word vocabulary over predicate names. Token 0 is padding.
class PredicateVocab {
 public:
  static constexpr int kPad = 0;

  PredicateVocab() = default;
  explicit PredicateVocab(const std::map<Label, std::vector<std::string>>& words);

  // "<label_id> <word> [<word>...]" per line; '#' lines ignored.
  static PredicateVocab load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  // "rel<c>" names; every third predicate gets a second particle word.
  static PredicateVocab synthetic(int n_pred);

  int vocab_size() const { return static_cast<int>(words_.size()); }
  // Longest predicate in tokens (the number of mask slots).
  int mask_length() const { return max_len_; }
  const std::vector<int>& tokens(Label label) const;
  std::vector<int> padded(Label label) const;
  std::vector<Label> labels() const;
  bool contains(Label label) const { return tokens_.contains(label); }
  const std::string& word(int token) const { return words_.at(static_cast<std::size_t>(token)); }
  std::string name(Label label) const;

 private:
  std::vector<std::string> words_{"<pad>"};
  std::map<Label, std::vector<int>> tokens_;
  std::map<Label, std::vector<std::string>> names_;
  int max_len_ = 0;
};

struct ScorerConfig {
  int vocab_size = 0;
  int d_tok = 64;
  int mask_len = 1;
  int max_positions = 512;
  // Readouts start from the tied embedding plus this much per-slot noise.
  double readout_noise = 0.1;
};

// Frozen unless fine-tuning: token embedding table, per-mask-slot readouts
// (d_tok -> V) and positional pooling logits.
struct ScorerParams {
  Matrix embedding;             // V x d_tok
  std::vector<Matrix> readout;  // mask_len x (V x d_tok)
  Vec position_logits;          // max_positions; zeros = uniform pooling

  static ScorerParams init(const ScorerConfig& config, SeededRng& rng);
  static ScorerParams zeros_like(const ScorerParams& other);
  int vocab_size() const { return static_cast<int>(embedding.rows()); }
  int d_tok() const { return static_cast<int>(embedding.cols()); }
  int mask_len() const { return static_cast<int>(readout.size()); }
  void for_each(const std::function<void(const std::string&, std::span<double>)>& fn);
};

enum class SegmentKind { kPrompt, kContext, kRelation, kSubject, kObject, kLabel, kMask };

struct Segment {
  SegmentKind kind = SegmentKind::kPrompt;
  Eigen::Index begin = 0;
  Eigen::Index rows = 0;
  // Prompt segments: pool entry. Other segments: -1.
  long entry = -1;
  // Which exemplar a block belongs to: -1 for the query, else the position of
  // the context item in similarity-descending order (1 = second most similar).
  int source = -1;
  // Encoded feature blocks: position in the prompt's mapper batch.
  int tape = -1;
  // Label segments: padded token ids.
  std::vector<int> label_tokens;
};

struct AssembledPrompt {
  Matrix tokens;
  std::vector<Segment> segments;
  std::vector<Eigen::Index> mask_rows;
  // Entries in sequence order with their similarity; the last one accompanies the query.
  std::vector<RetrievedPrompt> order;
  MapperTape tape;  // filled when recorded
};

// One retrieved prompt and the exemplar chosen from its store (may be null).
struct ContextItem {
  std::size_t entry = 0;
  double similarity = 0.0;
  const Exemplar* exemplar = nullptr;
};

enum class SegmentOrder { kAscendingSimilarity, kShuffled };

struct AssemblyInputs {
  const PromptPool* pool = nullptr;
  const MapperParams* mapper = nullptr;
  const ScorerParams* scorer = nullptr;
  const Matrix* mask_tokens = nullptr;  // mask_len x d_tok
  const PredicateVocab* vocab = nullptr;
};

// Builds [v_K; e_K; y_K; ...; v_2; e_2; y_2; v_1; e_q; y_mask]. The most similar
// item always accompanies the query; the others follow ascending similarity
// (or a random order with kShuffled, which requires `rng`). Items whose
// exemplar is null contribute their prompt only.
AssembledPrompt assemble_prompt(const AssemblyInputs& in, std::span<const ContextItem> retrieved,
                                const FeatureSet& query, SegmentOrder order = SegmentOrder::kAscendingSimilarity,
                                SeededRng* rng = nullptr, bool record_tapes = false);

struct ScoreCache {
  Vec weights;  // pooling weights over rows
  Vec pooled;
  std::vector<Vec> hidden;  // pooled + mask row, per slot
  std::vector<Vec> probs;
};

// Per mask slot j: p_j = softmax(R_j (sum_n a_n x_n + x_mask_j)), a = softmax(position logits).
std::vector<Vec> score(const ScorerParams& params, const AssembledPrompt& x, ScoreCache* cache = nullptr);

// Given dLoss/dlogits per slot, returns dLoss/dtokens and (optionally) accumulates scorer grads.
Matrix score_backward(const ScorerParams& params, const AssembledPrompt& x, const ScoreCache& cache,
                      std::span<const Vec> d_logits, ScorerParams* grads);

struct RankedPredicate {
  Label label = 0;
  double score = 0.0;  // mean log-probability over the predicate's tokens
};

// Ranks `candidates` (all vocabulary labels when empty), best first, ties by label id.
std::vector<RankedPredicate> rank_predicates(std::span<const Vec> distributions, const PredicateVocab& vocab,
                                             std::span<const Label> candidates = {});

}  // namespace lsgg
