// Copyright (C) 2026 The lsgg Authors
// SPDX-License-Identifier: Apache-2.0

// Losses, analytic gradients and the per-stage training loop with rehearsal.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lsgg/datastream.hpp"
#include "lsgg/prompt_pool.hpp"
#include "lsgg/scorer.hpp"
#include "lsgg/token_mapper.hpp"

namespace lsgg {

enum class AuxLoss { kNone, kTokenUnitNorm };
enum class BufferPolicy { kReservoir, kClassBalanced };

struct TrainConfig {
  double alpha = 0.2;
  double lambda = 0.5;
  double lr = 0.002;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int epochs = 20;
  int batch_size = 64;
  double rho = 0.25;  // replayed fraction of each batch
  AuxLoss aux = AuxLoss::kNone;
  // Exemplars admitted per stage; 0 means pool capacity / number of stages.
  std::size_t admission_quota = 0;
  double scorer_lr_scale = 0.1;  // fine-tuning only

  void validate() const;
};

// How a query is turned into an in-context prompt. The defaults are the full
// method; each flag switches one component to its ablated form.
struct RoutingFlags {
  bool knowledge_retrieval = true;  // false: K random prompts
  bool exemplar_retrieval = true;   // false: random exemplar from each store
  bool ascending_order = true;      // false: random order of context segments
  bool in_context = true;           // false: single shared prompt, no exemplars
  bool finetune_scorer = false;
  std::size_t top_k = 3;
  BufferPolicy buffer = BufferPolicy::kReservoir;
};

// Everything the model owns. Only the scorer is frozen by default.
struct ModelState {
  MapperParams mapper;
  Matrix mask_tokens;  // mask_len x d_tok, shared by all queries
  ScorerParams scorer;
  PromptPool pool;
};

struct ModelShape {
  MapperConfig mapper;
  PoolShape pool;
  int max_positions = 0;  // 0: sized from the pool and token counts
};

ModelState init_model(const ModelShape& shape, const PredicateVocab& vocab, SeededRng& rng);

struct Gradients {
  MapperParams mapper;
  Matrix mask_tokens;
  std::vector<Matrix> prompt_tokens;
  std::vector<Vec> keys;
  std::optional<ScorerParams> scorer;

  static Gradients zeros_for(const ModelState& state, bool with_scorer);
  void set_zero();
};

using TensorVisitor = std::function<void(const std::string&, std::span<double>)>;

// Trainable tensors in a fixed order: mapper, mask tokens, then per pool entry
// its prompt tokens and key, then (fine-tuning only) the scorer.
void for_each_trainable(ModelState& state, bool with_scorer, const TensorVisitor& fn);
void for_each_gradient(Gradients& grads, const TensorVisitor& fn);

// A fully resolved in-context route for one query: selection is treated as
// constant when differentiating.
struct Route {
  std::vector<ContextItem> items;
  std::vector<std::size_t> selected_keys;  // keys pulled by the alignment loss
  bool shuffled = false;
  std::uint64_t shuffle_seed = 0;
};

Route plan_route(const ModelState& state, const FeatureSet& query, const RoutingFlags& flags, SeededRng& rng,
                 std::optional<std::pair<std::size_t, std::size_t>> exclude = std::nullopt);

AssembledPrompt assemble_for_route(const ModelState& state, const PredicateVocab& vocab, const Route& route,
                                   const FeatureSet& query, bool record_tapes);

// sum_i (1 - cos(f_c, k_i)) over the selected keys.
double loss_key_alignment(const Vec& f_c, std::span<const Vec> keys);
// -sum_j log p_j(token_j(target)) over the target's non-padding tokens.
double loss_predicate_ce(std::span<const Vec> distributions, Label target, const PredicateVocab& vocab);
double loss_total(double l1_aux, double l2, double l3, const TrainConfig& config);
// Mean over rows of (||t||^2 - 1)^2.
double loss_token_unit_norm(const Matrix& tokens);

struct InstanceLoss {
  double aux = 0.0;
  double key = 0.0;
  double ce = 0.0;
  double total = 0.0;
  std::vector<Vec> probs;
};

// Loss of one query under a fixed route. Replayed exemplars contribute the
// classification term only. When `grads` is set, d(weight * total)/dparams is
// accumulated into it.
InstanceLoss instance_loss(const ModelState& state, const PredicateVocab& vocab, const FeatureSet& query, Label target,
                           const Route& route, const TrainConfig& config, bool replay, Gradients* grads,
                           double weight = 1.0);

class AdamW {
 public:
  explicit AdamW(const TrainConfig& config) : config_(config) {}

  void step(ModelState& state, Gradients& grads, bool with_scorer);
  long steps() const { return t_; }

 private:
  TrainConfig config_;
  long t_ = 0;
  std::vector<Vec> m_;
  std::vector<Vec> v_;
};

struct BatchItem {
  FeatureSet features;
  Label target = 0;
  bool replay = false;
  std::optional<std::pair<std::size_t, std::size_t>> exclude;  // own pool slot for replayed exemplars
};

// One optimizer step on the batch mean of instance losses. Returns the batch loss.
double grad_step(ModelState& state, const PredicateVocab& vocab, std::span<const BatchItem> batch,
                 const TrainConfig& config, const RoutingFlags& flags, AdamW& optimizer, Gradients& scratch,
                 SeededRng& rng);

struct StageSummary {
  std::size_t stage = 0;
  std::size_t steps = 0;
  std::size_t admitted = 0;
  std::size_t offered = 0;
  std::size_t replayed = 0;
  std::vector<double> epoch_loss;
};

// State carried across stages besides the model itself.
struct LearnerState {
  ModelState model;
  AdamW optimizer;
  std::optional<ClassBalancedBuffer> balanced;
};

// Trains on one stage's training split. Receives only that split and the
// learner state; earlier stages are reachable solely through the pool.
StageSummary train_stage(const StageDataset& stage, std::size_t num_stages, LearnerState& learner,
                         const PredicateVocab& vocab, const TrainConfig& config, const RoutingFlags& flags,
                         SeededRng& rng);

// Ranked candidate predicates for one query under the current model.
std::vector<RankedPredicate> predict(const ModelState& state, const PredicateVocab& vocab, const FeatureSet& query,
                                     const RoutingFlags& flags, std::span<const Label> candidates, SeededRng& rng);

FeatureSet features_of(const RelationInstance& r);
FeatureSet features_of(const Exemplar& e);

// "LSGG-CKPT 1": config echo, pool file reference, then every trainable and
// scorer tensor as hex-floats.
void save_checkpoint(ModelState& state, const std::vector<std::pair<std::string, std::string>>& config_echo,
                     const std::string& pool_ref, const std::filesystem::path& path);

struct Checkpoint {
  std::vector<std::pair<std::string, std::string>> config_echo;
  std::string pool_ref;
  std::vector<std::pair<std::string, std::vector<double>>> tensors;
};

Checkpoint read_checkpoint(const std::filesystem::path& path);
// Copies tensors by name into `state`, which must already have the right shapes.
void restore_checkpoint(const Checkpoint& ckpt, ModelState& state);

}  // namespace lsgg
