// Copyright (C) 2026 The lsgg Authors
// SPDX-License-Identifier: Apache-2.0

// Knowledge-aware prompt memory: each entry pairs a block of learnable prompt
// tokens with a knowledge key and a small exemplar store.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <vector>

#include "lsgg/datastream.hpp"
#include "lsgg/numerics.hpp"

namespace lsgg {

struct Exemplar {
  Vec f_c;
  Vec f_s;
  Vec f_o;
  Vec f_r;
  Label predicate = 0;
  // Admission sequence number inside its entry; breaks retrieval ties (earliest wins).
  std::uint64_t inserted_at = 0;

  friend bool operator==(const Exemplar& a, const Exemplar& b);
};

Exemplar to_exemplar(const RelationInstance& instance);

struct PromptEntry {
  Matrix tokens;  // n_p x d_tok
  Vec key;        // d_c
  std::vector<Exemplar> store;
  std::uint64_t seen_count = 0;

  friend bool operator==(const PromptEntry& a, const PromptEntry& b);
};

struct PoolShape {
  std::size_t n_t = 100;  // prompt entries
  std::size_t n_p = 8;    // tokens per prompt
  std::size_t d_tok = 64;
  std::size_t d_c = 64;
  std::size_t n_e = 20;  // exemplars per entry

  friend bool operator==(const PoolShape&, const PoolShape&) = default;
};

class PromptPool {
 public:
  PromptPool() = default;

  // Keys are random unit vectors; prompt tokens are N(0, 1/d_tok).
  static PromptPool init(const PoolShape& shape, SeededRng& rng);

  const PoolShape& shape() const { return shape_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return shape_.n_t * shape_.n_e; }
  std::size_t stored() const;

  const PromptEntry& entry(std::size_t i) const { return entries_.at(i); }
  PromptEntry& entry(std::size_t i) { return entries_.at(i); }
  const std::vector<PromptEntry>& entries() const { return entries_; }

  // Checks |E_i| <= n_e, token shapes and finiteness; throws kState on violation.
  void check_invariants() const;

  // Uniform draw over every stored exemplar: (entry, slot). None when empty.
  std::optional<std::pair<std::size_t, std::size_t>> sample_stored(SeededRng& rng) const;

  friend bool operator==(const PromptPool& a, const PromptPool& b);

 private:
  friend PromptPool deserialize_pool(const std::filesystem::path& path);

  PoolShape shape_;
  std::vector<PromptEntry> entries_;
};

struct RetrievedPrompt {
  std::size_t entry = 0;
  double similarity = 0.0;
};

// Top-K entries by cosine(f_c, key), most similar first; ties to the lower index.
std::vector<RetrievedPrompt> retrieve_topk_prompts(const PromptPool& pool, const Vec& f_c, std::size_t k);

// Slot of the stored exemplar whose relation feature is most cosine-similar to
// `f_r`; earliest admission wins ties. `exclude` skips one slot (self-retrieval
// during rehearsal). None if nothing is eligible.
std::optional<std::size_t> retrieve_exemplar(const PromptEntry& entry, const Vec& f_r,
                                             std::optional<std::size_t> exclude = std::nullopt);

// Routes the instance to the entry with the nearest key and applies reservoir
// admission there. Returns the entry index if stored, none if discarded.
std::optional<std::size_t> admit_exemplar(PromptPool& pool, const RelationInstance& instance, SeededRng& rng);

// "LSGG-POOL 1" text container; doubles are hex-floats so the round trip is exact.
void serialize_pool(const PromptPool& pool, const std::filesystem::path& path);
PromptPool deserialize_pool(const std::filesystem::path& path);

// Rehearsal buffer for non-prompt baselines: total capacity C split evenly as
// C/M slots per seen predicate (M grows as predicates arrive). Over-quota
// classes give up a random slot when a new class needs room; a class at its
// quota keeps a reservoir sample of its own stream.
class ClassBalancedBuffer {
 public:
  explicit ClassBalancedBuffer(std::size_t capacity);

  void add(const RelationInstance& instance, SeededRng& rng);

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const;
  std::size_t quota() const;
  std::size_t count(Label label) const;
  const std::map<Label, std::vector<Exemplar>>& classes() const { return classes_; }

  // Uniform over stored exemplars; nullptr when empty.
  const Exemplar* sample(SeededRng& rng) const;

 private:
  std::size_t capacity_;
  std::map<Label, std::vector<Exemplar>> classes_;
  std::map<Label, std::uint64_t> seen_;
};

}  // namespace lsgg
