// Copyright (C) 2026 The lsgg Authors
// SPDX-License-Identifier: Apache-2.0

// Visual-to-token mapper. A feature vector f of kind * is projected to l*
// token vectors, followed by the n* soft position tokens p*; a depth-L stack
// of residual token-mixing layers runs over that sequence and the rows at the
// p* positions are read out as the kind's token block.
//
//   proj   = W* f + b*                       reshaped to l* x d_tok rows
//   H0     = [ proj ; p* + 1 mean(proj) ]
//   H_k+1  = H_k + tanh(H_k U_k + 1 mean(H_k) V_k + 1 c_k)
//   t*     = rows l*..l*+n*-1 of H_L
//
// The pooled projection seeds the prompt positions so that the depth-zero
// mapper is still an affine image of f. l* is shared by all kinds; at depth
// <= 1 only the mean of the projected rows reaches the read-out, so l* = 1 is
// the default.

#pragma once

#include <array>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lsgg/numerics.hpp"

namespace lsgg {

enum class FeatureKind : int { kContext = 0, kRelation = 1, kSubject = 2, kObject = 3 };
inline constexpr std::array<FeatureKind, 4> kFeatureKinds = {FeatureKind::kContext, FeatureKind::kRelation,
                                                             FeatureKind::kSubject, FeatureKind::kObject};
std::string_view kind_name(FeatureKind kind);

struct TokenCounts {
  int context = 4;
  int relation = 4;
  int subject = 2;
  int object = 2;

  int of(FeatureKind kind) const;
  int total() const { return context + relation + subject + object; }
  friend bool operator==(const TokenCounts&, const TokenCounts&) = default;
};

// "small" 2/1/1/1, "default" 4/4/2/2, "large" 8/4/4/4.
TokenCounts token_preset(std::string_view name);

struct MapperConfig {
  int d_tok = 64;
  int depth = 1;
  int proj_rows = 0;  // l*; 0 means n* of each kind
  TokenCounts tokens;
  // Feature dimensions: context, relation, subject/object.
  int d_c = 64;
  int d_r = 64;
  int d_o = 32;

  int input_dim(FeatureKind kind) const;
  int proj_rows_of(FeatureKind kind) const { return proj_rows > 0 ? proj_rows : tokens.of(kind); }
  friend bool operator==(const MapperConfig&, const MapperConfig&) = default;
};

struct MapperParams {
  MapperConfig config;
  std::array<Matrix, 4> proj_w;     // (l*·d_tok) x d_*
  std::array<Vec, 4> proj_b;        // l*·d_tok
  std::array<Matrix, 4> positions;  // n* x d_tok
  std::vector<Matrix> mix_u;        // depth x (d_tok x d_tok)
  std::vector<Matrix> mix_v;
  std::vector<Vec> mix_c;

  static MapperParams init(const MapperConfig& config, SeededRng& rng);
  static MapperParams zeros_like(const MapperParams& other);

  // Visits every tensor in a fixed order with a stable name.
  void for_each(const std::function<void(const std::string&, std::span<double>)>& fn);
};

// One feature to encode.
struct FeatureRef {
  const Vec* f = nullptr;
  FeatureKind kind = FeatureKind::kContext;
};

// Forward activations of a batch of features, kept for the backward pass. The
// batch shares one stacked sequence: all projected rows first (l* per feature),
// then all read-out rows, so each mixing layer is a single matrix product.
struct MapperTape {
  std::vector<FeatureKind> kinds;
  std::array<Matrix, 4> inputs;                      // per kind: d_* x count, columns in batch order
  std::array<std::vector<std::size_t>, 4> members;  // per kind: batch positions
  std::vector<Eigen::Index> proj_begin;              // first projected row of each feature
  std::vector<Eigen::Index> read_begin;              // first read-out row of each feature
  Eigen::Index proj_total = 0;
  std::vector<Matrix> hidden;       // stacked H_0..H_L
  std::vector<Matrix> means;        // per layer: feature x d_tok row means of H_k
  std::vector<Matrix> activations;  // tanh(Z_k), k < L; the last covers only the read-out rows
};

// Token block (n* x d_tok) per feature, in input order. `tape` may be null.
std::vector<Matrix> encode_features(const MapperParams& params, std::span<const FeatureRef> features,
                                    MapperTape* tape = nullptr);

// Accumulates parameter gradients given dLoss/dTokens for every feature of the
// tape (same order; an empty matrix means no gradient for that feature).
void encode_features_backward(const MapperParams& params, const MapperTape& tape, std::span<const Matrix> d_tokens,
                              MapperParams& grads);

// Single-feature forms of the above.
Matrix encode_feature(const MapperParams& params, const Vec& f, FeatureKind kind, MapperTape* tape = nullptr);
void encode_feature_backward(const MapperParams& params, const MapperTape& tape, const Matrix& d_tokens,
                             MapperParams& grads);

struct FeatureSet {
  const Vec* context = nullptr;
  const Vec* relation = nullptr;
  const Vec* subject = nullptr;
  const Vec* object = nullptr;

  const Vec& of(FeatureKind kind) const;
};

// Concatenation [t^c; t^r; t^s; t^o]; throws if any feature is missing.
Matrix encode_exemplar(const MapperParams& params, const FeatureSet& features, MapperTape* tape = nullptr);

}  // namespace lsgg
