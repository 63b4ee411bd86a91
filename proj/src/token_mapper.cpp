// Copyright (C) 2026 The lsgg Authors
// SPDX-License-Identifier: Apache-2.0

#include "lsgg/token_mapper.hpp"

#include <cmath>

#include "lsgg/error.hpp"

namespace lsgg {

std::string_view kind_name(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::kContext:
      return "context";
    case FeatureKind::kRelation:
      return "relation";
    case FeatureKind::kSubject:
      return "subject";
    case FeatureKind::kObject:
      return "object";
  }
  return "?";
}

int TokenCounts::of(FeatureKind kind) const {
  switch (kind) {
    case FeatureKind::kContext:
      return context;
    case FeatureKind::kRelation:
      return relation;
    case FeatureKind::kSubject:
      return subject;
    case FeatureKind::kObject:
      return object;
  }
  return 0;
}

TokenCounts token_preset(std::string_view name) {
  if (name == "small") return {2, 1, 1, 1};
  if (name == "default") return {4, 4, 2, 2};
  if (name == "large") return {8, 4, 4, 4};
  fail(ErrorCode::kInvalidArgument, "unknown token preset '" + std::string(name) + "'");
}

int MapperConfig::input_dim(FeatureKind kind) const {
  switch (kind) {
    case FeatureKind::kContext:
      return d_c;
    case FeatureKind::kRelation:
      return d_r;
    default:
      return d_o;
  }
}

namespace {

std::size_t slot(FeatureKind kind) { return static_cast<std::size_t>(kind); }

}  // namespace

MapperParams MapperParams::init(const MapperConfig& config, SeededRng& rng) {
  require(config.d_tok >= 1 && config.depth >= 0, "mapper: d_tok must be >= 1 and depth >= 0");
  require(config.proj_rows >= 0, "mapper: proj_rows must be >= 0");
  require(config.tokens.context >= 1 && config.tokens.relation >= 1 && config.tokens.subject >= 1 &&
              config.tokens.object >= 1,
          "mapper: token counts must be >= 1");
  MapperParams p;
  p.config = config;
  const auto d = static_cast<Eigen::Index>(config.d_tok);
  for (auto kind : kFeatureKinds) {
    const auto n = static_cast<Eigen::Index>(config.tokens.of(kind));
    const auto in = static_cast<Eigen::Index>(config.input_dim(kind));
    require(in >= 1, "mapper: feature dimensions must be >= 1");
    const auto l = static_cast<Eigen::Index>(config.proj_rows_of(kind));
    p.proj_w[slot(kind)] = random_gaussian_matrix(l * d, in, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    p.proj_b[slot(kind)] = Vec::Zero(l * d);
    p.positions[slot(kind)] = random_gaussian_matrix(n, d, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  }
  const double mix_scale = 0.5 / std::sqrt(static_cast<double>(d));
  for (int k = 0; k < config.depth; ++k) {
    p.mix_u.push_back(random_gaussian_matrix(d, d, mix_scale, rng));
    p.mix_v.push_back(random_gaussian_matrix(d, d, mix_scale, rng));
    p.mix_c.push_back(Vec::Zero(d));
  }
  return p;
}

MapperParams MapperParams::zeros_like(const MapperParams& other) {
  MapperParams p = other;
  p.for_each([](const std::string&, std::span<double> v) { std::fill(v.begin(), v.end(), 0.0); });
  return p;
}

void MapperParams::for_each(const std::function<void(const std::string&, std::span<double>)>& fn) {
  for (auto kind : kFeatureKinds) {
    const std::string k(kind_name(kind));
    fn("mapper." + k + ".proj_w", as_span(proj_w[slot(kind)]));
    fn("mapper." + k + ".proj_b", as_span(proj_b[slot(kind)]));
    fn("mapper." + k + ".positions", as_span(positions[slot(kind)]));
  }
  for (std::size_t k = 0; k < mix_u.size(); ++k) {
    const std::string l = "mapper.layer" + std::to_string(k);
    fn(l + ".u", as_span(mix_u[k]));
    fn(l + ".v", as_span(mix_v[k]));
    fn(l + ".c", as_span(mix_c[k]));
  }
}

std::vector<Matrix> encode_features(const MapperParams& params, std::span<const FeatureRef> features,
                                    MapperTape* tape) {
  const auto& cfg = params.config;
  const auto d = static_cast<Eigen::Index>(cfg.d_tok);
  const auto m = features.size();

  std::vector<Eigen::Index> proj_begin(m), l_of(m), read_begin(m);
  std::array<std::vector<std::size_t>, 4> members;
  Eigen::Index p_total = 0, n_total = 0;
  for (std::size_t b = 0; b < m; ++b) {
    const auto& fr = features[b];
    const auto in = static_cast<Eigen::Index>(cfg.input_dim(fr.kind));
    if (fr.f == nullptr || fr.f->size() != in) {
      fail(ErrorCode::kInvalidArgument, "encode_feature: " + std::string(kind_name(fr.kind)) +
                                            " feature has dimension " + std::to_string(fr.f ? fr.f->size() : 0) +
                                            ", expected " + std::to_string(in));
    }
    proj_begin[b] = p_total;
    l_of[b] = cfg.proj_rows_of(fr.kind);
    p_total += l_of[b];
    read_begin[b] = n_total;
    n_total += cfg.tokens.of(fr.kind);
    members[slot(fr.kind)].push_back(b);
  }
  const Eigen::Index rows = p_total + n_total;

  // Projections, one product per kind.
  Matrix h(rows, d);
  std::array<Matrix, 4> inputs;
  for (auto kind : kFeatureKinds) {
    const auto& idx = members[slot(kind)];
    if (idx.empty()) continue;
    Matrix& x = inputs[slot(kind)];
    x.resize(cfg.input_dim(kind), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t c = 0; c < idx.size(); ++c) x.col(static_cast<Eigen::Index>(c)) = *features[idx[c]].f;
    Matrix proj = params.proj_w[slot(kind)] * x;
    proj.colwise() += params.proj_b[slot(kind)];
    const auto l = static_cast<Eigen::Index>(cfg.proj_rows_of(kind));
    for (std::size_t c = 0; c < idx.size(); ++c) {
      const auto base = proj_begin[idx[c]];
      for (Eigen::Index i = 0; i < l; ++i) {
        h.row(base + i) = proj.col(static_cast<Eigen::Index>(c)).segment(i * d, d).transpose();
      }
    }
  }
  for (std::size_t b = 0; b < m; ++b) {
    const auto kind = features[b].kind;
    const Eigen::RowVectorXd proj_mean = h.middleRows(proj_begin[b], l_of[b]).colwise().mean();
    h.middleRows(p_total + read_begin[b], cfg.tokens.of(kind)) = params.positions[slot(kind)].rowwise() + proj_mean;
  }

  if (tape) {
    tape->kinds.clear();
    for (const auto& fr : features) tape->kinds.push_back(fr.kind);
    tape->inputs = std::move(inputs);
    tape->members = members;
    tape->proj_begin = proj_begin;
    tape->read_begin = read_begin;
    tape->proj_total = p_total;
    tape->hidden.clear();
    tape->means.clear();
    tape->activations.clear();
  }

  // Residual mixing; the last layer only computes the read-out rows.
  const std::size_t depth = params.mix_u.size();
  Matrix means(static_cast<Eigen::Index>(m), d);
  for (std::size_t k = 0; k < depth; ++k) {
    for (std::size_t b = 0; b < m; ++b) {
      const auto n = static_cast<Eigen::Index>(cfg.tokens.of(features[b].kind));
      const auto bi = static_cast<Eigen::Index>(b);
      means.row(bi) = (h.middleRows(proj_begin[b], l_of[b]).colwise().sum() +
                       h.middleRows(p_total + read_begin[b], n).colwise().sum()) /
                      static_cast<double>(l_of[b] + n);
    }
    Matrix shared = means * params.mix_v[k];
    shared.rowwise() += params.mix_c[k].transpose();
    const Eigen::Index first = k + 1 == depth ? p_total : 0;
    Matrix z = h.bottomRows(rows - first) * params.mix_u[k];
    for (std::size_t b = 0; b < m; ++b) {
      const auto bi = static_cast<Eigen::Index>(b);
      if (first == 0) z.middleRows(proj_begin[b], l_of[b]).rowwise() += shared.row(bi);
      z.middleRows(p_total - first + read_begin[b], cfg.tokens.of(features[b].kind)).rowwise() += shared.row(bi);
    }
    Matrix a = z.array().tanh().matrix();
    if (tape) {
      tape->hidden.push_back(h);
      tape->means.push_back(means);
    }
    h.bottomRows(rows - first) += a;
    if (tape) tape->activations.push_back(std::move(a));
  }

  std::vector<Matrix> out;
  out.reserve(m);
  for (std::size_t b = 0; b < m; ++b) {
    out.push_back(h.middleRows(p_total + read_begin[b], cfg.tokens.of(features[b].kind)));
  }
  return out;
}

void encode_features_backward(const MapperParams& params, const MapperTape& tape, std::span<const Matrix> d_tokens,
                              MapperParams& grads) {
  const auto& cfg = params.config;
  const auto d = static_cast<Eigen::Index>(cfg.d_tok);
  const auto m = tape.kinds.size();
  if (d_tokens.size() != m) fail(ErrorCode::kInvalidArgument, "encode_features_backward: gradient count mismatch");
  const Eigen::Index p_total = tape.proj_total;
  std::vector<Eigen::Index> n_of(m), l_of(m);
  for (std::size_t b = 0; b < m; ++b) {
    n_of[b] = cfg.tokens.of(tape.kinds[b]);
    l_of[b] = cfg.proj_rows_of(tape.kinds[b]);
  }
  const Eigen::Index rows = p_total + (m ? tape.read_begin.back() + n_of.back() : 0);

  Matrix g = Matrix::Zero(rows, d);
  for (std::size_t b = 0; b < m; ++b) {
    if (d_tokens[b].size() == 0) continue;
    if (d_tokens[b].rows() != n_of[b] || d_tokens[b].cols() != d) {
      fail(ErrorCode::kInvalidArgument, "encode_feature_backward: gradient shape mismatch");
    }
    g.middleRows(p_total + tape.read_begin[b], n_of[b]) = d_tokens[b];
  }

  const std::size_t depth = params.mix_u.size();
  Matrix dz_sum(static_cast<Eigen::Index>(m), d);
  for (std::size_t k = depth; k-- > 0;) {
    const Eigen::Index first = k + 1 == depth ? p_total : 0;
    const Eigen::Index active = rows - first;
    const Matrix& h = tape.hidden[k];
    const Matrix& a = tape.activations[k];
    const Matrix dz = (g.bottomRows(active).array() * (1.0 - a.array().square())).matrix();
    for (std::size_t b = 0; b < m; ++b) {
      const auto bi = static_cast<Eigen::Index>(b);
      dz_sum.row(bi) = dz.middleRows(p_total - first + tape.read_begin[b], n_of[b]).colwise().sum();
      if (first == 0) dz_sum.row(bi) += dz.middleRows(tape.proj_begin[b], l_of[b]).colwise().sum();
    }
    grads.mix_u[k].noalias() += h.bottomRows(active).transpose() * dz;
    grads.mix_v[k].noalias() += tape.means[k].transpose() * dz_sum;
    grads.mix_c[k] += dz_sum.colwise().sum().transpose();
    g.bottomRows(active).noalias() += dz * params.mix_u[k].transpose();
    const Matrix via_mean = dz_sum * params.mix_v[k].transpose();
    for (std::size_t b = 0; b < m; ++b) {
      const auto bi = static_cast<Eigen::Index>(b);
      const Eigen::RowVectorXd v = via_mean.row(bi) / static_cast<double>(l_of[b] + n_of[b]);
      g.middleRows(tape.proj_begin[b], l_of[b]).rowwise() += v;
      g.middleRows(p_total + tape.read_begin[b], n_of[b]).rowwise() += v;
    }
  }

  for (auto kind : kFeatureKinds) {
    const auto& idx = tape.members[slot(kind)];
    if (idx.empty()) continue;
    const auto l = static_cast<Eigen::Index>(cfg.proj_rows_of(kind));
    Matrix dproj(l * d, static_cast<Eigen::Index>(idx.size()));
    for (std::size_t c = 0; c < idx.size(); ++c) {
      const std::size_t b = idx[c];
      const auto read = g.middleRows(p_total + tape.read_begin[b], n_of[b]);
      grads.positions[slot(kind)] += read;
      const Eigen::RowVectorXd to_proj = read.colwise().sum() / static_cast<double>(l);
      const auto base = tape.proj_begin[b];
      for (Eigen::Index i = 0; i < l; ++i) {
        dproj.col(static_cast<Eigen::Index>(c)).segment(i * d, d) = (g.row(base + i) + to_proj).transpose();
      }
    }
    grads.proj_b[slot(kind)] += dproj.rowwise().sum();
    grads.proj_w[slot(kind)].noalias() += dproj * tape.inputs[slot(kind)].transpose();
  }
}

Matrix encode_feature(const MapperParams& params, const Vec& f, FeatureKind kind, MapperTape* tape) {
  const FeatureRef one{&f, kind};
  return std::move(encode_features(params, std::span<const FeatureRef>(&one, 1), tape).front());
}

void encode_feature_backward(const MapperParams& params, const MapperTape& tape, const Matrix& d_tokens,
                             MapperParams& grads) {
  require(tape.kinds.size() == 1, "encode_feature_backward: tape holds more than one feature");
  encode_features_backward(params, tape, std::span<const Matrix>(&d_tokens, 1), grads);
}

const Vec& FeatureSet::of(FeatureKind kind) const {
  const Vec* v = nullptr;
  switch (kind) {
    case FeatureKind::kContext:
      v = context;
      break;
    case FeatureKind::kRelation:
      v = relation;
      break;
    case FeatureKind::kSubject:
      v = subject;
      break;
    case FeatureKind::kObject:
      v = object;
      break;
  }
  if (v == nullptr || v->size() == 0) {
    fail(ErrorCode::kInvalidArgument, "missing " + std::string(kind_name(kind)) + " feature");
  }
  return *v;
}

Matrix encode_exemplar(const MapperParams& params, const FeatureSet& features, MapperTape* tape) {
  std::array<FeatureRef, 4> refs;
  for (auto kind : kFeatureKinds) refs[slot(kind)] = {&features.of(kind), kind};
  const auto blocks = encode_features(params, refs, tape);
  Matrix out(params.config.tokens.total(), params.config.d_tok);
  Eigen::Index row = 0;
  for (const auto& block : blocks) {
    out.middleRows(row, block.rows()) = block;
    row += block.rows();
  }
  return out;
}

}  // namespace lsgg
