// Copyright (C) 2026 The lsgg Authors
// SPDX-License-Identifier: Apache-2.0

#include "lsgg/prompt_pool.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "lsgg/error.hpp"
#include "lsgg/text_io.hpp"

namespace lsgg {

bool operator==(const Exemplar& a, const Exemplar& b) {
  return same_values(a.f_c, b.f_c) && same_values(a.f_s, b.f_s) && same_values(a.f_o, b.f_o) &&
         same_values(a.f_r, b.f_r) && a.predicate == b.predicate && a.inserted_at == b.inserted_at;
}

bool operator==(const PromptEntry& a, const PromptEntry& b) {
  if (a.tokens.rows() != b.tokens.rows() || a.tokens.cols() != b.tokens.cols()) return false;
  for (Eigen::Index i = 0; i < a.tokens.size(); ++i) {
    if (a.tokens.data()[i] != b.tokens.data()[i]) return false;
  }
  return same_values(a.key, b.key) && a.store == b.store && a.seen_count == b.seen_count;
}

bool operator==(const PromptPool& a, const PromptPool& b) {
  return a.shape_ == b.shape_ && a.entries_ == b.entries_;
}

Exemplar to_exemplar(const RelationInstance& r) {
  return Exemplar{r.f_c, r.f_s, r.f_o, r.f_r, r.predicate, 0};
}

PromptPool PromptPool::init(const PoolShape& shape, SeededRng& rng) {
  require(shape.n_t >= 1 && shape.n_p >= 1 && shape.d_tok >= 1 && shape.d_c >= 1 && shape.n_e >= 1,
          "init_pool: all counts must be >= 1");
  PromptPool pool;
  pool.shape_ = shape;
  const double token_scale = 1.0 / std::sqrt(static_cast<double>(shape.d_tok));
  pool.entries_.resize(shape.n_t);
  for (auto& e : pool.entries_) {
    e.key = random_unit_vector(static_cast<Eigen::Index>(shape.d_c), rng);
    e.tokens = random_gaussian_matrix(static_cast<Eigen::Index>(shape.n_p), static_cast<Eigen::Index>(shape.d_tok),
                                      token_scale, rng);
  }
  return pool;
}

std::size_t PromptPool::stored() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.store.size();
  return n;
}

void PromptPool::check_invariants() const {
  if (entries_.size() != shape_.n_t) fail(ErrorCode::kState, "pool: entry count differs from n_t");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& e = entries_[i];
    if (e.store.size() > shape_.n_e) {
      fail(ErrorCode::kState, "pool: entry " + std::to_string(i) + " exceeds exemplar capacity");
    }
    if (e.tokens.rows() != static_cast<Eigen::Index>(shape_.n_p) ||
        e.tokens.cols() != static_cast<Eigen::Index>(shape_.d_tok)) {
      fail(ErrorCode::kState, "pool: entry " + std::to_string(i) + " has malformed prompt tokens");
    }
    if (e.key.size() != static_cast<Eigen::Index>(shape_.d_c)) {
      fail(ErrorCode::kState, "pool: entry " + std::to_string(i) + " key dimension differs from d_c");
    }
    require_finite(as_span(e.tokens), "pool prompt tokens");
    require_finite(as_span(e.key), "pool key");
  }
  if (stored() > capacity()) fail(ErrorCode::kState, "pool: stored exemplars exceed total capacity");
}

std::optional<std::pair<std::size_t, std::size_t>> PromptPool::sample_stored(SeededRng& rng) const {
  const std::size_t total = stored();
  if (total == 0) return std::nullopt;
  auto pick = static_cast<std::size_t>(rng.uniform_index(total));
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (pick < entries_[i].store.size()) return std::make_pair(i, pick);
    pick -= entries_[i].store.size();
  }
  fail(ErrorCode::kInternal, "sample_stored: index walk overran the pool");
}

std::vector<RetrievedPrompt> retrieve_topk_prompts(const PromptPool& pool, const Vec& f_c, std::size_t k) {
  require(k >= 1 && k <= pool.size(),
          "retrieve_topk_prompts: K=" + std::to_string(k) + " outside [1, " + std::to_string(pool.size()) + "]");
  std::vector<Vec> keys;
  keys.reserve(pool.size());
  for (const auto& e : pool.entries()) keys.push_back(e.key);
  const auto idx = top_k_indices(f_c, keys, k);
  std::vector<RetrievedPrompt> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back({i, cosine(f_c, keys[i])});
  return out;
}

std::optional<std::size_t> retrieve_exemplar(const PromptEntry& entry, const Vec& f_r,
                                             std::optional<std::size_t> exclude) {
  std::optional<std::size_t> best;
  double best_sim = 0.0;
  for (std::size_t s = 0; s < entry.store.size(); ++s) {
    if (exclude && *exclude == s) continue;
    const double sim = cosine(f_r, entry.store[s].f_r);
    if (!best || sim > best_sim ||
        (sim == best_sim && entry.store[s].inserted_at < entry.store[*best].inserted_at)) {
      best = s;
      best_sim = sim;
    }
  }
  return best;
}

std::optional<std::size_t> admit_exemplar(PromptPool& pool, const RelationInstance& instance, SeededRng& rng) {
  const auto target = retrieve_topk_prompts(pool, instance.f_c, 1).front().entry;
  auto& e = pool.entry(target);
  Exemplar ex = to_exemplar(instance);
  ex.inserted_at = e.seen_count;
  ++e.seen_count;
  if (e.store.size() < pool.shape().n_e) {
    e.store.push_back(std::move(ex));
    return target;
  }
  // Algorithm R: the n-th arrival is kept with probability n_e / n.
  const auto j = static_cast<std::size_t>(rng.uniform_index(e.seen_count));
  if (j < pool.shape().n_e) {
    e.store[j] = std::move(ex);
    return target;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// LSGG-POOL 1
//
//   LSGG-POOL 1
//   <n_t> <n_p> <d_tok> <d_c> <n_e>
//   entry <index> <seen_count> <stored>
//   v <n_p*d_tok hex doubles, row-major>
//   k <d_c hex doubles>
//   x <predicate> <inserted_at> <|f_c|> <|f_s|> <|f_o|> <|f_r|> <values...>   (one per exemplar)
//   end

namespace {

constexpr std::string_view kPoolMagic = "LSGG-POOL";

}  // namespace

void serialize_pool(const PromptPool& pool, const std::filesystem::path& path) {
  const auto& s = pool.shape();
  std::string out = std::string(kPoolMagic) + " 1\n";
  out += std::to_string(s.n_t) + ' ' + std::to_string(s.n_p) + ' ' + std::to_string(s.d_tok) + ' ' +
         std::to_string(s.d_c) + ' ' + std::to_string(s.n_e) + '\n';
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto& e = pool.entry(i);
    out += "entry " + std::to_string(i) + ' ' + std::to_string(e.seen_count) + ' ' +
           std::to_string(e.store.size()) + "\nv ";
    for (Eigen::Index r = 0; r < e.tokens.rows(); ++r) {
      for (Eigen::Index c = 0; c < e.tokens.cols(); ++c) {
        if (r || c) out += ' ';
        out += text::format_hex(e.tokens(r, c));
      }
    }
    out += "\nk ";
    text::append_values(out, as_span(e.key), true);
    out += '\n';
    for (const auto& x : e.store) {
      out += "x " + std::to_string(x.predicate) + ' ' + std::to_string(x.inserted_at) + ' ' +
             std::to_string(x.f_c.size()) + ' ' + std::to_string(x.f_s.size()) + ' ' + std::to_string(x.f_o.size()) +
             ' ' + std::to_string(x.f_r.size());
      for (const Vec* v : {&x.f_c, &x.f_s, &x.f_o, &x.f_r}) {
        out += ' ';
        text::append_values(out, as_span(*v), true);
      }
      out += '\n';
    }
  }
  out += "end\n";
  text::write_file(path, out);
}

PromptPool deserialize_pool(const std::filesystem::path& path) {
  auto in = text::open_in(path);
  const std::string name = path.string();
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(std::move(line));
  std::size_t at = 0;
  auto next = [&]() -> std::vector<std::string_view> {
    if (at >= lines.size()) fail(ErrorCode::kParse, name + ": truncated pool file");
    return text::split_ws(lines[at++]);
  };
  auto ctx = [&] { return name + ":" + std::to_string(at); };

  auto magic = next();
  if (magic.size() != 2 || magic[0] != kPoolMagic) {
    fail(ErrorCode::kVersion, ctx() + ": not an LSGG-POOL file (bad magic)");
  }
  if (magic[1] != "1") fail(ErrorCode::kVersion, ctx() + ": unsupported LSGG-POOL version " + std::string(magic[1]));

  auto dims = next();
  if (dims.size() != 5) fail(ErrorCode::kParse, ctx() + ": malformed pool shape line");
  PromptPool pool;
  pool.shape_ = {text::parse_uint(dims[0], ctx()), text::parse_uint(dims[1], ctx()), text::parse_uint(dims[2], ctx()),
                 text::parse_uint(dims[3], ctx()), text::parse_uint(dims[4], ctx())};
  const auto& s = pool.shape_;
  require(s.n_t >= 1 && s.n_p >= 1 && s.d_tok >= 1 && s.d_c >= 1 && s.n_e >= 1, ctx() + ": pool shape must be >= 1");

  pool.entries_.resize(s.n_t);
  for (std::size_t i = 0; i < s.n_t; ++i) {
    auto head = next();
    if (head.size() != 4 || head[0] != "entry" || text::parse_uint(head[1], ctx()) != i) {
      fail(ErrorCode::kParse, ctx() + ": expected 'entry " + std::to_string(i) + "'");
    }
    auto& e = pool.entries_[i];
    e.seen_count = text::parse_uint(head[2], ctx());
    const auto n_stored = text::parse_uint(head[3], ctx());
    if (n_stored > s.n_e) fail(ErrorCode::kParse, ctx() + ": entry stores more than n_e exemplars");

    auto v = next();
    if (v.size() != 1 + s.n_p * s.d_tok || v[0] != "v") fail(ErrorCode::kParse, ctx() + ": malformed prompt tokens");
    e.tokens.resize(static_cast<Eigen::Index>(s.n_p), static_cast<Eigen::Index>(s.d_tok));
    std::size_t p = 1;
    for (Eigen::Index r = 0; r < e.tokens.rows(); ++r) {
      for (Eigen::Index c = 0; c < e.tokens.cols(); ++c) e.tokens(r, c) = text::parse_double(v[p++], ctx());
    }

    auto k = next();
    if (k.size() != 1 + s.d_c || k[0] != "k") fail(ErrorCode::kParse, ctx() + ": malformed key");
    e.key.resize(static_cast<Eigen::Index>(s.d_c));
    for (std::size_t j = 0; j < s.d_c; ++j) e.key(static_cast<Eigen::Index>(j)) = text::parse_double(k[1 + j], ctx());

    for (std::uint64_t x = 0; x < n_stored; ++x) {
      auto xs = next();
      if (xs.size() < 7 || xs[0] != "x") fail(ErrorCode::kParse, ctx() + ": malformed exemplar");
      Exemplar ex;
      ex.predicate = static_cast<Label>(text::parse_int(xs[1], ctx()));
      ex.inserted_at = text::parse_uint(xs[2], ctx());
      std::array<std::size_t, 4> len{};
      for (std::size_t j = 0; j < 4; ++j) len[j] = text::parse_uint(xs[3 + j], ctx());
      if (xs.size() != 7 + len[0] + len[1] + len[2] + len[3]) {
        fail(ErrorCode::kParse, ctx() + ": exemplar value count does not match its lengths");
      }
      std::size_t q = 7;
      Vec* targets[4] = {&ex.f_c, &ex.f_s, &ex.f_o, &ex.f_r};
      for (std::size_t j = 0; j < 4; ++j) {
        targets[j]->resize(static_cast<Eigen::Index>(len[j]));
        for (std::size_t m = 0; m < len[j]; ++m) (*targets[j])(static_cast<Eigen::Index>(m)) = text::parse_double(xs[q++], ctx());
      }
      e.store.push_back(std::move(ex));
    }
  }
  auto end = next();
  if (end.size() != 1 || end[0] != "end") fail(ErrorCode::kParse, ctx() + ": missing 'end' marker");
  return pool;
}

// ---------------------------------------------------------------------------

ClassBalancedBuffer::ClassBalancedBuffer(std::size_t capacity) : capacity_(capacity) {
  require(capacity >= 1, "ClassBalancedBuffer: capacity must be >= 1");
}

std::size_t ClassBalancedBuffer::size() const {
  std::size_t n = 0;
  for (const auto& [label, items] : classes_) n += items.size();
  return n;
}

std::size_t ClassBalancedBuffer::quota() const {
  return seen_.empty() ? capacity_ : std::max<std::size_t>(1, capacity_ / seen_.size());
}

std::size_t ClassBalancedBuffer::count(Label label) const {
  const auto it = classes_.find(label);
  return it == classes_.end() ? 0 : it->second.size();
}

void ClassBalancedBuffer::add(const RelationInstance& instance, SeededRng& rng) {
  const Label label = instance.predicate;
  const std::uint64_t n = ++seen_[label];
  auto& mine = classes_[label];
  const std::size_t q = quota();
  if (mine.size() < q) {
    if (size() >= capacity_) {
      // Take a slot from the largest class (lowest label on ties).
      Label donor = label;
      std::size_t most = 0;
      for (const auto& [l, items] : classes_) {
        if (items.size() > most) {
          most = items.size();
          donor = l;
        }
      }
      auto& victims = classes_[donor];
      victims.erase(victims.begin() + static_cast<std::ptrdiff_t>(rng.uniform_index(victims.size())));
    }
    mine.push_back(to_exemplar(instance));
    return;
  }
  const auto j = static_cast<std::size_t>(rng.uniform_index(n));
  if (j < mine.size()) mine[j] = to_exemplar(instance);
}

const Exemplar* ClassBalancedBuffer::sample(SeededRng& rng) const {
  const std::size_t total = size();
  if (total == 0) return nullptr;
  auto pick = static_cast<std::size_t>(rng.uniform_index(total));
  for (const auto& [label, items] : classes_) {
    if (pick < items.size()) return &items[pick];
    pick -= items.size();
  }
  return nullptr;
}

}  // namespace lsgg
