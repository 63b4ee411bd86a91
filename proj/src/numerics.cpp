// Copyright (C) 2026 The lsgg Authors
// SPDX-License-Identifier: Apache-2.0

#include "lsgg/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "lsgg/error.hpp"

namespace lsgg {

namespace {

constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }

}  // namespace

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

SeededRng::SeededRng(std::uint64_t seed) : seed_(seed) {
  std::uint64_t s = seed;
  for (auto& word : state_) {
    s += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = s;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    word = z ^ (z >> 31);
  }
}

std::uint64_t SeededRng::next_u64() noexcept {
  const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
  const std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double SeededRng::uniform() noexcept {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t SeededRng::uniform_index(std::uint64_t n) {
  require(n > 0, "uniform_index: empty range");
  // Rejection sampling on the top of the range keeps the draw unbiased.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return x % n;
}

double SeededRng::gaussian() noexcept {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

SeededRng SeededRng::derive(std::uint64_t stream) const {
  return SeededRng(splitmix64(seed_ ^ splitmix64(stream + 0x632be59bd9b4e019ULL)));
}

void require_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) fail(ErrorCode::kNumeric, std::string(what) + ": non-finite value");
  }
}

double cosine(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) {
    fail(ErrorCode::kInvalidArgument, "cosine: dimension mismatch (" + std::to_string(a.size()) +
                                          " vs " + std::to_string(b.size()) + ")");
  }
  const double na = a.norm();
  const double nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) fail(ErrorCode::kNumeric, "cosine: zero-norm input");
  // Normalising each side first makes the result exactly symmetric in (a, b).
  const double c = a.dot(b) / (na * nb);
  return std::clamp(c, -1.0, 1.0);
}

std::vector<std::size_t> top_k_indices(const Vec& query, std::span<const Vec> keys, std::size_t k) {
  require(!keys.empty(), "top_k_indices: empty key list");
  require(k >= 1, "top_k_indices: K must be at least 1");
  require(k <= keys.size(), "top_k_indices: K=" + std::to_string(k) + " exceeds " +
                                std::to_string(keys.size()) + " keys");
  std::vector<double> sims(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) sims[i] = cosine(query, keys[i]);
  std::vector<std::size_t> order(keys.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto better = [&](std::size_t x, std::size_t y) {
    return sims[x] > sims[y] || (sims[x] == sims[y] && x < y);
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), better);
  order.resize(k);
  return order;
}

std::size_t argmax(std::span<const double> values) {
  require(!values.empty(), "argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

Vec softmax(const Vec& logits) {
  require(logits.size() > 0, "softmax: empty input");
  require_finite(as_span(logits), "softmax");
  const double shift = logits.maxCoeff();
  Vec out = (logits.array() - shift).exp().matrix();
  out /= out.sum();
  return out;
}

Matrix random_gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double scale, SeededRng& rng) {
  require(rows >= 1 && cols >= 1, "random_gaussian_matrix: rows and cols must be positive");
  require(scale >= 0.0 && std::isfinite(scale), "random_gaussian_matrix: scale must be finite and >= 0");
  Matrix m(rows, cols);
  // Row-major fill order so the stream layout does not depend on Eigen storage.
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = scale * rng.gaussian();
  }
  return m;
}

Vec random_unit_vector(Eigen::Index dim, SeededRng& rng) {
  require(dim >= 1, "random_unit_vector: dim must be positive");
  Vec v(dim);
  double n = 0.0;
  while (!(n > 0.0)) {
    for (Eigen::Index i = 0; i < dim; ++i) v(i) = rng.gaussian();
    n = v.norm();
  }
  return v / n;
}

}  // namespace lsgg
