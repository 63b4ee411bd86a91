// Copyright (C) 2026 The lsgg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace lsgg {

using Vec = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Seeded pseudo-random generator: xoshiro256** (Blackman & Vigna, 2018) with its
// 256-bit state expanded from the 64-bit seed by SplitMix64. Every derived
// quantity (uniform doubles, bounded integers, Gaussians) is computed here from
// raw 64-bit draws, so a seed reproduces the same stream on any platform with
// IEEE-754 doubles. Gaussians use the Box-Muller transform.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed = 0);

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() noexcept;
  // Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  // Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n);
  double gaussian() noexcept;

  // Independent generator for a named sub-stream; does not advance this one.
  SeededRng derive(std::uint64_t stream) const;

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_index(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> state_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

// Throws kNumeric if any entry is NaN or infinite.
void require_finite(std::span<const double> values, const char* what);

double cosine(const Vec& a, const Vec& b);

// Indices of the K keys most cosine-similar to `query`, most similar first.
// Exact ties go to the lower index.
std::vector<std::size_t> top_k_indices(const Vec& query, std::span<const Vec> keys, std::size_t k);

// Index of the largest element; ties go to the lower index.
std::size_t argmax(std::span<const double> values);

Vec softmax(const Vec& logits);

Matrix random_gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double scale, SeededRng& rng);
Vec random_unit_vector(Eigen::Index dim, SeededRng& rng);

inline std::span<double> as_span(Matrix& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
inline std::span<double> as_span(Vec& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }
inline std::span<const double> as_span(const Matrix& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}
inline std::span<const double> as_span(const Vec& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

}  // namespace lsgg
