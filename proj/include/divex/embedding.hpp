// Copyright 2026 The divex Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "divex/types.hpp"

namespace divex {

/// Dense sentence embedding. Dimension is fixed at construction and non-zero.
class EmbeddingVector {
 public:
  EmbeddingVector() = default;
  explicit EmbeddingVector(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) throw UsageError("embedding must have at least one dimension");
  }
  EmbeddingVector(std::initializer_list<double> values) : EmbeddingVector(std::vector<double>(values)) {}

  std::size_t dim() const { return values_.size(); }
  const std::vector<double>& values() const { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }

  double norm() const {
    double s = 0.0;
    for (double v : values_) s += v * v;
    return std::sqrt(s);
  }

  EmbeddingVector scaled(double c) const {
    std::vector<double> out(values_);
    for (double& v : out) v *= c;
    return EmbeddingVector(std::move(out));
  }

  friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;

 private:
  std::vector<double> values_;
};

inline double dot(const EmbeddingVector& a, const EmbeddingVector& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) s += a[i] * b[i];
  return s;
}

/// Cosine similarity; rejects zero vectors and mismatched dimensions.
inline double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.dim() != b.dim())
    throw UsageError("dimension mismatch: " + std::to_string(a.dim()) + " vs " + std::to_string(b.dim()));
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw UsageError("cosine undefined for a zero vector");
  // Dot of the normalized vectors, so positive scaling cancels up to rounding.
  double s = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) s += (a[i] / na) * (b[i] / nb);
  return std::clamp(s, -1.0, 1.0);
}

inline double cosine_distance(const EmbeddingVector& a, const EmbeddingVector& b) {
  return std::clamp(1.0 - cosine_similarity(a, b), 0.0, 2.0);
}

}  // namespace divex
