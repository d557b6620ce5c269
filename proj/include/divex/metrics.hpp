// Copyright 2026 The divex Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "divex/embedding.hpp"
#include "divex/orchestrator.hpp"
#include "divex/types.hpp"

namespace divex {

// ---------------------------------------------------------------------------
// Semantic diversity

/// Mean cosine distance over all unordered pairs.
inline double semantic_diversity_statement(std::span<const EmbeddingVector> reasons) {
  if (reasons.size() < 2) throw UsageError("semantic diversity needs at least 2 reasons");
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < reasons.size(); ++i) {
    for (std::size_t j = i + 1; j < reasons.size(); ++j) {
      sum += cosine_distance(reasons[i], reasons[j]);
      ++pairs;
    }
  }
  return sum / static_cast<double>(pairs);
}

inline double semantic_diversity_corpus(std::span<const double> scores) {
  if (scores.empty()) throw UsageError("no scored statements (all skipped)");
  double sum = 0.0;
  for (double s : scores) sum += s;
  return sum / static_cast<double>(scores.size());
}

// ---------------------------------------------------------------------------
// Lexical diversity

namespace detail {

inline bool decode_utf8(std::string_view s, std::size_t& i, char32_t& cp) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  int len = b0 < 0x80 ? 1 : (b0 >> 5) == 0x6 ? 2 : (b0 >> 4) == 0xE ? 3 : (b0 >> 3) == 0x1E ? 4 : 0;
  if (len == 0 || i + len > s.size()) {
    cp = b0;
    i += 1;
    return false;
  }
  cp = len == 1 ? b0 : len == 2 ? (b0 & 0x1F) : len == 3 ? (b0 & 0x0F) : (b0 & 0x07);
  for (int k = 1; k < len; ++k) {
    const auto b = static_cast<unsigned char>(s[i + k]);
    if ((b >> 6) != 0x2) {
      cp = b0;
      i += 1;
      return false;
    }
    cp = (cp << 6) | (b & 0x3F);
  }
  i += len;
  return true;
}

inline void encode_utf8(char32_t cp, std::string& out) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

inline bool is_unicode_space(char32_t c) {
  return (c >= 0x09 && c <= 0x0D) || c == 0x20 || c == 0x85 || c == 0xA0 || c == 0x1680 || (c >= 0x2000 && c <= 0x200A) ||
         c == 0x2028 || c == 0x2029 || c == 0x202F || c == 0x205F || c == 0x3000;
}

// Simple case folding for ASCII, Latin-1, Greek and Cyrillic capitals.
inline char32_t to_lower(char32_t c) {
  if (c >= U'A' && c <= U'Z') return c + 32;
  if (c >= 0xC0 && c <= 0xDE && c != 0xD7) return c + 32;
  if (c >= 0x391 && c <= 0x3A9 && c != 0x3A2) return c + 32;
  if (c >= 0x410 && c <= 0x42F) return c + 32;
  if (c >= 0x400 && c <= 0x40F) return c + 80;
  return c;
}

}  // namespace detail

/// Whitespace-split, lowercased tokens; punctuation stays attached.
inline std::vector<std::string> lexical_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (std::size_t i = 0; i < text.size();) {
    char32_t cp = 0;
    detail::decode_utf8(text, i, cp);
    if (detail::is_unicode_space(cp)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
      continue;
    }
    detail::encode_utf8(detail::to_lower(cp), cur);
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

/// Distinct over total n-grams of the concatenated reasons.
inline double lexical_diversity(std::span<const Opinion> opinions, int n) {
  if (n < 1 || n > 3) throw UsageError("n-gram size must be 1, 2 or 3");
  if (opinions.empty()) throw UsageError("lexical diversity needs at least one opinion");
  std::vector<std::string> tokens;
  for (const auto& op : opinions) {
    auto t = lexical_tokens(op.reason);
    tokens.insert(tokens.end(), std::make_move_iterator(t.begin()), std::make_move_iterator(t.end()));
  }
  if (tokens.size() < static_cast<std::size_t>(n)) return 1.0;
  const std::size_t total = tokens.size() - static_cast<std::size_t>(n) + 1;
  if (total <= 1) return 1.0;
  std::unordered_set<std::string> distinct;
  for (std::size_t i = 0; i < total; ++i) {
    std::string gram = tokens[i];
    for (int k = 1; k < n; ++k) gram += '\x1f' + tokens[i + k];
    distinct.insert(std::move(gram));
  }
  return static_cast<double>(distinct.size()) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Stance balance

struct StatementOpinions {
  std::string statement_id;
  std::vector<Opinion> opinions;
};

inline std::vector<StatementOpinions> statement_opinions(std::span<const OpinionSet> sets) {
  std::vector<StatementOpinions> out;
  for (const auto& s : sets) out.push_back({s.statement_id, s.opinions});
  return out;
}

inline std::vector<StatementOpinions> statement_opinions(std::span<const RecallTrace> traces) {
  std::vector<StatementOpinions> out;
  for (const auto& t : traces) out.push_back({t.statement_id, t.final_opinions});
  return out;
}

struct StatementBalance {
  std::string statement_id;
  std::map<Stance, std::size_t> counts;
  bool imbalanced = false;
};

struct StanceBalance {
  std::vector<StatementBalance> statements;
  std::size_t imbalanced_count = 0;
  double imbalanced_fraction = 0.0;
};

inline StanceBalance stance_balance(std::span<const StatementOpinions> sets, TaskType task) {
  if (task == TaskType::Generation) throw UsageError("stance balance is undefined for generation tasks");
  if (sets.empty()) throw UsageError("stance balance needs at least one statement");
  StanceBalance out;
  for (const auto& s : sets) {
    StatementBalance b;
    b.statement_id = s.statement_id;
    for (Stance st : stances_for(task)) b.counts[st] = 0;
    for (const auto& op : s.opinions) {
      if (stance_allowed(task, op.stance)) ++b.counts[op.stance];
    }
    std::size_t first = b.counts.begin()->second;
    for (const auto& [st, c] : b.counts) b.imbalanced = b.imbalanced || c != first;
    out.imbalanced_count += b.imbalanced ? 1 : 0;
    out.statements.push_back(std::move(b));
  }
  out.imbalanced_fraction = static_cast<double>(out.imbalanced_count) / static_cast<double>(out.statements.size());
  return out;
}

// ---------------------------------------------------------------------------
// Criteria agreement

/// Phrases of `source` ranked by frequency (descending), ties by normalized
/// phrase; returns the top ceil(fraction * distinct).
inline std::vector<std::string> top_criteria(std::span<const std::vector<std::string>> source, double top_fraction) {
  if (!(top_fraction > 0.0 && top_fraction <= 1.0)) throw UsageError("top fraction must lie in (0, 1]");
  std::map<std::string, std::size_t> freq;
  for (const auto& op : source)
    for (const auto& c : op) {
      auto key = normalize_phrase(c);
      if (!key.empty()) ++freq[key];
    }
  if (freq.empty()) throw UsageError("criteria source has no phrases");
  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  // 0.1 * 30 is 3.0000000000000004 in binary; the epsilon keeps exact products exact.
  auto k = static_cast<std::size_t>(std::ceil(top_fraction * static_cast<double>(ranked.size()) - 1e-9));
  k = std::clamp<std::size_t>(k, 1, ranked.size());
  std::vector<std::string> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(ranked[i].first);
  return out;
}

/// Fraction of source_a opinions mentioning at least one of source_b's top
/// phrases. Each inner list is one opinion's criteria.
inline double criteria_agreement(std::span<const std::vector<std::string>> source_a,
                                 std::span<const std::vector<std::string>> source_b, double top_fraction) {
  if (source_a.empty() || source_b.empty()) throw UsageError("criteria agreement needs two non-empty sources");
  const auto top = top_criteria(source_b, top_fraction);
  const std::unordered_set<std::string> top_set(top.begin(), top.end());
  std::size_t hits = 0;
  for (const auto& op : source_a) {
    hits += std::any_of(op.begin(), op.end(), [&](const std::string& c) { return top_set.contains(normalize_phrase(c)); });
  }
  return static_cast<double>(hits) / static_cast<double>(source_a.size());
}

// ---------------------------------------------------------------------------

inline double average_opinion_count(std::span<const StatementOpinions> sets) {
  if (sets.empty()) throw UsageError("average opinion count needs at least one statement");
  std::size_t total = 0;
  for (const auto& s : sets) total += s.opinions.size();
  return static_cast<double>(total) / static_cast<double>(sets.size());
}

inline double average_opinion_count(std::span<const OpinionSet> sets) {
  auto so = statement_opinions(sets);
  return average_opinion_count(std::span<const StatementOpinions>(so));
}

// ---------------------------------------------------------------------------
// Paired permutation test

enum class Alternative { Greater, TwoSided };

/// Sign-flip permutation test on the mean of paired differences a[i] - b[i].
/// Exact over all 2^n sign patterns for n <= 20, Monte Carlo otherwise.
inline double paired_permutation_test(std::span<const double> a, std::span<const double> b,
                                      Alternative alt = Alternative::Greater, std::size_t iterations = 100000,
                                      std::uint64_t seed = 0) {
  if (a.size() != b.size() || a.empty()) throw UsageError("permutation test needs equal-length non-empty samples");
  const std::size_t n = a.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  auto stat = [&](auto sign) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += sign(i) * d[i];
    s /= static_cast<double>(n);
    return alt == Alternative::TwoSided ? std::abs(s) : s;
  };
  const double observed = stat([](std::size_t) { return 1.0; });
  const double tol = 1e-12 * (1.0 + std::abs(observed));
  std::size_t extreme = 0;
  if (n <= 20) {
    const std::uint64_t patterns = std::uint64_t{1} << n;
    for (std::uint64_t m = 0; m < patterns; ++m) {
      extreme += stat([&](std::size_t i) { return (m >> i) & 1 ? -1.0 : 1.0; }) >= observed - tol;
    }
    return static_cast<double>(extreme) / static_cast<double>(patterns);
  }
  std::mt19937_64 rng(seed);
  std::vector<double> signs(n);
  for (std::size_t it = 0; it < iterations; ++it) {
    for (auto& s : signs) s = (rng() & 1) ? -1.0 : 1.0;
    extreme += stat([&](std::size_t i) { return signs[i]; }) >= observed - tol;
  }
  return static_cast<double>(extreme + 1) / static_cast<double>(iterations + 1);
}

}  // namespace divex
