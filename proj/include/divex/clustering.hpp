// Copyright 2026 The divex Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <limits>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "divex/embedding.hpp"
#include "divex/parser.hpp"
#include "divex/prompting.hpp"
#include "divex/provider.hpp"

namespace divex {

enum class ClusterMethod { LlmPrompted, EmbeddingGreedy };

inline std::string_view to_string(ClusterMethod m) { return m == ClusterMethod::LlmPrompted ? "llm" : "embedding"; }

inline ClusterMethod parse_cluster_method(std::string_view s) {
  auto v = ascii_lower(trim(s));
  if (v == "llm" || v == "llm-prompted") return ClusterMethod::LlmPrompted;
  if (v == "embedding" || v == "embedding-greedy" || v == "greedy") return ClusterMethod::EmbeddingGreedy;
  throw UsageError("unknown cluster method '" + std::string(s) + "' (expected llm or embedding)");
}

enum class CountingMode { SingletonUngrouped, DropUngrouped };

inline std::string_view to_string(CountingMode m) {
  return m == CountingMode::DropUngrouped ? "drop-ungrouped" : "singleton-ungrouped";
}

inline CountingMode parse_counting_mode(std::string_view s) {
  auto v = ascii_lower(trim(s));
  if (v == "drop-ungrouped" || v == "drop") return CountingMode::DropUngrouped;
  if (v == "singleton-ungrouped" || v == "singleton") return CountingMode::SingletonUngrouped;
  throw UsageError("unknown counting mode '" + std::string(s) + "'");
}

inline constexpr double kDefaultTau = 0.8;

struct CriteriaClustering {
  std::vector<std::vector<std::string>> groups;
  std::vector<std::string> ungrouped;
  ClusterMethod method = ClusterMethod::LlmPrompted;
  double tau = 0.0;  // EmbeddingGreedy only
  std::vector<std::string> warnings;

  /// Normalized phrase -> group index, or -1 for ungrouped phrases.
  std::unordered_map<std::string, int> disposition() const {
    std::unordered_map<std::string, int> out;
    for (std::size_t g = 0; g < groups.size(); ++g)
      for (const auto& p : groups[g]) out.emplace(normalize_phrase(p), static_cast<int>(g));
    for (const auto& p : ungrouped) out.emplace(normalize_phrase(p), -1);
    return out;
  }

  std::size_t phrase_count() const {
    std::size_t n = ungrouped.size();
    for (const auto& g : groups) n += g.size();
    return n;
  }
};

struct ClusterCount {
  std::string statement_id;
  Stance stance = Stance::None;
  std::size_t unique_clusters = 0;
  CountingMode counting_mode = CountingMode::DropUngrouped;
};

/// Maps a parsed grouping back onto the input phrases. Invented phrases and
/// repeated assignments are discarded with a warning; phrases never mentioned
/// become ungrouped.
inline CriteriaClustering assign_groups(std::span<const std::string> phrases,
                                        const std::vector<std::vector<std::string>>& parsed) {
  CriteriaClustering out;
  out.method = ClusterMethod::LlmPrompted;
  const auto unique = dedupe_phrases(phrases);
  std::unordered_map<std::string, std::size_t> by_key;
  for (std::size_t i = 0; i < unique.size(); ++i) by_key.emplace(normalize_phrase(unique[i]), i);

  std::vector<bool> placed(unique.size(), false);
  for (const auto& group : parsed) {
    std::vector<std::string> kept;
    for (const auto& p : group) {
      auto it = by_key.find(normalize_phrase(p));
      if (it == by_key.end()) {
        out.warnings.push_back("discarded phrase not in input: \"" + p + "\"");
        continue;
      }
      if (placed[it->second]) {
        out.warnings.push_back("phrase assigned twice, kept first: \"" + p + "\"");
        continue;
      }
      placed[it->second] = true;
      kept.push_back(unique[it->second]);
    }
    if (!kept.empty()) out.groups.push_back(std::move(kept));
  }
  for (std::size_t i = 0; i < unique.size(); ++i) {
    if (!placed[i]) out.ungrouped.push_back(unique[i]);
  }
  if (!out.ungrouped.empty())
    out.warnings.push_back(std::to_string(out.ungrouped.size()) + " of " + std::to_string(unique.size()) +
                           " phrases left ungrouped");
  return out;
}

/// Clusters phrases with the three-shot grouping prompt.
inline CriteriaClustering llm_cluster(Provider& provider, const ProviderConfig& config, std::span<const std::string> phrases,
                                      const TemplateSet& templates = TemplateSet::builtin()) {
  const auto unique = dedupe_phrases(phrases);
  if (unique.empty()) return CriteriaClustering{};
  const auto completion = provider.chat_complete(config, build_clustering_prompt(unique, templates)).completion;
  return assign_groups(unique, parse_cluster_output(completion));
}

/// Greedy threshold clustering over given embeddings. Each phrase, in input
/// order, joins the first group whose centroid has cosine similarity >= tau.
inline CriteriaClustering greedy_embed_cluster(std::span<const std::string> phrases,
                                               std::span<const EmbeddingVector> embeddings, double tau = kDefaultTau) {
  if (!(tau > 0.0 && tau < 1.0)) throw UsageError("tau must lie in (0, 1)");
  if (phrases.size() != embeddings.size()) throw UsageError("one embedding per phrase required");
  CriteriaClustering out;
  out.method = ClusterMethod::EmbeddingGreedy;
  out.tau = tau;

  std::vector<std::vector<double>> sums;
  std::vector<std::size_t> sizes;
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < phrases.size(); ++i) {
    const auto key = normalize_phrase(phrases[i]);
    if (key.empty() || !seen.insert(key).second) continue;
    const auto& v = embeddings[i];
    if (!sums.empty() && v.dim() != sums.front().size()) throw UsageError("embedding dimensions differ");
    int target = -1;
    for (std::size_t g = 0; g < sums.size(); ++g) {
      std::vector<double> c(sums[g]);
      for (double& x : c) x /= static_cast<double>(sizes[g]);
      EmbeddingVector centroid(std::move(c));
      if (centroid.norm() == 0.0) continue;
      if (cosine_similarity(v, centroid) >= tau) {
        target = static_cast<int>(g);
        break;
      }
    }
    if (target < 0) {
      if (v.norm() == 0.0) throw UsageError("zero embedding for phrase \"" + phrases[i] + "\"");
      out.groups.push_back({std::string(trim(phrases[i]))});
      sums.push_back(v.values());
      sizes.push_back(1);
    } else {
      out.groups[target].push_back(std::string(trim(phrases[i])));
      for (std::size_t d = 0; d < v.dim(); ++d) sums[target][d] += v[d];
      ++sizes[target];
    }
  }
  return out;
}

inline CriteriaClustering greedy_embed_cluster(Provider& provider, const ProviderConfig& config,
                                               std::span<const std::string> phrases, double tau = kDefaultTau) {
  if (!(tau > 0.0 && tau < 1.0)) throw UsageError("tau must lie in (0, 1)");
  const auto unique = dedupe_phrases(phrases);
  if (unique.empty()) {
    CriteriaClustering out;
    out.method = ClusterMethod::EmbeddingGreedy;
    out.tau = tau;
    return out;
  }
  const auto vectors = provider.embed_texts(config, unique);
  return greedy_embed_cluster(unique, vectors, tau);
}

/// Distinct clusters touched by criteria of opinions holding `stance`.
inline ClusterCount count_unique_clusters(const CriteriaClustering& clustering, std::span<const Opinion> opinions,
                                          Stance stance, CountingMode mode = CountingMode::DropUngrouped,
                                          std::string statement_id = {}) {
  const auto disposition = clustering.disposition();
  std::set<int> groups;
  std::set<std::string> loose;
  for (const auto& op : opinions) {
    if (op.stance != stance) continue;
    for (const auto& c : op.criteria) {
      auto key = normalize_phrase(c);
      if (key.empty()) continue;
      auto it = disposition.find(key);
      if (it == disposition.end()) throw Error("criteria phrase \"" + c + "\" has no disposition in the clustering");
      if (it->second >= 0)
        groups.insert(it->second);
      else
        loose.insert(key);
    }
  }
  ClusterCount out;
  out.statement_id = std::move(statement_id);
  out.stance = stance;
  out.counting_mode = mode;
  out.unique_clusters = groups.size() + (mode == CountingMode::SingletonUngrouped ? loose.size() : 0);
  return out;
}

/// Every criteria phrase of the given opinions, in first-appearance order.
inline std::vector<std::string> criteria_phrases(std::span<const Opinion> opinions) {
  std::vector<std::string> all;
  for (const auto& op : opinions)
    for (const auto& c : op.criteria) all.push_back(c);
  return dedupe_phrases(all);
}

}  // namespace divex
