// Copyright 2026 The divex Authors
// SPDX-License-Identifier: Apache-2.0

#include <random>
#include <set>

#include <gtest/gtest.h>

#include "divex/clustering.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"
#include "support/test_support.hpp"

namespace divex {
namespace {

using testing::make_opinion;
using Groups = std::vector<std::vector<std::string>>;

class CannedProvider : public Provider {
 public:
  explicit CannedProvider(std::string completion) : completion_(std::move(completion)) {}
  ChatExchange chat_complete(const ProviderConfig&, const std::string& prompt) override {
    last_prompt = prompt;
    ++calls;
    ChatExchange ex;
    ex.completion = completion_;
    return ex;
  }
  std::vector<EmbeddingVector> embed_texts(const ProviderConfig&, std::span<const std::string> texts) override {
    std::vector<EmbeddingVector> out;
    for (const auto& t : texts) out.push_back(testing::hash_embedding(t, 8));
    return out;
  }
  std::string last_prompt;
  int calls = 0;

 private:
  std::string completion_;
};

std::size_t partition_size(const CriteriaClustering& c) { return c.phrase_count(); }

TEST(AssignGroups, HandlesInventedDuplicateAndOmittedPhrases) {
  std::vector<std::string> phrases{"Safety", "security", "trust", "cost", "safety "};
  auto c = assign_groups(phrases, Groups{{"safety", "Security", "comfort"}, {"trust", "security"}});
  EXPECT_EQ(c.groups, (Groups{{"Safety", "security"}, {"trust"}}));
  EXPECT_EQ(c.ungrouped, std::vector<std::string>{"cost"});
  ASSERT_EQ(c.warnings.size(), 3u);
  EXPECT_NE(c.warnings[0].find("comfort"), std::string::npos);
  EXPECT_NE(c.warnings[1].find("twice"), std::string::npos);
  EXPECT_EQ(partition_size(c), 4u);
}

TEST(LlmCluster, DemonstrationGroupingsReproduced) {
  // Each demonstration's input and answer, replayed through the pipeline.
  struct Shot {
    std::vector<std::string> input;
    std::string answer;
    Groups expected;
    std::size_t warnings;
  };
  const std::vector<Shot> shots = {
      {{"protection", "compatibility", "padding", "quality", "safety", "fit"},
       R"([["protection", "safety", "padding"], ["compatibility", "fit"], ["quality"]])",
       {{"protection", "safety", "padding"}, {"compatibility", "fit"}, {"quality"}},
       0},
      {{"mental health", "", "humanity", "well-being", "safety", "dignity", "non-violence", "mutual respect", "peace", "unity",
        "security", " acceptance", "human rights"},
       R"([["mental health", "well-being"], ["respect", "dignity", "mutual respect"], ["peace", "unity", "non-violence"], ["security", "safety", "acceptance"], ["human rights", "humanity"]])",
       {{"mental health", "well-being"},
        {"dignity", "mutual respect"},
        {"peace", "unity", "non-violence"},
        {"security", "safety", "acceptance"},
        {"human rights", "humanity"}},
       1},
      {{"freedom", "comfort", "independent", "self-sustainability", "ease", "convenience"},
       R"([["freedom", "independent", "self-sustainability"], ["comfort", "ease", "convenience"]])",
       {{"freedom", "independent", "self-sustainability"}, {"comfort", "ease", "convenience"}},
       0},
  };
  for (const auto& shot : shots) {
    CannedProvider provider(shot.answer);
    auto c = llm_cluster(provider, ProviderConfig{}, shot.input);
    EXPECT_EQ(c.groups, shot.expected);
    EXPECT_TRUE(c.ungrouped.empty());
    EXPECT_EQ(c.warnings.size(), shot.warnings);
    EXPECT_TRUE(provider.last_prompt.ends_with("\nAnswer:"));
    EXPECT_EQ(parse_cluster_output(shot.answer).size(), shot.expected.size());
  }
}

TEST(LlmCluster, EmptyInputMakesNoCall) {
  CannedProvider provider("[]");
  std::vector<std::string> none{" ", ""};
  auto c = llm_cluster(provider, ProviderConfig{}, none);
  EXPECT_EQ(provider.calls, 0);
  EXPECT_EQ(c.phrase_count(), 0u);
}

TEST(LlmCluster, MalformedOutputThrows) {
  CannedProvider provider("I would group them by theme.");
  std::vector<std::string> words{"a", "b"};
  EXPECT_THROW(llm_cluster(provider, ProviderConfig{}, words), ParseError);
}

/// Reference greedy clustering written independently from the library.
Groups greedy_oracle(const std::vector<std::string>& phrases, const std::vector<std::vector<double>>& vecs, double tau) {
  Groups groups;
  std::vector<std::vector<std::vector<double>>> members;
  for (std::size_t i = 0; i < phrases.size(); ++i) {
    int target = -1;
    for (std::size_t g = 0; g < groups.size() && target < 0; ++g) {
      std::vector<double> c(vecs[i].size(), 0.0);
      for (const auto& m : members[g])
        for (std::size_t d = 0; d < c.size(); ++d) c[d] += m[d];
      double dot = 0, na = 0, nb = 0;
      for (std::size_t d = 0; d < c.size(); ++d) {
        dot += vecs[i][d] * c[d];
        na += vecs[i][d] * vecs[i][d];
        nb += c[d] * c[d];
      }
      if (dot / std::sqrt(na * nb) >= tau) target = static_cast<int>(g);
    }
    if (target < 0) {
      groups.push_back({phrases[i]});
      members.push_back({vecs[i]});
    } else {
      groups[target].push_back(phrases[i]);
      members[target].push_back(vecs[i]);
    }
  }
  return groups;
}

TEST(GreedyCluster, MatchesOracleAwayFromThreshold) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> noise(0.0, 0.15);
  int compared = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t dim = 4, centers = 1 + rng() % 4, n = 2 + rng() % 15;
    std::vector<std::vector<double>> base(centers, std::vector<double>(dim));
    for (auto& b : base)
      for (auto& x : b) x = noise(rng) * 6.0;
    std::vector<std::string> phrases;
    std::vector<std::vector<double>> vecs;
    std::vector<EmbeddingVector> ev;
    for (std::size_t i = 0; i < n; ++i) {
      auto v = base[rng() % centers];
      for (auto& x : v) x += noise(rng);
      phrases.push_back("p" + std::to_string(i));
      vecs.push_back(v);
      ev.emplace_back(v);
    }
    const double tau = 0.8;
    auto c = greedy_embed_cluster(phrases, ev, tau);
    EXPECT_EQ(c.phrase_count(), n);
    EXPECT_TRUE(c.ungrouped.empty());
    // Centroid-direction ties at exactly tau are vanishingly unlikely with continuous noise.
    EXPECT_EQ(c.groups, greedy_oracle(phrases, vecs, tau));
    ++compared;
  }
  EXPECT_EQ(compared, 300);
}

TEST(GreedyCluster, ThresholdAndValidation) {
  std::vector<std::string> p{"a", "b", "c"};
  std::vector<EmbeddingVector> v{EmbeddingVector({1.0, 0.0}), EmbeddingVector({0.8, 0.6}), EmbeddingVector({0.0, 1.0})};
  // cos(a, b) = 0.8 exactly: joins at tau 0.8, not at 0.81.
  EXPECT_EQ(greedy_embed_cluster(p, v, 0.8).groups, (Groups{{"a", "b"}, {"c"}}));
  EXPECT_EQ(greedy_embed_cluster(p, v, 0.81).groups, (Groups{{"a"}, {"b"}, {"c"}}));
  EXPECT_THROW(greedy_embed_cluster(p, v, 0.0), UsageError);
  EXPECT_THROW(greedy_embed_cluster(p, v, 1.0), UsageError);
  std::vector<EmbeddingVector> short_v{EmbeddingVector({1.0, 0.0})};
  EXPECT_THROW(greedy_embed_cluster(p, short_v, 0.8), UsageError);
}

TEST(GreedyCluster, ProviderOverloadDeduplicates) {
  CannedProvider provider("");
  std::vector<std::string> p{"Trust", "trust", "care", " "};
  auto c = greedy_embed_cluster(provider, ProviderConfig{}, p);
  EXPECT_EQ(c.phrase_count(), 2u);
  EXPECT_EQ(c.method, ClusterMethod::EmbeddingGreedy);
  EXPECT_DOUBLE_EQ(c.tau, kDefaultTau);
}

TEST(CountUniqueClusters, AgreesWithUnionFindOracle) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto in = testing::oracle::random_cluster_instance(rng);
    for (Stance s : {Stance::Agree, Stance::Disagree}) {
      EXPECT_EQ(count_unique_clusters(in.clustering, in.opinions, s, CountingMode::DropUngrouped).unique_clusters,
                testing::oracle::count_clusters(in, s, false));
      EXPECT_EQ(count_unique_clusters(in.clustering, in.opinions, s, CountingMode::SingletonUngrouped).unique_clusters,
                testing::oracle::count_clusters(in, s, true));
    }
  }
}

TEST(CountUniqueClusters, PhraseWithoutDispositionIsError) {
  CriteriaClustering c;
  c.groups = {{"a"}};
  std::vector<Opinion> ops{make_opinion(1, Stance::Agree, {"b"}, "r")};
  EXPECT_THROW(count_unique_clusters(c, ops, Stance::Agree), Error);
}

TEST(Partition, HoldsForBothMethodsOnGoldenFixtures) {
  // The golden fixtures record both an llm and an embedding clustering pass.
  const auto rows = testing::read_jsonl_file(testing::source_path("testdata/golden/expected/criteria/opinions.jsonl"));
  auto fixtures = load_fixture(testing::source_path("testdata/golden/fixtures"));
  ProviderConfig chat;
  chat.model_id = "synthetic-1";
  ProviderConfig embed = default_embedding_config();
  embed.model_id = "synthetic-embed-1";
  ASSERT_EQ(rows.size(), 20u);
  for (const auto& row : rows) {
    std::vector<Opinion> ops;
    for (const auto& o : row.at("opinions")) ops.push_back(testing::opinion_from_oracle(o));
    const auto phrases = criteria_phrases(ops);
    auto llm = llm_cluster(fixtures, chat, phrases);
    auto emb = greedy_embed_cluster(fixtures, embed, phrases);
    EXPECT_EQ(llm.phrase_count(), phrases.size());
    EXPECT_EQ(emb.phrase_count(), phrases.size());
    for (const auto* c : {&llm, &emb}) {
      std::set<std::string> seen;
      for (const auto& g : c->groups)
        for (const auto& p : g) EXPECT_TRUE(seen.insert(normalize_phrase(p)).second);
      for (const auto& p : c->ungrouped) EXPECT_TRUE(seen.insert(normalize_phrase(p)).second);
      EXPECT_EQ(seen.size(), phrases.size());
    }
  }
}

TEST(ClusterEnums, ParseAndPrint) {
  EXPECT_EQ(parse_cluster_method("llm"), ClusterMethod::LlmPrompted);
  EXPECT_EQ(parse_cluster_method("embedding"), ClusterMethod::EmbeddingGreedy);
  EXPECT_THROW(parse_cluster_method("kmeans"), UsageError);
  EXPECT_EQ(parse_counting_mode("singleton-ungrouped"), CountingMode::SingletonUngrouped);
  EXPECT_EQ(to_string(CountingMode::DropUngrouped), "drop-ungrouped");
  EXPECT_THROW(parse_counting_mode("all"), UsageError);
}

}  // namespace
}  // namespace divex
