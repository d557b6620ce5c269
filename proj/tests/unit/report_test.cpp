// Copyright 2026 The divex Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "divex/report.hpp"
#include "support/synthetic.hpp"
#include "support/test_support.hpp"

namespace divex {
namespace {

using testing::make_opinion;

ScoreInput small_input() {
  ScoreInput in;
  in.prompt_mode = "criteria";
  in.shots = 1;
  in.corpus = json{{"fingerprint", "f00"}, {"size", 2}};
  in.statements.push_back({"a",
                           {make_opinion(1, Stance::Agree, {"safety", "security"}, "Cars are dangerous."),
                            make_opinion(2, Stance::Agree, {"cost"}, "It is cheap, really."),
                            make_opinion(3, Stance::Disagree, {"freedom"}, "People like choice."),
                            make_opinion(4, Stance::Disagree, {"liberty", "Cost"}, "Liberty costs.")}});
  in.statements.push_back({"b", {make_opinion(1, Stance::Agree, {"x"}, "Only one.")}});
  return in;
}

testing::Script small_script() {
  testing::Script script;
  script.synonyms = {{"safety", "security"}, {"freedom", "liberty"}};
  return script;
}

double hash_semantic(const std::vector<std::string>& reasons) {
  std::vector<EmbeddingVector> vs;
  for (const auto& r : reasons) vs.push_back(testing::hash_embedding(r, 8));
  long double sum = 0;
  int pairs = 0;
  for (std::size_t i = 0; i < vs.size(); ++i)
    for (std::size_t j = i + 1; j < vs.size(); ++j) {
      long double d = 0, na = 0, nb = 0;
      for (std::size_t k = 0; k < 8; ++k) {
        d += static_cast<long double>(vs[i][k]) * vs[j][k];
        na += static_cast<long double>(vs[i][k]) * vs[i][k];
        nb += static_cast<long double>(vs[j][k]) * vs[j][k];
      }
      sum += 1 - d / std::sqrt(na * nb);
      ++pairs;
    }
  return static_cast<double>(sum / pairs);
}

TEST(Score, PerStatementAndSummary) {
  testing::SyntheticProvider provider(small_script());
  ProviderConfig chat, embed;
  chat.model_id = "m";
  embed.model_id = "e";
  auto r = score_run(provider, chat, embed, small_input(), ScoreOptions{});
  const auto& ps = r.report.at("per_statement");
  EXPECT_NEAR(ps.at("a").at("semantic_diversity").get<double>(),
              hash_semantic({"Cars are dangerous.", "It is cheap, really.", "People like choice.", "Liberty costs."}), 1e-9);
  EXPECT_TRUE(ps.at("b").at("semantic_diversity").is_null());
  EXPECT_EQ(ps.at("a").at("perspective"), (json{{"agree", 2}, {"disagree", 2}}));
  EXPECT_EQ(ps.at("b").at("perspective"), (json{{"agree", 1}, {"disagree", 0}}));
  EXPECT_EQ(ps.at("a").at("stance_counts"), (json{{"agree", 2}, {"disagree", 2}}));
  EXPECT_FALSE(ps.at("a").at("imbalanced").get<bool>());
  EXPECT_TRUE(ps.at("b").at("imbalanced").get<bool>());
  EXPECT_FALSE(ps.at("b").at("lexical").contains("disagree"));

  const auto& s = r.report.at("summary");
  EXPECT_DOUBLE_EQ(s.at("average_opinion_count").get<double>(), 2.5);
  EXPECT_EQ(s.at("skipped_statements"), json::array({"b"}));
  EXPECT_EQ(s.at("scored_statements").get<int>(), 1);
  EXPECT_DOUBLE_EQ(s.at("imbalanced_fraction").get<double>(), 0.5);
  EXPECT_DOUBLE_EQ(s.at("perspective_mean").at("agree").get<double>(), 1.5);
  EXPECT_DOUBLE_EQ(s.at("perspective_mean").at("disagree").get<double>(), 1.0);
  EXPECT_EQ(s.at("criteria_phrases").get<int>(), 6);
  EXPECT_EQ(r.report.at("config").at("chat_model"), "m");

  // One header plus one row per opinion.
  EXPECT_EQ(std::count(r.embeddings_csv.begin(), r.embeddings_csv.end(), '\n'), 6);
  EXPECT_TRUE(r.embeddings_csv.starts_with("id,stance,source,d1,d2,d3,d4,d5,d6,d7,d8\n"));
  EXPECT_NE(r.embeddings_csv.find("\na#2,agree,criteria,"), std::string::npos);
  ASSERT_EQ(r.clusters.size(), 2u);
  EXPECT_EQ(r.clusters[0].at("groups").size(), 3u);
}

TEST(Score, RestrictedMetricsAndPerStance) {
  testing::SyntheticProvider provider(small_script());
  ScoreOptions opt;
  opt.metrics = {Metric::Semantic};
  opt.per_stance_semantic = true;
  auto r = score_run(provider, ProviderConfig{}, ProviderConfig{}, small_input(), opt);
  EXPECT_EQ(provider.calls(), 0u);  // no clustering prompts
  const auto& a = r.report.at("per_statement").at("a");
  EXPECT_FALSE(a.contains("perspective"));
  EXPECT_NEAR(a.at("semantic_by_stance").at("agree").get<double>(), hash_semantic({"Cars are dangerous.", "It is cheap, really."}), 1e-9);
  EXPECT_TRUE(r.report.at("per_statement").at("b").at("semantic_by_stance").at("agree").is_null());
  EXPECT_TRUE(r.clusters.empty());
  EXPECT_EQ(r.report.at("metrics"), json::array({"semantic"}));
}

TEST(Score, RecallCurve) {
  ScoreInput in;
  in.prompt_mode = "recall";
  in.corpus = json{{"fingerprint", "f"}};
  RecallTrace t;
  t.statement_id = "r";
  std::vector<Opinion> all{make_opinion(1, Stance::Agree, {"a"}, "one"), make_opinion(2, Stance::Disagree, {"b"}, "two"),
                           make_opinion(3, Stance::Agree, {"c"}, "three")};
  t.steps.push_back(RecallStep{2, {all[0], all[1]}, 1, ""});
  t.steps.push_back(RecallStep{5, all, 1, ""});
  t.final_opinions = all;
  in.traces.push_back(t);
  in.statements.push_back({"r", all});
  testing::SyntheticProvider provider(testing::Script{});
  auto r = score_run(provider, ProviderConfig{}, ProviderConfig{}, in, ScoreOptions{});
  const auto& curve = r.report.at("recall_curve");
  ASSERT_EQ(curve.size(), 2u);
  EXPECT_EQ(curve[0].at("n_target"), 2);
  EXPECT_DOUBLE_EQ(curve[0].at("average_opinions").get<double>(), 2.0);
  EXPECT_NEAR(curve[0].at("semantic").get<double>(), hash_semantic({"one", "two"}), 1e-9);
  EXPECT_NEAR(curve[1].at("semantic").get<double>(), hash_semantic({"one", "two", "three"}), 1e-9);
  EXPECT_DOUBLE_EQ(curve[1].at("perspective").at("agree").get<double>(), 2.0);
  EXPECT_NE(render_report_md(r.report).find("| 5 | 3.00 |"), std::string::npos);
}

TEST(Score, EmptyInputIsUsageError) {
  testing::SyntheticProvider provider(testing::Script{});
  EXPECT_THROW(score_run(provider, ProviderConfig{}, ProviderConfig{}, ScoreInput{}, ScoreOptions{}), UsageError);
}

TEST(Report, MarkdownSummary) {
  testing::SyntheticProvider provider(small_script());
  auto r = score_run(provider, ProviderConfig{}, ProviderConfig{}, small_input(), ScoreOptions{});
  const auto md = render_report_md(r.report);
  EXPECT_TRUE(md.starts_with("# Diversity report\n"));
  EXPECT_NE(md.find("| Metric | Criteria |"), std::string::npos);
  EXPECT_NE(md.find("| Average opinions per statement | 2.5000 |"), std::string::npos);
  EXPECT_NE(md.find("| Unique criteria clusters (agree) | 1.5000 |"), std::string::npos);
  EXPECT_NE(md.find("| Imbalanced statements (fraction) | 0.5000 |"), std::string::npos);
  EXPECT_NE(md.find("fewer than 2 reasons): b\n"), std::string::npos);
}

json report_with(const std::string& mode, const std::string& fingerprint, std::vector<double> semantic) {
  json per = json::object();
  double sum = 0;
  for (std::size_t i = 0; i < semantic.size(); ++i) {
    per["s" + std::to_string(i)] = json{{"semantic_diversity", semantic[i]}};
    sum += semantic[i];
  }
  return json{{"config", {{"prompt_mode", mode}}},
              {"corpus", {{"fingerprint", fingerprint}}},
              {"per_statement", per},
              {"summary", {{"corpus_semantic", sum / semantic.size()}, {"average_opinion_count", 10}}}};
}

TEST(Compare, TableTestsAndCurve) {
  std::vector<double> low(12, 0.2), high(12, 0.5);
  std::vector<RunReport> runs{{"f", json::object(), report_with("freeform", "x", low)},
                              {"c", json::object(), report_with("criteria", "x", high)},
                              {"c2", json::object(), report_with("criteria", "x", low)}};
  auto cmp = compare_runs(runs);
  EXPECT_NE(cmp.markdown.find("| Metric | Free-form | Criteria (c) | Criteria (c2) |"), std::string::npos);
  // All 12 differences share a sign: 2 of 4096 patterns are as extreme, two-sided.
  ASSERT_EQ(cmp.summary.at("permutation_tests").size(), 2u);
  EXPECT_DOUBLE_EQ(cmp.summary.at("permutation_tests")[0].at("p_value").get<double>(), 2.0 / 4096.0);
  EXPECT_NE(cmp.markdown.find("0.5000*"), std::string::npos);
  EXPECT_EQ(cmp.summary.at("corpus_fingerprint"), "x");
  EXPECT_TRUE(cmp.curve_csv.starts_with("run,label,n_target,average_opinions,semantic\nf,Free-form,,10,0.1999"));

  runs[2].report["corpus"]["fingerprint"] = "y";
  EXPECT_THROW(compare_runs(runs), UsageError);
  EXPECT_THROW(compare_runs({}), UsageError);
}

TEST(Report, MetricNames) {
  EXPECT_EQ(parse_metric(" Lexical "), Metric::Lexical);
  EXPECT_THROW(parse_metric("entropy"), UsageError);
}

}  // namespace
}  // namespace divex
