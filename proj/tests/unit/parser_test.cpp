// Copyright 2026 The divex Authors
// SPDX-License-Identifier: Apache-2.0

#include <random>

#include <gtest/gtest.h>

#include "divex/parser.hpp"
#include "divex/prompting.hpp"
#include "divex/run_store.hpp"
#include "support/oracles.hpp"
#include "support/test_support.hpp"

namespace divex {
namespace {

using testing::opinion_from_oracle;
using testing::read_jsonl_file;
using testing::read_text;
using testing::source_path;

TEST(Parser, StrictDictionary) {
  auto out = parse_completion(
      R"({1: {"Stance": "Agree", "Criteria": ["a", "b"], "Reason": "x"}, 2: {"Stance": "Disagree", "Criteria": [], "Reason": "y"}})",
      TaskType::Stance);
  ASSERT_EQ(out.opinions.size(), 2u);
  EXPECT_FALSE(out.recovered);
  EXPECT_TRUE(out.warnings.empty());
  EXPECT_EQ(out.opinions[0], testing::make_opinion(1, Stance::Agree, {"a", "b"}, "x"));
  EXPECT_EQ(out.opinions[1], testing::make_opinion(2, Stance::Disagree, {}, "y"));
}

TEST(Parser, MultiLineTableOutput) {
  auto out = parse_completion(read_text(source_path("testdata/prompts/one_shot_criteria_output.txt")), TaskType::Stance);
  ASSERT_EQ(out.opinions.size(), 10u);
  EXPECT_FALSE(out.recovered);
  const auto& first = out.opinions[0];
  EXPECT_EQ(first.index, 1);
  EXPECT_EQ(first.stance, Stance::Agree);
  EXPECT_EQ(first.criteria, (std::vector<std::string>{"teamwork", "goals"}));
  EXPECT_EQ(first.reason, "In a team setting, following instructions or orders can be necessary for achieving shared goals.");
  for (std::size_t i = 0; i < out.opinions.size(); ++i) {
    EXPECT_EQ(out.opinions[i].index, static_cast<int>(i + 1));
    EXPECT_EQ(out.opinions[i].stance, i % 2 == 0 ? Stance::Agree : Stance::Disagree);
  }
}

TEST(Parser, RepairsAreReported) {
  auto out = parse_completion("{1: {'Stance': 'Agree', 'Criteria': ['a',], 'Reason': 'r',},}", TaskType::Stance);
  ASSERT_EQ(out.opinions.size(), 1u);
  EXPECT_TRUE(out.recovered);
  EXPECT_GE(out.warnings.size(), 2u);
  EXPECT_EQ(out.opinions[0].criteria, std::vector<std::string>{"a"});
}

TEST(Parser, TruncatedTailDropsPartialRecord) {
  auto out = parse_completion(R"({1: {"Stance": "Agree", "Criteria": ["a"], "Reason": "x"}, 2: {"Stance": "Disagree", "Crit)",
                              TaskType::Stance);
  ASSERT_EQ(out.opinions.size(), 1u);
  EXPECT_TRUE(out.recovered);
}

TEST(Parser, UnparseableThrows) {
  EXPECT_THROW(parse_completion("I cannot help with that.", TaskType::Stance), ParseError);
  EXPECT_THROW(parse_completion(R"({1: {"Stance": "Agr)", TaskType::Stance), ParseError);
}

TEST(Parser, UnknownStanceDropsRecord) {
  auto out = parse_completion(R"({1: {"Stance": "Maybe", "Reason": "x"}, 2: {"Stance": "Agree", "Reason": "y"}})", TaskType::Stance);
  ASSERT_EQ(out.opinions.size(), 1u);
  EXPECT_EQ(out.opinions[0].index, 2);
  EXPECT_FALSE(out.warnings.empty());
}

TEST(Parser, LabelingTaskRejectsAgree) {
  auto out = parse_completion(R"({1: {"Stance": "Agree", "Reason": "x"}, 2: {"Stance": "Not Hate Speech", "Reason": "y"}})",
                              TaskType::Labeling);
  ASSERT_EQ(out.opinions.size(), 1u);
  EXPECT_EQ(out.opinions[0].stance, Stance::NotHate);
}

TEST(Parser, NoisyCorpus) {
  const auto cases = read_jsonl_file(source_path("testdata/parser/noisy_cases.jsonl"));
  ASSERT_EQ(cases.size(), 50u);
  int passed = 0;
  for (const auto& c : cases) {
    const TaskType task = parse_task_type(c.at("task_type").get<std::string>());
    std::vector<Opinion> expected;
    for (const auto& e : c.at("expected")) expected.push_back(opinion_from_oracle(e));
    try {
      auto out = parse_completion(c.at("completion").get<std::string>(), task);
      if (out.opinions == expected) {
        ++passed;
        continue;
      }
      ADD_FAILURE() << c.at("id") << ": parsed " << out.opinions.size() << " records, expected " << expected.size();
    } catch (const ParseError& e) {
      ADD_FAILURE() << c.at("id") << ": " << e.what();
    }
  }
  EXPECT_GE(passed, 48);
}

using testing::oracle::random_opinions;

TEST(Parser, RenderParseRoundTrip) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 500; ++trial) {
    const TaskType task = testing::oracle::kTasks[trial % 3];
    const PromptMode mode = trial % 2 ? PromptMode::FreeForm : PromptMode::CriteriaBased;
    const auto ops = random_opinions(rng, task, mode == PromptMode::CriteriaBased);
    const auto text = render_opinion_dict(ops, mode, task);
    auto out = parse_completion(text, task);
    ASSERT_EQ(out.opinions, ops) << text;
    EXPECT_FALSE(out.recovered);
  }
}

TEST(Parser, JsonRecordRoundTrip) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    const TaskType task = testing::oracle::kTasks[trial % 3];
    for (const auto& op : random_opinions(rng, task, true)) {
      const auto line = to_json(op, task).dump();
      EXPECT_EQ(opinion_from_json(json::parse(line)), op);
    }
  }
}

TEST(Parser, FuzzNeverCrashes) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 2000; ++trial) {
    const TaskType task = testing::oracle::kTasks[trial % 3];
    const std::string text =
        testing::oracle::mutate(rng, render_opinion_dict(random_opinions(rng, task, true), PromptMode::CriteriaBased, task), trial);
    try {
      auto out = parse_completion(text, task);
      for (const auto& op : out.opinions) EXPECT_FALSE(op.reason.empty() && op.criteria.empty() && op.continuation.empty());
    } catch (const ParseError&) {
    }
  }
}

TEST(ClusterOutput, NestedAndMissingOuterBracket) {
  auto a = parse_cluster_output(R"([["protection", "safety"], ["fit"]])");
  EXPECT_EQ(a, (std::vector<std::vector<std::string>>{{"protection", "safety"}, {"fit"}}));
  auto b = parse_cluster_output(R"(["protection", "safety", "padding"], ["compatibility", "fit"], ["quality"]])");
  EXPECT_EQ(b, (std::vector<std::vector<std::string>>{{"protection", "safety", "padding"}, {"compatibility", "fit"}, {"quality"}}));
  auto c = parse_cluster_output("Answer: [[\"a\", \"b\"], [\"c\", \"d");
  EXPECT_EQ(c, (std::vector<std::vector<std::string>>{{"a", "b"}}));
  EXPECT_THROW(parse_cluster_output("no lists here"), ParseError);
}

TEST(CriteriaList, FirstFlatList) {
  EXPECT_EQ(parse_criteria_list(R"( ["openness", "honesty"])"), (std::vector<std::string>{"openness", "honesty"}));
  EXPECT_EQ(parse_criteria_list(R"(Criteria: ['trust', 'Trust ', 'care'])"), (std::vector<std::string>{"trust", "care"}));
  EXPECT_THROW(parse_criteria_list("No clear criteria."), ParseError);
}

}  // namespace
}  // namespace divex
