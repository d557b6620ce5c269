// Copyright 2026 The divex Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "divex/corpus.hpp"
#include "divex/parser.hpp"
#include "divex/prompting.hpp"
#include "divex/provider.hpp"

namespace divex {

inline const std::vector<int>& default_recall_schedule() {
  static const std::vector<int> schedule{2, 5, 8, 11, 14, 17, 20};
  return schedule;
}

struct RunConfig {
  PromptSpec prompt_spec;
  ProviderConfig provider;
  ProviderConfig embedding = default_embedding_config();
  std::vector<int> recall_schedule = default_recall_schedule();
  std::string run_id;
  std::uint64_t seed = 0;
  std::size_t concurrency = 4;
  std::vector<ShotExample> shot_bank = builtin_shot_bank();
  TemplateSet templates = TemplateSet::builtin();
};

inline void validate_schedule(const std::vector<int>& schedule) {
  if (schedule.empty()) throw UsageError("recall schedule must not be empty");
  int prev = 1;  // the seed step always yields one opinion
  for (int n : schedule) {
    if (n <= prev) throw UsageError("recall schedule must be strictly increasing and start above 1");
    prev = n;
  }
}

/// Opinions parsed from a single batch completion.
struct OpinionSet {
  std::string statement_id;
  std::vector<Opinion> opinions;
  PromptMode prompt_mode = PromptMode::CriteriaBased;
  int shots = 0;
  std::string model_id;
  std::string raw_completion;
  bool recovered = false;
  std::vector<std::string> warnings;
};

struct RecallStep {
  int n_target = 0;
  std::vector<Opinion> opinions;  // all accepted opinions after this step
  std::size_t new_records = 0;
  std::string completion;
};

struct RecallTrace {
  std::string statement_id;
  std::string seed_completion;
  std::vector<RecallStep> steps;
  std::vector<Opinion> final_opinions;
  bool stopped_early = false;
  std::vector<std::string> warnings;
};

struct StatementFailure {
  std::string statement_id;
  std::string error;
};

struct GenerationResult {
  std::vector<OpinionSet> sets;
  std::vector<StatementFailure> failures;
};

struct RecallResult {
  std::vector<RecallTrace> traces;
  std::vector<StatementFailure> failures;
};

/// Seed opinion could not be obtained; the statement's recall trace is abandoned.
class RecallAborted : public Error {
 public:
  using Error::Error;
};

namespace detail {

/// Runs fn(i) for i in [0, count) on up to `concurrency` threads.
/// fn must not throw.
inline void parallel_for(std::size_t count, std::size_t concurrency, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::max<std::size_t>(1, std::min(concurrency, count));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> threads;
  threads.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) fn(i);
    });
  }
}

inline std::string region_for_recall(const std::string& completion, std::size_t next_index, TaskType task) {
  auto body = trim(completion);
  if (body.starts_with("{")) return extract_dict_region(body);
  return extract_dict_region("{" + open_record_header(next_index, task) + " " + std::string(body));
}

}  // namespace detail

/// One batch prompt per statement. Failures are isolated per statement.
inline GenerationResult run_generation(Provider& provider, const RunConfig& config, const Corpus& corpus) {
  config.provider.validate();
  struct Slot {
    std::optional<OpinionSet> set;
    std::optional<StatementFailure> failure;
  };
  std::vector<Slot> slots(corpus.size());
  detail::parallel_for(corpus.size(), config.concurrency, [&](std::size_t i) {
    const Statement& st = corpus.statements[i];
    PromptSpec spec = config.prompt_spec;
    spec.task_type = st.task_type;
    std::string completion;
    try {
      const std::string prompt = build_opinion_prompt(spec, st, config.shot_bank, config.templates);
      completion = provider.chat_complete(config.provider, prompt).completion;
      auto outcome = parse_completion(completion, st.task_type);
      OpinionSet set;
      set.statement_id = st.id;
      set.opinions = std::move(outcome.opinions);
      set.prompt_mode = spec.mode;
      set.shots = spec.shots;
      set.model_id = config.provider.model_id;
      set.raw_completion = completion;
      set.recovered = outcome.recovered;
      set.warnings = std::move(outcome.warnings);
      slots[i].set = std::move(set);
    } catch (const std::exception& e) {
      slots[i].failure = StatementFailure{st.id, e.what()};
    }
  });
  GenerationResult result;
  for (auto& s : slots) {
    if (s.set) result.sets.push_back(std::move(*s.set));
    if (s.failure) result.failures.push_back(std::move(*s.failure));
  }
  return result;
}

/// Step-by-step recall for one statement: a seed prompt for one opinion, then
/// one continuation prompt per schedule entry carrying every accepted opinion.
/// Stops early after two consecutive steps that add nothing.
inline RecallTrace run_recall(Provider& provider, const RunConfig& config, const Statement& statement) {
  validate_schedule(config.recall_schedule);
  const TaskType task = statement.task_type;
  RecallTrace trace;
  trace.statement_id = statement.id;

  trace.seed_completion = provider.chat_complete(config.provider, build_seed_prompt(statement, task, config.templates)).completion;
  std::vector<Opinion> accepted;
  try {
    auto seed = parse_completion(trace.seed_completion, task);
    if (seed.opinions.empty()) throw ParseError("seed completion holds no opinion");
    if (seed.opinions.size() > 1) trace.warnings.push_back("seed returned " + std::to_string(seed.opinions.size()) + " opinions, kept the first");
    accepted.push_back(seed.opinions.front());
    accepted.back().index = 1;
  } catch (const ParseError& e) {
    throw RecallAborted("statement " + statement.id + ": seed opinion unparseable: " + e.what());
  }

  int empty_streak = 0;
  for (int n : config.recall_schedule) {
    RecallStep step;
    step.n_target = n;
    const std::string prompt = build_recall_prompt(statement, accepted, static_cast<std::size_t>(n), task, config.templates);
    step.completion = provider.chat_complete(config.provider, prompt).completion;
    try {
      auto outcome = parse_opinion_dict(detail::region_for_recall(step.completion, accepted.size() + 1, task), task);
      for (auto& w : outcome.warnings) trace.warnings.push_back("N=" + std::to_string(n) + ": " + w);
      for (auto& op : outcome.opinions) {
        if (op.index <= static_cast<int>(accepted.size())) {
          trace.warnings.push_back("N=" + std::to_string(n) + ": index " + std::to_string(op.index) +
                                   " already accepted, duplicate dropped");
          continue;
        }
        if (static_cast<int>(accepted.size()) >= n) {
          trace.warnings.push_back("N=" + std::to_string(n) + ": record beyond target dropped");
          continue;
        }
        op.index = static_cast<int>(accepted.size()) + 1;
        accepted.push_back(std::move(op));
        ++step.new_records;
      }
    } catch (const ParseError& e) {
      trace.warnings.push_back("N=" + std::to_string(n) + ": unparseable completion: " + e.what());
    }
    step.opinions = accepted;
    const bool empty = step.new_records == 0;
    trace.steps.push_back(std::move(step));
    empty_streak = empty ? empty_streak + 1 : 0;
    if (empty_streak == 2) {
      trace.stopped_early = true;
      break;
    }
  }
  trace.final_opinions = accepted;
  return trace;
}

inline RecallResult run_recall_batch(Provider& provider, const RunConfig& config, const Corpus& corpus) {
  validate_schedule(config.recall_schedule);
  config.provider.validate();
  std::vector<std::optional<RecallTrace>> traces(corpus.size());
  std::vector<std::optional<StatementFailure>> failures(corpus.size());
  detail::parallel_for(corpus.size(), config.concurrency, [&](std::size_t i) {
    try {
      traces[i] = run_recall(provider, config, corpus.statements[i]);
    } catch (const std::exception& e) {
      failures[i] = StatementFailure{corpus.statements[i].id, e.what()};
    }
  });
  RecallResult result;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (traces[i]) result.traces.push_back(std::move(*traces[i]));
    if (failures[i]) result.failures.push_back(std::move(*failures[i]));
  }
  return result;
}

/// Fills in criteria for opinions that have none (free-form or human
/// opinions). Opinions that already carry criteria are left untouched. A
/// completion without a list leaves the criteria empty and adds a warning;
/// provider errors propagate.
inline std::vector<OpinionSet> run_criteria_extraction(Provider& provider, const RunConfig& config,
                                                       std::vector<OpinionSet> sets) {
  std::vector<std::exception_ptr> errors(sets.size());
  detail::parallel_for(sets.size(), config.concurrency, [&](std::size_t i) {
    try {
      for (auto& op : sets[i].opinions) {
        if (!op.criteria.empty() || trim(op.reason).empty()) continue;
        auto completion =
            provider.chat_complete(config.provider, build_criteria_extraction_prompt(op.reason, config.templates)).completion;
        try {
          op.criteria = parse_criteria_list(completion);
        } catch (const ParseError& e) {
          op.criteria.clear();
          auto w = "criteria extraction for opinion " + std::to_string(op.index) + " failed: " + e.what();
          auto& ws = sets[i].warnings;
          if (std::find(ws.begin(), ws.end(), w) == ws.end()) ws.push_back(std::move(w));
        }
      }
    } catch (...) {
      errors[i] = std::current_exception();
    }
  });
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return sets;
}

}  // namespace divex
