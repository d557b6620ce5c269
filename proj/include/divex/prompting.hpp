// Copyright 2026 The divex Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "divex/corpus.hpp"
#include "divex/embedded_data.hpp"
#include "divex/types.hpp"

namespace divex {

enum class PromptMode { FreeForm, CriteriaBased };

inline std::string_view to_string(PromptMode m) { return m == PromptMode::FreeForm ? "freeform" : "criteria"; }

inline PromptMode parse_prompt_mode(std::string_view s) {
  if (s == "freeform" || s == "free-form") return PromptMode::FreeForm;
  if (s == "criteria" || s == "criteria-based") return PromptMode::CriteriaBased;
  throw UsageError("unknown prompt mode '" + std::string(s) + "' (expected freeform|criteria)");
}

/// A demonstration: one statement with its example opinions.
struct ShotExample {
  std::string statement_text;
  std::vector<Opinion> opinions;
  TaskType task_type = TaskType::Stance;
};

struct PromptSpec {
  PromptMode mode = PromptMode::CriteriaBased;
  int shots = 1;
  TaskType task_type = TaskType::Stance;
  std::string instruction_template;  // empty selects the shipped template for (mode, task_type)
};

/// Prompt templates keyed by path relative to the templates directory, e.g.
/// "criteria/stance.txt". Placeholders are written `{{name}}`.
class TemplateSet {
 public:
  static const TemplateSet& builtin() {
    static const TemplateSet set = [] {
      TemplateSet t;
      constexpr std::string_view prefix = "templates/";
      for (const auto& [path, content] : embedded::data_files()) {
        if (path.starts_with(prefix)) t.files_.emplace(std::string(path.substr(prefix.size())), std::string(content));
      }
      return t;
    }();
    return set;
  }

  /// Built-in templates overridden by any file present under `dir`.
  static TemplateSet load(const std::filesystem::path& dir) {
    TemplateSet t = builtin();
    if (!std::filesystem::is_directory(dir)) throw UsageError("template directory not found: " + dir.string());
    for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
      if (!entry.is_regular_file()) continue;
      auto rel = std::filesystem::relative(entry.path(), dir).generic_string();
      t.files_[rel] = detail::read_file(entry.path());
    }
    return t;
  }

  /// Template text without its final line terminator.
  std::string get(const std::string& key) const {
    auto it = files_.find(key);
    if (it == files_.end()) throw UsageError("missing prompt template: " + key);
    std::string text = it->second;
    if (!text.empty() && text.back() == '\n') text.pop_back();
    if (!text.empty() && text.back() == '\r') text.pop_back();
    return text;
  }

  const std::map<std::string, std::string>& files() const { return files_; }

 private:
  std::map<std::string, std::string> files_;
};

inline std::string fill_placeholders(std::string text, const std::map<std::string, std::string>& values) {
  for (const auto& [name, value] : values) {
    const std::string token = "{{" + name + "}}";
    std::size_t pos = 0;
    while ((pos = text.find(token, pos)) != std::string::npos) {
      text.replace(pos, token.size(), value);
      pos += value.size();
    }
  }
  return text;
}

// ---------------------------------------------------------------------------
// Shot bank

inline std::vector<ShotExample> parse_shot_bank(std::string_view jsonl) {
  std::vector<ShotExample> bank;
  std::istringstream in{std::string(jsonl)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("statement") || !j.contains("opinions"))
      throw ParseError("shot bank line " + std::to_string(line_no) + ": expected {statement, opinions}");
    ShotExample shot;
    shot.statement_text = j["statement"].get<std::string>();
    shot.task_type = parse_task_type(j.value("task_type", std::string("stance")));
    int idx = 0;
    for (const auto& o : j["opinions"]) {
      Opinion op;
      op.index = ++idx;
      if (shot.task_type != TaskType::Generation) {
        auto st = normalize_stance(o.value("stance", std::string{}));
        if (!st) throw ParseError("shot bank line " + std::to_string(line_no) + ": bad stance");
        op.stance = *st;
      }
      op.criteria = o.value("criteria", std::vector<std::string>{});
      op.reason = o.at("reason").get<std::string>();
      op.continuation = o.value("continuation", std::string{});
      shot.opinions.push_back(std::move(op));
    }
    bank.push_back(std::move(shot));
  }
  return bank;
}

inline const std::vector<ShotExample>& builtin_shot_bank() {
  static const std::vector<ShotExample> bank = parse_shot_bank(embedded::data_files().at("shots.jsonl"));
  return bank;
}

inline std::vector<ShotExample> load_shot_bank(const std::filesystem::path& path) {
  return parse_shot_bank(detail::read_file(path));
}

// ---------------------------------------------------------------------------
// Record rendering, in the double-quoted dict style the prompts demonstrate.

inline std::string quote(std::string_view s) {
  std::string out = "\"";
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default: out.push_back(c);
    }
  }
  out.push_back('"');
  return out;
}

/// `{"Stance": "Agree", "Criteria": ["a", "b"], "Reason": "..."}`; Criteria is
/// omitted in free-form mode, Stance is replaced by Continuation for
/// generation tasks.
inline std::string render_record(const Opinion& op, PromptMode mode, TaskType task) {
  std::string out = "{";
  if (task == TaskType::Generation) {
    out += "\"Continuation\": " + quote(op.continuation);
  } else {
    out += "\"Stance\": " + quote(stance_label(op.stance));
  }
  if (mode == PromptMode::CriteriaBased) {
    out += ", \"Criteria\": [";
    for (std::size_t i = 0; i < op.criteria.size(); ++i) {
      if (i) out += ", ";
      out += quote(op.criteria[i]);
    }
    out += "]";
  }
  out += ", \"Reason\": " + quote(op.reason) + "}";
  return out;
}

/// Records numbered by their position (1-based), ignoring Opinion::index.
inline std::string render_records(std::span<const Opinion> ops, PromptMode mode, TaskType task) {
  std::string out;
  for (std::size_t i = 0; i < ops.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(i + 1) + ": " + render_record(ops[i], mode, task);
  }
  return out;
}

inline std::string render_opinion_dict(std::span<const Opinion> ops, PromptMode mode, TaskType task) {
  return "{" + render_records(ops, mode, task) + "}";
}

// ---------------------------------------------------------------------------
// Prompt builders

namespace detail {

inline std::string template_dir(PromptMode mode) { return mode == PromptMode::FreeForm ? "freeform/" : "criteria/"; }

inline std::string statement_block(std::string_view text, std::string_view instruction) {
  return "Statement: " + std::string(text) + "\n" + std::string(instruction) + "\n";
}

inline bool looks_like_stance_instruction(std::string_view instr) {
  return instr.find("\"Agree\"") != std::string_view::npos || instr.find("\"Disagree\"") != std::string_view::npos ||
         instr.find("Hate Speech") != std::string_view::npos;
}

}  // namespace detail

/// Batch opinion prompt: `spec.shots` demonstrations, then the target
/// statement ending in "Output:". Zero-shot prompts carry the dict-format
/// instruction instead of demonstrations.
inline std::string build_opinion_prompt(const PromptSpec& spec, const Statement& statement,
                                        std::span<const ShotExample> shot_bank,
                                        const TemplateSet& templates = TemplateSet::builtin()) {
  if (spec.shots != 0 && spec.shots != 1 && spec.shots != 5)
    throw UsageError("shots must be 0, 1 or 5 (got " + std::to_string(spec.shots) + ")");
  const std::string task = std::string(to_string(spec.task_type));
  const std::string instruction = spec.instruction_template.empty()
                                      ? templates.get(detail::template_dir(spec.mode) + task + ".txt")
                                      : spec.instruction_template;
  if (spec.task_type == TaskType::Generation && detail::looks_like_stance_instruction(instruction))
    throw UsageError("generation task cannot use a stance-style instruction");

  std::vector<const ShotExample*> shots;
  for (const auto& s : shot_bank) {
    if (static_cast<int>(shots.size()) == spec.shots) break;
    if (s.task_type == spec.task_type) shots.push_back(&s);
  }
  if (static_cast<int>(shots.size()) < spec.shots)
    throw UsageError("shot bank has " + std::to_string(shots.size()) + " " + task + " examples, " +
                     std::to_string(spec.shots) + " required");

  std::string out;
  for (const ShotExample* s : shots) {
    out += detail::statement_block(s->statement_text, instruction);
    out += "Output: " + render_opinion_dict(s->opinions, spec.mode, spec.task_type) + "\n\n";
  }
  out += detail::statement_block(statement.text, instruction);
  if (spec.shots == 0) out += templates.get(detail::template_dir(spec.mode) + task + ".format.txt") + "\n";
  out += "Output:";
  return out;
}

/// Zero-shot prompt asking for a single structured opinion; the first step of
/// recall prompting.
inline std::string build_seed_prompt(const Statement& statement, TaskType task_type,
                                     const TemplateSet& templates = TemplateSet::builtin()) {
  const std::string task = std::string(to_string(task_type));
  return detail::statement_block(statement.text, templates.get("seed/" + task + ".txt")) +
         templates.get("seed/" + task + ".format.txt") + "\nOutput:";
}

/// Header of the record the model is expected to complete in place.
inline std::string open_record_header(std::size_t index, TaskType task_type) {
  return std::to_string(index) + (task_type == TaskType::Generation ? ": {\"Continuation\":" : ": {\"Stance\":");
}

/// Recall continuation: the accepted opinions serialized as the beginning of
/// the output dict, followed by an open header for the next record.
inline std::string build_recall_prompt(const Statement& statement, std::span<const Opinion> accepted, std::size_t n_target,
                                       TaskType task_type, const TemplateSet& templates = TemplateSet::builtin()) {
  if (accepted.empty()) throw UsageError("recall prompt needs at least one accepted opinion");
  if (n_target <= accepted.size())
    throw UsageError("recall target " + std::to_string(n_target) + " must exceed the " + std::to_string(accepted.size()) +
                     " accepted opinions");
  const std::string instruction =
      fill_placeholders(templates.get("recall/" + std::string(to_string(task_type)) + ".txt"), {{"n", std::to_string(n_target)}});
  return detail::statement_block(statement.text, instruction) + "Output: {" +
         render_records(accepted, PromptMode::CriteriaBased, task_type) + ", " +
         open_record_header(accepted.size() + 1, task_type);
}

inline std::string build_criteria_extraction_prompt(std::string_view opinion_text,
                                                    const TemplateSet& templates = TemplateSet::builtin()) {
  if (trim(opinion_text).empty()) throw UsageError("criteria extraction needs a non-empty opinion");
  return fill_placeholders(templates.get("extraction.txt"), {{"opinion", std::string(opinion_text)}});
}

/// Case-insensitive dedup keeping the first surface form (trimmed).
inline std::vector<std::string> dedupe_phrases(std::span<const std::string> words) {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const auto& w : words) {
    auto key = normalize_phrase(w);
    if (key.empty() || !seen.insert(key).second) continue;
    out.emplace_back(trim(w));
  }
  return out;
}

inline std::string build_clustering_prompt(std::span<const std::string> words,
                                           const TemplateSet& templates = TemplateSet::builtin()) {
  auto unique = dedupe_phrases(words);
  if (unique.empty()) throw UsageError("clustering prompt needs at least one word");
  std::string joined;
  for (std::size_t i = 0; i < unique.size(); ++i) {
    if (i) joined += ", ";
    joined += unique[i];
  }
  return fill_placeholders(templates.get("clustering.txt"), {{"words", joined}});
}

}  // namespace divex
