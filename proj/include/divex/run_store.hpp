// Copyright 2026 The divex Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "divex/digest.hpp"
#include "divex/orchestrator.hpp"

namespace divex {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Record serialization

inline json to_json(const Opinion& op, TaskType task) {
  json j;
  j["index"] = op.index;
  if (task != TaskType::Generation) j["stance"] = stance_key(op.stance);
  j["criteria"] = op.criteria;
  j["reason"] = op.reason;
  if (task == TaskType::Generation) j["continuation"] = op.continuation;
  return j;
}

inline Opinion opinion_from_json(const json& j) {
  Opinion op;
  op.index = j.at("index").get<int>();
  op.stance = j.contains("stance") ? parse_stance_key(j.at("stance").get<std::string>()) : Stance::None;
  op.criteria = j.value("criteria", std::vector<std::string>{});
  op.reason = j.at("reason").get<std::string>();
  op.continuation = j.value("continuation", std::string{});
  return op;
}

inline json to_json(std::span<const Opinion> ops, TaskType task) {
  json a = json::array();
  for (const auto& op : ops) a.push_back(to_json(op, task));
  return a;
}

inline std::vector<Opinion> opinions_from_json(const json& a) {
  std::vector<Opinion> out;
  for (const auto& j : a) out.push_back(opinion_from_json(j));
  return out;
}

/// File-system-safe name for a statement id; ids that needed escaping get a
/// digest suffix so distinct ids never collide.
inline std::string sanitize_id(std::string_view id) {
  std::string out;
  bool changed = id.empty();
  for (char c : id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '_' ||
                    (c == '.' && !out.empty());
    out.push_back(ok ? c : '_');
    changed = changed || !ok;
  }
  if (changed) out += "-" + sha256_hex(id).substr(0, 8);
  return out;
}

inline std::string raw_ref(std::string_view statement_id) { return "raw/" + sanitize_id(statement_id) + ".txt"; }

inline json to_json(const OpinionSet& s, TaskType task) {
  return json{{"statement_id", s.statement_id},
              {"prompt_mode", to_string(s.prompt_mode)},
              {"shots", s.shots},
              {"model_id", s.model_id},
              {"raw_completion_ref", raw_ref(s.statement_id)},
              {"recovered", s.recovered},
              {"warnings", s.warnings},
              {"opinions", to_json(s.opinions, task)}};
}

inline OpinionSet opinion_set_from_json(const json& j) {
  OpinionSet s;
  s.statement_id = j.at("statement_id").get<std::string>();
  s.prompt_mode = parse_prompt_mode(j.value("prompt_mode", std::string("criteria")));
  s.shots = j.value("shots", 0);
  s.model_id = j.value("model_id", std::string{});
  s.recovered = j.value("recovered", false);
  s.warnings = j.value("warnings", std::vector<std::string>{});
  s.opinions = opinions_from_json(j.at("opinions"));
  return s;
}

inline json to_json(const RecallTrace& t, TaskType task) {
  json steps = json::array();
  for (const auto& st : t.steps)
    steps.push_back(json{{"n_target", st.n_target}, {"new_records", st.new_records}, {"opinions", to_json(st.opinions, task)}});
  return json{{"statement_id", t.statement_id},
              {"raw_completion_ref", raw_ref(t.statement_id)},
              {"stopped_early", t.stopped_early},
              {"warnings", t.warnings},
              {"steps", steps},
              {"final_opinions", to_json(t.final_opinions, task)}};
}

inline RecallTrace recall_trace_from_json(const json& j) {
  RecallTrace t;
  t.statement_id = j.at("statement_id").get<std::string>();
  t.stopped_early = j.value("stopped_early", false);
  t.warnings = j.value("warnings", std::vector<std::string>{});
  for (const auto& s : j.at("steps")) {
    RecallStep st;
    st.n_target = s.at("n_target").get<int>();
    st.new_records = s.value("new_records", std::size_t{0});
    st.opinions = opinions_from_json(s.at("opinions"));
    t.steps.push_back(std::move(st));
  }
  t.final_opinions = opinions_from_json(j.at("final_opinions"));
  return t;
}

/// Raw completions of one recall trace, seed first.
inline std::string recall_raw_text(const RecallTrace& t) {
  std::string out = "### seed\n" + t.seed_completion + "\n";
  for (const auto& st : t.steps) out += "### N=" + std::to_string(st.n_target) + "\n" + st.completion + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Files

inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return ec == std::errc{} ? std::string(buf, end) : std::string("nan");
}

inline void write_text(const fs::path& path, std::string_view text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed: " + path.string());
}

inline void write_jsonl(const fs::path& path, const std::vector<json>& rows) {
  std::string text;
  for (const auto& r : rows) text += r.dump() + "\n";
  write_text(path, text);
}

inline std::vector<json> read_jsonl(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read " + path.string());
  std::vector<json> rows;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    auto j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw ParseError(path.string() + ":" + std::to_string(n) + ": invalid JSON");
    rows.push_back(std::move(j));
  }
  return rows;
}

inline json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read " + path.string());
  auto j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ParseError(path.string() + ": invalid JSON");
  return j;
}

/// `stem.ext` for version 1, `stem.vN.ext` afterwards.
inline fs::path versioned_name(const fs::path& dir, std::string_view stem, std::string_view ext, int version) {
  std::string name(stem);
  if (version > 1) name += ".v" + std::to_string(version);
  return dir / (name + std::string(ext));
}

/// First version for which none of the given outputs exist yet.
inline int next_version(const fs::path& dir, std::initializer_list<std::pair<std::string_view, std::string_view>> outputs) {
  for (int v = 1;; ++v) {
    bool free = true;
    for (const auto& [stem, ext] : outputs) free = free && !fs::exists(versioned_name(dir, stem, ext, v));
    if (free) return v;
  }
}

/// Most recent existing version, or an empty path.
inline fs::path latest_version(const fs::path& dir, std::string_view stem, std::string_view ext) {
  fs::path best;
  int best_v = 0;
  if (!fs::is_directory(dir)) return best;
  const std::string plain = std::string(stem) + std::string(ext);
  const std::string prefix = std::string(stem) + ".v";
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    int v = 0;
    if (name == plain) {
      v = 1;
    } else if (name.starts_with(prefix) && name.ends_with(ext) && name.size() > prefix.size() + ext.size()) {
      std::string_view digits(name.data() + prefix.size(), name.size() - prefix.size() - ext.size());
      auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v);
      if (ec != std::errc{} || p != digits.data() + digits.size() || v < 2) continue;
    } else {
      continue;
    }
    if (v > best_v) {
      best_v = v;
      best = e.path();
    }
  }
  return best;
}

}  // namespace divex
