// Copyright 2026 The divex Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace divex {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid input or configuration supplied by the caller.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// A model completion or a data file could not be parsed.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Transport, HTTP or cache failure while talking to a provider.
class ProviderError : public Error {
 public:
  using Error::Error;
};

/// Replay mode was asked for a prompt or text that was never recorded.
class FixtureMiss : public ProviderError {
 public:
  using ProviderError::ProviderError;
};

enum class TaskType { Stance, Labeling, Generation };

inline std::string_view to_string(TaskType t) {
  switch (t) {
    case TaskType::Stance: return "stance";
    case TaskType::Labeling: return "labeling";
    case TaskType::Generation: return "generation";
  }
  return "stance";
}

inline TaskType parse_task_type(std::string_view s) {
  if (s == "stance") return TaskType::Stance;
  if (s == "labeling") return TaskType::Labeling;
  if (s == "generation") return TaskType::Generation;
  throw UsageError("unknown task type '" + std::string(s) + "' (expected stance|labeling|generation)");
}

enum class Stance { Agree, Disagree, Hate, NotHate, None };

/// Canonical surface form, as written into prompts.
inline std::string_view stance_label(Stance s) {
  switch (s) {
    case Stance::Agree: return "Agree";
    case Stance::Disagree: return "Disagree";
    case Stance::Hate: return "Hate Speech";
    case Stance::NotHate: return "Not Hate Speech";
    case Stance::None: return "";
  }
  return "";
}

/// Short identifier used in JSON files and report keys.
inline std::string_view stance_key(Stance s) {
  switch (s) {
    case Stance::Agree: return "agree";
    case Stance::Disagree: return "disagree";
    case Stance::Hate: return "hate";
    case Stance::NotHate: return "not_hate";
    case Stance::None: return "none";
  }
  return "none";
}

inline Stance parse_stance_key(std::string_view s) {
  for (Stance st : {Stance::Agree, Stance::Disagree, Stance::Hate, Stance::NotHate, Stance::None}) {
    if (stance_key(st) == s) return st;
  }
  throw ParseError("unknown stance key '" + std::string(s) + "'");
}

/// The two stances a task admits, in display order. Empty for Generation.
inline std::vector<Stance> stances_for(TaskType t) {
  switch (t) {
    case TaskType::Stance: return {Stance::Agree, Stance::Disagree};
    case TaskType::Labeling: return {Stance::Hate, Stance::NotHate};
    case TaskType::Generation: return {};
  }
  return {};
}

inline bool stance_allowed(TaskType t, Stance s) {
  if (t == TaskType::Generation) return s == Stance::None;
  auto allowed = stances_for(t);
  return std::find(allowed.begin(), allowed.end(), s) != allowed.end();
}

/// One parsed model (or human) opinion.
struct Opinion {
  int index = 0;
  Stance stance = Stance::None;
  std::vector<std::string> criteria;  // stored as written, trimmed
  std::string reason;
  std::string continuation;  // Generation tasks only

  friend bool operator==(const Opinion&, const Opinion&) = default;
};

// ---------------------------------------------------------------------------
// String helpers

inline bool is_ascii_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && is_ascii_space(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && is_ascii_space(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

/// Identity key for a criteria phrase: trimmed, internal whitespace runs
/// collapsed to one space, ASCII-lowercased.
inline std::string normalize_phrase(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (unsigned char c : trim(s)) {
    if (is_ascii_space(c)) {
      pending_space = true;
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a') : static_cast<char>(c));
  }
  return out;
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    out.emplace_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline bool starts_with_ci(std::string_view s, std::string_view prefix) {
  if (s.size() < prefix.size()) return false;
  return ascii_lower(s.substr(0, prefix.size())) == ascii_lower(prefix);
}

/// Maps a model-written stance or label ("agree", "Not Hate Speech", ...) to
/// a Stance. Returns nullopt for anything unrecognised.
inline std::optional<Stance> normalize_stance(std::string_view surface) {
  std::string s = normalize_phrase(surface);
  for (char& c : s) {
    if (c == '-' || c == '_') c = ' ';
  }
  while (!s.empty() && (s.back() == '.' || s.back() == '!')) s.pop_back();
  if (s == "agree" || s == "agreed" || s == "agrees") return Stance::Agree;
  if (s == "disagree" || s == "disagreed" || s == "disagrees") return Stance::Disagree;
  if (s == "hate speech" || s == "hate" || s == "hateful") return Stance::Hate;
  if (s == "not hate speech" || s == "not hate" || s == "non hate speech" || s == "non hate" || s == "no hate speech" ||
      s == "not a hate speech")
    return Stance::NotHate;
  return std::nullopt;
}

}  // namespace divex
