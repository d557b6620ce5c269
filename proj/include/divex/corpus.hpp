// Copyright 2026 The divex Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "divex/digest.hpp"
#include "divex/types.hpp"

namespace divex {

struct Statement {
  std::string id;
  std::string text;
  std::string dataset_tag;
  TaskType task_type = TaskType::Stance;

  friend bool operator==(const Statement&, const Statement&) = default;
};

struct Corpus {
  std::vector<Statement> statements;
  std::string source_path;
  std::vector<std::string> warnings;

  std::size_t size() const { return statements.size(); }
};

namespace detail {

struct CsvRecord {
  std::vector<std::string> fields;
  std::size_t line = 0;  // physical line on which the record starts
};

/// RFC-4180 reader: quoted fields may contain separators, doubled quotes and
/// line breaks. Accepts both LF and CRLF record terminators.
inline std::vector<CsvRecord> read_csv(std::string_view text) {
  std::vector<CsvRecord> records;
  CsvRecord cur;
  std::string field;
  std::size_t line = 1;
  cur.line = 1;
  bool in_quotes = false;
  bool field_started = false;
  bool record_has_content = false;

  auto end_field = [&] {
    cur.fields.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    if (record_has_content || cur.fields.size() > 1 || !cur.fields.front().empty()) records.push_back(std::move(cur));
    cur = CsvRecord{};
    record_has_content = false;
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    if (c == '"' && !field_started) {
      in_quotes = true;
      field_started = true;
      record_has_content = true;
    } else if (c == ',') {
      end_field();
      record_has_content = true;
    } else if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') {
      continue;
    } else if (c == '\n') {
      end_record();
      ++line;
      cur.line = line;
    } else {
      field.push_back(c);
      field_started = true;
      record_has_content = true;
    }
  }
  if (in_quotes) throw ParseError("unterminated quoted field starting near line " + std::to_string(cur.line));
  if (field_started || !cur.fields.empty() || record_has_content) end_record();
  return records;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline bool has_extension_ci(const std::filesystem::path& p, std::string_view ext) {
  return ascii_lower(p.extension().string()) == ext;
}

}  // namespace detail

/// Loads a CSV or JSON-lines statement file.
///
/// Ids come from `id_field` when the file provides it, otherwise they are
/// `<filename>:<line>` using the physical line number of the row. Rows whose
/// text is blank are skipped and reported in `Corpus::warnings`.
inline Corpus load_corpus(const std::filesystem::path& path, TaskType task_type, const std::string& text_field,
                          const std::string& id_field = "id") {
  if (!std::filesystem::exists(path)) throw UsageError("corpus file not found: " + path.string());
  const std::string content = detail::read_file(path);
  const std::string filename = path.filename().string();
  const std::string default_tag = path.stem().string();

  Corpus corpus;
  corpus.source_path = path.string();
  std::unordered_set<std::string> seen;

  auto add = [&](std::string id, std::string text, std::string tag, std::size_t line) {
    if (trim(text).empty()) {
      corpus.warnings.push_back(filename + ":" + std::to_string(line) + ": empty text, row skipped");
      return;
    }
    if (id.empty()) id = filename + ":" + std::to_string(line);
    if (!seen.insert(id).second) throw ParseError("duplicate id '" + id + "' at " + filename + ":" + std::to_string(line));
    corpus.statements.push_back(Statement{std::move(id), std::move(text), tag.empty() ? default_tag : std::move(tag), task_type});
  };

  auto scalar_to_string = [](const nlohmann::json& v) -> std::string {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_null()) return {};
    return v.dump();
  };

  if (detail::has_extension_ci(path, ".csv")) {
    auto records = detail::read_csv(content);
    if (records.empty()) throw ParseError("empty CSV file: " + path.string());
    const auto& header = records.front().fields;
    auto col = [&](const std::string& name) -> std::ptrdiff_t {
      auto it = std::find(header.begin(), header.end(), name);
      return it == header.end() ? -1 : it - header.begin();
    };
    const auto text_col = col(text_field);
    if (text_col < 0) throw ParseError("missing field '" + text_field + "' in CSV header of " + path.string());
    const auto id_col = col(id_field);
    const auto tag_col = col("dataset");
    for (std::size_t r = 1; r < records.size(); ++r) {
      const auto& rec = records[r];
      auto get = [&](std::ptrdiff_t c) -> std::string {
        return c >= 0 && static_cast<std::size_t>(c) < rec.fields.size() ? rec.fields[c] : std::string{};
      };
      if (static_cast<std::size_t>(text_col) >= rec.fields.size())
        throw ParseError("missing field '" + text_field + "' at " + filename + ":" + std::to_string(rec.line));
      add(get(id_col), get(text_col), get(tag_col), rec.line);
    }
  } else {
    std::size_t line_no = 0;
    std::istringstream in(content);
    std::string line;
    while (std::getline(in, line)) {
      ++line_no;
      if (trim(line).empty()) continue;
      nlohmann::json row;
      try {
        row = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(filename + ":" + std::to_string(line_no) + ": invalid JSON: " + e.what());
      }
      if (!row.is_object() || !row.contains(text_field))
        throw ParseError("missing field '" + text_field + "' at " + filename + ":" + std::to_string(line_no));
      std::string id = row.contains(id_field) ? scalar_to_string(row[id_field]) : std::string{};
      std::string tag = row.contains("dataset") ? scalar_to_string(row["dataset"]) : std::string{};
      add(std::move(id), scalar_to_string(row[text_field]), std::move(tag), line_no);
    }
  }
  return corpus;
}

namespace detail {

/// Uniform draw in [0, bound] from raw 64-bit engine output. Unlike
/// std::uniform_int_distribution this is identical on every standard library.
inline std::uint64_t uniform_upto(std::mt19937_64& rng, std::uint64_t bound) {
  if (bound == 0) return 0;
  const std::uint64_t range = bound + 1;
  if (range == 0) return rng();
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % range;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % range;
}

}  // namespace detail

/// Deterministic subset of `n` statements, kept in source order.
inline Corpus sample_statements(const Corpus& corpus, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw UsageError("sample size must be positive");
  if (n > corpus.size())
    throw UsageError("sample size " + std::to_string(n) + " exceeds corpus size " + std::to_string(corpus.size()));
  Corpus out;
  out.source_path = corpus.source_path;
  out.warnings = corpus.warnings;
  if (n == corpus.size()) {
    out.statements = corpus.statements;
    return out;
  }
  // Floyd's algorithm: exactly n draws, no shuffle of the full index range.
  std::mt19937_64 rng(seed);
  std::set<std::size_t> chosen;
  const std::size_t total = corpus.size();
  for (std::size_t j = total - n; j < total; ++j) {
    auto t = static_cast<std::size_t>(detail::uniform_upto(rng, j));
    if (!chosen.insert(t).second) chosen.insert(j);
  }
  for (auto idx : chosen) out.statements.push_back(corpus.statements[idx]);
  return out;
}

/// Content fingerprint (ids and texts) used to check that runs share a corpus.
inline std::string corpus_fingerprint(const std::vector<Statement>& statements) {
  Sha256 h;
  for (const auto& s : statements) h.field(s.id).field(s.text);
  return h.hex();
}

}  // namespace divex
