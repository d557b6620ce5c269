// Copyright 2026 The divex Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <variant>
#include <vector>

#include "divex/types.hpp"

namespace divex {

struct ParseOutcome {
  std::vector<Opinion> opinions;
  bool recovered = false;  // true iff at least one repair rule fired
  std::vector<std::string> warnings;
};

namespace literal {

// Minimal Python-literal value model: dict, list, string, integer.
struct Value;
using List = std::vector<Value>;
using Dict = std::vector<std::pair<Value, Value>>;

struct Value {
  std::variant<std::monostate, std::int64_t, std::string, List, Dict> v;

  bool is_int() const { return std::holds_alternative<std::int64_t>(v); }
  bool is_str() const { return std::holds_alternative<std::string>(v); }
  bool is_list() const { return std::holds_alternative<List>(v); }
  bool is_dict() const { return std::holds_alternative<Dict>(v); }
  const std::string& str() const { return std::get<std::string>(v); }
  std::int64_t integer() const { return std::get<std::int64_t>(v); }
  const List& list() const { return std::get<List>(v); }
  const Dict& dict() const { return std::get<Dict>(v); }

  /// Scalar rendered as text; empty for containers.
  std::string text() const {
    if (is_str()) return str();
    if (is_int()) return std::to_string(integer());
    return {};
  }
};

/// Input ended inside a value.
struct Truncated {};

/// Unrecoverable syntax problem at `pos`.
struct SyntaxError {
  std::size_t pos;
  std::string what;
};

/// Repair rules, in ladder order. Strict input fires none of them.
enum class Repair : unsigned {
  QuoteStyle = 1u << 0,     // single or typographic quotes, unescaped inner quotes, bare words
  TrailingComma = 1u << 1,  // trailing or missing separators
  Truncation = 1u << 2,     // last incomplete record dropped
  Resync = 1u << 3,         // malformed record skipped
};

inline std::string_view repair_message(Repair r) {
  switch (r) {
    case Repair::QuoteStyle: return "normalized non-standard quoting";
    case Repair::TrailingComma: return "tolerated trailing or missing commas";
    case Repair::Truncation: return "dropped a truncated final record";
    case Repair::Resync: return "skipped a malformed record";
  }
  return "";
}

class Parser {
 public:
  explicit Parser(std::string_view text, std::size_t pos = 0) : s_(text), pos_(pos) {}

  std::size_t pos() const { return pos_; }
  void seek(std::size_t p) { pos_ = p; }
  unsigned repairs() const { return repairs_; }
  void note(Repair r) { repairs_ |= static_cast<unsigned>(r); }
  bool at_end() {
    skip_ws();
    return pos_ >= s_.size();
  }

  void skip_ws() {
    while (pos_ < s_.size() && is_ascii_space(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }

  char peek() {
    skip_ws();
    if (pos_ >= s_.size()) throw Truncated{};
    return s_[pos_];
  }

  Value parse_value() {
    char c = peek();
    if (c == '{' || c == '[' || c == '(') {
      if (depth_ >= kMaxDepth) throw SyntaxError{pos_, "nesting too deep"};
      ++depth_;
      Value v = c == '{' ? parse_dict() : parse_list();
      --depth_;
      return v;
    }
    if (opening_quote_length() > 0) return Value{parse_string()};
    if (c == '-' || (c >= '0' && c <= '9')) return parse_number();
    if (is_word_char(c)) return parse_bare_word();
    throw SyntaxError{pos_, std::string("unexpected character '") + c + "'"};
  }

  /// Parses a dict, invoking `on_entry` after each complete key/value pair so
  /// callers can keep what was read before a truncation.
  template <typename OnEntry>
  void parse_dict_entries(OnEntry&& on_entry) {
    expect('{');
    bool first = true;
    while (true) {
      char c = peek();
      if (c == '}') {
        ++pos_;
        return;
      }
      if (!first) {
        if (c == ',') {
          ++pos_;
          if (peek() == '}') {
            note(Repair::TrailingComma);
            ++pos_;
            return;
          }
        } else {
          note(Repair::TrailingComma);  // missing separator between entries
        }
      }
      first = false;
      Value key = parse_value();
      if (peek() != ':') throw SyntaxError{pos_, "expected ':' after key"};
      ++pos_;
      Value val = parse_value();
      on_entry(std::move(key), std::move(val));
    }
  }

  Value parse_dict() {
    Dict d;
    parse_dict_entries([&](Value k, Value v) { d.emplace_back(std::move(k), std::move(v)); });
    return Value{std::move(d)};
  }

  Value parse_list() {
    const char open = peek();
    const char close = open == '(' ? ')' : ']';
    ++pos_;
    List items;
    bool first = true;
    while (true) {
      char c = peek();
      if (c == close) {
        ++pos_;
        return Value{std::move(items)};
      }
      if (!first) {
        if (c == ',') {
          ++pos_;
          if (peek() == close) {
            note(Repair::TrailingComma);
            ++pos_;
            return Value{std::move(items)};
          }
        } else {
          note(Repair::TrailingComma);
        }
      }
      first = false;
      items.push_back(parse_value());
    }
  }

  std::string parse_string() {
    skip_ws();
    const std::size_t qlen = opening_quote_length();
    const std::string_view open = s_.substr(pos_, qlen);
    std::string_view close;
    if (open == "\"") {
      close = "\"";
    } else {
      note(Repair::QuoteStyle);
      if (open == "'") close = "'";
      else if (open == "\xE2\x80\x9C") close = "\xE2\x80\x9D";  // “ ”
      else if (open == "\xE2\x80\x98") close = "\xE2\x80\x99";  // ‘ ’
      else close = "\"";
    }
    pos_ += qlen;
    std::string out;
    while (true) {
      if (pos_ >= s_.size()) throw Truncated{};
      char c = s_[pos_];
      if (c == '\\') {
        if (pos_ + 1 >= s_.size()) throw Truncated{};
        char e = s_[pos_ + 1];
        pos_ += 2;
        switch (e) {
          case 'n': out.push_back('\n'); break;
          case 't': out.push_back('\t'); break;
          case 'r': out.push_back('\r'); break;
          case 'u': {
            if (pos_ + 4 > s_.size()) throw Truncated{};
            std::uint32_t cp = 0;
            bool ok = true;
            for (char h : s_.substr(pos_, 4)) {
              cp <<= 4;
              if (h >= '0' && h <= '9') cp |= static_cast<std::uint32_t>(h - '0');
              else if (h >= 'a' && h <= 'f') cp |= static_cast<std::uint32_t>(h - 'a' + 10);
              else if (h >= 'A' && h <= 'F') cp |= static_cast<std::uint32_t>(h - 'A' + 10);
              else ok = false;
            }
            if (!ok) {
              out.push_back('u');
              break;
            }
            append_utf8(out, cp);
            pos_ += 4;
            break;
          }
          default: out.push_back(e);
        }
        continue;
      }
      if (s_.substr(pos_, close.size()) == close) {
        // A closing quote only counts when a delimiter follows; otherwise it
        // is an unescaped quote or apostrophe inside the text.
        if (closes_here(pos_ + close.size())) {
          pos_ += close.size();
          return out;
        }
        note(Repair::QuoteStyle);
      }
      out.push_back(c);
      ++pos_;
    }
  }

 private:
  static bool is_word_char(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_' || static_cast<unsigned char>(c) >= 0x80;
  }

  std::size_t opening_quote_length() const {
    if (pos_ >= s_.size()) return 0;
    char c = s_[pos_];
    if (c == '"' || c == '\'') return 1;
    auto rest = s_.substr(pos_);
    if (rest.starts_with("\xE2\x80\x9C") || rest.starts_with("\xE2\x80\x98")) return 3;
    return 0;
  }

  bool closes_here(std::size_t p) const {
    while (p < s_.size() && is_ascii_space(static_cast<unsigned char>(s_[p]))) ++p;
    if (p >= s_.size()) return true;
    char c = s_[p];
    return c == ',' || c == ':' || c == '}' || c == ']' || c == ')';
  }

  void expect(char c) {
    if (peek() != c) throw SyntaxError{pos_, std::string("expected '") + c + "'"};
    ++pos_;
  }

  Value parse_number() {
    std::size_t start = pos_;
    if (s_[pos_] == '-') ++pos_;
    while (pos_ < s_.size() && ((s_[pos_] >= '0' && s_[pos_] <= '9') || s_[pos_] == '.')) ++pos_;
    std::string_view tok = s_.substr(start, pos_ - start);
    if (pos_ >= s_.size()) throw Truncated{};
    if (tok.find('.') != std::string_view::npos) return Value{std::string(tok)};
    if (tok == "-") throw SyntaxError{start, "dangling '-'"};
    try {
      return Value{static_cast<std::int64_t>(std::stoll(std::string(tok)))};
    } catch (const std::out_of_range&) {
      return Value{std::string(tok)};
    }
  }

  // Unquoted word or phrase, terminated by a structural character.
  Value parse_bare_word() {
    std::size_t start = pos_;
    while (pos_ < s_.size()) {
      char c = s_[pos_];
      if (c == ',' || c == ':' || c == '}' || c == ']' || c == ')' || c == '{' || c == '[' || c == '"') break;
      ++pos_;
    }
    if (pos_ >= s_.size()) throw Truncated{};
    std::string word(trim(s_.substr(start, pos_ - start)));
    if (word == "None" || word == "null") return Value{};
    note(Repair::QuoteStyle);
    return Value{std::move(word)};
  }

  static void append_utf8(std::string& out, std::uint32_t cp) {
    if (cp < 0x80) {
      out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
      out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
      out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
  }

  static constexpr int kMaxDepth = 64;

  std::string_view s_;
  std::size_t pos_;
  unsigned repairs_ = 0;
  int depth_ = 0;
};

inline void append_repair_warnings(unsigned repairs, std::vector<std::string>& warnings) {
  for (Repair r : {Repair::QuoteStyle, Repair::TrailingComma, Repair::Truncation, Repair::Resync}) {
    if (repairs & static_cast<unsigned>(r)) warnings.emplace_back(repair_message(r));
  }
}

}  // namespace literal

namespace detail {

/// Quote-aware brace matching. Returns the end offset (exclusive) of the
/// balanced region starting at `open`, or npos when input ends first.
inline std::size_t match_braces(std::string_view s, std::size_t open) {
  int depth = 0;
  char quote = 0;
  auto prev_significant = [&](std::size_t i) -> char {
    while (i > open) {
      --i;
      if (!is_ascii_space(static_cast<unsigned char>(s[i]))) return s[i];
    }
    return s[open];
  };
  auto closes = [&](std::size_t p) {
    while (p < s.size() && is_ascii_space(static_cast<unsigned char>(s[p]))) ++p;
    return p >= s.size() || s[p] == ',' || s[p] == ':' || s[p] == '}' || s[p] == ']';
  };
  for (std::size_t i = open; i < s.size(); ++i) {
    char c = s[i];
    if (quote) {
      if (c == '\\') {
        ++i;
      } else if (c == quote && closes(i + 1)) {
        quote = 0;
      }
      continue;
    }
    if (c == '"') {
      quote = c;
    } else if (c == '\'') {
      char p = prev_significant(i);
      if (p == '{' || p == '[' || p == ',' || p == ':') quote = c;
    } else if (c == '{') {
      ++depth;
    } else if (c == '}') {
      if (--depth == 0) return i + 1;
    }
  }
  return std::string_view::npos;
}

inline std::string_view strip_code_fence(std::string_view s) {
  auto fence = s.find("```");
  if (fence == std::string_view::npos) return s;
  auto body = s.find('\n', fence);
  if (body == std::string_view::npos) return s.substr(fence + 3);
  auto end = s.find("```", body);
  auto inner = s.substr(body + 1, end == std::string_view::npos ? std::string_view::npos : end - body - 1);
  if (inner.find('{') == std::string_view::npos && inner.find('[') == std::string_view::npos) return s;
  return inner;
}

inline std::optional<int> key_index(const literal::Value& key) {
  if (key.is_int()) return static_cast<int>(key.integer());
  if (key.is_str()) {
    std::string digits;
    for (char c : key.str()) {
      if (c >= '0' && c <= '9') digits.push_back(c);
      else if (!digits.empty()) break;
    }
    if (!digits.empty() && digits.size() < 9) return std::stoi(digits);
  }
  return std::nullopt;
}

inline const literal::Value* field(const literal::Dict& d, std::initializer_list<std::string_view> names) {
  for (const auto& [k, v] : d) {
    if (!k.is_str()) continue;
    auto key = normalize_phrase(k.str());
    for (auto n : names) {
      if (key == n) return &v;
    }
  }
  return nullptr;
}

inline std::vector<std::string> criteria_from(const literal::Value& v) {
  std::vector<std::string> out;
  auto push = [&](std::string_view s) {
    auto t = trim(s);
    if (!t.empty()) out.emplace_back(t);
  };
  if (v.is_list()) {
    for (const auto& item : v.list()) push(item.text());
  } else if (v.is_str()) {
    for (const auto& part : split(v.str(), ',')) push(part);
  }
  return out;
}

/// Converts one record dict to an Opinion, or explains why it was dropped.
inline std::variant<Opinion, std::string> to_opinion(const literal::Dict& rec, int index, TaskType task) {
  Opinion op;
  op.index = index;
  const auto* reason = field(rec, {"reason", "reasons", "explanation"});
  if (reason == nullptr || trim(reason->text()).empty())
    return "record " + std::to_string(index) + " dropped: missing reason";
  op.reason = std::string(trim(reason->text()));
  if (const auto* crit = field(rec, {"criteria", "criterion"})) op.criteria = criteria_from(*crit);
  if (task == TaskType::Generation) {
    if (const auto* cont = field(rec, {"continuation", "sentence", "story", "next sentence"}))
      op.continuation = std::string(trim(cont->text()));
    op.stance = Stance::None;
    return op;
  }
  const auto* stance = field(rec, {"stance", "label"});
  if (stance == nullptr) return "record " + std::to_string(index) + " dropped: missing stance";
  auto st = normalize_stance(stance->text());
  if (!st || !stance_allowed(task, *st))
    return "record " + std::to_string(index) + " dropped: unrecognized stance '" + stance->text() + "'";
  op.stance = *st;
  return op;
}

/// Offset of the next `, <digits> :` record key at or after `from`, pointing
/// at the first digit.
inline std::size_t next_record_key(std::string_view s, std::size_t from) {
  auto skip_ws = [&](std::size_t i) {
    while (i < s.size() && is_ascii_space(static_cast<unsigned char>(s[i]))) ++i;
    return i;
  };
  for (std::size_t i = from; i < s.size(); ++i) {
    if (s[i] != ',') continue;
    std::size_t j = skip_ws(i + 1);
    std::size_t k = j;
    while (k < s.size() && s[k] >= '0' && s[k] <= '9') ++k;
    if (k > j) {
      std::size_t m = skip_ws(k);
      if (m < s.size() && s[m] == ':') return j;
    }
  }
  return std::string_view::npos;
}

inline bool is_record_dict(const literal::Dict& d) { return field(d, {"reason", "reasons", "explanation"}) != nullptr; }

}  // namespace detail

/// The brace-balanced dict literal in a completion, with code fences and
/// surrounding prose removed. A completion that ends before the braces
/// balance yields everything from the first `{` on.
inline std::string extract_dict_region(std::string_view completion) {
  std::string_view s = detail::strip_code_fence(completion);
  auto open = s.find('{');
  if (open == std::string_view::npos) throw ParseError("no opening brace found");
  auto end = detail::match_braces(s, open);
  if (end == std::string_view::npos) return std::string(trim(s.substr(open)));
  return std::string(s.substr(open, end - open));
}

/// Parses the opinion dict produced by an opinion, seed or recall prompt.
///
/// Accepts integer or string keys, either quote style, trailing commas and a
/// missing Criteria field. Each repair that fires is recorded in
/// `warnings` and sets `recovered`. Records without a usable reason (or
/// without a valid stance on stance/labeling tasks) are dropped with a
/// warning; when several records share an index only the first is kept.
/// Throws ParseError when a non-empty region yields no record at all.
inline ParseOutcome parse_opinion_dict(std::string_view region, TaskType task_type) {
  using namespace literal;
  ParseOutcome out;
  std::vector<std::pair<int, Opinion>> records;
  std::vector<std::string> drops;
  std::size_t raw_records = 0;
  int position = 0;

  auto accept = [&](const Value* key, const Value& val) {
    ++position;
    ++raw_records;
    if (!val.is_dict()) {
      drops.push_back("record " + std::to_string(position) + " dropped: not a dict");
      return;
    }
    int idx = position;
    if (key != nullptr) {
      if (auto k = detail::key_index(*key)) idx = *k;
    }
    auto conv = detail::to_opinion(val.dict(), idx, task_type);
    if (auto* msg = std::get_if<std::string>(&conv)) {
      drops.push_back(*msg);
      return;
    }
    records.emplace_back(idx, std::get<Opinion>(std::move(conv)));
  };

  Parser p(region);
  unsigned repairs = 0;
  try {
    char c = p.peek();
    if (c == '[') {
      // A list of record dicts instead of an index-keyed dict.
      Value v = p.parse_list();
      for (const auto& item : v.list()) accept(nullptr, item);
    } else if (c == '{') {
      // Parse entry by entry so a truncation or a broken record only loses
      // that record.
      bool single_record = false;
      Dict single;
      std::size_t entry_start = p.pos();
      try {
        p.parse_dict_entries([&](Value k, Value v) {
          if (single_record || (!v.is_dict() && k.is_str() && !detail::key_index(k))) {
            single_record = true;
            single.emplace_back(std::move(k), std::move(v));
            return;
          }
          accept(&k, v);
          entry_start = p.pos();
        });
      } catch (const Truncated&) {
        p.note(Repair::Truncation);
      } catch (const SyntaxError&) {
        // Skip the broken record and resume at the next `<int>:` key.
        p.note(Repair::Resync);
        ++position;
        std::size_t scan = std::max(p.pos(), entry_start);
        while (true) {
          auto found = detail::next_record_key(region, scan);
          if (found == std::string_view::npos) break;
          Parser sub(region, found);
          try {
            Value key = sub.parse_value();
            if (sub.peek() != ':') throw SyntaxError{sub.pos(), "expected ':'"};
            sub.seek(sub.pos() + 1);
            Value val = sub.parse_value();
            accept(&key, val);
            scan = sub.pos();
          } catch (const Truncated&) {
            p.note(Repair::Truncation);
            repairs |= sub.repairs();
            break;
          } catch (const SyntaxError& e) {
            ++position;
            scan = std::max(found + 1, e.pos);
          }
          repairs |= sub.repairs();
        }
      }
      if (single_record) {
        // The region is one bare record rather than an index-keyed dict.
        if (detail::is_record_dict(single)) {
          ++position;
          ++raw_records;
          auto conv = detail::to_opinion(single, 1, task_type);
          if (auto* msg = std::get_if<std::string>(&conv)) drops.push_back(*msg);
          else records.emplace_back(1, std::get<Opinion>(std::move(conv)));
        }
      }
    } else {
      throw ParseError("opinion region must start with '{' or '['");
    }
  } catch (const Truncated&) {
    p.note(Repair::Truncation);
  } catch (const SyntaxError& e) {
    throw ParseError("malformed opinion dict at offset " + std::to_string(e.pos) + ": " + e.what);
  }
  repairs |= p.repairs();

  // Index normalization: ascending order, first occurrence wins.
  std::stable_sort(records.begin(), records.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  // stable_sort keeps completion order among equal keys, so the first
  // occurrence is the one retained.
  std::set<int> seen;
  for (auto& [idx, op] : records) {
    if (!seen.insert(idx).second) {
      out.warnings.push_back("duplicate index " + std::to_string(idx) + " dropped");
      continue;
    }
    out.opinions.push_back(std::move(op));
  }

  append_repair_warnings(repairs, out.warnings);
  out.recovered = repairs != 0;
  for (auto& d : drops) out.warnings.push_back(std::move(d));
  if (raw_records == 0 && out.opinions.empty()) {
    if (repairs & static_cast<unsigned>(Repair::Truncation)) throw ParseError("no complete record before truncation");
    out.warnings.emplace_back("no records");
    return out;
  }
  if (out.opinions.empty()) throw ParseError("no recoverable opinion records");
  return out;
}

/// Convenience: extract the region then parse it.
inline ParseOutcome parse_completion(std::string_view completion, TaskType task_type) {
  return parse_opinion_dict(extract_dict_region(completion), task_type);
}

namespace detail {

inline std::vector<std::string> strings_of(const literal::Value& v) {
  std::vector<std::string> out;
  auto walk = [&](const literal::Value& x, auto&& self) -> void {
    if (x.is_list()) {
      for (const auto& item : x.list()) self(item, self);
    } else {
      const std::string text = x.text();
      auto t = trim(text);
      if (!t.empty()) out.emplace_back(t);
    }
  };
  walk(v, walk);
  return out;
}

inline bool is_flat_string_list(const literal::Value& v) {
  if (!v.is_list()) return false;
  return std::all_of(v.list().begin(), v.list().end(), [](const auto& x) { return x.is_str() || x.is_int(); });
}

}  // namespace detail

/// Groups from a clustering completion ("[[...], [...]]"). Also accepts the
/// form with a missing outer bracket ("[a, b], [c]]") and a truncated tail.
inline std::vector<std::vector<std::string>> parse_cluster_output(std::string_view completion) {
  using namespace literal;
  std::string_view s = detail::strip_code_fence(completion);
  auto open = s.find('[');
  if (open == std::string_view::npos) throw ParseError("no list literal in clustering output");

  std::vector<std::vector<std::string>> groups;
  auto push_group = [&](const Value& v) {
    auto g = detail::strings_of(v);
    if (!g.empty()) groups.push_back(std::move(g));
  };

  Parser p(s, open);
  try {
    Value first = p.parse_list();
    if (!detail::is_flat_string_list(first)) {
      for (const auto& item : first.list()) push_group(item);
      return groups;
    }
    push_group(first);
    // Missing outer bracket: keep reading sibling lists.
    while (!p.at_end()) {
      char c = p.peek();
      if (c == ',') {
        p.seek(p.pos() + 1);
        continue;
      }
      if (c != '[') break;
      push_group(p.parse_list());
    }
  } catch (const Truncated&) {
    // Complete groups were already kept; a partial list literal is lost.
    if (groups.empty()) {
      // Re-scan inner lists of a truncated outer list.
      Parser q(s, open + 1);
      try {
        while (true) {
          char c = q.peek();
          if (c == ',') {
            q.seek(q.pos() + 1);
            continue;
          }
          if (c != '[') break;
          push_group(q.parse_list());
        }
      } catch (const Truncated&) {
      } catch (const SyntaxError&) {
      }
    }
  } catch (const SyntaxError& e) {
    if (groups.empty()) throw ParseError("malformed clustering output at offset " + std::to_string(e.pos) + ": " + e.what);
  }
  return groups;
}

/// First flat list of strings in a criteria-extraction completion,
/// deduplicated by normalized phrase, order preserved.
inline std::vector<std::string> parse_criteria_list(std::string_view completion) {
  using namespace literal;
  std::size_t from = 0;
  while (true) {
    auto open = completion.find('[', from);
    if (open == std::string_view::npos) throw ParseError("no criteria list found");
    Parser p(completion, open);
    try {
      Value v = p.parse_list();
      if (detail::is_flat_string_list(v)) {
        std::vector<std::string> out;
        std::unordered_set<std::string> seen;
        for (const auto& item : v.list()) {
          auto t = std::string(trim(item.text()));
          if (t.empty() || !seen.insert(normalize_phrase(t)).second) continue;
          out.push_back(std::move(t));
        }
        return out;
      }
    } catch (const Truncated&) {
      throw ParseError("criteria list truncated");
    } catch (const SyntaxError&) {
    }
    from = open + 1;
  }
}

}  // namespace divex
