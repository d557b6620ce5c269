// Copyright 2026 The divex Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "divex/clustering.hpp"
#include "divex/metrics.hpp"
#include "divex/run_store.hpp"

namespace divex {

enum class Metric { Semantic, Perspective, Lexical, Balance, Count };

inline std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::Semantic: return "semantic";
    case Metric::Perspective: return "perspective";
    case Metric::Lexical: return "lexical";
    case Metric::Balance: return "balance";
    case Metric::Count: return "count";
  }
  return "semantic";
}

inline Metric parse_metric(std::string_view s) {
  for (Metric m : {Metric::Semantic, Metric::Perspective, Metric::Lexical, Metric::Balance, Metric::Count})
    if (ascii_lower(trim(s)) == to_string(m)) return m;
  throw UsageError("unknown metric '" + std::string(s) + "' (semantic, perspective, lexical, balance, count)");
}

struct ScoreOptions {
  std::set<Metric> metrics{Metric::Semantic, Metric::Perspective, Metric::Lexical, Metric::Balance, Metric::Count};
  ClusterMethod cluster_method = ClusterMethod::LlmPrompted;
  double tau = kDefaultTau;
  CountingMode counting_mode = CountingMode::DropUngrouped;
  bool per_stance_semantic = false;
  bool wants(Metric m) const { return metrics.contains(m); }
};

/// Everything a scoring pass needs to know about one run.
struct ScoreInput {
  TaskType task_type = TaskType::Stance;
  std::string prompt_mode;  // label for tables: "criteria", "freeform", "recall"
  int shots = 0;
  json corpus;  // fingerprint, size, ...
  std::vector<StatementOpinions> statements;
  std::vector<RecallTrace> traces;  // recall runs only
};

struct ScoreResult {
  json report;
  std::vector<json> clusters;  // one row per statement
  std::string embeddings_csv;
  std::vector<std::string> warnings;
};

namespace detail {

inline std::vector<Stance> stance_groups(TaskType task) {
  return task == TaskType::Generation ? std::vector<Stance>{Stance::None} : stances_for(task);
}

inline std::vector<Opinion> of_stance(std::span<const Opinion> ops, Stance s) {
  std::vector<Opinion> out;
  for (const auto& op : ops)
    if (op.stance == s) out.push_back(op);
  return out;
}

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline json mean_or_null(const std::vector<double>& v) { return v.empty() ? json(nullptr) : json(mean(v)); }

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

/// Opinions of a trace after the last executed step with n_target <= n.
inline std::optional<std::vector<Opinion>> opinions_at(const RecallTrace& t, int n) {
  const RecallStep* best = nullptr;
  for (const auto& s : t.steps)
    if (s.n_target <= n) best = &s;
  if (best == nullptr) return std::nullopt;
  return best->opinions;
}

}  // namespace detail

/// Scores one run: clustering per statement (union of both stances), reason
/// embeddings, and every requested metric. Output is a pure function of the
/// inputs and provider answers.
inline ScoreResult score_run(Provider& provider, const ProviderConfig& chat, const ProviderConfig& embed,
                             const ScoreInput& in, const ScoreOptions& opt,
                             const TemplateSet& templates = TemplateSet::builtin()) {
  if (in.statements.empty()) throw UsageError("run has no scored statements");
  ScoreResult out;
  const auto groups = detail::stance_groups(in.task_type);

  // Clustering
  std::map<std::string, CriteriaClustering> clusterings;
  std::size_t total_phrases = 0, ungrouped_phrases = 0;
  if (opt.wants(Metric::Perspective)) {
    for (const auto& s : in.statements) {
      auto phrases = criteria_phrases(s.opinions);
      CriteriaClustering c = opt.cluster_method == ClusterMethod::LlmPrompted
                                 ? llm_cluster(provider, chat, phrases, templates)
                                 : greedy_embed_cluster(provider, embed, phrases, opt.tau);
      total_phrases += c.phrase_count();
      ungrouped_phrases += c.ungrouped.size();
      for (const auto& w : c.warnings) out.warnings.push_back(s.statement_id + ": " + w);
      json row{{"statement_id", s.statement_id},
               {"method", to_string(c.method)},
               {"groups", c.groups},
               {"ungrouped", c.ungrouped},
               {"warnings", c.warnings}};
      if (c.method == ClusterMethod::EmbeddingGreedy) row["tau"] = c.tau;
      out.clusters.push_back(std::move(row));
      clusterings.emplace(s.statement_id, std::move(c));
    }
  }

  // Embeddings of every reason, statement by statement.
  std::map<std::string, std::vector<EmbeddingVector>> vectors;
  std::map<std::string, std::map<std::string, EmbeddingVector>> by_reason;
  if (opt.wants(Metric::Semantic)) {
    std::ostringstream csv;
    std::size_t dim = 0;
    std::vector<std::string> rows;
    for (const auto& s : in.statements) {
      if (s.opinions.empty()) continue;
      std::vector<std::string> reasons;
      for (const auto& op : s.opinions) reasons.push_back(op.reason);
      auto vs = provider.embed_texts(embed, reasons);
      for (std::size_t i = 0; i < vs.size(); ++i) {
        if (dim == 0) dim = vs[i].dim();
        if (vs[i].dim() != dim) throw Error("embedding dimensions differ across statements");
        by_reason[s.statement_id].emplace(reasons[i], vs[i]);
        std::string line = detail::csv_field(s.statement_id + "#" + std::to_string(s.opinions[i].index)) + "," +
                           std::string(stance_key(s.opinions[i].stance)) + "," + detail::csv_field(in.prompt_mode);
        for (double x : vs[i].values()) line += "," + format_double(x);
        rows.push_back(std::move(line));
      }
      vectors.emplace(s.statement_id, std::move(vs));
    }
    csv << "id,stance,source";
    for (std::size_t d = 0; d < dim; ++d) csv << ",d" << d + 1;
    csv << "\n";
    for (const auto& r : rows) csv << r << "\n";
    out.embeddings_csv = csv.str();
  }

  json per_statement = json::object();
  std::vector<double> semantic_scores;
  json skipped = json::array();
  std::map<Stance, std::vector<double>> semantic_by_stance_all;
  std::map<Stance, std::vector<double>> perspective_all;
  std::map<Stance, std::map<int, std::vector<double>>> lexical_all;

  for (const auto& s : in.statements) {
    json row = json::object();
    if (opt.wants(Metric::Count)) row["opinions"] = s.opinions.size();
    if (opt.wants(Metric::Semantic)) {
      const auto it = vectors.find(s.statement_id);
      if (it == vectors.end() || it->second.size() < 2) {
        row["semantic_diversity"] = nullptr;
        skipped.push_back(s.statement_id);
      } else {
        const double v = semantic_diversity_statement(it->second);
        row["semantic_diversity"] = v;
        semantic_scores.push_back(v);
      }
      if (opt.per_stance_semantic && in.task_type != TaskType::Generation) {
        json by = json::object();
        for (Stance st : groups) {
          std::vector<EmbeddingVector> vs;
          if (it != vectors.end())
            for (std::size_t i = 0; i < s.opinions.size(); ++i)
              if (s.opinions[i].stance == st) vs.push_back(it->second[i]);
          if (vs.size() < 2) {
            by[std::string(stance_key(st))] = nullptr;
          } else {
            const double v = semantic_diversity_statement(vs);
            by[std::string(stance_key(st))] = v;
            semantic_by_stance_all[st].push_back(v);
          }
        }
        row["semantic_by_stance"] = by;
      }
    }
    if (opt.wants(Metric::Perspective)) {
      json p = json::object();
      for (Stance st : groups) {
        auto c = count_unique_clusters(clusterings.at(s.statement_id), s.opinions, st, opt.counting_mode, s.statement_id);
        p[std::string(stance_key(st))] = c.unique_clusters;
        perspective_all[st].push_back(static_cast<double>(c.unique_clusters));
      }
      row["perspective"] = p;
    }
    if (opt.wants(Metric::Lexical)) {
      json lex = json::object();
      for (Stance st : groups) {
        auto ops = detail::of_stance(s.opinions, st);
        if (ops.empty()) continue;
        json by_n = json::object();
        for (int n = 1; n <= 3; ++n) {
          const double v = lexical_diversity(ops, n);
          by_n[std::to_string(n)] = v;
          lexical_all[st][n].push_back(v);
        }
        lex[std::string(stance_key(st))] = by_n;
      }
      row["lexical"] = lex;
    }
    per_statement[s.statement_id] = row;
  }

  json summary = json::object();
  if (opt.wants(Metric::Count)) summary["average_opinion_count"] = average_opinion_count(in.statements);
  if (opt.wants(Metric::Semantic)) {
    summary["corpus_semantic"] = detail::mean_or_null(semantic_scores);
    summary["skipped_statements"] = skipped;
    summary["scored_statements"] = semantic_scores.size();
    if (opt.per_stance_semantic && in.task_type != TaskType::Generation) {
      json by = json::object();
      for (Stance st : groups) by[std::string(stance_key(st))] = detail::mean_or_null(semantic_by_stance_all[st]);
      summary["semantic_by_stance"] = by;
    }
  }
  if (opt.wants(Metric::Perspective)) {
    json by = json::object();
    for (Stance st : groups) by[std::string(stance_key(st))] = detail::mean_or_null(perspective_all[st]);
    summary["perspective_mean"] = by;
    summary["counting_mode"] = to_string(opt.counting_mode);
    summary["criteria_phrases"] = total_phrases;
    summary["ungrouped_phrases"] = ungrouped_phrases;
  }
  if (opt.wants(Metric::Lexical)) {
    json by = json::object();
    for (Stance st : groups) {
      json by_n = json::object();
      for (int n = 1; n <= 3; ++n) by_n[std::to_string(n)] = detail::mean_or_null(lexical_all[st][n]);
      by[std::string(stance_key(st))] = by_n;
    }
    summary["lexical_mean"] = by;
  }
  if (opt.wants(Metric::Balance) && in.task_type != TaskType::Generation) {
    auto bal = stance_balance(in.statements, in.task_type);
    json counts = json::object();
    for (const auto& b : bal.statements) {
      json c = json::object();
      for (const auto& [st, n] : b.counts) c[std::string(stance_key(st))] = n;
      per_statement[b.statement_id]["stance_counts"] = c;
      per_statement[b.statement_id]["imbalanced"] = b.imbalanced;
    }
    summary["imbalanced_statements"] = bal.imbalanced_count;
    summary["imbalanced_fraction"] = bal.imbalanced_fraction;
  }

  json curve = json::array();
  if (!in.traces.empty()) {
    std::set<int> targets;
    for (const auto& t : in.traces)
      for (const auto& st : t.steps) targets.insert(st.n_target);
    for (int n : targets) {
      std::vector<double> sem, counts;
      std::map<Stance, std::vector<double>> persp;
      for (const auto& t : in.traces) {
        auto ops = detail::opinions_at(t, n);
        if (!ops) continue;
        counts.push_back(static_cast<double>(ops->size()));
        if (opt.wants(Metric::Semantic) && ops->size() >= 2) {
          const auto& index = by_reason[t.statement_id];
          std::vector<EmbeddingVector> vs;
          for (const auto& op : *ops) vs.push_back(index.at(op.reason));
          sem.push_back(semantic_diversity_statement(vs));
        }
        if (opt.wants(Metric::Perspective)) {
          for (Stance st : groups)
            persp[st].push_back(static_cast<double>(
                count_unique_clusters(clusterings.at(t.statement_id), *ops, st, opt.counting_mode).unique_clusters));
        }
      }
      json point{{"n_target", n}, {"statements", counts.size()}, {"average_opinions", detail::mean_or_null(counts)}};
      if (opt.wants(Metric::Semantic)) point["semantic"] = detail::mean_or_null(sem);
      if (opt.wants(Metric::Perspective)) {
        json by = json::object();
        for (Stance st : groups) by[std::string(stance_key(st))] = detail::mean_or_null(persp[st]);
        point["perspective"] = by;
      }
      curve.push_back(std::move(point));
    }
  }

  json metrics = json::array();
  for (Metric m : opt.metrics) metrics.push_back(to_string(m));
  json config{{"prompt_mode", in.prompt_mode},
              {"shots", in.shots},
              {"task_type", to_string(in.task_type)},
              {"chat_model", chat.model_id},
              {"embedding_model", embed.model_id}};
  if (opt.wants(Metric::Perspective)) {
    config["cluster_method"] = to_string(opt.cluster_method);
    if (opt.cluster_method == ClusterMethod::EmbeddingGreedy) config["tau"] = opt.tau;
  }
  out.report = json{{"schema", "divex.report/1"},
                    {"config", config},
                    {"corpus", in.corpus},
                    {"metrics", metrics},
                    {"per_statement", per_statement},
                    {"summary", summary},
                    {"warnings", out.warnings}};
  if (!curve.empty()) out.report["recall_curve"] = curve;
  return out;
}

// ---------------------------------------------------------------------------
// Markdown rendering

namespace detail {

inline std::string fmt(const json& v, int precision = 4) {
  if (v.is_null()) return "-";
  if (v.is_number_integer() || v.is_number_unsigned()) return v.dump();
  if (v.is_number()) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(precision);
    os << v.get<double>();
    return os.str();
  }
  return v.is_string() ? v.get<std::string>() : v.dump();
}

inline std::string mode_label(const json& report) {
  const auto mode = report.at("config").value("prompt_mode", std::string("criteria"));
  if (mode == "freeform") return "Free-form";
  if (mode == "criteria") return "Criteria";
  if (mode == "recall") return "Recall";
  return mode;
}

/// Table rows shared by the single-run and comparison views.
inline std::vector<std::pair<std::string, std::vector<json>>> summary_rows(const std::vector<json>& reports) {
  std::vector<std::pair<std::string, std::vector<json>>> rows;
  auto add = [&](const std::string& label, auto get) {
    std::vector<json> vals;
    bool any = false;
    for (const auto& r : reports) {
      json v = get(r.at("summary"));
      any = any || !v.is_null();
      vals.push_back(std::move(v));
    }
    if (any) rows.emplace_back(label, std::move(vals));
  };
  auto path = [](std::initializer_list<std::string> keys) {
    return [keys](const json& s) {
      const json* cur = &s;
      for (const auto& k : keys) {
        if (!cur->is_object() || !cur->contains(k)) return json(nullptr);
        cur = &cur->at(k);
      }
      return *cur;
    };
  };
  add("Semantic diversity (cosine distance)", path({"corpus_semantic"}));
  add("Average opinions per statement", path({"average_opinion_count"}));
  std::set<std::string> stances;
  for (const auto& r : reports) {
    const auto& s = r.at("summary");
    for (const char* k : {"perspective_mean", "lexical_mean"})
      if (s.contains(k))
        for (auto it = s.at(k).begin(); it != s.at(k).end(); ++it) stances.insert(it.key());
  }
  for (const auto& st : stances) add("Unique criteria clusters (" + st + ")", path({"perspective_mean", st}));
  for (const auto& st : stances)
    for (const char* n : {"1", "2", "3"})
      add("Lexical diversity " + std::string(n) + "-gram (" + st + ")", path({"lexical_mean", st, n}));
  add("Imbalanced statements (fraction)", path({"imbalanced_fraction"}));
  return rows;
}

inline std::string markdown_table(const std::vector<std::string>& header,
                                  const std::vector<std::pair<std::string, std::vector<std::string>>>& rows) {
  std::string out = "| Metric |";
  for (const auto& h : header) out += " " + h + " |";
  out += "\n|---|";
  for (std::size_t i = 0; i < header.size(); ++i) out += "---|";
  out += "\n";
  for (const auto& [label, cells] : rows) {
    out += "| " + label + " |";
    for (const auto& c : cells) out += " " + c + " |";
    out += "\n";
  }
  return out;
}

}  // namespace detail

inline std::string render_report_md(const json& report) {
  std::vector<std::pair<std::string, std::vector<std::string>>> rows;
  for (auto& [label, vals] : detail::summary_rows({report})) rows.emplace_back(label, std::vector<std::string>{detail::fmt(vals[0])});
  const auto& cfg = report.at("config");
  std::string out = "# Diversity report\n\n";
  out += "- task: " + cfg.value("task_type", std::string()) + "\n";
  out += "- prompting: " + cfg.value("prompt_mode", std::string()) + ", " + std::to_string(cfg.value("shots", 0)) + "-shot\n";
  out += "- chat model: " + cfg.value("chat_model", std::string()) + "\n";
  out += "- embedding model: " + cfg.value("embedding_model", std::string()) + "\n";
  out += "- statements: " + std::to_string(report.at("per_statement").size()) + "\n\n";
  out += detail::markdown_table({detail::mode_label(report)}, rows);
  const auto& summary = report.at("summary");
  if (summary.contains("skipped_statements") && !summary.at("skipped_statements").empty()) {
    out += "\nSkipped for semantic diversity (fewer than 2 reasons):";
    for (const auto& id : summary.at("skipped_statements")) out += " " + id.get<std::string>();
    out += "\n";
  }
  if (report.contains("recall_curve")) {
    out += "\n## Diversity vs. number of opinions\n\n| N | Opinions | Semantic |\n|---|---|---|\n";
    for (const auto& p : report.at("recall_curve"))
      out += "| " + detail::fmt(p.at("n_target")) + " | " + detail::fmt(p.at("average_opinions"), 2) + " | " +
             detail::fmt(p.value("semantic", json(nullptr))) + " |\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Multi-run comparison

struct RunReport {
  std::string run_id;
  json manifest;
  json report;
};

struct Comparison {
  json summary;
  std::string markdown;
  std::string curve_csv;
};

inline Comparison compare_runs(const std::vector<RunReport>& runs) {
  if (runs.empty()) throw UsageError("no runs to compare");
  const auto fingerprint = runs.front().report.at("corpus").value("fingerprint", std::string());
  for (const auto& r : runs) {
    if (r.report.at("corpus").value("fingerprint", std::string()) != fingerprint)
      throw UsageError("runs " + runs.front().run_id + " and " + r.run_id + " cover different corpora");
  }

  std::vector<json> reports;
  std::vector<std::string> header;
  std::map<std::string, int> label_uses;
  for (const auto& r : runs) ++label_uses[detail::mode_label(r.report)];
  for (const auto& r : runs) {
    reports.push_back(r.report);
    auto label = detail::mode_label(r.report);
    header.push_back(label_uses[label] > 1 ? label + " (" + r.run_id + ")" : label);
  }

  // Paired permutation test of each run's per-statement semantic scores against the first run.
  json tests = json::array();
  std::vector<std::string> marks(runs.size());
  const auto& base = runs.front().report.at("per_statement");
  for (std::size_t k = 1; k < runs.size(); ++k) {
    std::vector<double> a, b;
    const auto& other = runs[k].report.at("per_statement");
    for (auto it = base.begin(); it != base.end(); ++it) {
      if (!other.contains(it.key())) continue;
      const auto& x = it.value().value("semantic_diversity", json(nullptr));
      const auto& y = other.at(it.key()).value("semantic_diversity", json(nullptr));
      if (x.is_null() || y.is_null()) continue;
      a.push_back(y.get<double>());
      b.push_back(x.get<double>());
    }
    if (a.empty()) continue;
    const double p = paired_permutation_test(a, b, Alternative::TwoSided, 100000, 0);
    tests.push_back(json{{"run", runs[k].run_id}, {"against", runs.front().run_id}, {"paired_statements", a.size()}, {"p_value", p}});
    if (p < 0.01) marks[k] = "*";
  }

  std::vector<std::pair<std::string, std::vector<std::string>>> rows;
  for (auto& [label, vals] : detail::summary_rows(reports)) {
    std::vector<std::string> cells;
    for (std::size_t i = 0; i < vals.size(); ++i)
      cells.push_back(detail::fmt(vals[i]) + (label.starts_with("Semantic") && !vals[i].is_null() ? marks[i] : ""));
    rows.emplace_back(label, std::move(cells));
  }

  Comparison out;
  json columns = json::array();
  for (std::size_t i = 0; i < runs.size(); ++i)
    columns.push_back(json{{"run", runs[i].run_id}, {"label", header[i]}, {"config", runs[i].report.at("config")},
                           {"summary", runs[i].report.at("summary")}});
  out.summary = json{{"corpus_fingerprint", fingerprint}, {"columns", columns}, {"permutation_tests", tests}};

  out.markdown = "# Run comparison\n\n" + detail::markdown_table(header, rows);
  if (!tests.empty())
    out.markdown += "\n`*` semantic diversity differs from the first column at p < 0.01 (paired sign-flip permutation test).\n";

  std::ostringstream csv;
  csv << "run,label,n_target,average_opinions,semantic";
  std::set<std::string> stances;
  for (const auto& r : runs)
    if (r.report.contains("recall_curve"))
      for (const auto& p : r.report.at("recall_curve"))
        if (p.contains("perspective"))
          for (auto it = p.at("perspective").begin(); it != p.at("perspective").end(); ++it) stances.insert(it.key());
  for (const auto& st : stances) csv << ",perspective_" << st;
  csv << "\n";
  auto num = [](const json& v) { return v.is_null() ? std::string() : v.is_number_float() ? format_double(v.get<double>()) : v.dump(); };
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& rep = runs[i].report;
    std::vector<json> points;
    if (rep.contains("recall_curve")) {
      for (const auto& p : rep.at("recall_curve")) points.push_back(p);
    } else {
      const auto& s = rep.at("summary");
      json p{{"n_target", nullptr},
             {"average_opinions", s.value("average_opinion_count", json(nullptr))},
             {"semantic", s.value("corpus_semantic", json(nullptr))}};
      if (s.contains("perspective_mean")) p["perspective"] = s.at("perspective_mean");
      points.push_back(p);
    }
    for (const auto& p : points) {
      csv << detail::csv_field(runs[i].run_id) << "," << detail::csv_field(header[i]) << "," << num(p.value("n_target", json(nullptr)))
          << "," << num(p.value("average_opinions", json(nullptr))) << "," << num(p.value("semantic", json(nullptr)));
      for (const auto& st : stances) {
        json v = p.contains("perspective") && p.at("perspective").contains(st) ? p.at("perspective").at(st) : json(nullptr);
        csv << "," << num(v);
      }
      csv << "\n";
    }
  }
  out.curve_csv = csv.str();
  return out;
}

}  // namespace divex
