// Copyright 2026 The divex Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "divex/clustering.hpp"
#include "divex/corpus.hpp"
#include "divex/http_transport.hpp"
#include "divex/metrics.hpp"
#include "divex/orchestrator.hpp"
#include "divex/report.hpp"
#include "divex/run_store.hpp"

namespace divex {

inline constexpr std::string_view kToolVersion = "0.1.0";

namespace cli {

inline constexpr const char* kBaseUrlEnv = "DIVEX_BASE_URL";
inline constexpr const char* kModelEnv = "DIVEX_MODEL";
inline constexpr const char* kEmbedModelEnv = "DIVEX_EMBED_MODEL";

/// Raw flag values; unset means "not given on the command line".
struct Flags {
  bool offline = false;
  std::optional<std::string> fixtures, run_id, config_file, cache, runs_dir;
  std::optional<std::size_t> concurrency;

  std::optional<std::string> base_url, model, embed_base_url, embed_model;
  std::optional<double> temperature, top_p;
  std::optional<int> max_tokens, max_retries;
  std::optional<long> timeout_ms;

  std::optional<std::string> corpus, task_type, text_field, id_field, mode, schedule, templates, shot_bank;
  std::optional<std::size_t> sample;
  std::optional<std::uint64_t> seed;
  std::optional<int> shots;

  std::optional<std::string> run, method, counting;
  std::optional<double> tau;
  std::vector<std::string> metrics;
  bool per_stance = false;
  bool no_extract = false;
  std::vector<std::string> runs;
};

/// Resolves settings with precedence flag > config file > run manifest >
/// environment > default and remembers where each value came from.
class Settings {
 public:
  Settings(const Flags& flags, json file, json manifest_config = json::object())
      : flags_(flags), file_(std::move(file)), manifest_(std::move(manifest_config)) {}

  template <class T>
  T get(const std::string& key, const std::optional<T>& flag, T fallback, const char* env = nullptr,
        const json* manifest_value = nullptr) {
    if (flag) return note(key, "flag"), *flag;
    if (file_.contains(key)) return note(key, "config"), convert<T>(key, file_.at(key));
    if (manifest_value && !manifest_value->is_null()) return note(key, "manifest"), convert<T>(key, *manifest_value);
    if constexpr (std::is_same_v<T, std::string>) {
      if (env != nullptr) {
        if (const char* v = std::getenv(env); v != nullptr && *v != '\0') return note(key, "env"), std::string(v);
      }
    }
    note(key, "default");
    return fallback;
  }

  bool flag_or_config(const std::string& key, bool flag) {
    if (flag) return note(key, "flag"), true;
    if (file_.contains(key)) return note(key, "config"), convert<bool>(key, file_.at(key));
    note(key, "default");
    return false;
  }

  void record_source(const std::string& key, const char* source) { note(key, source); }

  const json& file() const { return file_; }
  const json& manifest() const { return manifest_; }
  const std::map<std::string, std::string>& sources() const { return sources_; }

 private:
  void note(const std::string& key, const char* source) { sources_[key] = source; }

  template <class T>
  static T convert(const std::string& key, const json& v) {
    try {
      return v.get<T>();
    } catch (const json::exception&) {
      throw UsageError("config key '" + key + "' has the wrong type");
    }
  }

  const Flags& flags_;
  json file_;
  json manifest_;
  std::map<std::string, std::string> sources_;
};

inline json load_config_file(const std::optional<std::string>& path) {
  if (!path) return json::object();
  auto j = read_json(*path);
  if (!j.is_object()) throw UsageError("config file must hold a JSON object");
  return j;
}

inline std::vector<int> parse_schedule(std::string_view text) {
  std::vector<int> out;
  for (const auto& part : split(text, ',')) {
    auto t = trim(part);
    int v = 0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || ec != std::errc{} || p != t.data() + t.size())
      throw UsageError("invalid schedule entry '" + std::string(part) + "'");
    out.push_back(v);
  }
  validate_schedule(out);
  return out;
}

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string fresh_run_id(const fs::path& runs_dir, std::string_view command) {
  std::string stamp = utc_now();
  std::erase(stamp, '-');
  std::erase(stamp, ':');
  std::string base = std::string(command) + "-" + stamp;
  std::string id = base;
  for (int k = 2; fs::exists(runs_dir / id); ++k) id = base + "-" + std::to_string(k);
  return id;
}

inline json provider_json(const ProviderConfig& c) {
  return json{{"base_url", c.base_url},       {"model_id", c.model_id},       {"temperature", c.temperature},
              {"top_p", c.top_p},             {"max_tokens", c.max_tokens},   {"timeout_ms", c.timeout.count()},
              {"max_retries", c.max_retries}, {"chat_path", c.chat_path},     {"embed_path", c.embed_path}};
}

/// Chat and embedding configs. `prior` holds the manifest's snapshot, if any.
inline std::pair<ProviderConfig, ProviderConfig> resolve_providers(Settings& s, const Flags& f, const json& prior) {
  auto at = [&](const char* section, const char* key) -> const json* {
    if (!prior.contains(section) || !prior.at(section).contains(key)) return nullptr;
    return &prior.at(section).at(key);
  };
  ProviderConfig chat;
  chat.base_url = s.get<std::string>("base_url", f.base_url, chat.base_url, kBaseUrlEnv, at("provider", "base_url"));
  chat.model_id = s.get<std::string>("model", f.model, chat.model_id, kModelEnv, at("provider", "model_id"));
  chat.temperature = s.get<double>("temperature", f.temperature, chat.temperature, nullptr, at("provider", "temperature"));
  chat.top_p = s.get<double>("top_p", f.top_p, chat.top_p, nullptr, at("provider", "top_p"));
  chat.max_tokens = s.get<int>("max_tokens", f.max_tokens, chat.max_tokens, nullptr, at("provider", "max_tokens"));
  chat.max_retries = s.get<int>("max_retries", f.max_retries, chat.max_retries, nullptr, at("provider", "max_retries"));
  chat.timeout = std::chrono::milliseconds(
      s.get<long>("timeout_ms", f.timeout_ms, static_cast<long>(chat.timeout.count()), nullptr, at("provider", "timeout_ms")));
  chat.validate();

  ProviderConfig embed = default_embedding_config();
  embed.base_url = s.get<std::string>("embed_base_url", f.embed_base_url, chat.base_url, nullptr, at("embedding", "base_url"));
  embed.model_id = s.get<std::string>("embed_model", f.embed_model, embed.model_id, kEmbedModelEnv, at("embedding", "model_id"));
  embed.timeout = chat.timeout;
  embed.max_retries = chat.max_retries;
  embed.validate();
  return {chat, embed};
}

/// Owns whichever provider the flags select.
struct ProviderHandle {
  std::unique_ptr<ResponseCache> cache;
  std::unique_ptr<HttplibTransport> transport;
  std::unique_ptr<Provider> provider;
  Provider* external = nullptr;
  bool offline = false;

  Provider& get() { return external != nullptr ? *external : *provider; }
};

inline ProviderHandle make_provider(Settings& s, const Flags& f, std::size_t concurrency, Provider* external = nullptr) {
  ProviderHandle h;
  h.offline = s.flag_or_config("offline", f.offline);
  if (external != nullptr) {
    h.external = external;
    return h;
  }
  const auto fixtures = s.get<std::string>("fixtures", f.fixtures, "");
  const auto cache_path = s.get<std::string>("cache", f.cache, "cache.jsonl");
  if (h.offline) {
    auto fp = std::make_unique<FixtureProvider>();
    if (!fixtures.empty()) fp->add_path(fixtures);
    if (fs::exists(cache_path)) fp->add_file(cache_path);
    if (fixtures.empty() && !fs::exists(cache_path)) throw UsageError("--offline needs --fixtures DIR or an existing cache");
    h.provider = std::move(fp);
    return h;
  }
  h.cache = std::make_unique<ResponseCache>(cache_path);
  if (!fixtures.empty()) {
    if (fs::is_directory(fixtures)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(fixtures))
        if (e.path().extension() == ".jsonl") files.push_back(e.path());
      std::sort(files.begin(), files.end());
      for (const auto& p : files) h.cache->merge_file(p);
    } else {
      h.cache->merge_file(fixtures);
    }
  }
  h.transport = std::make_unique<HttplibTransport>();
  h.provider = std::make_unique<HttpProvider>(*h.transport, *h.cache, static_cast<std::ptrdiff_t>(concurrency));
  return h;
}

inline fs::path resolve_run_dir(const std::string& ref, const fs::path& runs_dir) {
  if (fs::is_directory(ref) && fs::exists(fs::path(ref) / "manifest.json")) return ref;
  auto p = runs_dir / ref;
  if (fs::is_directory(p) && fs::exists(p / "manifest.json")) return p;
  throw UsageError("run not found: " + ref);
}

// ---------------------------------------------------------------------------
// Loaded run

struct LoadedRun {
  fs::path dir;
  json manifest;
  TaskType task_type = TaskType::Stance;
  std::vector<OpinionSet> sets;
  std::vector<RecallTrace> traces;
  fs::path opinions_file;
};

inline LoadedRun load_run(const fs::path& dir) {
  LoadedRun r;
  r.dir = dir;
  r.manifest = read_json(dir / "manifest.json");
  r.task_type = parse_task_type(r.manifest.at("corpus").at("task_type").get<std::string>());
  r.opinions_file = latest_version(dir, "opinions.extracted", ".jsonl");
  if (r.opinions_file.empty()) r.opinions_file = dir / "opinions.jsonl";
  if (!fs::exists(r.opinions_file)) throw UsageError("run " + dir.string() + " has no opinions.jsonl");
  for (const auto& row : read_jsonl(r.opinions_file)) r.sets.push_back(opinion_set_from_json(row));
  if (fs::exists(dir / "traces.jsonl"))
    for (const auto& row : read_jsonl(dir / "traces.jsonl")) r.traces.push_back(recall_trace_from_json(row));
  return r;
}

inline std::vector<json> sets_to_rows(const std::vector<OpinionSet>& sets, TaskType task) {
  std::vector<json> rows;
  for (const auto& s : sets) rows.push_back(to_json(s, task));
  return rows;
}

// ---------------------------------------------------------------------------
// Commands

struct Context {
  Flags flags;
  std::ostream& out;
  std::ostream& err;
  Provider* provider = nullptr;  // replaces the flag-selected provider when set
};

inline TemplateSet resolve_templates(Settings& s, const Flags& f) {
  auto dir = s.get<std::string>("templates", f.templates, "");
  return dir.empty() ? TemplateSet::builtin() : TemplateSet::load(dir);
}

/// Shared setup for gen and recall.
inline int cmd_generate(Context& ctx, bool recall) {
  const Flags& f = ctx.flags;
  Settings s(f, load_config_file(f.config_file));
  const std::string command = recall ? "recall" : "gen";

  const auto corpus_path = s.get<std::string>("corpus", f.corpus, "");
  if (corpus_path.empty()) throw UsageError("--corpus is required");
  const TaskType task = parse_task_type(s.get<std::string>("task_type", f.task_type, "stance"));
  const auto text_field = s.get<std::string>("text_field", f.text_field, "text");
  const auto id_field = s.get<std::string>("id_field", f.id_field, "id");
  const auto sample = s.get<std::size_t>("sample", f.sample, 0);
  const auto seed = s.get<std::uint64_t>("seed", f.seed, 0);

  RunConfig cfg;
  std::tie(cfg.provider, cfg.embedding) = resolve_providers(s, f, json::object());
  cfg.seed = seed;
  cfg.concurrency = s.get<std::size_t>("concurrency", f.concurrency, 4);
  if (cfg.concurrency == 0) throw UsageError("--concurrency must be positive");
  cfg.templates = resolve_templates(s, f);
  if (auto bank = s.get<std::string>("shot_bank", f.shot_bank, ""); !bank.empty()) cfg.shot_bank = load_shot_bank(bank);
  cfg.prompt_spec.task_type = task;
  if (recall) {
    std::optional<std::string> sched_flag = f.schedule;
    if (!sched_flag && s.file().contains("schedule") && s.file().at("schedule").is_array()) {
      cfg.recall_schedule = s.file().at("schedule").get<std::vector<int>>();
      validate_schedule(cfg.recall_schedule);
      s.record_source("schedule", "config");
    } else {
      cfg.recall_schedule = parse_schedule(s.get<std::string>("schedule", sched_flag, "2,5,8,11,14,17,20"));
    }
  } else {
    cfg.prompt_spec.mode = parse_prompt_mode(s.get<std::string>("mode", f.mode, "criteria"));
    cfg.prompt_spec.shots = s.get<int>("shots", f.shots, 1);
  }

  Corpus corpus = load_corpus(corpus_path, task, text_field, id_field);
  for (const auto& w : corpus.warnings) ctx.err << "warning: " << w << "\n";
  if (corpus.size() == 0) throw UsageError("corpus has no statements");
  if (sample > 0) corpus = sample_statements(corpus, sample, seed);

  // Surface prompt-construction problems before any provider call.
  if (recall)
    (void)build_seed_prompt(corpus.statements.front(), task, cfg.templates);
  else
    (void)build_opinion_prompt(cfg.prompt_spec, corpus.statements.front(), cfg.shot_bank, cfg.templates);

  const fs::path runs_dir = s.get<std::string>("runs_dir", f.runs_dir, "runs");
  cfg.run_id = s.get<std::string>("run_id", f.run_id, "");
  if (cfg.run_id.empty()) cfg.run_id = fresh_run_id(runs_dir, command);
  if (cfg.run_id.find_first_of("/\\") != std::string::npos || cfg.run_id == "." || cfg.run_id == "..")
    throw UsageError("invalid run id '" + cfg.run_id + "'");
  const fs::path dir = runs_dir / cfg.run_id;
  if (fs::exists(dir)) throw UsageError("run directory already exists: " + dir.string());

  ProviderHandle handle = make_provider(s, f, cfg.concurrency, ctx.provider);

  json statements = json::array();
  for (const auto& st : corpus.statements) statements.push_back(json{{"id", st.id}, {"status", "pending"}});
  json config{{"prompt_spec",
               {{"mode", recall ? "criteria" : std::string(to_string(cfg.prompt_spec.mode))},
                {"shots", recall ? 0 : cfg.prompt_spec.shots},
                {"task_type", to_string(task)}}},
              {"provider", provider_json(cfg.provider)},
              {"embedding", provider_json(cfg.embedding)},
              {"seed", cfg.seed},
              {"concurrency", cfg.concurrency},
              {"offline", handle.offline}};
  if (recall) config["recall_schedule"] = cfg.recall_schedule;
  json manifest{{"schema", "divex.manifest/1"},
                {"tool_version", kToolVersion},
                {"run_id", cfg.run_id},
                {"command", command},
                {"created_at", utc_now()},
                {"status", "running"},
                {"config", config},
                {"config_sources", s.sources()},
                {"corpus",
                 {{"path", corpus.source_path},
                  {"task_type", to_string(task)},
                  {"text_field", text_field},
                  {"size", corpus.size()},
                  {"sample", sample},
                  {"fingerprint", corpus_fingerprint(corpus.statements)},
                  {"warnings", corpus.warnings}}},
                {"statements", statements}};
  fs::create_directories(dir / "raw");
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");

  std::map<std::string, std::pair<std::string, std::string>> status;  // id -> (status, detail)
  std::size_t ok = 0;
  if (recall) {
    auto result = run_recall_batch(handle.get(), cfg, corpus);
    std::vector<json> trace_rows;
    std::vector<OpinionSet> sets;
    for (const auto& t : result.traces) {
      trace_rows.push_back(to_json(t, task));
      write_text(dir / raw_ref(t.statement_id), recall_raw_text(t));
      OpinionSet set;
      set.statement_id = t.statement_id;
      set.opinions = t.final_opinions;
      set.model_id = cfg.provider.model_id;
      set.warnings = t.warnings;
      sets.push_back(std::move(set));
      status[t.statement_id] = {"ok", std::to_string(t.final_opinions.size()) + " opinions after " +
                                          std::to_string(t.steps.size()) + " steps"};
      ++ok;
    }
    for (const auto& fl : result.failures) status[fl.statement_id] = {"failed", fl.error};
    write_jsonl(dir / "traces.jsonl", trace_rows);
    write_jsonl(dir / "opinions.jsonl", sets_to_rows(sets, task));
  } else {
    auto result = run_generation(handle.get(), cfg, corpus);
    for (const auto& set : result.sets) {
      write_text(dir / raw_ref(set.statement_id), set.raw_completion);
      status[set.statement_id] = {"ok", std::to_string(set.opinions.size()) + " opinions" +
                                            (set.warnings.empty() ? "" : ", " + std::to_string(set.warnings.size()) + " warnings")};
      ++ok;
    }
    for (const auto& fl : result.failures) status[fl.statement_id] = {"failed", fl.error};
    write_jsonl(dir / "opinions.jsonl", sets_to_rows(result.sets, task));
  }

  for (auto& row : manifest["statements"]) {
    const auto& [st, detail] = status[row["id"].get<std::string>()];
    row["status"] = st;
    row[st == "ok" ? "summary" : "error"] = detail;
    ctx.out << (st == "ok" ? "ok     " : "FAILED ") << row["id"].get<std::string>() << ": " << detail << "\n";
  }
  manifest["status"] = ok > 0 ? "complete" : "failed";
  manifest["finished_at"] = utc_now();
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  ctx.out << "run " << dir.generic_string() << ": " << ok << "/" << corpus.size() << " statements succeeded\n";
  return ok > 0 ? 0 : 1;
}

/// Settings and providers for commands that work on an existing run.
struct RunCommand {
  LoadedRun run;
  Settings settings;
  ProviderConfig chat, embed;
  TemplateSet templates;
  RunConfig config;
};

inline RunCommand open_run(const Flags& f) {
  json file = load_config_file(f.config_file);
  Settings probe(f, file);
  const fs::path runs_dir = probe.get<std::string>("runs_dir", f.runs_dir, "runs");
  const auto ref = probe.get<std::string>("run", f.run, "");
  if (ref.empty()) throw UsageError("--run is required");
  LoadedRun run = load_run(resolve_run_dir(ref, runs_dir));
  const json prior = run.manifest.value("config", json::object());
  Settings s(f, file, prior);
  auto [chat, embed] = resolve_providers(s, f, prior);
  RunConfig cfg;
  cfg.provider = chat;
  cfg.embedding = embed;
  cfg.concurrency = s.get<std::size_t>("concurrency", f.concurrency, 4);
  cfg.templates = resolve_templates(s, f);
  TemplateSet templates = cfg.templates;
  return RunCommand{std::move(run), std::move(s), chat, embed, std::move(templates), std::move(cfg)};
}

inline bool any_missing_criteria(const std::vector<OpinionSet>& sets) {
  for (const auto& s : sets)
    for (const auto& op : s.opinions)
      if (op.criteria.empty()) return true;
  return false;
}

inline fs::path write_extracted(const LoadedRun& run, const std::vector<OpinionSet>& sets) {
  const int v = next_version(run.dir, {{"opinions.extracted", ".jsonl"}});
  const auto path = versioned_name(run.dir, "opinions.extracted", ".jsonl", v);
  write_jsonl(path, sets_to_rows(sets, run.task_type));
  return path;
}

inline int cmd_extract(Context& ctx) {
  RunCommand rc = open_run(ctx.flags);
  ProviderHandle h = make_provider(rc.settings, ctx.flags, rc.config.concurrency, ctx.provider);
  auto sets = run_criteria_extraction(h.get(), rc.config, rc.run.sets);
  const auto path = write_extracted(rc.run, sets);
  std::size_t warnings = 0;
  for (const auto& s : sets) warnings += s.warnings.size();
  ctx.out << "wrote " << path.generic_string() << " (" << sets.size() << " statements, " << warnings << " warnings)\n";
  return 0;
}

inline ScoreOptions score_options(Settings& s, const Flags& f) {
  ScoreOptions opt;
  if (!f.metrics.empty()) {
    opt.metrics.clear();
    for (const auto& m : f.metrics)
      for (const auto& part : split(m, ',')) opt.metrics.insert(parse_metric(part));
  } else if (s.file().contains("metrics")) {
    opt.metrics.clear();
    for (const auto& m : s.file().at("metrics")) opt.metrics.insert(parse_metric(m.get<std::string>()));
  }
  opt.cluster_method = parse_cluster_method(s.get<std::string>("method", f.method, "llm"));
  opt.tau = s.get<double>("tau", f.tau, kDefaultTau);
  if (!(opt.tau > 0.0 && opt.tau < 1.0)) throw UsageError("--tau must lie in (0, 1)");
  opt.counting_mode = parse_counting_mode(s.get<std::string>("counting", f.counting, "drop-ungrouped"));
  opt.per_stance_semantic = s.flag_or_config("per_stance", f.per_stance);
  return opt;
}

inline ScoreInput score_input(const LoadedRun& run, const std::vector<OpinionSet>& sets) {
  ScoreInput in;
  in.task_type = run.task_type;
  const auto& m = run.manifest;
  in.prompt_mode = m.value("command", std::string()) == "recall"
                       ? "recall"
                       : m.at("config").at("prompt_spec").value("mode", std::string("criteria"));
  in.shots = m.at("config").at("prompt_spec").value("shots", 0);
  in.corpus = json{{"fingerprint", m.at("corpus").at("fingerprint")},
                   {"size", m.at("corpus").at("size")},
                   {"task_type", m.at("corpus").at("task_type")}};
  in.statements = statement_opinions(std::span<const OpinionSet>(sets));
  in.traces = run.traces;
  return in;
}

inline int cmd_cluster(Context& ctx) {
  RunCommand rc = open_run(ctx.flags);
  ScoreOptions opt = score_options(rc.settings, ctx.flags);
  ProviderHandle h = make_provider(rc.settings, ctx.flags, rc.config.concurrency, ctx.provider);
  std::vector<json> rows;
  for (const auto& set : rc.run.sets) {
    auto phrases = criteria_phrases(set.opinions);
    auto c = opt.cluster_method == ClusterMethod::LlmPrompted ? llm_cluster(h.get(), rc.chat, phrases, rc.templates)
                                                               : greedy_embed_cluster(h.get(), rc.embed, phrases, opt.tau);
    json row{{"statement_id", set.statement_id}, {"method", to_string(c.method)}, {"groups", c.groups},
             {"ungrouped", c.ungrouped},         {"warnings", c.warnings}};
    if (c.method == ClusterMethod::EmbeddingGreedy) row["tau"] = c.tau;
    rows.push_back(std::move(row));
  }
  const auto path = versioned_name(rc.run.dir, "clusters", ".jsonl", next_version(rc.run.dir, {{"clusters", ".jsonl"}}));
  write_jsonl(path, rows);
  ctx.out << "wrote " << path.generic_string() << " (" << rows.size() << " statements)\n";
  return 0;
}

inline int cmd_score(Context& ctx) {
  RunCommand rc = open_run(ctx.flags);
  ScoreOptions opt = score_options(rc.settings, ctx.flags);
  if (rc.run.sets.empty()) throw Error("run " + rc.run.dir.string() + " is empty");
  ProviderHandle h = make_provider(rc.settings, ctx.flags, rc.config.concurrency, ctx.provider);

  std::vector<OpinionSet> sets = rc.run.sets;
  if (opt.wants(Metric::Perspective) && !ctx.flags.no_extract && any_missing_criteria(sets)) {
    sets = run_criteria_extraction(h.get(), rc.config, sets);
    ctx.out << "wrote " << write_extracted(rc.run, sets).generic_string() << "\n";
  }
  auto result = score_run(h.get(), rc.chat, rc.embed, score_input(rc.run, sets), opt, rc.templates);

  const int v = next_version(rc.run.dir, {{"report", ".json"}, {"report", ".md"}, {"embeddings", ".csv"}});
  const auto report_path = versioned_name(rc.run.dir, "report", ".json", v);
  write_text(report_path, result.report.dump(2) + "\n");
  write_text(versioned_name(rc.run.dir, "report", ".md", v), render_report_md(result.report));
  if (opt.wants(Metric::Semantic)) write_text(versioned_name(rc.run.dir, "embeddings", ".csv", v), result.embeddings_csv);
  if (opt.wants(Metric::Perspective)) {
    const auto cpath = versioned_name(rc.run.dir, "clusters", ".jsonl", next_version(rc.run.dir, {{"clusters", ".jsonl"}}));
    write_jsonl(cpath, result.clusters);
  }
  for (const auto& w : result.warnings) ctx.err << "warning: " << w << "\n";
  const auto& summary = result.report.at("summary");
  if (summary.contains("corpus_semantic"))
    ctx.out << "corpus semantic diversity: " << detail::fmt(summary.at("corpus_semantic")) << "\n";
  ctx.out << "wrote " << report_path.generic_string() << "\n";
  return 0;
}

inline int cmd_report(Context& ctx) {
  const Flags& f = ctx.flags;
  Settings s(f, load_config_file(f.config_file));
  const fs::path runs_dir = s.get<std::string>("runs_dir", f.runs_dir, "runs");
  if (f.runs.empty()) throw UsageError("report needs at least one run");
  std::vector<RunReport> runs;
  json inputs = json::array();
  for (const auto& ref : f.runs) {
    const auto dir = resolve_run_dir(ref, runs_dir);
    const auto path = latest_version(dir, "report", ".json");
    if (path.empty()) throw UsageError("run " + ref + " has no report; run `divex score` first");
    auto manifest = read_json(dir / "manifest.json");
    runs.push_back(RunReport{manifest.value("run_id", dir.filename().string()), manifest, read_json(path)});
    inputs.push_back(json{{"run", runs.back().run_id}, {"report", path.filename().string()}});
  }
  Comparison cmp = compare_runs(runs);

  std::string run_id = s.get<std::string>("run_id", f.run_id, "");
  if (run_id.empty()) run_id = fresh_run_id(runs_dir, "report");
  const fs::path dir = runs_dir / run_id;
  if (fs::exists(dir)) throw UsageError("run directory already exists: " + dir.string());
  json manifest{{"schema", "divex.manifest/1"}, {"tool_version", kToolVersion}, {"run_id", run_id},
                {"command", "report"},          {"created_at", utc_now()},      {"inputs", inputs},
                {"config_sources", s.sources()}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  write_text(dir / "comparison.json", cmp.summary.dump(2) + "\n");
  write_text(dir / "comparison.md", cmp.markdown);
  write_text(dir / "diversity_vs_n.csv", cmp.curve_csv);
  ctx.out << cmp.markdown << "run " << dir.generic_string() << "\n";
  return 0;
}

inline int cmd_cache_stats(Context& ctx) {
  const Flags& f = ctx.flags;
  Settings s(f, load_config_file(f.config_file));
  const auto path = s.get<std::string>("cache", f.cache, "cache.jsonl");
  ResponseCache cache(path);
  ctx.out << "cache: " << path << (fs::exists(path) ? "" : " (missing)") << "\n"
          << "entries: " << cache.size() << "\n"
          << "chat: " << cache.count("chat") << "\n"
          << "embedding: " << cache.count("embed") << "\n"
          << "skipped lines: " << cache.warnings().size() << "\n";
  return 0;
}

inline void add_global_options(CLI::App& app, Flags& f) {
  app.add_flag("--offline", f.offline, "Replay from fixtures and cache only; never touch the network");
  app.add_option("--fixtures", f.fixtures, "Fixture file or directory of *.jsonl recordings");
  app.add_option("--run-id", f.run_id, "Identifier for the run directory to create");
  app.add_option("--concurrency", f.concurrency, "Statements processed in parallel");
  app.add_option("--config", f.config_file, "JSON config file (flags take precedence)");
  app.add_option("--cache", f.cache, "Response cache file (default cache.jsonl)");
  app.add_option("--runs-dir", f.runs_dir, "Directory holding run directories (default runs)");
  app.add_option("--base-url", f.base_url, "Chat endpoint base URL");
  app.add_option("--model", f.model, "Chat model id");
  app.add_option("--temperature", f.temperature, "Sampling temperature");
  app.add_option("--top-p", f.top_p, "Nucleus sampling mass");
  app.add_option("--max-tokens", f.max_tokens, "Completion token limit");
  app.add_option("--max-retries", f.max_retries, "Retries for transient HTTP failures");
  app.add_option("--timeout-ms", f.timeout_ms, "Request timeout in milliseconds");
  app.add_option("--embed-base-url", f.embed_base_url, "Embedding endpoint base URL (default: --base-url)");
  app.add_option("--embed-model", f.embed_model, "Embedding model id");
  app.add_option("--templates", f.templates, "Directory overriding the built-in prompt templates");
}

inline void add_corpus_options(CLI::App& sub, Flags& f) {
  sub.add_option("--corpus", f.corpus, "Statement file (CSV or JSON lines)");
  sub.add_option("--task-type", f.task_type, "stance | labeling | generation");
  sub.add_option("--text-field", f.text_field, "Field holding the statement text (default text)");
  sub.add_option("--id-field", f.id_field, "Field holding statement ids (default id)");
  sub.add_option("--sample", f.sample, "Score a seeded random subset of this size");
  sub.add_option("--seed", f.seed, "Sampling seed");
}

inline void add_score_options(CLI::App& sub, Flags& f) {
  sub.add_option("--method", f.method, "Criteria clustering: llm | embedding");
  sub.add_option("--tau", f.tau, "Similarity threshold for embedding clustering");
  sub.add_option("--counting", f.counting, "drop-ungrouped | singleton-ungrouped");
}

}  // namespace cli

/// Entry point of the divex command line. Returns the process exit code.
/// A non-null `provider` serves every model call instead of the one the
/// flags would select.
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err, Provider* provider = nullptr) {
  cli::Context ctx{cli::Flags{}, out, err, provider};
  cli::Flags& f = ctx.flags;
  CLI::App app{"divex: diverse opinion elicitation and diversity scoring"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));
  cli::add_global_options(app, f);

  auto* gen = app.add_subcommand("gen", "Batch opinion generation (free-form or criteria-based, k-shot)");
  cli::add_corpus_options(*gen, f);
  gen->add_option("--mode", f.mode, "criteria | freeform");
  gen->add_option("--shots", f.shots, "Demonstrations: 0, 1 or 5");
  gen->add_option("--shot-bank", f.shot_bank, "Shot bank file replacing the built-in one");

  auto* recall = app.add_subcommand("recall", "Step-by-step recall prompting");
  cli::add_corpus_options(*recall, f);
  recall->add_option("--schedule", f.schedule, "Target counts, e.g. 2,5,8,11,14,17,20");

  auto* extract = app.add_subcommand("extract-criteria", "Extract criteria for opinions that have none");
  extract->add_option("--run", f.run, "Run id or directory")->required();

  auto* cluster = app.add_subcommand("cluster", "Cluster each statement's criteria phrases");
  cluster->add_option("--run", f.run, "Run id or directory")->required();
  cli::add_score_options(*cluster, f);

  auto* score = app.add_subcommand("score", "Compute diversity metrics for a run");
  score->add_option("--run", f.run, "Run id or directory")->required();
  cli::add_score_options(*score, f);
  score->add_option("--metric", f.metrics, "Restrict to: semantic, perspective, lexical, balance, count");
  score->add_flag("--per-stance", f.per_stance, "Also report semantic diversity per stance");
  score->add_flag("--no-extract", f.no_extract, "Do not extract missing criteria before clustering");

  auto* report = app.add_subcommand("report", "Compare scored runs side by side");
  report->add_option("runs", f.runs, "Run ids or directories")->required();

  auto* cache = app.add_subcommand("cache", "Inspect the response cache");
  cache->require_subcommand(1);
  auto* stats = cache->add_subcommand("stats", "Entry counts");

  for (auto* sub : {gen, recall, extract, cluster, score, report, cache, stats}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    const CLI::App* where = &app;
    for (auto* sub : app.get_subcommands()) where = sub;
    err << where->help();
    return 2;
  }

  try {
    if (gen->parsed()) return cli::cmd_generate(ctx, false);
    if (recall->parsed()) return cli::cmd_generate(ctx, true);
    if (extract->parsed()) return cli::cmd_extract(ctx);
    if (cluster->parsed()) return cli::cmd_cluster(ctx);
    if (score->parsed()) return cli::cmd_score(ctx);
    if (report->parsed()) return cli::cmd_report(ctx);
    if (stats->parsed()) return cli::cmd_cache_stats(ctx);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    for (auto* sub : app.get_subcommands()) err << sub->help();
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace divex
