// Copyright 2026 The divex Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "divex/digest.hpp"
#include "divex/embedding.hpp"
#include "divex/types.hpp"

namespace divex {

inline constexpr const char* kApiKeyEnv = "DIVEX_API_KEY";

/// Endpoint and decoding settings. The same struct configures the chat model
/// and, separately, the embedding model.
struct ProviderConfig {
  std::string base_url = "https://api.openai.com";
  std::string model_id = "gpt-4";
  double temperature = 1.0;
  double top_p = 1.0;
  int max_tokens = 2048;
  std::chrono::milliseconds timeout{120'000};
  int max_retries = 4;
  std::chrono::milliseconds retry_base_delay{500};
  std::chrono::milliseconds retry_max_delay{30'000};
  std::string chat_path = "/v1/chat/completions";
  std::string embed_path = "/v1/embeddings";
  std::string completion_pointer = "/choices/0/message/content";
  std::size_t embed_batch = 64;

  void validate() const {
    if (model_id.empty()) throw UsageError("model id must not be empty");
    if (!(temperature >= 0.0)) throw UsageError("temperature must be >= 0");
    if (!(top_p > 0.0 && top_p <= 1.0)) throw UsageError("top_p must be in (0, 1]");
    if (max_tokens <= 0) throw UsageError("max_tokens must be positive");
    if (max_retries < 0) throw UsageError("max_retries must be >= 0");
  }
};

inline ProviderConfig default_embedding_config() {
  ProviderConfig c;
  c.model_id = "all-distilroberta-v1";
  return c;
}

struct TokenUsage {
  long prompt_tokens = 0;
  long completion_tokens = 0;
  long total_tokens = 0;

  friend bool operator==(const TokenUsage&, const TokenUsage&) = default;
};

/// One prompt/completion pair together with the parameters that produced it.
struct ChatExchange {
  std::string prompt;
  std::string completion;  // raw, unmodified
  std::string model_id;
  double temperature = 1.0;
  double top_p = 1.0;
  int max_tokens = 0;
  TokenUsage token_usage;
  std::chrono::milliseconds latency{0};

  friend bool operator==(const ChatExchange&, const ChatExchange&) = default;
};

/// A text and its embedding, as stored in caches and fixtures.
struct EmbeddingEntry {
  std::string model_id;
  std::string text;
  EmbeddingVector vector;
};

// ---------------------------------------------------------------------------
// Content-addressed keys

enum class EndpointKind { Chat, Embedding };

namespace detail {

inline std::string shortest_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

}  // namespace detail

/// SHA-256 over (endpoint kind, model, temperature, top_p, max_tokens, payload).
struct CacheKey {
  std::string digest;

  static CacheKey make(EndpointKind kind, const ProviderConfig& cfg, std::string_view payload) {
    return make(kind, cfg.model_id, cfg.temperature, cfg.top_p, cfg.max_tokens, payload);
  }

  static CacheKey make(EndpointKind kind, std::string_view model_id, double temperature, double top_p, int max_tokens,
                       std::string_view payload) {
    Sha256 h;
    h.field(kind == EndpointKind::Chat ? "chat" : "embed")
        .field(model_id)
        .field(detail::shortest_double(temperature))
        .field(detail::shortest_double(top_p))
        .field(std::to_string(max_tokens))
        .field(payload);
    return CacheKey{h.hex()};
  }

  friend bool operator==(const CacheKey&, const CacheKey&) = default;
};

inline CacheKey key_of(const ChatExchange& ex) {
  return CacheKey::make(EndpointKind::Chat, ex.model_id, ex.temperature, ex.top_p, ex.max_tokens, ex.prompt);
}

// ---------------------------------------------------------------------------
// JSON records shared by cache.jsonl and fixture files

inline nlohmann::json to_record(const ChatExchange& ex) {
  return nlohmann::json{{"kind", "chat"},
                        {"key", key_of(ex).digest},
                        {"model_id", ex.model_id},
                        {"temperature", ex.temperature},
                        {"top_p", ex.top_p},
                        {"max_tokens", ex.max_tokens},
                        {"prompt", ex.prompt},
                        {"completion", ex.completion},
                        {"usage",
                         {{"prompt_tokens", ex.token_usage.prompt_tokens},
                          {"completion_tokens", ex.token_usage.completion_tokens},
                          {"total_tokens", ex.token_usage.total_tokens}}},
                        {"latency_ms", ex.latency.count()}};
}

inline ChatExchange chat_from_record(const nlohmann::json& j) {
  ChatExchange ex;
  ex.prompt = j.at("prompt").get<std::string>();
  ex.completion = j.at("completion").get<std::string>();
  ex.model_id = j.at("model_id").get<std::string>();
  ex.temperature = j.at("temperature").get<double>();
  ex.top_p = j.at("top_p").get<double>();
  ex.max_tokens = j.at("max_tokens").get<int>();
  if (j.contains("usage")) {
    const auto& u = j["usage"];
    ex.token_usage = {u.value("prompt_tokens", 0L), u.value("completion_tokens", 0L), u.value("total_tokens", 0L)};
  }
  ex.latency = std::chrono::milliseconds(j.value("latency_ms", 0L));
  return ex;
}

inline nlohmann::json to_record(const EmbeddingEntry& e, const CacheKey& key) {
  return nlohmann::json{{"kind", "embed"}, {"key", key.digest}, {"model_id", e.model_id}, {"text", e.text},
                        {"embedding", e.vector.values()}};
}

inline EmbeddingEntry embedding_from_record(const nlohmann::json& j) {
  return EmbeddingEntry{j.at("model_id").get<std::string>(), j.at("text").get<std::string>(),
                        EmbeddingVector(j.at("embedding").get<std::vector<double>>())};
}

// ---------------------------------------------------------------------------
// Cache

/// Append-only JSON-lines store with an in-memory index. Lines that fail to
/// parse (e.g. a torn final write) are skipped and reported in warnings().
/// Later lines win over earlier ones with the same key.
class ResponseCache {
 public:
  ResponseCache() = default;
  explicit ResponseCache(std::filesystem::path path) : path_(std::move(path)) {
    if (!path_.empty() && std::filesystem::exists(path_)) load_file(path_, false);
  }

  /// Adds the records of another JSON-lines file without making it the write target.
  void merge_file(const std::filesystem::path& path) {
    std::lock_guard lock(mu_);
    load_file(path, true);
  }

  std::optional<nlohmann::json> find(const std::string& key) const {
    std::lock_guard lock(mu_);
    auto it = index_.find(key);
    if (it == index_.end()) return std::nullopt;
    return std::optional<nlohmann::json>(std::in_place, it->second);
  }

  /// Indexes the record and appends it to the backing file, if any.
  void put(const nlohmann::json& record) {
    const std::string line = record.dump();
    std::lock_guard lock(mu_);
    index_[record.at("key").get<std::string>()] = record;
    if (path_.empty()) return;
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    if (!out) throw ProviderError("cannot append to cache file " + path_.string());
    out << line << '\n';
    out.flush();
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return index_.size();
  }

  std::size_t count(std::string_view kind) const {
    std::lock_guard lock(mu_);
    return static_cast<std::size_t>(std::count_if(index_.begin(), index_.end(), [&](const auto& kv) {
      return kv.second.value("kind", std::string{}) == kind;
    }));
  }

  std::vector<std::string> warnings() const {
    std::lock_guard lock(mu_);
    return warnings_;
  }

  const std::filesystem::path& path() const { return path_; }

 private:
  void load_file(const std::filesystem::path& path, bool must_exist) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
      if (must_exist) throw UsageError("cannot open " + path.string());
      return;
    }
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (trim(line).empty()) continue;
      auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.is_object() || !j.contains("key") || !j["key"].is_string()) {
        warnings_.push_back(path.string() + ":" + std::to_string(n) + ": unreadable record skipped");
        continue;
      }
      auto key = j["key"].get<std::string>();
      index_[key] = std::move(j);
    }
  }

  std::filesystem::path path_;
  mutable std::mutex mu_;
  std::unordered_map<std::string, nlohmann::json> index_;
  std::vector<std::string> warnings_;
};

// ---------------------------------------------------------------------------
// Transport

struct HttpRequest {
  std::string base_url;
  std::string path;
  std::string body;
  std::vector<std::pair<std::string, std::string>> headers;
  std::chrono::milliseconds timeout{0};
};

struct HttpResponse {
  int status = 0;  // 0 means the request never got a response
  std::string body;
  std::string error;
  std::optional<int> retry_after_seconds;
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResponse post(const HttpRequest& request) = 0;
};

// ---------------------------------------------------------------------------
// Provider interface

class Provider {
 public:
  virtual ~Provider() = default;
  virtual ChatExchange chat_complete(const ProviderConfig& config, const std::string& prompt) = 0;
  virtual std::vector<EmbeddingVector> embed_texts(const ProviderConfig& config, std::span<const std::string> texts) = 0;
};

namespace detail {

inline bool is_transient(int status) { return status == 0 || status == 408 || status == 429 || status >= 500; }

inline void check_equal_dims(const std::vector<EmbeddingVector>& vs) {
  for (const auto& v : vs) {
    if (v.dim() != vs.front().dim())
      throw ProviderError("embedding dimension mismatch: " + std::to_string(v.dim()) + " vs " +
                          std::to_string(vs.front().dim()));
  }
}

inline std::string prompt_excerpt(std::string_view prompt) {
  auto nl = prompt.rfind("Statement: ");
  std::string_view tail = nl == std::string_view::npos ? prompt : prompt.substr(nl);
  std::string out(tail.substr(0, 80));
  for (char& c : out) {
    if (c == '\n') c = ' ';
  }
  return out;
}

}  // namespace detail

/// Chat and embedding client over HTTP+JSON with content-addressed caching
/// and exponential backoff. Thread-safe; at most `max_in_flight` requests
/// are on the wire at once.
class HttpProvider : public Provider {
 public:
  HttpProvider(Transport& transport, ResponseCache& cache, std::ptrdiff_t max_in_flight = 4)
      : transport_(transport), cache_(cache), slots_(std::max<std::ptrdiff_t>(1, max_in_flight)) {
    if (const char* key = std::getenv(kApiKeyEnv)) api_key_ = key;
  }

  void set_api_key(std::string key) { api_key_ = std::move(key); }

  ChatExchange chat_complete(const ProviderConfig& config, const std::string& prompt) override {
    const auto key = CacheKey::make(EndpointKind::Chat, config, prompt);
    if (auto hit = cache_.find(key.digest)) return chat_from_record(*hit);

    nlohmann::json body{{"model", config.model_id},
                        {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
                        {"temperature", config.temperature},
                        {"top_p", config.top_p},
                        {"max_tokens", config.max_tokens}};
    const auto started = std::chrono::steady_clock::now();
    nlohmann::json reply = request(config, config.chat_path, body);
    ChatExchange ex;
    ex.prompt = prompt;
    ex.model_id = config.model_id;
    ex.temperature = config.temperature;
    ex.top_p = config.top_p;
    ex.max_tokens = config.max_tokens;
    ex.latency = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started);
    const auto ptr = nlohmann::json::json_pointer(config.completion_pointer);
    if (!reply.contains(ptr) || !reply[ptr].is_string())
      throw ProviderError("malformed response body: no completion at " + config.completion_pointer);
    ex.completion = reply[ptr].get<std::string>();
    if (reply.contains("usage") && reply["usage"].is_object()) {
      const auto& u = reply["usage"];
      ex.token_usage = {u.value("prompt_tokens", 0L), u.value("completion_tokens", 0L), u.value("total_tokens", 0L)};
    }
    cache_.put(to_record(ex));
    return ex;
  }

  std::vector<EmbeddingVector> embed_texts(const ProviderConfig& config, std::span<const std::string> texts) override {
    if (texts.empty()) throw UsageError("embed_texts needs at least one text");
    std::vector<std::optional<EmbeddingVector>> found(texts.size());
    std::vector<std::size_t> missing;
    for (std::size_t i = 0; i < texts.size(); ++i) {
      auto key = CacheKey::make(EndpointKind::Embedding, config, texts[i]);
      if (auto hit = cache_.find(key.digest)) found[i] = embedding_from_record(*hit).vector;
      else missing.push_back(i);
    }
    // Duplicates within one call are fetched once.
    std::vector<std::string> unique;
    std::unordered_map<std::string, std::size_t> pos;
    for (auto i : missing) {
      if (pos.emplace(texts[i], unique.size()).second) unique.push_back(texts[i]);
    }
    std::vector<EmbeddingVector> fetched;
    for (std::size_t start = 0; start < unique.size(); start += config.embed_batch) {
      std::vector<std::string> batch(unique.begin() + static_cast<std::ptrdiff_t>(start),
                                     unique.begin() + static_cast<std::ptrdiff_t>(std::min(unique.size(), start + config.embed_batch)));
      auto vecs = request_embeddings(config, batch);
      for (std::size_t k = 0; k < batch.size(); ++k) {
        cache_.put(to_record(EmbeddingEntry{config.model_id, batch[k], vecs[k]},
                             CacheKey::make(EndpointKind::Embedding, config, batch[k])));
        fetched.push_back(std::move(vecs[k]));
      }
    }
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (std::size_t i = 0; i < texts.size(); ++i) out.push_back(found[i] ? *found[i] : fetched[pos.at(texts[i])]);
    detail::check_equal_dims(out);
    return out;
  }

 private:
  std::vector<EmbeddingVector> request_embeddings(const ProviderConfig& config, const std::vector<std::string>& batch) {
    nlohmann::json body{{"model", config.model_id}, {"input", batch}};
    nlohmann::json reply = request(config, config.embed_path, body);
    if (!reply.contains("data") || !reply["data"].is_array() || reply["data"].size() != batch.size())
      throw ProviderError("malformed response body: expected " + std::to_string(batch.size()) + " embeddings");
    std::vector<std::optional<EmbeddingVector>> slots(batch.size());
    std::size_t fallback = 0;
    for (const auto& item : reply["data"]) {
      std::size_t idx = item.contains("index") ? item["index"].get<std::size_t>() : fallback;
      ++fallback;
      if (idx >= batch.size() || !item.contains("embedding") || !item["embedding"].is_array())
        throw ProviderError("malformed response body: bad embedding item");
      slots[idx] = EmbeddingVector(item["embedding"].get<std::vector<double>>());
    }
    std::vector<EmbeddingVector> out;
    for (auto& s : slots) {
      if (!s) throw ProviderError("malformed response body: missing embedding index");
      out.push_back(std::move(*s));
    }
    detail::check_equal_dims(out);
    return out;
  }

  nlohmann::json request(const ProviderConfig& config, const std::string& path, const nlohmann::json& body) {
    HttpRequest req;
    req.base_url = config.base_url;
    req.path = path;
    req.body = body.dump();
    req.timeout = config.timeout;
    req.headers.emplace_back("Content-Type", "application/json");
    if (!api_key_.empty()) req.headers.emplace_back("Authorization", "Bearer " + api_key_);

    std::string last_error;
    for (int attempt = 0; attempt <= config.max_retries; ++attempt) {
      HttpResponse resp;
      {
        slots_.acquire();
        struct Release {
          std::counting_semaphore<>& s;
          ~Release() { s.release(); }
        } release{slots_};
        resp = transport_.post(req);
      }
      if (resp.status >= 200 && resp.status < 300) {
        auto j = nlohmann::json::parse(resp.body, nullptr, false);
        if (j.is_discarded()) throw ProviderError("malformed response body: not JSON");
        return j;
      }
      last_error = resp.status == 0 ? "network error: " + resp.error
                                    : "HTTP " + std::to_string(resp.status) + ": " + resp.body.substr(0, 200);
      if (!detail::is_transient(resp.status)) throw ProviderError("request failed with " + last_error);
      if (attempt == config.max_retries) break;
      auto delay = config.retry_base_delay * (1LL << std::min(attempt, 20));
      if (resp.retry_after_seconds) delay = std::max<std::chrono::milliseconds>(delay, std::chrono::seconds(*resp.retry_after_seconds));
      std::this_thread::sleep_for(std::min<std::chrono::milliseconds>(delay, config.retry_max_delay));
    }
    throw ProviderError("exhausted retries (" + std::to_string(config.max_retries) + ") : " + last_error);
  }

  Transport& transport_;
  ResponseCache& cache_;
  std::counting_semaphore<> slots_;
  std::string api_key_;
};

/// Replay-only provider backed by recorded exchanges and embeddings. It has
/// no transport, so it can never touch the network.
class FixtureProvider : public Provider {
 public:
  FixtureProvider() = default;

  void add_file(const std::filesystem::path& path) { store_->merge_file(path); }

  /// Loads one .jsonl file or every .jsonl file in a directory (sorted by name).
  void add_path(const std::filesystem::path& path) {
    if (std::filesystem::is_directory(path)) {
      std::vector<std::filesystem::path> files;
      for (const auto& e : std::filesystem::directory_iterator(path)) {
        if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      for (const auto& f : files) add_file(f);
    } else if (std::filesystem::exists(path)) {
      add_file(path);
    } else {
      throw UsageError("fixture path not found: " + path.string());
    }
  }

  void add(const ChatExchange& ex) { store_->put(to_record(ex)); }
  void add(const EmbeddingEntry& e, const ProviderConfig& config) {
    store_->put(to_record(e, CacheKey::make(EndpointKind::Embedding, config, e.text)));
  }

  ChatExchange chat_complete(const ProviderConfig& config, const std::string& prompt) override {
    auto hit = store_->find(CacheKey::make(EndpointKind::Chat, config, prompt).digest);
    if (!hit) throw FixtureMiss("fixture miss: no recorded completion for prompt ending \"" + detail::prompt_excerpt(prompt) + "\"");
    return chat_from_record(*hit);
  }

  std::vector<EmbeddingVector> embed_texts(const ProviderConfig& config, std::span<const std::string> texts) override {
    if (texts.empty()) throw UsageError("embed_texts needs at least one text");
    std::vector<EmbeddingVector> out;
    for (const auto& t : texts) {
      auto hit = store_->find(CacheKey::make(EndpointKind::Embedding, config, t).digest);
      if (!hit) throw FixtureMiss("fixture miss: no recorded embedding for \"" + t.substr(0, 60) + "\"");
      out.push_back(embedding_from_record(*hit).vector);
    }
    detail::check_equal_dims(out);
    return out;
  }

  std::size_t size() const { return store_->size(); }

 private:
  std::shared_ptr<ResponseCache> store_ = std::make_shared<ResponseCache>();
};

/// Forwards to another provider and keeps every exchange, for writing fixtures.
class RecordingProvider : public Provider {
 public:
  explicit RecordingProvider(Provider& inner) : inner_(inner) {}

  ChatExchange chat_complete(const ProviderConfig& config, const std::string& prompt) override {
    auto ex = inner_.chat_complete(config, prompt);
    std::lock_guard lock(mu_);
    exchanges_.push_back(ex);
    return ex;
  }

  std::vector<EmbeddingVector> embed_texts(const ProviderConfig& config, std::span<const std::string> texts) override {
    auto vecs = inner_.embed_texts(config, texts);
    std::lock_guard lock(mu_);
    for (std::size_t i = 0; i < texts.size(); ++i) embeddings_.push_back({EmbeddingEntry{config.model_id, texts[i], vecs[i]}, config});
    return vecs;
  }

  std::vector<ChatExchange> exchanges() const {
    std::lock_guard lock(mu_);
    return exchanges_;
  }
  std::vector<std::pair<EmbeddingEntry, ProviderConfig>> embeddings() const {
    std::lock_guard lock(mu_);
    return embeddings_;
  }

 private:
  Provider& inner_;
  mutable std::mutex mu_;
  std::vector<ChatExchange> exchanges_;
  std::vector<std::pair<EmbeddingEntry, ProviderConfig>> embeddings_;
};

/// Writes exchanges (and optionally embeddings) as a fixture file. Records
/// are de-duplicated by key and sorted by key so the file is reproducible.
inline void record_fixture(const std::filesystem::path& path, std::span<const ChatExchange> exchanges,
                           std::span<const std::pair<EmbeddingEntry, ProviderConfig>> embeddings = {}) {
  std::map<std::string, std::string> lines;
  for (const auto& ex : exchanges) lines[key_of(ex).digest] = to_record(ex).dump();
  for (const auto& [e, cfg] : embeddings) {
    auto key = CacheKey::make(EndpointKind::Embedding, cfg, e.text);
    lines[key.digest] = to_record(e, key).dump();
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot write fixture " + path.string());
  for (const auto& [k, line] : lines) out << line << '\n';
}

inline std::vector<ChatExchange> read_fixture_exchanges(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open fixture " + path.string());
  std::vector<ChatExchange> out;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    auto j = nlohmann::json::parse(line);
    if (j.value("kind", std::string{}) == "chat") out.push_back(chat_from_record(j));
  }
  return out;
}

inline FixtureProvider load_fixture(const std::filesystem::path& path) {
  FixtureProvider p;
  p.add_path(path);
  return p;
}

}  // namespace divex
