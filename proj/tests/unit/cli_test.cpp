// Copyright 2026 The divex Authors
// SPDX-License-Identifier: Apache-2.0

#include <atomic>
#include <sstream>
#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>

#include "divex/cli.hpp"
#include "support/golden_data.hpp"
#include "support/synthetic.hpp"
#include "support/test_support.hpp"

namespace divex {
namespace {

namespace fs = std::filesystem;
namespace golden = testing::golden;
using testing::read_text;
using testing::source_path;
using testing::TempDir;

struct CliResult {
  int code = 0;
  std::string out, err;
};

CliResult cli(std::vector<std::string> args, Provider* provider = nullptr) {
  args.insert(args.begin(), "divex");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  CliResult r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err, provider);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path golden_dir() { return source_path("testdata/golden"); }

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override { testing::clear_divex_env(); }
  void TearDown() override { testing::clear_divex_env(); }
};

/// Compares every tracked output of a pipeline run with the checked-in copy.
void expect_matches_golden(const fs::path& runs_dir) {
  for (const auto& [run, files] : golden::compared_outputs())
    for (const auto& file : files) {
      const auto got = runs_dir / run / file;
      ASSERT_TRUE(fs::exists(got)) << got;
      EXPECT_EQ(read_text(got), read_text(golden_dir() / "expected" / run / file)) << run << "/" << file;
    }
}

TEST_F(CliTest, GoldenOfflineReplayIsByteIdentical) {
  TempDir a, b;
  std::ostringstream log;
  ASSERT_EQ(golden::run_pipeline(a.path(), golden_dir() / "statements.jsonl", golden_dir() / "fixtures", nullptr, log), "")
      << log.str();
  expect_matches_golden(a.path());
  ASSERT_EQ(golden::run_pipeline(b.path(), golden_dir() / "statements.jsonl", golden_dir() / "fixtures", nullptr, log), "");
  for (const auto& [run, files] : golden::compared_outputs())
    for (const auto& file : files) EXPECT_EQ(read_text(a / run / file), read_text(b / run / file)) << run << "/" << file;

  auto manifest = nlohmann::json::parse(read_text(a / "criteria/manifest.json"));
  EXPECT_EQ(manifest.at("status"), "complete");
  EXPECT_TRUE(manifest.at("config").at("offline").get<bool>());
  EXPECT_EQ(manifest.at("statements").size(), 20u);
  EXPECT_TRUE(fs::exists(a / "criteria/raw"));

  // Standalone extract and cluster reproduce what score wrote.
  const std::vector<std::string> offline{"--runs-dir", a.path().string(), "--offline", "--fixtures", (golden_dir() / "fixtures").string(),
                                         "--cache", (a / "cache.jsonl").string()};
  auto with = [&](std::vector<std::string> args) {
    args.insert(args.end(), offline.begin(), offline.end());
    return args;
  };
  auto ex = cli(with({"extract-criteria", "--run", "freeform"}));
  ASSERT_EQ(ex.code, 0) << ex.err;
  EXPECT_EQ(read_text(a / "freeform/opinions.extracted.v2.jsonl"), read_text(a / "freeform/opinions.extracted.jsonl"));
  auto cl = cli(with({"cluster", "--run", "criteria"}));
  ASSERT_EQ(cl.code, 0) << cl.err;
  EXPECT_EQ(read_text(a / "criteria/clusters.v3.jsonl"), read_text(a / "criteria/clusters.jsonl"));
  // A run directory path works in place of an id.
  auto sc = cli(with({"score", "--run", (a / "recall").string(), "--metric", "count"}));
  ASSERT_EQ(sc.code, 0) << sc.err;
  EXPECT_TRUE(fs::exists(a / "recall/report.v2.json"));
  EXPECT_FALSE(fs::exists(a / "recall/clusters.v2.jsonl"));
}

/// OpenAI-style stub backed by the synthetic model.
class StubServer {
 public:
  explicit StubServer(testing::Script script) : synthetic_(std::move(script)) {
    server_.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
      ++hits;
      auth = req.get_header_value("Authorization");
      const auto body = nlohmann::json::parse(req.body);
      const auto prompt = body.at("messages").at(0).at("content").get<std::string>();
      const auto text = synthetic_.chat_complete(ProviderConfig{}, prompt).completion;
      res.set_content(nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", text}}}}}}}.dump(),
                      "application/json");
    });
    server_.Post("/v1/embeddings", [&](const httplib::Request& req, httplib::Response& res) {
      ++hits;
      const auto body = nlohmann::json::parse(req.body);
      nlohmann::json data = nlohmann::json::array();
      std::size_t i = 0;
      for (const auto& t : body.at("input"))
        data.push_back({{"index", i++}, {"embedding", testing::hash_embedding(t.get<std::string>(), 8).values()}});
      res.set_content(nlohmann::json{{"data", data}}.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([&] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubServer() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

  std::atomic<int> hits{0};
  std::string auth;

 private:
  testing::SyntheticProvider synthetic_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

std::vector<std::string> live_flags(const TempDir& dir, const StubServer& server) {
  return {"--runs-dir", dir.path().string(), "--cache", (dir / "cache.jsonl").string(), "--base-url", server.url(),
          "--model", golden::kChatModel, "--embed-model", golden::kEmbedModel, "--max-retries", "0"};
}

std::string all_files_text(const fs::path& root) {
  std::string out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out += read_text(e.path());
  return out;
}

TEST_F(CliTest, LiveEndpointMatchesGoldenAndKeepsKeySecret) {
  const std::string secret = "sk-divex-test-7f3a91";
  ::setenv("DIVEX_API_KEY", secret.c_str(), 1);
  StubServer server(golden::script());
  TempDir dir;
  auto flags = live_flags(dir, server);
  auto args = std::vector<std::string>{"gen", "--corpus", (golden_dir() / "statements.jsonl").string(), "--run-id", "criteria"};
  args.insert(args.end(), flags.begin(), flags.end());
  auto gen = cli(args);
  ASSERT_EQ(gen.code, 0) << gen.err;
  args = {"score", "--run", "criteria"};
  args.insert(args.end(), flags.begin(), flags.end());
  auto score = cli(args);
  ASSERT_EQ(score.code, 0) << score.err;

  EXPECT_EQ(server.auth, "Bearer " + secret);
  for (const char* f : {"opinions.jsonl", "report.json", "report.md", "embeddings.csv", "clusters.jsonl"})
    EXPECT_EQ(read_text(dir / "criteria" / f), read_text(golden_dir() / "expected/criteria" / f)) << f;
  const auto everything = all_files_text(dir.path()) + gen.out + gen.err + score.out + score.err;
  EXPECT_EQ(everything.find(secret), std::string::npos);

  // The second pass is served from the cache.
  const int before = server.hits.load();
  args = {"score", "--run", "criteria"};
  args.insert(args.end(), flags.begin(), flags.end());
  ASSERT_EQ(cli(args).code, 0);
  EXPECT_EQ(server.hits.load(), before);

  auto stats = cli({"cache", "stats", "--cache", (dir / "cache.jsonl").string()});
  ASSERT_EQ(stats.code, 0);
  EXPECT_NE(stats.out.find("skipped lines: 0"), std::string::npos);
  EXPECT_EQ(stats.out.find("chat: 0\n"), std::string::npos);
  EXPECT_EQ(stats.out.find("embedding: 0\n"), std::string::npos);
}

TEST_F(CliTest, OfflineNeverTouchesTheNetwork) {
  StubServer server(golden::script());
  TempDir dir;
  auto flags = live_flags(dir, server);
  flags.insert(flags.end(), {"--offline", "--fixtures", (golden_dir() / "fixtures").string()});
  auto args = std::vector<std::string>{"gen", "--corpus", (golden_dir() / "statements.jsonl").string(), "--run-id", "c"};
  args.insert(args.end(), flags.begin(), flags.end());
  ASSERT_EQ(cli(args).code, 0);

  // Zero shots are not in the fixtures: every statement misses.
  args = {"gen", "--corpus", (golden_dir() / "statements.jsonl").string(), "--run-id", "z", "--shots", "0"};
  args.insert(args.end(), flags.begin(), flags.end());
  auto miss = cli(args);
  EXPECT_EQ(miss.code, 1);
  EXPECT_NE(miss.out.find("FAILED s01"), std::string::npos);
  EXPECT_EQ(server.hits.load(), 0);

  auto none = cli({"gen", "--corpus", (golden_dir() / "statements.jsonl").string(), "--offline", "--runs-dir", dir.path().string(),
                   "--cache", (dir / "absent.jsonl").string()});
  EXPECT_EQ(none.code, 2);
}

TEST_F(CliTest, UsageErrorsExitTwo) {
  TempDir dir;
  const auto corpus = (golden_dir() / "statements.jsonl").string();
  testing::SyntheticProvider provider(golden::script());
  const std::vector<std::string> base{"--runs-dir", dir.path().string(), "--cache", (dir / "c.jsonl").string()};
  auto run = [&](std::vector<std::string> args) {
    args.insert(args.end(), base.begin(), base.end());
    return cli(args, &provider);
  };
  EXPECT_EQ(run({"gen"}).code, 2);
  EXPECT_EQ(run({"recall", "--corpus", corpus, "--schedule", "2,1"}).code, 2);
  EXPECT_EQ(run({"recall", "--corpus", corpus, "--schedule", "2,x"}).code, 2);
  EXPECT_EQ(run({"gen", "--corpus", corpus, "--shots", "3"}).code, 2);
  EXPECT_EQ(run({"gen", "--corpus", corpus, "--task-type", "poetry"}).code, 2);
  EXPECT_EQ(run({"gen", "--corpus", (dir / "missing.csv").string()}).code, 2);
  EXPECT_EQ(run({"score", "--run", "nope"}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  EXPECT_EQ(run({"gen", "--corpus", corpus, "--no-such-flag"}).code, 2);
  EXPECT_EQ(provider.calls(), 0u);

  ASSERT_EQ(run({"gen", "--corpus", corpus, "--run-id", "once"}).code, 0);
  auto again = run({"gen", "--corpus", corpus, "--run-id", "once"});
  EXPECT_EQ(again.code, 2);
  EXPECT_NE(again.err.find("already exists"), std::string::npos);
  EXPECT_EQ(run({"report", "once"}).code, 2);  // not scored yet
  EXPECT_EQ(cli({"--help"}).code, 0);
}

TEST_F(CliTest, ConfigPrecedenceAndSources) {
  TempDir dir;
  std::ofstream(dir / "config.json") << R"({"model": "cfg-model", "temperature": 0.5, "top_p": 0.9, "shots": 1})";
  ::setenv("DIVEX_MODEL", "env-model", 1);
  ::setenv("DIVEX_EMBED_MODEL", "env-embed", 1);
  testing::SyntheticProvider provider(golden::script());
  auto gen = cli({"gen", "--corpus", (golden_dir() / "statements.jsonl").string(), "--config", (dir / "config.json").string(),
                  "--temperature", "0.7", "--runs-dir", dir.path().string(), "--run-id", "r", "--cache", (dir / "c.jsonl").string()},
                 &provider);
  ASSERT_EQ(gen.code, 0) << gen.err;
  const auto m = nlohmann::json::parse(read_text(dir / "r/manifest.json"));
  const auto& p = m.at("config").at("provider");
  EXPECT_EQ(p.at("model_id"), "cfg-model");
  EXPECT_DOUBLE_EQ(p.at("temperature").get<double>(), 0.7);
  EXPECT_DOUBLE_EQ(p.at("top_p").get<double>(), 0.9);
  EXPECT_EQ(p.at("max_tokens"), ProviderConfig{}.max_tokens);
  EXPECT_EQ(m.at("config").at("embedding").at("model_id"), "env-embed");
  const auto& src = m.at("config_sources");
  EXPECT_EQ(src.at("model"), "config");
  EXPECT_EQ(src.at("temperature"), "flag");
  EXPECT_EQ(src.at("embed_model"), "env");
  EXPECT_EQ(src.at("max_tokens"), "default");
  EXPECT_EQ(src.at("shots"), "config");

  // The manifest outranks the environment when scoring an existing run.
  ::setenv("DIVEX_EMBED_MODEL", "other-embed", 1);
  auto score = cli({"score", "--run", "r", "--runs-dir", dir.path().string(), "--metric", "semantic", "--cache",
                    (dir / "c.jsonl").string()},
                   &provider);
  ASSERT_EQ(score.code, 0) << score.err;
  const auto rep = nlohmann::json::parse(read_text(dir / "r/report.json"));
  EXPECT_EQ(rep.at("config").at("chat_model"), "cfg-model");
  EXPECT_EQ(rep.at("config").at("embedding_model"), "env-embed");

  std::ofstream(dir / "bad.json") << R"({"temperature": "hot"})";
  EXPECT_EQ(cli({"gen", "--corpus", (golden_dir() / "statements.jsonl").string(), "--config", (dir / "bad.json").string(), "--runs-dir",
                 dir.path().string()},
                &provider)
                .code,
            2);
}

TEST_F(CliTest, CacheStatsOnFixtures) {
  auto stats = cli({"cache", "stats", "--cache", (golden_dir() / "fixtures/chat.jsonl").string()});
  ASSERT_EQ(stats.code, 0);
  const auto lines = testing::read_jsonl_file(golden_dir() / "fixtures/chat.jsonl").size();
  EXPECT_NE(stats.out.find("entries: " + std::to_string(lines) + "\nchat: " + std::to_string(lines) + "\nembedding: 0\n"),
            std::string::npos);
}

}  // namespace
}  // namespace divex
