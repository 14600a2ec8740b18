#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <mutex>
#include <thread>

#include "llmfs/error.hpp"
#include "llmfs/llm_backend.hpp"
#include "llmfs/log.hpp"
#include "test_support.hpp"

// After Eigen: resolv.h, pulled in by httplib, defines a macro named _res.
#include <httplib.h>

using namespace llmfs;
using testing_support::TempDir;
using testing_support::write_file;

namespace {

ChatRequest simple(std::string user, int sample = 0, std::string system = "sys") {
  ChatRequest r;
  r.model_id = "m";
  if (!system.empty()) r.messages.push_back({"system", std::move(system)});
  r.messages.push_back({"user", std::move(user)});
  r.sample_index = sample;
  return r;
}

// Local OpenAI-style server answering from a status script.
class StubServer {
 public:
  explicit StubServer(std::vector<int> statuses) : statuses_(std::move(statuses)) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lock(mutex_);
      bodies_.push_back(req.body);
      auth_.push_back(req.get_header_value("Authorization"));
      const int status = hits_ < statuses_.size() ? statuses_[hits_] : 200;
      ++hits_;
      res.status = status;
      if (status == 200)
        res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"{\"score\": 0.4}"}}]})",
                        "application/json");
      else
        res.set_content("{\"error\":\"nope\"}", "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubServer() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }
  std::size_t hits() {
    std::lock_guard lock(mutex_);
    return hits_;
  }
  std::vector<std::string> bodies() {
    std::lock_guard lock(mutex_);
    return bodies_;
  }
  std::vector<std::string> auth() {
    std::lock_guard lock(mutex_);
    return auth_;
  }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::mutex mutex_;
  std::vector<int> statuses_;
  std::size_t hits_ = 0;
  std::vector<std::string> bodies_, auth_;
};

HttpBackendConfig stub_config(const StubServer& server) {
  HttpBackendConfig c;
  c.base_url = server.url();
  c.backend_id = "stub";
  c.api_key_env = "LLMFS_TEST_KEY";
  c.backoff_base = std::chrono::milliseconds(1);
  c.timeout = std::chrono::milliseconds(5000);
  return c;
}

}  // namespace

TEST(Request, Validation) {
  ChatRequest r;
  EXPECT_THROW(r.validate(), BackendError);
  r.messages = {{"user", "a"}, {"system", "s"}};
  EXPECT_THROW(r.validate(), BackendError);
  r.messages = {{"robot", "a"}};
  EXPECT_THROW(r.validate(), BackendError);
  r.messages = {{"user", "a"}};
  r.temperature = -1;
  EXPECT_THROW(r.validate(), BackendError);
}

TEST(Request, FromBundle) {
  PromptBundle b{"sys", "now", {{"u1", "a1"}}};
  const auto r = make_request(b, "m", 0.5, 2);
  ASSERT_EQ(r.messages.size(), 4u);
  EXPECT_EQ(r.messages[0].role, "system");
  EXPECT_EQ(r.messages[2].role, "assistant");
  EXPECT_EQ(r.messages[3].content, "now");
  EXPECT_EQ(r.sample_index, 2);
}

TEST(Decoding, Defaults) {
  const auto g = DecodingConfig::greedy();
  EXPECT_EQ(g.temperature, 0.0);
  const auto sc = DecodingConfig::self_consistency();
  EXPECT_EQ(sc.temperature, 0.5);
  EXPECT_EQ(sc.n_samples, 5);
  EXPECT_THROW((DecodingConfig{DecodingMode::greedy, 0.3, 1}.validate()), BackendError);
  EXPECT_THROW((DecodingConfig{DecodingMode::greedy, 0.0, 0}.validate()), BackendError);
}

TEST(Scripted, LookupVerbatimAndUnscripted) {
  ScriptedBackend backend;
  backend.add(std::string("sys"), "hello", {"{\"score\": 0.9}"});
  EXPECT_EQ(backend.chat(simple("hello")).text, "{\"score\": 0.9}");
  EXPECT_THROW(backend.chat(simple("hello", 0, "other")), UnscriptedRequestError);
  EXPECT_THROW(backend.chat(simple("bye")), UnscriptedRequestError);
  EXPECT_EQ(backend.calls(), 3u);
}

TEST(Scripted, PerSampleRepliesAndSubstring) {
  std::vector<ScriptedBackend::Entry> entries = {
      {std::nullopt, "Glucose", true, {"a", "b"}},
      {std::nullopt, "exact Glucose", false, {"z"}},
  };
  ScriptedBackend backend(entries);
  EXPECT_EQ(backend.chat(simple("about Glucose", 0)).text, "a");
  EXPECT_EQ(backend.chat(simple("about Glucose", 1)).text, "b");
  EXPECT_THROW(backend.chat(simple("about Glucose", 2)), UnscriptedRequestError);
  EXPECT_EQ(backend.chat(simple("exact Glucose")).text, "z");
}

TEST(Scripted, ResponderAndFile) {
  ScriptedBackend fn([](const ChatRequest& r) -> std::optional<std::string> {
    if (r.sample_index == 1) return "one";
    return std::nullopt;
  });
  EXPECT_EQ(fn.chat(simple("x", 1)).text, "one");
  EXPECT_THROW(fn.chat(simple("x", 0)), UnscriptedRequestError);

  TempDir dir;
  write_file(dir / "s.json",
             R"({"backend_id":"file","entries":[{"user":"q","reply":"r"},
                 {"user_contains":"part","replies":["p0","p1"]}]})");
  auto backend = ScriptedBackend::from_file(dir / "s.json");
  EXPECT_EQ(backend->id(), "file");
  EXPECT_EQ(backend->chat(simple("q")).text, "r");
  EXPECT_EQ(backend->chat(simple("a part b", 1)).text, "p1");
  write_file(dir / "bad.json", "{\"entries\":[{\"reply\":\"r\"}]}");
  EXPECT_THROW(ScriptedBackend::from_file(dir / "bad.json"), BackendError);
}

TEST(CacheKey, Canonical) {
  ChatRequest r;
  r.model_id = "m";
  r.messages = {{"user", "hi"}};
  // SHA-256 of {"backend_id":"b","messages":[{"content":"hi","role":"user"}],
  // "model_id":"m","sample_index":0,"temperature":0.0}, computed with hashlib.
  EXPECT_EQ(cache_key("b", r), "dff1f6baa416d34a9c91efda9463ebd2f0ffb2ada15410f3f991a36ba40703da");
}

TEST(CacheKey, FieldSensitivity) {
  const auto a = simple("hello");
  EXPECT_EQ(cache_key("x", a), cache_key("x", simple("hello")));
  EXPECT_NE(cache_key("x", a), cache_key("x", simple("hello", 1)));
  EXPECT_NE(cache_key("x", a), cache_key("y", a));
  auto hot = a;
  hot.temperature = 0.5;
  EXPECT_NE(cache_key("x", a), cache_key("x", hot));
  ChatRequest order1, order2;
  order1.messages = {{"user", "p"}, {"assistant", "q"}, {"user", "r"}};
  order2.messages = {{"user", "r"}, {"assistant", "q"}, {"user", "p"}};
  EXPECT_NE(cache_key("x", order1), cache_key("x", order2));
  EXPECT_EQ(cache_key("x", a).size(), 64u);
}

TEST(Cache, HitSkipsBackend) {
  TempDir dir;
  ScriptedBackend backend;
  backend.add(std::nullopt, "hello", {"reply text"});
  const auto first = cached_chat(backend, dir.path(), simple("hello"));
  EXPECT_FALSE(first.cached);
  EXPECT_TRUE(std::filesystem::exists(cache_path(dir.path(), cache_key(backend.id(), simple("hello")))));
  const auto second = cached_chat(backend, dir.path(), simple("hello"));
  EXPECT_TRUE(second.cached);
  EXPECT_EQ(second.text, first.text);
  EXPECT_EQ(backend.calls(), 1u);
  // Different sample index is a different request.
  cached_chat(backend, dir.path(), simple("hello", 1));
  EXPECT_EQ(backend.calls(), 2u);
}

TEST(Cache, CorruptEntryRefetches) {
  TempDir dir;
  ScriptedBackend backend;
  backend.add(std::nullopt, "hello", {"fresh"});
  const auto path = cache_path(dir.path(), cache_key(backend.id(), simple("hello")));
  std::filesystem::create_directories(path.parent_path());
  write_file(path, "{ not json");
  int warnings = 0;
  const auto old = set_warning_sink([&](std::string_view) { ++warnings; });
  const auto r = cached_chat(backend, dir.path(), simple("hello"));
  set_warning_sink(old);
  EXPECT_FALSE(r.cached);
  EXPECT_EQ(r.text, "fresh");
  EXPECT_EQ(warnings, 1);
  EXPECT_TRUE(cached_chat(backend, dir.path(), simple("hello")).cached);
  const auto stored = nlohmann::json::parse(testing_support::read_file(path));
  EXPECT_EQ(stored["response"]["text"], "fresh");
  EXPECT_TRUE(stored.contains("timestamp"));
  EXPECT_EQ(stored["request"]["messages"][1]["content"], "hello");
}

TEST(Http, BodyAndAuthorization) {
  StubServer server({200});
  ::setenv("LLMFS_TEST_KEY", "secret", 1);
  HttpBackend backend(stub_config(server));
  auto req = simple("hello");
  req.temperature = 0.5;
  EXPECT_EQ(backend.chat(req).text, "{\"score\": 0.4}");
  ::unsetenv("LLMFS_TEST_KEY");
  const auto body = nlohmann::json::parse(server.bodies().at(0));
  EXPECT_EQ(body["model"], "m");
  EXPECT_EQ(body["temperature"], 0.5);
  EXPECT_EQ(body["n"], 1);
  EXPECT_EQ(body["messages"][0]["role"], "system");
  EXPECT_EQ(body["messages"][1]["content"], "hello");
  EXPECT_EQ(server.auth().at(0), "Bearer secret");
}

TEST(Http, RetriesTransientFailures) {
  StubServer server({503, 429, 200});
  HttpBackend backend(stub_config(server));
  EXPECT_EQ(backend.chat(simple("x")).text, "{\"score\": 0.4}");
  EXPECT_EQ(server.hits(), 3u);
}

TEST(Http, GivesUpAfterRetries) {
  StubServer server({500, 500, 500, 500, 500});
  HttpBackend backend(stub_config(server));
  EXPECT_THROW(backend.chat(simple("x")), BackendError);
  EXPECT_EQ(server.hits(), 4u);
}

TEST(Http, ClientErrorIsNotRetried) {
  StubServer server({400});
  HttpBackend backend(stub_config(server));
  EXPECT_THROW(backend.chat(simple("x")), BackendError);
  EXPECT_EQ(server.hits(), 1u);
}

TEST(Http, ConnectionRefused) {
  int port = 0;
  {
    httplib::Server probe;
    port = probe.bind_to_any_port("127.0.0.1");
  }
  HttpBackendConfig c;
  c.base_url = "http://127.0.0.1:" + std::to_string(port);
  c.backoff_base = std::chrono::milliseconds(1);
  c.max_retries = 1;
  HttpBackend backend(c);
  EXPECT_THROW(backend.chat(simple("x")), BackendError);
}

TEST(Http, SamplesAreDistinctRequests) {
  StubServer server({});
  HttpBackend backend(stub_config(server));
  TempDir dir;
  cached_chat(backend, dir.path(), simple("x", 0));
  cached_chat(backend, dir.path(), simple("x", 1));
  cached_chat(backend, dir.path(), simple("x", 1));
  EXPECT_EQ(server.hits(), 2u);
}

TEST(Client, OrderAndBoundedParallelism) {
  std::atomic<int> in_flight{0}, peak{0};
  ScriptedBackend backend([&](const ChatRequest& r) -> std::optional<std::string> {
    const int now = ++in_flight;
    int seen = peak.load();
    while (now > seen && !peak.compare_exchange_weak(seen, now)) {}
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
    --in_flight;
    return "reply " + r.messages.back().content;
  });
  ChatClient client(backend, std::nullopt, 3);
  std::vector<ChatRequest> requests;
  for (int i = 0; i < 20; ++i) requests.push_back(simple(std::to_string(i)));
  const auto replies = client.chat_all(requests);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(replies[static_cast<std::size_t>(i)].text, "reply " + std::to_string(i));
  EXPECT_LE(peak.load(), 3);
  EXPECT_GE(peak.load(), 2);
}

TEST(Client, FailuresSurface) {
  ScriptedBackend backend;
  backend.add(std::nullopt, "ok", {"fine"});
  ChatClient client(backend, std::nullopt, 2);
  const std::vector<ChatRequest> requests = {simple("ok"), simple("missing")};
  EXPECT_THROW(client.chat_all(requests), UnscriptedRequestError);
  const auto mixed = client.try_chat_all(requests);
  EXPECT_TRUE(std::holds_alternative<ChatResponse>(mixed[0]));
  EXPECT_TRUE(std::holds_alternative<std::exception_ptr>(mixed[1]));
  EXPECT_THROW(ChatClient(backend, std::nullopt, 0), BackendError);
}

TEST(Client, CacheTransparency) {
  TempDir dir;
  ScriptedBackend backend;
  backend.add(std::nullopt, "q", {"deterministic answer"});
  ChatClient cached(backend, dir.path());
  ChatClient direct(backend);
  EXPECT_EQ(cached.chat(simple("q")).text, direct.chat(simple("q")).text);
  EXPECT_EQ(cached.chat(simple("q")).text, direct.chat(simple("q")).text);
}

TEST(Settings, FromJson) {
  const auto s = backend_settings_from_json(
      {{"kind", "http"}, {"model", "gpt-4"}, {"family", "gpt"}, {"base_url", "http://x:1/v1"},
       {"cache_dir", "cache"}, {"max_tokens", 256}, {"backoff_seconds", 0.5}},
      "/base");
  EXPECT_EQ(s.kind, "http");
  EXPECT_EQ(s.cache_dir.value(), std::filesystem::path("/base/cache"));
  EXPECT_EQ(s.http.max_tokens.value(), 256);
  EXPECT_EQ(s.http.backoff_base.count(), 500);
  EXPECT_EQ(s.http.max_retries, 3);
  EXPECT_THROW(backend_settings_from_json({{"kind", "http"}, {"model", "m"}, {"api_key", "k"}}),
               BackendError);
  EXPECT_THROW(backend_settings_from_json({{"kind", "carrier-pigeon"}}), BackendError);
  EXPECT_THROW(backend_settings_from_json({{"kind", "scripted"}}), BackendError);
  HttpBackendConfig cfg;
  cfg.max_tokens = 10;
  cfg.top_p = 0.9;
  const auto body = HttpBackend(cfg).request_body(simple("x"));
  EXPECT_EQ(body["max_tokens"], 10);
  EXPECT_EQ(body["top_p"], 0.9);
}
