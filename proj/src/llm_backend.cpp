#include "llmfs/llm_backend.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>
#include <variant>

#include <unistd.h>

#include <httplib.h>
#include <fmt/format.h>
#include <openssl/evp.h>

#include "llmfs/error.hpp"
#include "llmfs/log.hpp"

namespace llmfs {

namespace fs = std::filesystem;

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &length, EVP_sha256(), nullptr) != 1)
    throw BackendError("SHA-256 computation failed");
  std::string out;
  out.reserve(2 * length);
  for (unsigned int i = 0; i < length; ++i) out += fmt::format("{:02x}", digest[i]);
  return out;
}

namespace {

const std::string& last_user(const ChatRequest& r) {
  for (auto it = r.messages.rbegin(); it != r.messages.rend(); ++it)
    if (it->role == "user") return it->content;
  throw BackendError("request has no user message");
}

const std::string* system_of(const ChatRequest& r) {
  return !r.messages.empty() && r.messages.front().role == "system" ? &r.messages.front().content
                                                                    : nullptr;
}

std::string iso_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string unique_suffix() {
  static std::atomic<unsigned long> counter{0};
  std::random_device rd;
  return fmt::format("{}.{:x}.{}", ::getpid(), rd(), counter++);
}

}  // namespace

void ChatRequest::validate() const {
  if (messages.empty()) throw BackendError("chat request has no messages");
  for (std::size_t i = 0; i < messages.size(); ++i) {
    const auto& role = messages[i].role;
    if (role != "system" && role != "user" && role != "assistant")
      throw BackendError(fmt::format("unknown message role \"{}\"", role));
    if (role == "system" && i != 0) throw BackendError("system message must come first");
  }
  if (!(temperature >= 0.0)) throw BackendError("temperature must be non-negative");
  if (sample_index < 0) throw BackendError("sample index must be non-negative");
}

ChatRequest make_request(const PromptBundle& bundle, std::string model_id, double temperature,
                         int sample_index) {
  ChatRequest r;
  r.model_id = std::move(model_id);
  r.temperature = temperature;
  r.sample_index = sample_index;
  if (!bundle.system.empty()) r.messages.push_back({"system", bundle.system});
  for (const auto& turn : bundle.history) {
    r.messages.push_back({"user", turn.user});
    r.messages.push_back({"assistant", turn.assistant});
  }
  r.messages.push_back({"user", bundle.user});
  return r;
}

nlohmann::json to_json(const ChatRequest& request) {
  nlohmann::json messages = nlohmann::json::array();
  for (const auto& m : request.messages)
    messages.push_back({{"role", m.role}, {"content", m.content}});
  return {{"model_id", request.model_id},
          {"messages", messages},
          {"temperature", request.temperature},
          {"sample_index", request.sample_index}};
}

DecodingConfig DecodingConfig::greedy(int n_samples) {
  return {DecodingMode::greedy, 0.0, n_samples};
}

DecodingConfig DecodingConfig::self_consistency(int n_samples, double temperature) {
  return {DecodingMode::self_consistency, temperature, n_samples};
}

void DecodingConfig::validate() const {
  if (n_samples < 1) throw BackendError("decoding needs at least one sample");
  if (mode == DecodingMode::greedy && temperature != 0.0)
    throw BackendError("greedy decoding uses temperature 0");
  if (!(temperature >= 0.0)) throw BackendError("temperature must be non-negative");
}

std::string to_string(DecodingMode mode) {
  return mode == DecodingMode::greedy ? "greedy" : "self_consistency";
}

DecodingMode parse_decoding_mode(std::string_view text) {
  if (text == "greedy") return DecodingMode::greedy;
  if (text == "self_consistency") return DecodingMode::self_consistency;
  throw BackendError(fmt::format("unknown decoding mode \"{}\"", text));
}

ChatResponse ChatBackend::chat(const ChatRequest& request) {
  request.validate();
  ++calls_;
  ChatResponse out;
  out.text = complete(request);
  out.backend_id = id();
  if (out.text.empty()) throw BackendError(fmt::format("{} returned an empty reply", id()));
  return out;
}

// ---- Scripted ----

ScriptedBackend::ScriptedBackend(std::string backend_id) : id_(std::move(backend_id)) {}

ScriptedBackend::ScriptedBackend(std::vector<Entry> entries, std::string backend_id)
    : id_(std::move(backend_id)), entries_(std::move(entries)) {}

ScriptedBackend::ScriptedBackend(Responder responder, std::string backend_id)
    : id_(std::move(backend_id)), responder_(std::move(responder)) {}

void ScriptedBackend::add(std::optional<std::string> system, std::string user,
                          std::vector<std::string> replies) {
  entries_.push_back({std::move(system), std::move(user), false, std::move(replies)});
}

std::unique_ptr<ScriptedBackend> ScriptedBackend::from_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw BackendError(fmt::format("cannot open script {}", path.string()));
  try {
    const auto doc = nlohmann::json::parse(in);
    std::vector<Entry> entries;
    for (const auto& e : doc.at("entries")) {
      Entry entry;
      if (e.contains("system")) entry.system = e["system"].get<std::string>();
      if (e.contains("user_contains")) {
        entry.user = e["user_contains"].get<std::string>();
        entry.user_is_substring = true;
      } else {
        entry.user = e.at("user").get<std::string>();
      }
      if (e.contains("replies")) entry.replies = e["replies"].get<std::vector<std::string>>();
      else entry.replies.push_back(e.at("reply").get<std::string>());
      if (entry.replies.empty()) throw BackendError("script entry without replies");
      entries.push_back(std::move(entry));
    }
    return std::make_unique<ScriptedBackend>(std::move(entries),
                                             doc.value("backend_id", std::string("scripted")));
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::string ScriptedBackend::complete(const ChatRequest& request) {
  const std::string& user = last_user(request);
  const std::string* system = system_of(request);
  const auto pick = [&](const Entry& e) -> std::string {
    if (e.replies.size() == 1) return e.replies.front();
    if (static_cast<std::size_t>(request.sample_index) >= e.replies.size())
      throw UnscriptedRequestError(
          fmt::format("unscripted request: no reply for sample {}", request.sample_index));
    return e.replies[static_cast<std::size_t>(request.sample_index)];
  };
  const auto system_ok = [&](const Entry& e) {
    return !e.system || (system && *system == *e.system);
  };
  for (const auto& e : entries_)
    if (!e.user_is_substring && e.user == user && system_ok(e)) return pick(e);
  for (const auto& e : entries_)
    if (e.user_is_substring && user.find(e.user) != std::string::npos && system_ok(e)) return pick(e);
  if (responder_)
    if (auto reply = responder_(request)) return *reply;
  throw UnscriptedRequestError(fmt::format("unscripted request: user message \"{}\"",
                                           user.size() > 120 ? user.substr(0, 120) + "..." : user));
}

// ---- HTTP ----

HttpBackend::HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
  const auto scheme_end = config_.base_url.find("://");
  if (scheme_end == std::string::npos)
    throw BackendError(fmt::format("base URL \"{}\" has no scheme", config_.base_url));
  const auto path_start = config_.base_url.find('/', scheme_end + 3);
  scheme_host_port_ = config_.base_url.substr(0, path_start);
  path_prefix_ = path_start == std::string::npos ? "" : config_.base_url.substr(path_start);
  while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
  if (config_.max_retries < 0) throw BackendError("max_retries must be non-negative");
}

nlohmann::json HttpBackend::request_body(const ChatRequest& request) const {
  nlohmann::json messages = nlohmann::json::array();
  for (const auto& m : request.messages)
    messages.push_back({{"role", m.role}, {"content", m.content}});
  nlohmann::json body = {{"model", request.model_id},
                         {"messages", messages},
                         {"temperature", request.temperature},
                         {"n", 1}};
  if (config_.max_tokens) body["max_tokens"] = *config_.max_tokens;
  if (config_.top_p) body["top_p"] = *config_.top_p;
  return body;
}

std::string HttpBackend::complete(const ChatRequest& request) {
  httplib::Headers headers;
  if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key)
    headers.emplace("Authorization", std::string("Bearer ") + key);
  const std::string body = request_body(request).dump();
  const std::string path = path_prefix_ + "/chat/completions";

  std::string last_error;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(config_.backoff_base * (1 << (attempt - 1)));
    httplib::Client client(scheme_host_port_);
    const auto seconds = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
    const auto micros = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - seconds);
    client.set_connection_timeout(seconds.count(), micros.count());
    client.set_read_timeout(seconds.count(), micros.count());
    client.set_write_timeout(seconds.count(), micros.count());
    const auto res = client.Post(path, headers, body, "application/json");
    if (!res) {
      last_error = fmt::format("transport error: {}", httplib::to_string(res.error()));
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = fmt::format("HTTP {}", res->status);
      continue;
    }
    if (res->status < 200 || res->status >= 300)
      throw BackendError(fmt::format("{} answered HTTP {}: {}", config_.backend_id, res->status,
                                     res->body.substr(0, 300)));
    try {
      const auto doc = nlohmann::json::parse(res->body);
      return doc.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw BackendError(fmt::format("malformed completion from {}: {}", config_.backend_id, e.what()));
    }
  }
  throw BackendError(fmt::format("{} failed after {} attempts ({})", config_.backend_id,
                                 config_.max_retries + 1, last_error));
}

// ---- Cache ----

std::string cache_key(std::string_view backend_id, const ChatRequest& request) {
  auto doc = to_json(request);
  doc["backend_id"] = std::string(backend_id);
  // nlohmann objects keep keys sorted; dump() emits no extra whitespace.
  return sha256_hex(doc.dump(-1, ' ', false, nlohmann::json::error_handler_t::strict));
}

fs::path cache_path(const fs::path& cache_dir, std::string_view key) {
  return cache_dir / std::string(key.substr(0, 2)) / (std::string(key) + ".json");
}

ChatResponse cached_chat(ChatBackend& backend, const fs::path& cache_dir,
                         const ChatRequest& request) {
  request.validate();
  const std::string key = cache_key(backend.id(), request);
  const fs::path path = cache_path(cache_dir, key);
  std::error_code ec;
  if (fs::exists(path, ec)) {
    std::ifstream in(path);
    const auto doc = nlohmann::json::parse(in, nullptr, false);
    if (!doc.is_discarded() && doc.is_object() && doc.contains("response") &&
        doc["response"].contains("text") && doc["response"]["text"].is_string() &&
        !doc["response"]["text"].get<std::string>().empty()) {
      ChatResponse out;
      out.text = doc["response"]["text"].get<std::string>();
      out.backend_id = doc["response"].value("backend_id", backend.id());
      out.cached = true;
      return out;
    }
    warn(fmt::format("cache entry {} is unreadable; fetching again", path.string()));
  }

  ChatResponse response = backend.chat(request);
  const nlohmann::json entry = {
      {"request", to_json(request)},
      {"response", {{"text", response.text}, {"backend_id", response.backend_id}}},
      {"timestamp", iso_timestamp()}};
  fs::create_directories(path.parent_path(), ec);
  if (ec) throw BackendError(fmt::format("cannot create cache directory {}: {}",
                                         path.parent_path().string(), ec.message()));
  const fs::path tmp = path.string() + ".tmp." + unique_suffix();
  {
    std::ofstream out(tmp, std::ios::binary);
    out << entry.dump(2);
    if (!out) throw BackendError(fmt::format("cannot write cache file {}", tmp.string()));
  }
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw BackendError(fmt::format("cannot move cache file into place at {}", path.string()));
  }
  return response;
}

// ---- Client ----

ChatClient::ChatClient(ChatBackend& backend, std::optional<fs::path> cache_dir,
                       std::size_t max_in_flight)
    : backend_(backend), cache_dir_(std::move(cache_dir)), max_in_flight_(max_in_flight) {
  if (max_in_flight_ == 0) throw BackendError("max_in_flight must be at least 1");
}

ChatResponse ChatClient::chat(const ChatRequest& request) {
  if (!cache_dir_) {
    auto response = backend_.chat(request);
    std::lock_guard lock(usage_mu_);
    ++requests_;
    return response;
  }
  auto response = cached_chat(backend_, *cache_dir_, request);
  const auto key = cache_key(backend_.id(), request);
  std::lock_guard lock(usage_mu_);
  ++requests_;
  if (response.cached) ++cache_hits_;
  keys_.insert(key);
  return response;
}

ChatClient::Usage ChatClient::usage() const {
  std::lock_guard lock(usage_mu_);
  return {requests_, cache_hits_, {keys_.begin(), keys_.end()}};
}

std::vector<std::variant<ChatResponse, std::exception_ptr>> ChatClient::try_chat_all(
    const std::vector<ChatRequest>& requests) {
  std::vector<std::variant<ChatResponse, std::exception_ptr>> out(requests.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < requests.size(); i = next++) {
      try {
        out[i] = chat(requests[i]);
      } catch (...) {
        out[i] = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::min(max_in_flight_, requests.size());
  if (workers <= 1) {
    worker();
    return out;
  }
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  pool.clear();
  return out;
}

std::vector<ChatResponse> ChatClient::chat_all(const std::vector<ChatRequest>& requests) {
  auto results = try_chat_all(requests);
  std::vector<ChatResponse> out;
  out.reserve(results.size());
  for (auto& r : results) {
    if (auto* e = std::get_if<std::exception_ptr>(&r)) std::rethrow_exception(*e);
    out.push_back(std::move(std::get<ChatResponse>(r)));
  }
  return out;
}

// ---- Settings ----

BackendSettings backend_settings_from_json(const nlohmann::json& doc, const fs::path& base_dir) {
  const auto resolve = [&](const std::string& p) {
    fs::path path(p);
    return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
  };
  BackendSettings s;
  try {
    s.kind = doc.value("kind", s.kind);
    if (s.kind != "scripted" && s.kind != "http")
      throw BackendError(fmt::format("unknown backend kind \"{}\"", s.kind));
    s.model_id = doc.value("model", s.kind == "http" ? std::string() : s.model_id);
    if (s.model_id.empty()) throw BackendError("http backend needs a \"model\"");
    s.family = parse_model_family(doc.value("family", std::string("gpt")));
    if (doc.contains("script")) s.script = resolve(doc["script"].get<std::string>());
    if (doc.contains("cache_dir")) s.cache_dir = resolve(doc["cache_dir"].get<std::string>());
    s.max_in_flight = doc.value("max_in_flight", s.max_in_flight);
    auto& h = s.http;
    h.base_url = doc.value("base_url", h.base_url);
    h.api_key_env = doc.value("api_key_env", h.api_key_env);
    h.backend_id = doc.value("backend_id", s.kind == "http" ? h.backend_id : std::string("scripted"));
    h.timeout = std::chrono::milliseconds(
        static_cast<long>(1000.0 * doc.value("timeout_seconds", h.timeout.count() / 1000.0)));
    h.max_retries = doc.value("max_retries", h.max_retries);
    h.backoff_base = std::chrono::milliseconds(
        static_cast<long>(1000.0 * doc.value("backoff_seconds", h.backoff_base.count() / 1000.0)));
    if (doc.contains("max_tokens")) h.max_tokens = doc["max_tokens"].get<int>();
    if (doc.contains("top_p")) h.top_p = doc["top_p"].get<double>();
    if (doc.contains("api_key"))
      throw BackendError("put the API key in the environment variable named by api_key_env, not in the config");
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(fmt::format("backend config: {}", e.what()));
  }
  if (s.kind == "scripted" && !s.script)
    throw BackendError("scripted backend needs a \"script\" file");
  return s;
}

std::unique_ptr<ChatBackend> make_backend(const BackendSettings& settings) {
  if (settings.kind == "http") return std::make_unique<HttpBackend>(settings.http);
  return ScriptedBackend::from_file(settings.script.value());
}

}  // namespace llmfs
