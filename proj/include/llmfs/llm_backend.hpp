#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "llmfs/prompting.hpp"

namespace llmfs {

struct ChatMessage {
  std::string role;  ///< "system", "user" or "assistant"
  std::string content;
};

struct ChatRequest {
  std::string model_id;
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  int sample_index = 0;

  /// Throws BackendError on an empty message list, an unknown role, a system
  /// message that is not first, or a negative temperature or sample index.
  void validate() const;
};

/// System message (if any), history turns, then the current user turn.
ChatRequest make_request(const PromptBundle& bundle, std::string model_id, double temperature,
                         int sample_index);

nlohmann::json to_json(const ChatRequest& request);

struct ChatResponse {
  std::string text;
  std::string backend_id;
  bool cached = false;
};

enum class DecodingMode { greedy, self_consistency };

struct DecodingConfig {
  DecodingMode mode = DecodingMode::greedy;
  double temperature = 0.0;
  int n_samples = 1;

  static DecodingConfig greedy(int n_samples = 1);
  static DecodingConfig self_consistency(int n_samples = 5, double temperature = 0.5);
  void validate() const;
};

std::string to_string(DecodingMode mode);
DecodingMode parse_decoding_mode(std::string_view text);

/// Chat-completion endpoint. Implementations must be safe to call from
/// several threads at once.
class ChatBackend {
 public:
  virtual ~ChatBackend() = default;

  ChatResponse chat(const ChatRequest& request);
  virtual std::string id() const = 0;
  /// Requests that reached the backend (cache hits excluded).
  std::size_t calls() const { return calls_.load(); }

 protected:
  virtual std::string complete(const ChatRequest& request) = 0;

 private:
  std::atomic<std::size_t> calls_{0};
};

/// Replies looked up from a table. Entries match on the exact system and
/// last user message; an entry may leave the system out (matches any) or
/// match the user text by substring. `replies` are indexed by sample index;
/// a single reply serves every sample.
class ScriptedBackend : public ChatBackend {
 public:
  struct Entry {
    std::optional<std::string> system;
    std::string user;
    bool user_is_substring = false;
    std::vector<std::string> replies;
  };
  using Responder = std::function<std::optional<std::string>(const ChatRequest&)>;

  explicit ScriptedBackend(std::string backend_id = "scripted");
  ScriptedBackend(std::vector<Entry> entries, std::string backend_id = "scripted");
  /// Falls back to `responder` when no entry matches.
  ScriptedBackend(Responder responder, std::string backend_id = "scripted");

  static std::unique_ptr<ScriptedBackend> from_file(const std::filesystem::path& path);

  void add(std::optional<std::string> system, std::string user, std::vector<std::string> replies);
  std::string id() const override { return id_; }

 protected:
  std::string complete(const ChatRequest& request) override;

 private:
  std::string id_;
  std::vector<Entry> entries_;
  Responder responder_;
};

struct HttpBackendConfig {
  std::string base_url = "https://api.openai.com/v1";
  std::string api_key_env = "OPENAI_API_KEY";
  std::string backend_id = "openai";
  std::chrono::milliseconds timeout{60000};
  int max_retries = 3;
  std::chrono::milliseconds backoff_base{1000};  ///< doubled after each retry
  std::optional<int> max_tokens;
  std::optional<double> top_p;
};

/// OpenAI-compatible POST {base_url}/chat/completions. Retries 429, 5xx
/// and transport failures; other statuses fail at once.
class HttpBackend : public ChatBackend {
 public:
  explicit HttpBackend(HttpBackendConfig config);
  std::string id() const override { return config_.backend_id; }

  /// Request body as sent over the wire.
  nlohmann::json request_body(const ChatRequest& request) const;

 protected:
  std::string complete(const ChatRequest& request) override;

 private:
  HttpBackendConfig config_;
  std::string scheme_host_port_;
  std::string path_prefix_;
};

/// Lower-case hex SHA-256 digest.
std::string sha256_hex(std::string_view data);

/// SHA-256 of the canonical JSON of {backend_id, model_id, messages,
/// temperature, sample_index}, lower-case hex.
std::string cache_key(std::string_view backend_id, const ChatRequest& request);

std::filesystem::path cache_path(const std::filesystem::path& cache_dir, std::string_view key);

/// Cache hit returns the stored text with cached=true and skips the backend.
/// An unreadable entry counts as a miss and logs a warning.
ChatResponse cached_chat(ChatBackend& backend, const std::filesystem::path& cache_dir,
                         const ChatRequest& request);

/// Backend plus optional cache and a cap on concurrent requests.
class ChatClient {
 public:
  ChatClient(ChatBackend& backend, std::optional<std::filesystem::path> cache_dir = std::nullopt,
             std::size_t max_in_flight = 4);

  ChatResponse chat(const ChatRequest& request);
  /// Results in request order; the first failure (by index) is rethrown
  /// after all workers finish.
  std::vector<ChatResponse> chat_all(const std::vector<ChatRequest>& requests);
  /// Like chat_all but keeps failures as exceptions instead of throwing.
  std::vector<std::variant<ChatResponse, std::exception_ptr>> try_chat_all(
      const std::vector<ChatRequest>& requests);

  ChatBackend& backend() { return backend_; }
  std::size_t max_in_flight() const { return max_in_flight_; }

  struct Usage {
    std::size_t requests = 0;
    std::size_t cache_hits = 0;
    std::vector<std::string> cache_keys;  ///< sorted, unique; empty without a cache
  };
  Usage usage() const;

 private:
  ChatBackend& backend_;
  std::optional<std::filesystem::path> cache_dir_;
  std::size_t max_in_flight_;
  mutable std::mutex usage_mu_;
  std::size_t requests_ = 0;
  std::size_t cache_hits_ = 0;
  std::set<std::string> keys_;
};

/// Backend settings as read from a JSON config file.
struct BackendSettings {
  std::string kind = "scripted";  ///< "scripted" or "http"
  std::string model_id = "scripted";
  ModelFamily family = ModelFamily::gpt;
  std::optional<std::filesystem::path> script;
  std::optional<std::filesystem::path> cache_dir;
  std::size_t max_in_flight = 4;
  HttpBackendConfig http;
};

/// Relative paths are resolved against `base_dir`.
BackendSettings backend_settings_from_json(const nlohmann::json& doc,
                                           const std::filesystem::path& base_dir = {});
std::unique_ptr<ChatBackend> make_backend(const BackendSettings& settings);

}  // namespace llmfs
