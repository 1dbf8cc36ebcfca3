#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ratrec/error.hpp"
#include "ratrec/util.hpp"

namespace ratrec::llm {

/// Connection and sampling settings for one OpenAI-compatible endpoint.
/// base_url may also be "mock://<fixture.jsonl>" for the in-process scripted endpoint.
struct EndpointConfig {
  std::string base_url;
  std::string model_name;
  std::string api_key_env;  // empty: no Authorization header
  double timeout_s = 60.0;
  std::size_t max_in_flight = 4;
  std::size_t max_retries = 3;
  double temperature = 0.0;
  std::size_t max_tokens = 1024;
  /// Whether the server continues a trailing assistant message. When false the
  /// prefill is requested in the last user turn instead.
  bool supports_prefill = true;
  /// First backoff window; doubles per attempt, full jitter.
  double backoff_base_s = 1.0;

  /// Throws ConfigError naming path + the offending field.
  void validate(std::string_view path = "endpoint") const;
};

inline constexpr double kAnnotationTemperature = 0.7;
inline constexpr double kInferenceTemperature = 0.0;
inline constexpr double kJudgeTemperature = 0.0;

json to_json(const EndpointConfig& config);

/// Missing keys take the struct defaults; the result is validated.
EndpointConfig endpoint_from_json(const json& j, std::string_view path = "endpoint");

struct Message {
  std::string role;
  std::string content;
  bool operator==(const Message&) const = default;
};

using Messages = std::vector<Message>;

struct ChatRequest {
  Messages messages;
  std::optional<std::string> prefill;
};

struct ChatExchange {
  Messages request_messages;
  std::optional<std::string> prefill;
  std::string response_text;  // prefill included when one was requested
  bool cached = false;
  std::size_t attempt_count = 0;
  bool prefill_emulated = false;
};

struct SlotError {
  Error::Category category = Error::Category::Transport;
  int status = 0;
  std::string message;
};

/// One batch slot: exactly one of exchange / error is set.
struct SlotResult {
  std::optional<ChatExchange> exchange;
  std::optional<SlotError> error;

  bool ok() const { return exchange.has_value(); }
};

struct HttpResponse {
  int status = 0;  // 0: no response (connection failure or timeout)
  std::string body;
  std::string error;
};

/// Moves one chat-completions request body to an endpoint.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResponse post_chat(const json& body, const std::optional<std::string>& bearer_token,
                                 double timeout_s) = 0;
};

/// HTTP(S) transport for base URLs such as "http://127.0.0.1:8000/v1".
class HttpTransport final : public Transport {
 public:
  explicit HttpTransport(std::string base_url);
  HttpResponse post_chat(const json& body, const std::optional<std::string>& bearer_token,
                         double timeout_s) override;

 private:
  std::string scheme_host_port_;
  std::string path_;
};

/// HttpTransport for http(s) URLs, a scripted mock for mock:// URLs.
std::shared_ptr<Transport> make_transport(const EndpointConfig& config);

/// Wire body sent for a request (prefill folded in per supports_prefill).
json build_request_body(const EndpointConfig& config, const ChatRequest& request);

/// SHA-256 over model, temperature, max_tokens, NFC messages and prefill.
std::string cache_key(const EndpointConfig& config, const ChatRequest& request);

using Sleeper = std::function<void(std::chrono::duration<double>)>;

/// Chat client over one endpoint. Safe to share across threads.
class ChatClient {
 public:
  ChatClient(EndpointConfig config, std::shared_ptr<Transport> transport);

  /// Throws TransportError once retries are exhausted, ProtocolError on non-retryable replies.
  ChatExchange complete(const ChatRequest& request) const;

  /// complete() behind a one-file-per-key response cache.
  ChatExchange cached_complete(const ChatRequest& request, const std::filesystem::path& cache_dir) const;

  /// Results in input order; at most max_in_flight requests run at once; failures stay in-slot.
  std::vector<SlotResult> batch_complete(std::span<const ChatRequest> requests,
                                         const std::optional<std::filesystem::path>& cache_dir) const;

  const EndpointConfig& config() const { return config_; }

  /// Replaces the backoff sleep (tests use a no-op).
  void set_sleeper(Sleeper sleeper) { sleeper_ = std::move(sleeper); }

 private:
  std::optional<std::string> bearer_token() const;

  EndpointConfig config_;
  std::shared_ptr<Transport> transport_;
  Sleeper sleeper_;
};

/// True for loopback hosts and mock:// URLs, which need no API key.
bool is_local_endpoint(std::string_view base_url);

}  // namespace ratrec::llm
