#include "ratrec/llm_client.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <random>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "ratrec/mock_endpoint.hpp"

namespace ratrec::llm {

namespace {

constexpr std::string_view kMockScheme = "mock://";

bool retryable(int status) { return status == 0 || status == 408 || status == 429 || status >= 500; }

std::mutex& key_mutex(std::string_view hex_key) {
  static std::array<std::mutex, 64> stripes;
  const auto slot = std::stoul(std::string(hex_key.substr(0, 4)), nullptr, 16) % stripes.size();
  return stripes[slot];
}

json key_inputs(const EndpointConfig& config, const ChatRequest& request) {
  json messages = json::array();
  for (const auto& m : request.messages) {
    messages.push_back({{"role", m.role}, {"content", to_nfc(m.content)}});
  }
  return {{"model", config.model_name},
          {"temperature", config.temperature},
          {"max_tokens", config.max_tokens},
          {"messages", std::move(messages)},
          {"prefill", request.prefill ? json(to_nfc(*request.prefill)) : json(nullptr)}};
}

std::string with_prefill(const std::optional<std::string>& prefill, std::string text) {
  if (!prefill || text.starts_with(*prefill)) return text;
  return *prefill + text;
}

std::string describe(const HttpResponse& r) {
  if (r.status == 0) return "no response (" + (r.error.empty() ? std::string("connection failed") : r.error) + ")";
  std::string body = r.body.substr(0, 200);
  return "HTTP " + std::to_string(r.status) + (body.empty() ? "" : ": " + body);
}

double jitter_window(double base_s, std::size_t retry_index) {
  return base_s * std::ldexp(1.0, static_cast<int>(std::min<std::size_t>(retry_index, 30)));
}

double full_jitter(double window_s) {
  thread_local std::mt19937_64 rng{std::random_device{}()};
  std::uniform_real_distribution<double> dist(0.0, window_s);
  return dist(rng);
}

}  // namespace

void EndpointConfig::validate(std::string_view path) const {
  const std::string p(path);
  if (base_url.empty()) throw ConfigError(p + ".base_url", "must not be empty");
  if (model_name.empty()) throw ConfigError(p + ".model_name", "must not be empty");
  if (!(timeout_s > 0.0)) throw ConfigError(p + ".timeout_s", "must be > 0");
  if (max_in_flight < 1) throw ConfigError(p + ".max_in_flight", "must be >= 1");
  if (!(temperature >= 0.0)) throw ConfigError(p + ".temperature", "must be >= 0");
  if (max_tokens < 1) throw ConfigError(p + ".max_tokens", "must be >= 1");
  if (!(backoff_base_s >= 0.0)) throw ConfigError(p + ".backoff_base_s", "must be >= 0");
  const bool known_scheme = base_url.starts_with("http://") || base_url.starts_with("https://") ||
                            base_url.starts_with(kMockScheme);
  if (!known_scheme) throw ConfigError(p + ".base_url", "expected http://, https:// or mock:// URL");
}

json to_json(const EndpointConfig& c) {
  return {{"base_url", c.base_url},         {"model_name", c.model_name},
          {"api_key_env", c.api_key_env},   {"timeout_s", c.timeout_s},
          {"max_in_flight", c.max_in_flight}, {"max_retries", c.max_retries},
          {"temperature", c.temperature},   {"max_tokens", c.max_tokens},
          {"supports_prefill", c.supports_prefill}, {"backoff_base_s", c.backoff_base_s}};
}

EndpointConfig endpoint_from_json(const json& j, std::string_view path) {
  const std::string p(path);
  if (!j.is_object()) throw ConfigError(p, "expected an object");
  EndpointConfig c;
  auto field = [&](const char* key, auto& out) {
    auto it = j.find(key);
    if (it == j.end()) return;
    try {
      it->get_to(out);
    } catch (const json::exception&) {
      throw ConfigError(p + "." + key, "wrong type");
    }
  };
  auto count = [&](const char* key, std::size_t& out) {
    auto it = j.find(key);
    if (it == j.end()) return;
    if (!it->is_number_integer() || it->get<std::int64_t>() < 0) {
      throw ConfigError(p + "." + key, "must be a non-negative integer");
    }
    out = it->get<std::size_t>();
  };
  field("base_url", c.base_url);
  field("model_name", c.model_name);
  field("api_key_env", c.api_key_env);
  field("timeout_s", c.timeout_s);
  count("max_in_flight", c.max_in_flight);
  count("max_retries", c.max_retries);
  field("temperature", c.temperature);
  count("max_tokens", c.max_tokens);
  field("supports_prefill", c.supports_prefill);
  field("backoff_base_s", c.backoff_base_s);
  if (j.contains("api_key")) throw ConfigError(p + ".api_key", "API keys are read from environment variables only");
  c.validate(path);
  return c;
}

bool is_local_endpoint(std::string_view base_url) {
  if (base_url.starts_with(kMockScheme)) return true;
  for (std::string_view host : {"://localhost", "://127.0.0.1", "://[::1]"}) {
    const auto pos = base_url.find(host);
    if (pos != std::string_view::npos) {
      const auto after = pos + host.size();
      if (after == base_url.size() || base_url[after] == ':' || base_url[after] == '/') return true;
    }
  }
  return false;
}

HttpTransport::HttpTransport(std::string base_url) {
  const auto scheme_end = base_url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("base_url", "missing scheme in '" + base_url + "'");
  const auto path_start = base_url.find('/', scheme_end + 3);
  scheme_host_port_ = base_url.substr(0, path_start);
  path_ = path_start == std::string::npos ? std::string() : base_url.substr(path_start);
  while (!path_.empty() && path_.back() == '/') path_.pop_back();
  path_ += "/chat/completions";
}

HttpResponse HttpTransport::post_chat(const json& body, const std::optional<std::string>& bearer_token,
                                      double timeout_s) {
  httplib::Client client(scheme_host_port_);
  const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::duration<double>(timeout_s));
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  httplib::Headers headers;
  if (bearer_token) headers.emplace("Authorization", "Bearer " + *bearer_token);

  auto result = client.Post(path_, headers, body.dump(), "application/json");
  if (!result) return {0, {}, httplib::to_string(result.error())};
  return {result->status, result->body, {}};
}

std::shared_ptr<Transport> make_transport(const EndpointConfig& config) {
  if (config.base_url.starts_with(kMockScheme)) {
    const std::filesystem::path fixture = config.base_url.substr(kMockScheme.size());
    return std::make_shared<MockTransport>(ScriptedMock::from_jsonl(fixture));
  }
  return std::make_shared<HttpTransport>(config.base_url);
}

json build_request_body(const EndpointConfig& config, const ChatRequest& request) {
  json messages = json::array();
  for (const auto& m : request.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
  if (request.prefill) {
    if (config.supports_prefill) {
      messages.push_back({{"role", "assistant"}, {"content", *request.prefill}});
    } else {
      // Fold the prefill into the last user turn as an explicit instruction.
      for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
        if ((*it)["role"] == "user") {
          (*it)["content"] = (*it)["content"].get<std::string>() + "\n\nBegin your reply with \"" +
                             *request.prefill + "\".";
          break;
        }
      }
    }
  }
  return {{"model", config.model_name},
          {"messages", std::move(messages)},
          {"temperature", config.temperature},
          {"max_tokens", config.max_tokens}};
}

std::string cache_key(const EndpointConfig& config, const ChatRequest& request) {
  return sha256_hex(key_inputs(config, request).dump());
}

ChatClient::ChatClient(EndpointConfig config, std::shared_ptr<Transport> transport)
    : config_(std::move(config)), transport_(std::move(transport)) {
  config_.validate();
  sleeper_ = [](std::chrono::duration<double> d) { std::this_thread::sleep_for(d); };
}

std::optional<std::string> ChatClient::bearer_token() const {
  if (config_.api_key_env.empty()) return std::nullopt;
  if (const char* value = std::getenv(config_.api_key_env.c_str()); value != nullptr && *value != '\0') {
    return std::string(value);
  }
  if (!is_local_endpoint(config_.base_url)) {
    throw PreconditionError("API key environment variable " + config_.api_key_env + " is not set");
  }
  return std::nullopt;
}

ChatExchange ChatClient::complete(const ChatRequest& request) const {
  if (request.messages.empty()) throw PreconditionError("complete: messages must not be empty");
  const auto token = bearer_token();
  const json body = build_request_body(config_, request);

  ChatExchange exchange;
  exchange.request_messages = request.messages;
  exchange.prefill = request.prefill;
  exchange.prefill_emulated = request.prefill.has_value() && !config_.supports_prefill;

  HttpResponse last;
  for (std::size_t attempt = 1; attempt <= config_.max_retries + 1; ++attempt) {
    exchange.attempt_count = attempt;
    last = transport_->post_chat(body, token, config_.timeout_s);
    if (last.status >= 200 && last.status < 300) {
      json reply = json::parse(last.body, nullptr, false);
      const json* content = nullptr;
      if (reply.is_object() && reply.contains("choices") && reply["choices"].is_array() &&
          !reply["choices"].empty()) {
        const auto& choice = reply["choices"][0];
        if (choice.contains("message") && choice["message"].contains("content") &&
            choice["message"]["content"].is_string()) {
          content = &choice["message"]["content"];
        }
      }
      if (content == nullptr) {
        throw ProtocolError(last.status, "response has no choices[0].message.content: " + last.body.substr(0, 200));
      }
      exchange.response_text = with_prefill(request.prefill, content->get<std::string>());
      return exchange;
    }
    if (!retryable(last.status)) {
      throw ProtocolError(last.status, config_.model_name + ": " + describe(last));
    }
    if (attempt <= config_.max_retries) {
      const double wait = full_jitter(jitter_window(config_.backoff_base_s, attempt - 1));
      spdlog::debug("{}: {} (attempt {}), retrying in {:.3f}s", config_.model_name, describe(last), attempt, wait);
      sleeper_(std::chrono::duration<double>(wait));
    }
  }
  throw TransportError(last.status, config_.model_name + ": retries exhausted, last " + describe(last));
}

ChatExchange ChatClient::cached_complete(const ChatRequest& request, const std::filesystem::path& cache_dir) const {
  const json inputs = key_inputs(config_, request);
  const std::string key = sha256_hex(inputs.dump());
  const auto path = cache_dir / (key + ".json");

  std::lock_guard lock(key_mutex(key));
  std::error_code ec;
  if (std::filesystem::exists(path, ec)) {
    json entry = json::parse(read_file(path), nullptr, false);
    if (entry.is_object() && entry.value("key", json()) == inputs && entry.contains("response_text") &&
        entry["response_text"].is_string()) {
      ChatExchange exchange;
      exchange.request_messages = request.messages;
      exchange.prefill = request.prefill;
      exchange.response_text = entry["response_text"].get<std::string>();
      exchange.cached = true;
      exchange.attempt_count = 0;
      exchange.prefill_emulated = entry.value("prefill_emulated", false);
      return exchange;
    }
    spdlog::warn("corrupt cache entry {} ignored and will be rewritten", path.string());
  }

  ChatExchange exchange = complete(request);
  json entry = {{"key", inputs},
                {"response_text", exchange.response_text},
                {"prefill_emulated", exchange.prefill_emulated}};
  write_file_atomic(path, entry.dump());
  return exchange;
}

std::vector<SlotResult> ChatClient::batch_complete(std::span<const ChatRequest> requests,
                                                   const std::optional<std::filesystem::path>& cache_dir) const {
  std::vector<SlotResult> results(requests.size());
  if (requests.empty()) return results;

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < requests.size(); i = next.fetch_add(1)) {
      try {
        results[i].exchange = cache_dir ? cached_complete(requests[i], *cache_dir) : complete(requests[i]);
      } catch (const TransportError& e) {
        results[i].error = SlotError{e.category(), e.status(), e.what()};
      } catch (const ProtocolError& e) {
        results[i].error = SlotError{e.category(), e.status(), e.what()};
      } catch (const Error& e) {
        results[i].error = SlotError{e.category(), 0, e.what()};
      } catch (const std::exception& e) {
        results[i].error = SlotError{Error::Category::Io, 0, e.what()};
      }
    }
  };

  const std::size_t workers = std::min(config_.max_in_flight, requests.size());
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  return results;
}

}  // namespace ratrec::llm
