#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "ratrec/llm_client.hpp"

namespace httplib {
class Server;
}

namespace ratrec::llm {

struct MockReply {
  int status = 200;  // 0 simulates a dropped connection
  std::string content;
  double delay_s = 0.0;
};

/// Replies are consumed in order; the last one repeats once the list is exhausted.
struct MockRule {
  std::optional<std::string> match;  // substring of the joined message contents; absent matches all
  std::vector<MockReply> replies;
};

/// Scripted OpenAI-compatible endpoint logic with call instrumentation.
///
/// Fixture lines look like
///   {"match": "beanie", "content": "<think>r</think><item>t</item>"}
///   {"match": "x", "replies": [{"status": 429}, {"content": "ok"}], "delay_ms": 5}
/// The first rule whose pattern occurs in the request wins.
class ScriptedMock {
 public:
  using Handler = std::function<MockReply(const json& request_body)>;

  explicit ScriptedMock(std::vector<MockRule> rules);
  explicit ScriptedMock(Handler handler);

  static std::shared_ptr<ScriptedMock> from_jsonl(const std::filesystem::path& path);
  static MockRule rule_from_json(const json& j);

  /// Picks the scripted reply without instrumentation or delay.
  MockReply respond(const json& request_body);

  /// respond() plus call recording, in-flight tracking and the scripted delay.
  MockReply handle(const json& request_body);

  /// Chat-completions response body for a successful reply.
  static json completion_body(const std::string& model, const std::string& content);

  // Instrumentation -----------------------------------------------------------
  std::size_t call_count() const;
  std::size_t peak_in_flight() const { return peak_in_flight_.load(); }
  std::vector<json> requests() const;

  /// Largest number of recorded [start, end) call intervals overlapping at one instant.
  std::size_t max_interval_overlap() const;

 private:
  using Clock = std::chrono::steady_clock;
  struct Interval {
    Clock::time_point start;
    Clock::time_point end;
  };

  std::vector<MockRule> rules_;
  std::vector<std::size_t> cursors_;
  Handler handler_;

  mutable std::mutex mu_;
  std::vector<json> requests_;
  std::vector<Interval> intervals_;
  std::atomic<std::size_t> in_flight_{0};
  std::atomic<std::size_t> peak_in_flight_{0};
};

/// In-process transport over a ScriptedMock.
class MockTransport final : public Transport {
 public:
  explicit MockTransport(std::shared_ptr<ScriptedMock> mock) : mock_(std::move(mock)) {}
  HttpResponse post_chat(const json& body, const std::optional<std::string>& bearer_token,
                         double timeout_s) override;

  ScriptedMock& mock() { return *mock_; }

 private:
  std::shared_ptr<ScriptedMock> mock_;
};

/// Serves a ScriptedMock over HTTP on 127.0.0.1 at POST /chat/completions and /v1/chat/completions.
class MockServer {
 public:
  explicit MockServer(std::shared_ptr<ScriptedMock> mock);
  ~MockServer();
  MockServer(const MockServer&) = delete;
  MockServer& operator=(const MockServer&) = delete;

  /// Binds (port 0 picks a free port) and serves on a background thread; returns the port.
  int start(int port = 0);
  /// Serves on the calling thread until stop().
  void listen_blocking(const std::string& host, int port);
  void stop();

  int port() const { return port_; }
  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  /// Authorization header values seen, in arrival order.
  std::vector<std::string> authorizations() const;

 private:
  void install_routes();

  std::shared_ptr<ScriptedMock> mock_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
  mutable std::mutex mu_;
  std::vector<std::string> authorizations_;
};

}  // namespace ratrec::llm
