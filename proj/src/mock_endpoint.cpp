#include "ratrec/mock_endpoint.hpp"

#include <algorithm>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "ratrec/error.hpp"

namespace ratrec::llm {

namespace {

std::string joined_contents(const json& body) {
  std::string out;
  if (!body.contains("messages") || !body["messages"].is_array()) return out;
  for (const auto& m : body["messages"]) {
    if (m.contains("content") && m["content"].is_string()) {
      if (!out.empty()) out.push_back('\n');
      out += m["content"].get<std::string>();
    }
  }
  return out;
}

MockReply reply_from_json(const json& j, double default_delay_s) {
  MockReply r;
  r.status = j.value("status", 200);
  r.content = j.value("content", std::string());
  r.delay_s = j.contains("delay_ms") ? j["delay_ms"].get<double>() / 1000.0 : default_delay_s;
  return r;
}

}  // namespace

ScriptedMock::ScriptedMock(std::vector<MockRule> rules) : rules_(std::move(rules)), cursors_(rules_.size(), 0) {}

ScriptedMock::ScriptedMock(Handler handler) : handler_(std::move(handler)) {}

MockRule ScriptedMock::rule_from_json(const json& j) {
  if (!j.is_object()) throw FormatError("mock rule must be an object");
  MockRule rule;
  if (j.contains("match")) rule.match = j["match"].get<std::string>();
  const double delay = j.contains("delay_ms") ? j["delay_ms"].get<double>() / 1000.0 : 0.0;
  if (j.contains("replies")) {
    for (const auto& r : j["replies"]) rule.replies.push_back(reply_from_json(r, delay));
  } else {
    rule.replies.push_back(reply_from_json(j, delay));
  }
  if (rule.replies.empty()) throw FormatError("mock rule has no replies");
  return rule;
}

std::shared_ptr<ScriptedMock> ScriptedMock::from_jsonl(const std::filesystem::path& path) {
  std::vector<MockRule> rules;
  for_each_line(path, [&](std::size_t line_no, std::string_view line) {
    try {
      rules.push_back(rule_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  });
  return std::make_shared<ScriptedMock>(std::move(rules));
}

MockReply ScriptedMock::respond(const json& request_body) {
  if (handler_) return handler_(request_body);
  const std::string haystack = joined_contents(request_body);
  std::lock_guard lock(mu_);
  for (std::size_t i = 0; i < rules_.size(); ++i) {
    const auto& rule = rules_[i];
    if (rule.match && haystack.find(*rule.match) == std::string::npos) continue;
    const std::size_t at = std::min(cursors_[i], rule.replies.size() - 1);
    ++cursors_[i];
    return rule.replies[at];
  }
  return MockReply{400, "no scripted reply matches the request", 0.0};
}

MockReply ScriptedMock::handle(const json& request_body) {
  const auto start = Clock::now();
  const std::size_t now_in_flight = in_flight_.fetch_add(1) + 1;
  std::size_t peak = peak_in_flight_.load();
  while (now_in_flight > peak && !peak_in_flight_.compare_exchange_weak(peak, now_in_flight)) {
  }

  MockReply reply = respond(request_body);
  if (reply.delay_s > 0) std::this_thread::sleep_for(std::chrono::duration<double>(reply.delay_s));

  in_flight_.fetch_sub(1);
  std::lock_guard lock(mu_);
  requests_.push_back(request_body);
  intervals_.push_back({start, Clock::now()});
  return reply;
}

json ScriptedMock::completion_body(const std::string& model, const std::string& content) {
  return {{"id", "mock-completion"},
          {"object", "chat.completion"},
          {"model", model},
          {"choices", json::array({{{"index", 0},
                                    {"message", {{"role", "assistant"}, {"content", content}}},
                                    {"finish_reason", "stop"}}})}};
}

std::size_t ScriptedMock::call_count() const {
  std::lock_guard lock(mu_);
  return requests_.size();
}

std::vector<json> ScriptedMock::requests() const {
  std::lock_guard lock(mu_);
  return requests_;
}

std::size_t ScriptedMock::max_interval_overlap() const {
  std::vector<std::pair<Clock::time_point, int>> events;
  {
    std::lock_guard lock(mu_);
    for (const auto& iv : intervals_) {
      events.emplace_back(iv.start, +1);
      events.emplace_back(iv.end, -1);
    }
  }
  // Ends sort before starts at the same instant: half-open intervals.
  std::sort(events.begin(), events.end());
  std::size_t current = 0, peak = 0;
  for (const auto& [t, delta] : events) {
    current = static_cast<std::size_t>(static_cast<long>(current) + delta);
    peak = std::max(peak, current);
  }
  return peak;
}

HttpResponse MockTransport::post_chat(const json& body, const std::optional<std::string>&, double) {
  const MockReply reply = mock_->handle(body);
  if (reply.status == 0) return {0, {}, "scripted connection failure"};
  if (reply.status != 200) return {reply.status, json{{"error", {{"message", reply.content}}}}.dump(), {}};
  return {200, ScriptedMock::completion_body(body.value("model", std::string()), reply.content).dump(), {}};
}

MockServer::MockServer(std::shared_ptr<ScriptedMock> mock)
    : mock_(std::move(mock)), server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

MockServer::~MockServer() { stop(); }

void MockServer::install_routes() {
  auto handler = [this](const httplib::Request& req, httplib::Response& res) {
    {
      std::lock_guard lock(mu_);
      authorizations_.push_back(req.get_header_value("Authorization"));
    }
    json body = json::parse(req.body, nullptr, false);
    if (!body.is_object() || !body.contains("messages")) {
      res.status = 400;
      res.set_content(R"({"error":{"message":"invalid request body"}})", "application/json");
      return;
    }
    const MockReply reply = mock_->handle(body);
    if (reply.status == 0) {
      // Scripted connection failures surface as a gateway error over real HTTP.
      res.status = 502;
      return;
    }
    res.status = reply.status;
    if (reply.status == 200) {
      res.set_content(ScriptedMock::completion_body(body.value("model", std::string()), reply.content).dump(),
                      "application/json");
    } else {
      res.set_content(json{{"error", {{"message", reply.content}}}}.dump(), "application/json");
    }
  };
  server_->Post("/chat/completions", handler);
  server_->Post("/v1/chat/completions", handler);
}

int MockServer::start(int port) {
  if (port == 0) {
    port_ = server_->bind_to_any_port("127.0.0.1");
  } else {
    if (!server_->bind_to_port("127.0.0.1", port)) throw IoError("cannot bind 127.0.0.1:" + std::to_string(port));
    port_ = port;
  }
  if (port_ <= 0) throw IoError("cannot bind mock server");
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void MockServer::listen_blocking(const std::string& host, int port) {
  port_ = port;
  if (!server_->listen(host, port)) throw IoError("cannot listen on " + host + ":" + std::to_string(port));
}

void MockServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

std::vector<std::string> MockServer::authorizations() const {
  std::lock_guard lock(mu_);
  return authorizations_;
}

}  // namespace ratrec::llm
