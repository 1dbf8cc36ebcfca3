#include <doctest.h>

#include <cstdlib>

#include "ratrec/error.hpp"
#include "ratrec/llm_client.hpp"
#include "ratrec/mock_endpoint.hpp"
#include "synth.hpp"

using namespace ratrec;
using namespace ratrec::llm;

namespace {

ChatRequest ask(std::string text, std::optional<std::string> prefill = std::nullopt) {
  return {{{"user", std::move(text)}}, std::move(prefill)};
}

std::shared_ptr<ScriptedMock> script(std::vector<MockReply> replies) {
  return std::make_shared<ScriptedMock>(std::vector<MockRule>{{std::nullopt, std::move(replies)}});
}

}  // namespace

TEST_CASE("complete: scripted reply and retry policy") {
  const auto cfg = testing::mock_endpoint("m");
  SUBCASE("plain reply") {
    auto mock = script({{200, "X", 0}});
    const auto ex = testing::mock_client(cfg, mock).complete(ask("hi"));
    CHECK(ex.response_text == "X");
    CHECK(ex.attempt_count == 1);
    CHECK_FALSE(ex.cached);
  }
  SUBCASE("429 twice then success") {
    auto mock = script({{429, "", 0}, {429, "", 0}, {200, "ok", 0}});
    const auto ex = testing::mock_client(cfg, mock).complete(ask("hi"));
    CHECK(ex.response_text == "ok");
    CHECK(ex.attempt_count == 3);
  }
  SUBCASE("400 is not retried") {
    auto mock = script({{400, "bad", 0}, {200, "never", 0}});
    CHECK_THROWS_AS(testing::mock_client(cfg, mock).complete(ask("hi")), ProtocolError);
    CHECK(mock->call_count() == 1);
  }
  SUBCASE("retries exhausted") {
    auto mock = script({{503, "", 0}});
    try {
      (void)testing::mock_client(cfg, mock).complete(ask("hi"));
      FAIL("expected TransportError");
    } catch (const TransportError& e) {
      CHECK(e.status() == 503);
    }
    CHECK(mock->call_count() == cfg.max_retries + 1);
  }
  SUBCASE("dropped connections and timeouts are retried") {
    auto mock = script({{0, "", 0}, {408, "", 0}, {200, "fine", 0}});
    CHECK(testing::mock_client(cfg, mock).complete(ask("hi")).attempt_count == 3);
  }
  SUBCASE("backoff grows with full jitter") {
    auto mock = script({{500, "", 0}});
    auto c = cfg;
    c.backoff_base_s = 1.0;
    c.max_retries = 4;
    ChatClient client(c, std::make_shared<MockTransport>(mock));
    std::vector<double> waits;
    client.set_sleeper([&](std::chrono::duration<double> d) { waits.push_back(d.count()); });
    CHECK_THROWS_AS(client.complete(ask("hi")), TransportError);
    REQUIRE(waits.size() == 4);
    for (std::size_t i = 0; i < waits.size(); ++i) {
      CHECK(waits[i] >= 0.0);
      CHECK(waits[i] <= static_cast<double>(1u << i));
    }
  }
}

TEST_CASE("request body and prefill handling") {
  auto cfg = testing::mock_endpoint("m");
  cfg.temperature = 0.7;
  cfg.max_tokens = 77;
  const auto body = build_request_body(cfg, ask("q", "<item>"));
  CHECK(body["model"] == "m");
  CHECK(body["temperature"] == 0.7);
  CHECK(body["max_tokens"] == 77);
  REQUIRE(body["messages"].size() == 2);
  CHECK(body["messages"][1] == json{{"role", "assistant"}, {"content", "<item>"}});

  cfg.supports_prefill = false;
  const auto folded = build_request_body(cfg, ask("q", "<item>"));
  REQUIRE(folded["messages"].size() == 1);
  CHECK(folded["messages"][0]["content"] == "q\n\nBegin your reply with \"<item>\".");

  SUBCASE("reply is returned with the prefill in front exactly once") {
    auto mock = script({{200, "Hat</item>", 0}});
    auto ex = testing::mock_client(testing::mock_endpoint("m"), mock).complete(ask("q", "<item>"));
    CHECK(ex.response_text == "<item>Hat</item>");
    CHECK_FALSE(ex.prefill_emulated);
    auto echoing = script({{200, "<item>Hat</item>", 0}});
    auto c = testing::mock_endpoint("m");
    c.supports_prefill = false;
    auto ex2 = testing::mock_client(c, echoing).complete(ask("q", "<item>"));
    CHECK(ex2.response_text == "<item>Hat</item>");
    CHECK(ex2.prefill_emulated);
  }
}

TEST_CASE("cached_complete") {
  testing::TempDir dir;
  const auto cfg = testing::mock_endpoint("m");
  auto mock = script({{200, "first", 0}, {200, "second", 0}});
  const auto client = testing::mock_client(cfg, mock);

  const auto a = client.cached_complete(ask("q"), dir.path());
  const auto b = client.cached_complete(ask("q"), dir.path());
  CHECK(a.response_text == "first");
  CHECK(b.response_text == "first");
  CHECK(b.cached);
  CHECK(b.attempt_count == 0);
  CHECK(mock->call_count() == 1);

  SUBCASE("temperature is part of the key") {
    auto warm = cfg;
    warm.temperature = 0.7;
    CHECK(cache_key(cfg, ask("q")) != cache_key(warm, ask("q")));
    const auto other = testing::mock_client(warm, mock).cached_complete(ask("q"), dir.path());
    CHECK(other.response_text == "second");
    CHECK(mock->call_count() == 2);
  }
  SUBCASE("prefill and unicode normalization in the key") {
    CHECK(cache_key(cfg, ask("q")) != cache_key(cfg, ask("q", "<item>")));
    CHECK(cache_key(cfg, ask("caf\xC3\xA9")) == cache_key(cfg, ask("cafe\xCC\x81")));
  }
  SUBCASE("corrupt entry is refetched and rewritten") {
    const auto path = dir / (cache_key(cfg, ask("q")) + ".json");
    REQUIRE(std::filesystem::exists(path));
    write_file_atomic(path, "{not json");
    const auto c = client.cached_complete(ask("q"), dir.path());
    CHECK_FALSE(c.cached);
    CHECK(c.response_text == "second");
    CHECK(json::parse(read_file(path))["response_text"] == "second");
    CHECK(client.cached_complete(ask("q"), dir.path()).cached);
  }
}

TEST_CASE("batch_complete keeps order, errors in slot, bounded concurrency") {
  SUBCASE("empty") {
    auto mock = script({{200, "x", 0}});
    CHECK(testing::mock_client(testing::mock_endpoint("m"), mock).batch_complete({}, std::nullopt).empty());
  }
  SUBCASE("failure stays in its slot") {
    auto mock = std::make_shared<ScriptedMock>(std::vector<MockRule>{{"B", {{400, "nope", 0}}},
                                                                    {std::nullopt, {{200, "ok", 0}}}});
    std::vector<ChatRequest> reqs{ask("A"), ask("B"), ask("C")};
    const auto res = testing::mock_client(testing::mock_endpoint("m"), mock).batch_complete(reqs, std::nullopt);
    REQUIRE(res.size() == 3);
    CHECK(res[0].ok());
    CHECK_FALSE(res[1].ok());
    CHECK(res[1].error->category == Error::Category::Protocol);
    CHECK(res[1].error->status == 400);
    CHECK(res[2].ok());
  }
  SUBCASE("order and peak in flight") {
    auto mock = std::make_shared<ScriptedMock>([](const json& body) {
      return MockReply{200, "echo " + body["messages"][0]["content"].get<std::string>(), 0.002};
    });
    std::vector<ChatRequest> reqs;
    for (int i = 0; i < 40; ++i) reqs.push_back(ask(std::to_string(i)));
    const auto res = testing::mock_client(testing::mock_endpoint("m", 3), mock).batch_complete(reqs, std::nullopt);
    for (int i = 0; i < 40; ++i) CHECK(res[static_cast<std::size_t>(i)].exchange->response_text == "echo " + std::to_string(i));
    CHECK(mock->peak_in_flight() <= 3);
    CHECK(mock->max_interval_overlap() <= 3);
    CHECK(mock->peak_in_flight() >= 2);
  }
  SUBCASE("warm cache makes zero calls and reproduces bytes") {
    testing::TempDir dir;
    auto mock = std::make_shared<ScriptedMock>([](const json& body) {
      return MockReply{200, "r:" + body["messages"][0]["content"].get<std::string>(), 0.0};
    });
    std::vector<ChatRequest> reqs;
    for (int i = 0; i < 25; ++i) reqs.push_back(ask("p" + std::to_string(i)));
    const auto client = testing::mock_client(testing::mock_endpoint("m", 4), mock);
    const auto cold = client.batch_complete(reqs, dir.path());
    const auto calls = mock->call_count();
    const auto warm = client.batch_complete(reqs, dir.path());
    CHECK(mock->call_count() == calls);
    for (std::size_t i = 0; i < reqs.size(); ++i) {
      CHECK(warm[i].exchange->cached);
      CHECK(warm[i].exchange->response_text == cold[i].exchange->response_text);
    }
  }
}

TEST_CASE("endpoint configuration") {
  const json good = {{"base_url", "http://localhost:8000/v1"}, {"model_name", "m"}, {"api_key_env", "X_KEY"}};
  const auto c = endpoint_from_json(good, "endpoints.judge");
  CHECK(c.max_in_flight == 4);
  CHECK(c.max_retries == 3);
  CHECK(c.timeout_s == 60.0);

  auto with_key = good;
  with_key["api_key"] = "sk-secret";
  try {
    (void)endpoint_from_json(with_key, "endpoints.judge");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field_path() == "endpoints.judge.api_key");
  }
  auto bad = good;
  bad["max_in_flight"] = 0;
  CHECK_THROWS_AS(endpoint_from_json(bad), ConfigError);
  bad = good;
  bad["base_url"] = "ftp://x";
  CHECK_THROWS_AS(endpoint_from_json(bad), ConfigError);
  bad = good;
  bad["max_retries"] = -1;
  CHECK_THROWS_AS(endpoint_from_json(bad), ConfigError);

  CHECK(is_local_endpoint("http://127.0.0.1:9/v1"));
  CHECK(is_local_endpoint("http://localhost"));
  CHECK(is_local_endpoint("mock:///tmp/x.jsonl"));
  CHECK_FALSE(is_local_endpoint("https://api.example.com/v1"));
  CHECK_FALSE(is_local_endpoint("http://localhost.example.com"));
}

TEST_CASE("remote endpoints require their key variable") {
  auto cfg = testing::mock_endpoint("m");
  cfg.base_url = "https://api.example.com/v1";
  cfg.api_key_env = "RATREC_TEST_UNSET_KEY_VAR";
  ::unsetenv("RATREC_TEST_UNSET_KEY_VAR");
  auto mock = script({{200, "x", 0}});
  CHECK_THROWS_AS(testing::mock_client(cfg, mock).complete(ask("q")), PreconditionError);
  CHECK(mock->call_count() == 0);
}

TEST_CASE("mock fixtures load from jsonl") {
  testing::TempDir dir;
  write_file_atomic(dir / "m.jsonl", R"({"match": "beanie", "content": "<item>hat</item>"}
{"match": "flaky", "replies": [{"status": 429}, {"content": "done"}]}
)");
  auto mock = ScriptedMock::from_jsonl(dir / "m.jsonl");
  CHECK(mock->respond(json{{"messages", {{{"role", "user"}, {"content", "a beanie"}}}}}).content == "<item>hat</item>");
  const json flaky{{"messages", {{{"role", "user"}, {"content", "flaky"}}}}};
  CHECK(mock->respond(flaky).status == 429);
  CHECK(mock->respond(flaky).content == "done");
  CHECK(mock->respond(flaky).content == "done");
  CHECK(mock->respond(json{{"messages", {{{"role", "user"}, {"content", "other"}}}}}).status == 400);

  auto cfg = testing::mock_endpoint("m");
  cfg.base_url = "mock://" + (dir / "m.jsonl").string();
  ChatClient client(cfg, make_transport(cfg));
  CHECK(client.complete(ask("beanie please")).response_text == "<item>hat</item>");
}
