#include <doctest.h>

#include "promptlens/chat.hpp"
#include "promptlens/hash.hpp"
#include "promptlens/store.hpp"
#include "support.hpp"

#include <httplib.h>

#include <cstdlib>
#include <fstream>
#include <thread>

using namespace promptlens;
using promptlens::testing::TempDir;
using nlohmann::json;

namespace {

ChatRequest sample_request(std::string text = "hello") {
  ChatRequest r;
  r.model = "gpt-4o-mini";
  r.messages.push_back({"system", "You are terse.", {}});
  r.messages.push_back({"user", std::move(text), {ChatImage{"image/png", std::string("\x89PNG\r\n", 6)}}});
  r.params.temperature = 0.2;
  return r;
}

ChatResponse reply(std::string text) {
  ChatResponse r;
  r.choices.push_back(std::move(text));
  return r;
}

}  // namespace

TEST_CASE("request body") {
  const auto req = sample_request();
  const json body = req.to_json();
  CHECK(body["model"] == "gpt-4o-mini");
  CHECK(body["temperature"] == 0.2);
  CHECK(body["top_p"] == 1.0);
  CHECK(body["frequency_penalty"] == 0.0);
  CHECK(body["presence_penalty"] == 0.0);
  CHECK(body["n"] == 1);
  CHECK_FALSE(body.contains("max_tokens"));
  CHECK(body["messages"][0]["content"] == "You are terse.");
  const auto& parts = body["messages"][1]["content"];
  CHECK(parts[0]["text"] == "hello");
  CHECK(parts[1]["image_url"]["url"].get<std::string>().rfind("data:image/png;base64,", 0) == 0);
  const json journal = req.to_json(false);
  CHECK(journal["messages"][1]["content"][1]["image_url"]["url"] ==
        "sha256:" + sha256_hex(std::string("\x89PNG\r\n", 6)));

  CHECK(sample_request().fingerprint() == req.fingerprint());
  CHECK(sample_request("other").fingerprint() != req.fingerprint());
  auto capped = req;
  capped.params.max_tokens = 50;
  CHECK(capped.to_json()["max_tokens"] == 50);
}

TEST_CASE("temperature clamp") {
  auto client = MockChatClient::constant("x", "m");
  SamplingParams p;
  p.temperature = 1.5;
  const auto c = clamp_temperature(p, client);
  CHECK_FALSE(c.clamped());
  MockChatClient low([](const ChatRequest&, int) { return reply("x"); }, "low", 1.0);
  p.temperature = 2.0;
  const auto d = clamp_temperature(p, low);
  CHECK(d.clamped());
  CHECK(d.requested == 2.0);
  CHECK(p.temperature == 1.0);
}

TEST_CASE("retry with exponential backoff") {
  std::vector<double> waits;
  RetryPolicy policy;
  policy.max_retries = 4;
  policy.initial_delay_seconds = 1.0;
  policy.multiplier = 2.0;
  policy.max_delay_seconds = 5.0;
  policy.sleep = [&](double s) { waits.push_back(s); };

  MockChatClient flaky([](const ChatRequest&, int call) -> ChatResponse {
    if (call < 4) throw RateLimitError("slow down");
    return reply("ok");
  });
  int attempts = 0;
  CHECK(complete_with_retry(flaky, sample_request(), policy, {}, &attempts).choices[0] == "ok");
  CHECK(attempts == 5);
  CHECK(waits == std::vector<double>{1, 2, 4, 5});

  waits.clear();
  MockChatClient down([](const ChatRequest&, int) -> ChatResponse { throw TransientError("502"); });
  policy.max_retries = 2;
  CHECK_THROWS_AS(complete_with_retry(down, sample_request(), policy), TransientError);
  CHECK(down.calls() == 3);
  CHECK(waits.size() == 2);

  waits.clear();
  MockChatClient denied([](const ChatRequest&, int) -> ChatResponse { throw AuthError("bad key"); });
  CHECK_THROWS_AS(complete_with_retry(denied, sample_request(), policy), AuthError);
  CHECK(denied.calls() == 1);
  CHECK(waits.empty());

  MockChatClient empty([](const ChatRequest&, int) { return ChatResponse{}; });
  policy.max_retries = 1;
  CHECK_THROWS_AS(complete_with_retry(empty, sample_request(), policy), MalformedResponseError);
  CHECK(empty.calls() == 2);

  // Validation failures are retried like malformed responses.
  MockChatClient answers([](const ChatRequest&, int call) { return reply(call == 0 ? "bad" : "good"); });
  const auto ok = complete_with_retry(answers, sample_request(), policy, [](const ChatResponse& r) {
    if (r.choices[0] != "good") throw MalformedResponseError("rejected");
  });
  CHECK(ok.choices[0] == "good");
}

TEST_CASE("journal and replay") {
  TempDir dir("journal");
  const auto path = dir.path() / "j.jsonl";
  auto inner = std::make_shared<MockChatClient>([](const ChatRequest& r, int call) -> ChatResponse {
    if (r.messages.back().text == "fail") throw TransientError("boom");
    return reply(r.messages.back().text + "#" + std::to_string(call));
  });
  {
    JournalingChatClient journal(inner, path);
    CHECK(journal.complete(sample_request("a")).choices[0] == "a#0");
    CHECK(journal.complete(sample_request("b")).choices[0] == "b#1");
    CHECK(journal.complete(sample_request("a")).choices[0] == "a#2");
    CHECK_THROWS_AS(journal.complete(sample_request("fail")), TransientError);
  }
  std::ifstream in(path);
  int lines = 0;
  for (std::string line; std::getline(in, line);) {
    const auto j = json::parse(line);
    CHECK(j.contains("fingerprint"));
    CHECK(j["client"] == "mock");
    CHECK((j.contains("response") || j.contains("error")));
    CHECK(line.find("base64") == std::string::npos);
    ++lines;
  }
  CHECK(lines == 4);

  ReplayChatClient replay(path);
  CHECK(replay.remaining() == 3);
  CHECK(replay.complete(sample_request("a")).choices[0] == "a#0");
  CHECK(replay.complete(sample_request("a")).choices[0] == "a#2");
  CHECK(replay.complete(sample_request("b")).choices[0] == "b#1");
  CHECK(replay.remaining() == 0);
  CHECK_THROWS_AS(replay.complete(sample_request("a")), ClientError);
  CHECK_THROWS_AS(replay.complete(sample_request("never seen")), ClientError);
}

TEST_CASE("HTTP status mapping") {
  auto kind = [](int status, const std::string& body) -> std::string {
    try {
      throw_for_status(status, body);
    } catch (const AuthError&) {
      return "auth";
    } catch (const QuotaError&) {
      return "quota";
    } catch (const RateLimitError& e) {
      return e.retryable() ? "rate" : "?";
    } catch (const TransientError& e) {
      return e.retryable() ? "transient" : "?";
    } catch (const ClientError& e) {
      return e.retryable() ? "?" : "client";
    }
    return "none";
  };
  CHECK(kind(401, "") == "auth");
  CHECK(kind(403, "") == "auth");
  CHECK(kind(429, R"({"error":{"message":"slow","code":"rate_limit_exceeded"}})") == "rate");
  CHECK(kind(429, R"({"error":{"message":"pay","code":"insufficient_quota"}})") == "quota");
  CHECK(kind(500, "oops") == "transient");
  CHECK(kind(503, "") == "transient");
  CHECK(kind(408, "") == "transient");
  CHECK(kind(400, R"({"error":{"message":"bad temperature"}})") == "client");
  try {
    throw_for_status(400, R"({"error":{"message":"bad temperature"}})");
  } catch (const ClientError& e) {
    CHECK(std::string(e.what()) == "HTTP 400: bad temperature");
  }
}

TEST_CASE("completion parsing") {
  const auto r = parse_completion(
      R"({"choices":[{"message":{"role":"assistant","content":"one"}},{"message":{"content":"two"}}]})");
  CHECK(r.choices == std::vector<std::string>{"one", "two"});
  CHECK_THROWS_AS(parse_completion("not json"), MalformedResponseError);
  CHECK_THROWS_AS(parse_completion(R"({"choices":[]})"), MalformedResponseError);
  CHECK_THROWS_AS(parse_completion(R"({"choices":[{"message":{"content":null}}]})"), MalformedResponseError);
}

TEST_CASE("HTTP client against a local server") {
  httplib::Server server;
  std::string seen_auth, seen_body;
  int call = 0;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen_auth = req.get_header_value("Authorization");
    seen_body = req.body;
    if (call++ == 0) {
      res.status = 429;
      res.set_content(R"({"error":{"message":"slow down","code":"rate_limit_exceeded"}})", "application/json");
      return;
    }
    res.set_content(R"({"choices":[{"message":{"content":"a grey cat"}}]})", "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread worker([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ::setenv("PROMPTLENS_TEST_KEY", "sk-test", 1);
  HttpClientConfig cfg;
  cfg.base_url = "http://127.0.0.1:" + std::to_string(port);
  cfg.api_key_env = "PROMPTLENS_TEST_KEY";
  HttpChatClient client(cfg);
  RetryPolicy policy;
  policy.sleep = [](double) {};
  int attempts = 0;
  const auto r = complete_with_retry(client, sample_request(), policy, {}, &attempts);
  server.stop();
  worker.join();

  CHECK(r.choices[0] == "a grey cat");
  CHECK(attempts == 2);
  CHECK(seen_auth == "Bearer sk-test");
  CHECK(json::parse(seen_body) == sample_request().to_json());

  cfg.api_key_env = "PROMPTLENS_TEST_KEY_UNSET";
  ::unsetenv("PROMPTLENS_TEST_KEY_UNSET");
  CHECK_THROWS_AS(HttpChatClient{cfg}, AuthError);
}
