// Copyright 2026 The promptlens Authors
// SPDX-License-Identifier: Apache-2.0

#include "promptlens/chat.hpp"

#include "promptlens/hash.hpp"
#include "promptlens/image_io.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <thread>

namespace promptlens {

using nlohmann::json;

json SamplingParams::to_json() const {
  json j = {{"temperature", temperature},
            {"top_p", top_p},
            {"frequency_penalty", frequency_penalty},
            {"presence_penalty", presence_penalty},
            {"n", n}};
  if (max_tokens > 0) j["max_tokens"] = max_tokens;
  if (json_response) j["response_format"] = {{"type", "json_object"}};
  return j;
}

json ChatRequest::to_json(bool inline_images) const {
  json msgs = json::array();
  for (const auto& m : messages) {
    if (m.images.empty()) {
      msgs.push_back({{"role", m.role}, {"content", m.text}});
      continue;
    }
    json parts = json::array();
    if (!m.text.empty()) parts.push_back({{"type", "text"}, {"text", m.text}});
    for (const auto& img : m.images) {
      const std::string url = inline_images ? "data:" + img.mime_type + ";base64," + base64_encode(img.bytes)
                                            : "sha256:" + sha256_hex(img.bytes);
      parts.push_back({{"type", "image_url"}, {"image_url", {{"url", url}}}});
    }
    msgs.push_back({{"role", m.role}, {"content", parts}});
  }
  json body = params.to_json();
  body["model"] = model;
  body["messages"] = msgs;
  return body;
}

std::string ChatRequest::fingerprint() const { return sha256_hex(to_json(false).dump()); }

TemperatureClamp clamp_temperature(SamplingParams& params, const ChatClient& client) {
  TemperatureClamp out{params.temperature, std::min(params.temperature, client.max_temperature())};
  params.temperature = out.used;
  return out;
}

double RetryPolicy::delay(int retry) const {
  return std::min(max_delay_seconds, initial_delay_seconds * std::pow(multiplier, retry));
}

ChatResponse complete_with_retry(ChatClient& client, const ChatRequest& request, const RetryPolicy& policy,
                                 const std::function<void(const ChatResponse&)>& validate, int* attempts) {
  for (int attempt = 0;; ++attempt) {
    if (attempts) *attempts = attempt + 1;
    try {
      ChatResponse r = client.complete(request);
      if (r.choices.empty()) throw MalformedResponseError("response has no choices");
      if (validate) validate(r);
      return r;
    } catch (const ClientError& e) {
      if (!e.retryable() || attempt >= policy.max_retries) throw;
      const double wait = policy.delay(attempt);
      if (policy.sleep) {
        policy.sleep(wait);
      } else {
        std::this_thread::sleep_for(std::chrono::duration<double>(wait));
      }
    }
  }
}

MockChatClient MockChatClient::constant(std::string text, std::string id) {
  return MockChatClient(
      [text = std::move(text)](const ChatRequest& req, int) {
        ChatResponse r;
        r.choices.assign(static_cast<std::size_t>(std::max(1, req.params.n)), text);
        return r;
      },
      std::move(id));
}

ChatResponse MockChatClient::complete(const ChatRequest& request) {
  int index;
  {
    std::lock_guard lock(mutex_);
    index = calls_++;
    requests_.push_back(request);
  }
  return handler_(request, index);
}

int MockChatClient::calls() const {
  std::lock_guard lock(mutex_);
  return calls_;
}

std::vector<ChatRequest> MockChatClient::requests() const {
  std::lock_guard lock(mutex_);
  return requests_;
}

JournalingChatClient::JournalingChatClient(std::shared_ptr<ChatClient> inner, std::filesystem::path journal)
    : inner_(std::move(inner)), journal_(std::move(journal)) {
  if (!inner_) throw UsageError("journaling client needs an inner client");
}

void JournalingChatClient::append(const json& entry) {
  std::lock_guard lock(mutex_);
  std::ofstream out(journal_, std::ios::app);
  if (!out) throw Error("cannot open journal " + journal_.string());
  out << entry.dump() << '\n';
}

ChatResponse JournalingChatClient::complete(const ChatRequest& request) {
  json entry = {{"fingerprint", request.fingerprint()}, {"client", inner_->id()}, {"request", request.to_json(false)}};
  try {
    ChatResponse r = inner_->complete(request);
    entry["response"] = {{"choices", r.choices}, {"raw", r.raw}};
    append(entry);
    return r;
  } catch (const ClientError& e) {
    entry["error"] = {{"message", e.what()}, {"retryable", e.retryable()}};
    append(entry);
    throw;
  }
}

ReplayChatClient::ReplayChatClient(const std::filesystem::path& journal, std::string id, double max_temperature)
    : id_(std::move(id)), max_temperature_(max_temperature) {
  std::ifstream in(journal);
  if (!in) throw ConfigError("cannot open journal " + journal.string());
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json entry;
    try {
      entry = json::parse(line);
    } catch (const json::exception& e) {
      throw ConfigError(journal.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!entry.contains("response")) continue;
    ChatResponse r;
    r.choices = entry["response"].at("choices").get<std::vector<std::string>>();
    r.raw = entry["response"].value("raw", json::object());
    responses_[entry.at("fingerprint").get<std::string>()].push_back(std::move(r));
  }
}

ChatResponse ReplayChatClient::complete(const ChatRequest& request) {
  std::lock_guard lock(mutex_);
  auto it = responses_.find(request.fingerprint());
  if (it == responses_.end() || it->second.empty())
    throw ClientError("no journaled response for request " + request.fingerprint(), false);
  ChatResponse r = std::move(it->second.front());
  it->second.pop_front();
  return r;
}

std::size_t ReplayChatClient::remaining() const {
  std::lock_guard lock(mutex_);
  std::size_t n = 0;
  for (const auto& [_, q] : responses_) n += q.size();
  return n;
}

void throw_for_status(int status, const std::string& body) {
  std::string detail = body.substr(0, 500);
  std::string code;
  try {
    const auto j = json::parse(body);
    if (j.contains("error") && j["error"].is_object()) {
      detail = j["error"].value("message", detail);
      if (j["error"].contains("code") && j["error"]["code"].is_string()) code = j["error"]["code"].get<std::string>();
    }
  } catch (const json::exception&) {
  }
  const std::string msg = "HTTP " + std::to_string(status) + ": " + detail;
  if (status == 401 || status == 403) throw AuthError(msg);
  if (status == 429) {
    if (code == "insufficient_quota") throw QuotaError(msg);
    throw RateLimitError(msg);
  }
  if (status >= 500 || status == 408 || status == 409) throw TransientError(msg);
  throw ClientError(msg, false);
}

ChatResponse parse_completion(const std::string& body) {
  ChatResponse r;
  try {
    r.raw = json::parse(body);
    for (const auto& c : r.raw.at("choices")) {
      const auto& content = c.at("message").at("content");
      if (!content.is_string()) throw MalformedResponseError("choice content is not a string");
      r.choices.push_back(content.get<std::string>());
    }
  } catch (const json::exception& e) {
    throw MalformedResponseError(std::string("malformed completion: ") + e.what());
  }
  if (r.choices.empty()) throw MalformedResponseError("completion has no choices");
  return r;
}

}  // namespace promptlens
