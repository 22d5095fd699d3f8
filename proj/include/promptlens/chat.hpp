// Copyright 2026 The promptlens Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "promptlens/core.hpp"

#include <nlohmann/json.hpp>

#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace promptlens {

/// Base of every chat-client failure. Retryable errors are retried by
/// complete_with_retry; the others surface immediately.
class ClientError : public Error {
 public:
  ClientError(const std::string& what, bool retryable) : Error(what), retryable_(retryable) {}
  bool retryable() const { return retryable_; }

 private:
  bool retryable_;
};

class AuthError : public ClientError {
 public:
  explicit AuthError(const std::string& what) : ClientError(what, false) {}
};

/// Account quota exhausted (billing); not retried.
class QuotaError : public ClientError {
 public:
  explicit QuotaError(const std::string& what) : ClientError(what, false) {}
};

class RateLimitError : public ClientError {
 public:
  explicit RateLimitError(const std::string& what) : ClientError(what, true) {}
};

/// Network failures and server-side 5xx responses.
class TransientError : public ClientError {
 public:
  explicit TransientError(const std::string& what) : ClientError(what, true) {}
};

class MalformedResponseError : public ClientError {
 public:
  explicit MalformedResponseError(const std::string& what) : ClientError(what, true) {}
};

struct ChatImage {
  std::string mime_type = "image/png";
  std::string bytes;
};

struct ChatMessage {
  std::string role;  // "system" | "user" | "assistant"
  std::string text;
  std::vector<ChatImage> images;
};

struct SamplingParams {
  double temperature = 1.0;
  double top_p = 1.0;
  double frequency_penalty = 0.0;
  double presence_penalty = 0.0;
  int n = 1;
  /// 0 omits the limit from the request.
  int max_tokens = 0;
  bool json_response = false;

  nlohmann::json to_json() const;
};

struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  SamplingParams params;

  /// OpenAI-compatible body. With inline_images=false images are replaced by
  /// their SHA-256 (journal form).
  nlohmann::json to_json(bool inline_images = true) const;
  /// SHA-256 of the journal form; identical requests share a fingerprint.
  std::string fingerprint() const;
};

struct ChatResponse {
  std::vector<std::string> choices;
  nlohmann::json raw = nlohmann::json::object();
};

class ChatClient {
 public:
  virtual ~ChatClient() = default;
  virtual ChatResponse complete(const ChatRequest& request) = 0;
  virtual std::string id() const = 0;
  /// Largest sampling temperature the backend accepts.
  virtual double max_temperature() const { return 2.0; }
};

struct TemperatureClamp {
  double requested = 0.0;
  double used = 0.0;
  bool clamped() const { return requested != used; }
};

TemperatureClamp clamp_temperature(SamplingParams& params, const ChatClient& client);

struct RetryPolicy {
  int max_retries = 3;
  double initial_delay_seconds = 1.0;
  double multiplier = 2.0;
  double max_delay_seconds = 30.0;
  /// Replaced in tests to observe delays without sleeping.
  std::function<void(double)> sleep;

  double delay(int retry) const;
};

/// Calls the client, retrying retryable errors with exponential backoff.
/// `validate` may throw MalformedResponseError to reject a response.
ChatResponse complete_with_retry(ChatClient& client, const ChatRequest& request, const RetryPolicy& policy,
                                 const std::function<void(const ChatResponse&)>& validate = {},
                                 int* attempts = nullptr);

/// Test double: responses come from a handler.
class MockChatClient final : public ChatClient {
 public:
  using Handler = std::function<ChatResponse(const ChatRequest&, int call_index)>;
  explicit MockChatClient(Handler handler, std::string id = "mock", double max_temperature = 2.0)
      : handler_(std::move(handler)), id_(std::move(id)), max_temperature_(max_temperature) {}

  static MockChatClient constant(std::string text, std::string id = "mock");

  ChatResponse complete(const ChatRequest& request) override;
  std::string id() const override { return id_; }
  double max_temperature() const override { return max_temperature_; }
  int calls() const;
  std::vector<ChatRequest> requests() const;

 private:
  Handler handler_;
  std::string id_;
  double max_temperature_;
  mutable std::mutex mutex_;
  int calls_ = 0;
  std::vector<ChatRequest> requests_;
};

/// Appends every exchange (request in journal form, response or error) to a
/// line-delimited JSON file.
class JournalingChatClient final : public ChatClient {
 public:
  JournalingChatClient(std::shared_ptr<ChatClient> inner, std::filesystem::path journal);

  ChatResponse complete(const ChatRequest& request) override;
  std::string id() const override { return inner_->id(); }
  double max_temperature() const override { return inner_->max_temperature(); }

 private:
  void append(const nlohmann::json& entry);

  std::shared_ptr<ChatClient> inner_;
  std::filesystem::path journal_;
  std::mutex mutex_;
};

/// Serves successful responses from a journal by request fingerprint, in
/// recorded order for repeated identical requests. Unknown requests throw
/// ClientError.
class ReplayChatClient final : public ChatClient {
 public:
  explicit ReplayChatClient(const std::filesystem::path& journal, std::string id = "replay",
                            double max_temperature = 2.0);

  ChatResponse complete(const ChatRequest& request) override;
  std::string id() const override { return id_; }
  double max_temperature() const override { return max_temperature_; }
  std::size_t remaining() const;

 private:
  std::string id_;
  double max_temperature_;
  mutable std::mutex mutex_;
  std::map<std::string, std::deque<ChatResponse>> responses_;
};

struct HttpClientConfig {
  std::string base_url = "https://api.openai.com";
  std::string path = "/v1/chat/completions";
  std::string api_key_env = "OPENAI_API_KEY";
  double timeout_seconds = 120.0;
  double max_temperature = 2.0;
};

/// OpenAI-compatible chat-completions client over HTTP(S).
class HttpChatClient final : public ChatClient {
 public:
  explicit HttpChatClient(HttpClientConfig config);

  ChatResponse complete(const ChatRequest& request) override;
  std::string id() const override { return "http:" + config_.base_url; }
  double max_temperature() const override { return config_.max_temperature; }

 private:
  HttpClientConfig config_;
  std::string api_key_;
};

/// Maps an HTTP status and body to the typed error hierarchy (throws).
[[noreturn]] void throw_for_status(int status, const std::string& body);

/// Parses an OpenAI-style completion body.
ChatResponse parse_completion(const std::string& body);

}  // namespace promptlens
