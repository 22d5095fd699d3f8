// Copyright 2026 The promptlens Authors
// SPDX-License-Identifier: Apache-2.0

#include "promptlens/chat.hpp"

#include <httplib.h>

#include <cstdlib>

namespace promptlens {

HttpChatClient::HttpChatClient(HttpClientConfig config) : config_(std::move(config)) {
  const char* key = std::getenv(config_.api_key_env.c_str());
  if (!key || !*key) throw AuthError("environment variable " + config_.api_key_env + " is not set");
  api_key_ = key;
}

ChatResponse HttpChatClient::complete(const ChatRequest& request) {
  httplib::Client cli(config_.base_url);
  const auto secs = static_cast<time_t>(config_.timeout_seconds);
  cli.set_read_timeout(secs, 0);
  cli.set_write_timeout(secs, 0);
  cli.set_connection_timeout(30, 0);
  httplib::Headers headers = {{"Authorization", "Bearer " + api_key_}};
  auto res = cli.Post(config_.path, headers, request.to_json(true).dump(), "application/json");
  if (!res) throw TransientError("request failed: " + httplib::to_string(res.error()));
  if (res->status != 200) throw_for_status(res->status, res->body);
  return parse_completion(res->body);
}

}  // namespace promptlens
