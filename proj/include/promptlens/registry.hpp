// Copyright 2026 The promptlens Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "promptlens/adapters.hpp"
#include "promptlens/toy_stack.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <memory>
#include <string>

namespace promptlens {

/// Handles to every pretrained component a pipeline may touch.
struct AdapterSet {
  std::shared_ptr<const MaskedLanguageModel> masked_lm;
  std::shared_ptr<const TextEncoder> text_encoder;
  std::shared_ptr<const ImageGenerator> generator;
  std::shared_ptr<const VisualClassifier> classifier;
  std::shared_ptr<const JointEncoder> joint_encoder;
  std::shared_ptr<const SentenceEmbedder> sentence_embedder;

  static AdapterSet from_toy(const ToyStack& stack);

  /// Digest of every adapter's parameters, in a fixed order.
  std::string parameter_digest() const;
};

/// Backend identifiers per component, e.g. "toy:v1". Production backends are
/// referenced by id only and must be registered by the embedding application.
struct AdapterIds {
  std::string masked_lm = "toy:v1";
  std::string text_encoder = "toy:v1";
  std::string generator = "toy:v1";
  std::string classifier = "toy:v1";
  std::string joint_encoder = "toy:v1";
  std::string sentence_embedder = "toy:v1";

  bool operator==(const AdapterIds&) const = default;
};

using BackendFactory = std::function<AdapterSet(const nlohmann::json& options)>;

/// Registers a backend under an id. Registering an existing id replaces it.
void register_backend(const std::string& id, BackendFactory factory);

/// Resolves each component id. Throws AdapterError for unknown ids.
/// `options` is passed to every factory (the toy backend reads its
/// ToyStackConfig from it).
AdapterSet resolve_adapters(const AdapterIds& ids, const nlohmann::json& options = nlohmann::json::object());

ToyStackConfig toy_config_from_json(const nlohmann::json& j);
nlohmann::json toy_config_to_json(const ToyStackConfig& c);

}  // namespace promptlens
