// Copyright 2026 The promptlens Authors
// SPDX-License-Identifier: Apache-2.0

#include "promptlens/registry.hpp"

#include "promptlens/hash.hpp"

#include <map>
#include <mutex>

namespace promptlens {
namespace {

struct Registry {
  std::mutex mutex;
  std::map<std::string, BackendFactory> factories;
};

Registry& registry() {
  static Registry* r = [] {
    auto* out = new Registry;
    out->factories["toy:v1"] = [](const nlohmann::json& options) {
      return AdapterSet::from_toy(ToyStack::build(toy_config_from_json(options.value("toy", nlohmann::json::object()))));
    };
    return out;
  }();
  return *r;
}

BackendFactory find_factory(const std::string& id) {
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  const auto it = r.factories.find(id);
  if (it == r.factories.end()) throw AdapterError("no adapter backend registered for id '" + id + "'");
  return it->second;
}

}  // namespace

AdapterSet AdapterSet::from_toy(const ToyStack& stack) {
  return {stack.masked_lm, stack.text_encoder, stack.generator, stack.classifier, stack.joint_encoder,
          stack.sentence_embedder};
}

std::string AdapterSet::parameter_digest() const {
  std::string joined;
  if (masked_lm) joined += masked_lm->parameter_digest();
  joined += ';';
  if (text_encoder) joined += text_encoder->parameter_digest();
  joined += ';';
  if (generator) joined += generator->parameter_digest();
  joined += ';';
  if (classifier) joined += classifier->parameter_digest();
  return sha256_hex(joined);
}

void register_backend(const std::string& id, BackendFactory factory) {
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  r.factories[id] = std::move(factory);
}

AdapterSet resolve_adapters(const AdapterIds& ids, const nlohmann::json& options) {
  // Each component is taken from the set its own id resolves to; a shared id
  // is built once.
  std::map<std::string, AdapterSet> built;
  auto get = [&](const std::string& id) -> const AdapterSet& {
    auto it = built.find(id);
    if (it == built.end()) it = built.emplace(id, find_factory(id)(options)).first;
    return it->second;
  };
  AdapterSet out;
  out.masked_lm = get(ids.masked_lm).masked_lm;
  out.text_encoder = get(ids.text_encoder).text_encoder;
  out.generator = get(ids.generator).generator;
  out.classifier = get(ids.classifier).classifier;
  out.joint_encoder = get(ids.joint_encoder).joint_encoder;
  out.sentence_embedder = get(ids.sentence_embedder).sentence_embedder;
  if (!out.masked_lm || !out.text_encoder || !out.generator || !out.classifier)
    throw AdapterError("adapter backend left a required component empty");
  return out;
}

ToyStackConfig toy_config_from_json(const nlohmann::json& j) {
  ToyStackConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "source_vocab_size") c.source_vocab_size = value.get<Index>();
    else if (key == "target_vocab_size") c.target_vocab_size = value.get<Index>();
    else if (key == "embed_dim") c.embed_dim = value.get<Index>();
    else if (key == "image_side") c.image_side = value.get<Index>();
    else if (key == "num_classes") c.num_classes = value.get<Index>();
    else if (key == "feature_width") c.feature_width = value.get<Index>();
    else if (key == "max_positions") c.max_positions = value.get<Index>();
    else if (key == "generator_noise") c.generator_noise = value.get<double>();
    else if (key == "zero_biases") c.zero_biases = value.get<bool>();
    else if (key == "rng_seed") c.rng_seed = value.get<std::uint64_t>();
    else throw ConfigError("adapters.toy." + key + ": unknown key");
  }
  c.validate();
  return c;
}

nlohmann::json toy_config_to_json(const ToyStackConfig& c) {
  return {{"source_vocab_size", c.source_vocab_size}, {"target_vocab_size", c.target_vocab_size},
          {"embed_dim", c.embed_dim},                 {"image_side", c.image_side},
          {"num_classes", c.num_classes},             {"feature_width", c.feature_width},
          {"max_positions", c.max_positions},         {"generator_noise", c.generator_noise},
          {"zero_biases", c.zero_biases},             {"rng_seed", c.rng_seed}};
}

}  // namespace promptlens
