// Copyright 2026 The promptlens Authors
// SPDX-License-Identifier: Apache-2.0

#include "promptlens/adapters.hpp"

#include <algorithm>
#include <numeric>
#include <set>

namespace promptlens {

void SoftPrompt::validate() const {
  if (vectors.rows() < 1 || vectors.cols() < 1) throw ConfigError("soft prompt must have P >= 1 and d >= 1");
  if (!vectors.allFinite()) throw DomainError("soft prompt has non-finite entries");
}

void NeuronSpec::validate() const {
  if (indices.empty()) throw ConfigError("neuron spec selects no neurons");
  std::set<Index> seen(indices.begin(), indices.end());
  if (seen.size() != indices.size()) throw ConfigError("neuron spec indices must be distinct");
}

namespace {

const Vector& layer_of(const ClassifierForward& forward, LayerRole role) {
  return role == LayerRole::kOutput ? forward.probabilities : forward.features;
}

}  // namespace

ClassifierOutput select_neurons(const ClassifierForward& forward, const std::vector<NeuronSpec>& specs) {
  Index total = 0;
  for (const auto& s : specs) total += static_cast<Index>(s.indices.size());
  if (total == 0) throw UsageError("no neurons selected");
  ClassifierOutput out;
  out.selected_activations.resize(total);
  Index k = 0;
  for (const auto& spec : specs) {
    const Vector& layer = layer_of(forward, spec.layer_role);
    for (Index idx : spec.indices) {
      if (idx < 0 || idx >= layer.size()) throw UsageError("neuron index " + std::to_string(idx) + " out of range");
      out.selected_activations(k++) = layer(idx);
      out.neuron_kinds.push_back(spec.kind());
    }
  }
  return out;
}

std::pair<Vector, Vector> scatter_neuron_grad(const ClassifierForward& forward,
                                              const std::vector<NeuronSpec>& specs,
                                              const Vector& selected_grad) {
  Vector feature_grad = Vector::Zero(forward.features.size());
  Vector prob_grad = Vector::Zero(forward.probabilities.size());
  Index k = 0;
  for (const auto& spec : specs) {
    Vector& target = spec.layer_role == LayerRole::kOutput ? prob_grad : feature_grad;
    for (Index idx : spec.indices) target(idx) += selected_grad(k++);
  }
  return {feature_grad, prob_grad};
}

NeuronSpec select_top_neurons(const VisualClassifier& classifier, Index class_index, Index k) {
  if (!classifier.capabilities().weight_introspection)
    throw CapabilityError("classifier adapter does not expose output-layer weights");
  const auto weights = classifier.output_weights();
  if (!weights) throw CapabilityError("classifier adapter returned no output-layer weights");
  if (class_index < 0 || class_index >= weights->rows()) throw UsageError("class index out of range");
  const Index width = weights->cols();
  if (k < 1 || k > width) throw UsageError("k must lie in [1, penultimate width]");
  std::vector<Index> order(static_cast<std::size_t>(width));
  std::iota(order.begin(), order.end(), Index{0});
  const auto row = weights->row(class_index);
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return row(a) > row(b); });
  order.resize(static_cast<std::size_t>(k));
  return NeuronSpec::penultimate(std::move(order));
}

}  // namespace promptlens
