// Copyright 2026 The promptlens Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "promptlens/core.hpp"
#include "promptlens/tokenizer.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace promptlens {

/// The only learnable parameter: P vectors in the masked LM's embedding space.
struct SoftPrompt {
  Matrix vectors;  // P x d

  Index length() const { return vectors.rows(); }
  Index dim() const { return vectors.cols(); }
  void validate() const;
};

enum class LayerRole { kPenultimate, kOutput };
enum class NeuronKind { kFeature, kClass };

/// A set of neurons of one classifier layer. Feature neurons live in the
/// penultimate layer, class neurons in the (softmaxed) output layer.
struct NeuronSpec {
  LayerRole layer_role = LayerRole::kOutput;
  std::vector<Index> indices;

  NeuronKind kind() const {
    return layer_role == LayerRole::kOutput ? NeuronKind::kClass : NeuronKind::kFeature;
  }
  static NeuronSpec output(std::vector<Index> classes) { return {LayerRole::kOutput, std::move(classes)}; }
  static NeuronSpec penultimate(std::vector<Index> features) {
    return {LayerRole::kPenultimate, std::move(features)};
  }
  void validate() const;
  bool operator==(const NeuronSpec&) const = default;
};

/// K selected activations: raw values for feature neurons, probabilities for
/// class neurons.
struct ClassifierOutput {
  Vector selected_activations;
  std::vector<NeuronKind> neuron_kinds;

  Index size() const { return selected_activations.size(); }
};

/// Full classifier response from which neuron selections are read.
struct ClassifierForward {
  Vector features;       // penultimate layer
  Vector probabilities;  // softmax over classes
};

struct AdapterCapabilities {
  bool thread_safe = true;            // concurrent read-only inference allowed
  bool safety_checker = false;        // generator flags unsafe images
  bool weight_introspection = false;  // classifier exposes its output-layer weights
};

/// Masked LM with an embedding-space prefix. Logits are returned for every mask
/// slot of the input, one row per slot.
class MaskedLanguageModel {
 public:
  virtual ~MaskedLanguageModel() = default;
  virtual const Tokenizer& tokenizer() const = 0;
  virtual TokenId mask_id() const = 0;
  virtual Index embed_dim() const = 0;
  virtual Matrix forward(const SoftPrompt& prompt, const TokenSequence& input) const = 0;
  /// Gradient w.r.t. the soft prompt given the gradient w.r.t. the logits.
  virtual Matrix backward(const SoftPrompt& prompt, const TokenSequence& input,
                          const Matrix& logit_grad) const = 0;
  virtual AdapterCapabilities capabilities() const { return {}; }
  virtual std::string parameter_digest() const { return {}; }
};

/// A conditioning prompt whose mask slots carry (relaxed) one-hot rows over the
/// target vocabulary instead of token ids.
struct RelaxedSequence {
  TokenSequence sequence;           // slot positions hold the pad id
  std::vector<Index> slot_positions;
  Matrix slot_vectors;              // N x V_tgt; zero rows contribute nothing
};

class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual const Tokenizer& tokenizer() const = 0;
  virtual Index embed_dim() const = 0;
  /// Token substituted for untranslatable mask slots in the prompt string.
  virtual TokenId pad_id() const = 0;
  virtual Vector encode(const TokenSequence& tokens) const = 0;
  virtual Vector encode_relaxed(const RelaxedSequence& input) const = 0;
  /// Gradient w.r.t. input.slot_vectors.
  virtual Matrix backward_relaxed(const RelaxedSequence& input, const Vector& embedding_grad) const = 0;
  virtual AdapterCapabilities capabilities() const { return {}; }
  virtual std::string parameter_digest() const { return {}; }

  Vector encode_text(std::string_view text) const { return encode(tokenizer().encode_sequence(text)); }
};

class ImageGenerator {
 public:
  virtual ~ImageGenerator() = default;
  virtual Index conditioning_dim() const = 0;
  virtual Image generate(const Vector& conditioning, int steps, std::uint64_t seed) const = 0;
  virtual Vector backward(const Vector& conditioning, int steps, std::uint64_t seed,
                          const Image& image_grad) const = 0;
  /// Only consulted when capabilities().safety_checker is set.
  virtual bool is_safe(const Image&) const { return true; }
  virtual AdapterCapabilities capabilities() const { return {}; }
  virtual std::string parameter_digest() const { return {}; }
};

class VisualClassifier {
 public:
  virtual ~VisualClassifier() = default;
  virtual Index num_classes() const = 0;
  virtual Index feature_width() const = 0;
  virtual ClassifierForward forward(const Image& image) const = 0;
  virtual Image backward(const Image& image, const Vector& feature_grad,
                         const Vector& probability_grad) const = 0;
  /// Output-layer weights (num_classes x feature_width) when introspectable.
  virtual std::optional<Matrix> output_weights() const { return std::nullopt; }
  virtual AdapterCapabilities capabilities() const { return {}; }
  virtual std::string parameter_digest() const { return {}; }
};

/// Image and text encoders sharing one embedding space.
class JointEncoder {
 public:
  virtual ~JointEncoder() = default;
  virtual Vector encode_image(const Image& image) const = 0;
  virtual Vector encode_text(std::string_view text) const = 0;
  virtual std::optional<double> logit_scale() const { return std::nullopt; }
};

class SentenceEmbedder {
 public:
  virtual ~SentenceEmbedder() = default;
  virtual Vector embed(std::string_view text) const = 0;
};

/// Reads the neurons named by the specs, concatenated in order.
ClassifierOutput select_neurons(const ClassifierForward& forward, const std::vector<NeuronSpec>& specs);

/// Scatters a gradient w.r.t. the selected activations back onto the full
/// feature and probability vectors.
std::pair<Vector, Vector> scatter_neuron_grad(const ClassifierForward& forward,
                                              const std::vector<NeuronSpec>& specs,
                                              const Vector& selected_grad);

/// The k penultimate neurons with the largest weight to a class, descending,
/// ties broken by lower index.
NeuronSpec select_top_neurons(const VisualClassifier& classifier, Index class_index, Index k = 5);

}  // namespace promptlens
