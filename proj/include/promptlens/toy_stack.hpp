// Copyright 2026 The promptlens Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "promptlens/adapters.hpp"

#include <memory>

namespace promptlens {

/// Sizes and seed of the deterministic desk-scale reference stack. Every toy
/// component is linear (plus a softmax head), so exhaustive and
/// finite-difference oracles are cheap.
struct ToyStackConfig {
  Index source_vocab_size = 16;
  Index target_vocab_size = 12;
  Index embed_dim = 8;
  Index image_side = 4;
  Index num_classes = 3;
  Index feature_width = 6;
  Index max_positions = 32;
  double generator_noise = 0.0;
  bool zero_biases = false;
  std::uint64_t rng_seed = 7;

  void validate() const;
};

/// Source (WordPiece-style) and target (end-of-word-style) vocabularies.
/// The default sizes use a curated word list; other sizes are padded with
/// synthetic shared words.
Vocabulary toy_source_vocabulary(const ToyStackConfig& config);
Vocabulary toy_target_vocabulary(const ToyStackConfig& config);

/// logits_i = W * sum_r(p_r) + bias + positional(position of slot i)
class ToyMaskedLm final : public MaskedLanguageModel {
 public:
  ToyMaskedLm(Tokenizer tokenizer, Matrix weights, Vector bias, Matrix positional);

  const Tokenizer& tokenizer() const override { return tokenizer_; }
  TokenId mask_id() const override { return mask_id_; }
  Index embed_dim() const override { return weights_.cols(); }
  Matrix forward(const SoftPrompt& prompt, const TokenSequence& input) const override;
  Matrix backward(const SoftPrompt& prompt, const TokenSequence& input, const Matrix& logit_grad) const override;
  std::string parameter_digest() const override;

  const Matrix& weights() const { return weights_; }
  const Vector& bias() const { return bias_; }
  const Matrix& positional() const { return positional_; }

 private:
  std::vector<Index> mask_positions(const TokenSequence& input) const;
  void check(const SoftPrompt& prompt, const TokenSequence& input) const;

  Tokenizer tokenizer_;
  TokenId mask_id_;
  Matrix weights_;     // V_src x d
  Vector bias_;        // V_src
  Matrix positional_;  // max_positions x V_src
};

/// Bag-of-tokens encoder: e = sum of embedding-table rows. The pad row is zero.
class ToyTextEncoder final : public TextEncoder {
 public:
  ToyTextEncoder(Tokenizer tokenizer, Matrix table);

  const Tokenizer& tokenizer() const override { return tokenizer_; }
  Index embed_dim() const override { return table_.cols(); }
  TokenId pad_id() const override { return tokenizer_.vocabulary().id("<|pad|>"); }
  Vector encode(const TokenSequence& tokens) const override;
  Vector encode_relaxed(const RelaxedSequence& input) const override;
  Matrix backward_relaxed(const RelaxedSequence& input, const Vector& embedding_grad) const override;
  std::string parameter_digest() const override;

  const Matrix& table() const { return table_; }

 private:
  Tokenizer tokenizer_;
  Matrix table_;  // V_tgt x d
};

/// image = reshape(G * e) (+ optional seeded Gaussian noise).
class ToyGenerator final : public ImageGenerator {
 public:
  ToyGenerator(Matrix weights, Index image_side, double noise = 0.0);

  Index conditioning_dim() const override { return weights_.cols(); }
  Image generate(const Vector& conditioning, int steps, std::uint64_t seed) const override;
  Vector backward(const Vector& conditioning, int steps, std::uint64_t seed, const Image& image_grad) const override;
  std::string parameter_digest() const override;

  const Matrix& weights() const { return weights_; }
  Index image_side() const { return side_; }

 private:
  Matrix weights_;  // side^2 x d
  Index side_;
  double noise_;
};

/// features = F x + b_f, probabilities = softmax(C features + b_c).
class ToyClassifier final : public VisualClassifier {
 public:
  ToyClassifier(Matrix feature_weights, Vector feature_bias, Matrix output_weights, Vector output_bias);

  Index num_classes() const override { return output_weights_.rows(); }
  Index feature_width() const override { return feature_weights_.rows(); }
  ClassifierForward forward(const Image& image) const override;
  Image backward(const Image& image, const Vector& feature_grad, const Vector& probability_grad) const override;
  std::optional<Matrix> output_weights() const override { return output_weights_; }
  AdapterCapabilities capabilities() const override { return {.weight_introspection = true}; }
  std::string parameter_digest() const override;

  /// Selected neurons of one layer.
  ClassifierOutput classify(const Image& image, const NeuronSpec& spec) const;

 private:
  Matrix feature_weights_;  // H x side^2
  Vector feature_bias_;
  Matrix output_weights_;   // classes x H
  Vector output_bias_;
};

/// Deterministic word vectors: each lowercased word maps to a seeded Gaussian
/// vector; a text embeds as the sum of its word vectors.
class HashingTextEmbedder final : public SentenceEmbedder {
 public:
  HashingTextEmbedder(Index dim, std::uint64_t seed) : dim_(dim), seed_(seed) {}
  Vector embed(std::string_view text) const override;
  Vector word_vector(std::string_view word) const;

 private:
  Index dim_;
  std::uint64_t seed_;
};

/// Linear image projection plus hashed text vectors in one space.
class ToyJointEncoder final : public JointEncoder {
 public:
  ToyJointEncoder(Matrix image_projection, HashingTextEmbedder text, std::optional<double> logit_scale = {});
  Vector encode_image(const Image& image) const override;
  Vector encode_text(std::string_view text) const override { return text_.embed(text); }
  std::optional<double> logit_scale() const override { return logit_scale_; }

 private:
  Matrix projection_;
  HashingTextEmbedder text_;
  std::optional<double> logit_scale_;
};

/// The whole toy stack, with seed-derived fixed weights.
struct ToyStack {
  ToyStackConfig config;
  std::shared_ptr<ToyMaskedLm> masked_lm;
  std::shared_ptr<ToyTextEncoder> text_encoder;
  std::shared_ptr<ToyGenerator> generator;
  std::shared_ptr<ToyClassifier> classifier;
  std::shared_ptr<ToyJointEncoder> joint_encoder;
  std::shared_ptr<HashingTextEmbedder> sentence_embedder;

  static ToyStack build(const ToyStackConfig& config = {});
};

}  // namespace promptlens
