// Copyright 2026 The promptlens Authors
// SPDX-License-Identifier: Apache-2.0

#include "promptlens/toy_stack.hpp"

#include "promptlens/hash.hpp"
#include "promptlens/math.hpp"
#include "promptlens/rng.hpp"

#include <cctype>
#include <cmath>

namespace promptlens {
namespace {

const std::vector<std::string> kSourceSpecials = {"[PAD]", "[UNK]", "[MASK]"};
const std::vector<std::string> kTargetSpecials = {"<|pad|>", "<|unk|>"};
const std::vector<std::string> kBaseWords = {"a", "picture", "of", "with", "and", "."};

Matrix gaussian(Rng& rng, Index rows, Index cols, double scale) {
  Matrix m(rows, cols);
  for (Index c = 0; c < cols; ++c)
    for (Index r = 0; r < rows; ++r) m(r, c) = scale * rng.normal();
  return m;
}

Vector gaussian(Rng& rng, Index n, double scale) { return gaussian(rng, n, 1, scale).col(0); }

}  // namespace

void ToyStackConfig::validate() const {
  if (source_vocab_size < 9 || target_vocab_size < 8)
    throw ConfigError("toy vocabularies need at least 9 source and 8 target tokens");
  if (embed_dim < 1 || image_side < 1 || num_classes < 1 || feature_width < 1 || max_positions < 1)
    throw ConfigError("toy stack sizes must be positive");
  if (generator_noise < 0) throw ConfigError("toy generator noise must be non-negative");
}

Vocabulary toy_source_vocabulary(const ToyStackConfig& config) {
  config.validate();
  std::vector<std::string> tokens = kSourceSpecials;
  tokens.insert(tokens.end(), kBaseWords.begin(), kBaseWords.end());
  if (config.source_vocab_size == 16) {
    for (const char* w : {"tiger", "lion", "sea", "woods", "fence", "##s", "boat"}) tokens.emplace_back(w);
  } else {
    for (Index k = 0; static_cast<Index>(tokens.size()) < config.source_vocab_size; ++k)
      tokens.push_back("w" + std::to_string(k));
  }
  return Vocabulary("toy-src", std::move(tokens), kSourceSpecials);
}

Vocabulary toy_target_vocabulary(const ToyStackConfig& config) {
  config.validate();
  std::vector<std::string> tokens = kTargetSpecials;
  for (const auto& w : kBaseWords) tokens.push_back(w + "</w>");
  if (config.target_vocab_size == 12) {
    for (const char* w : {"tiger</w>", "lion</w>", "sea</w>", "woods</w>"}) tokens.emplace_back(w);
  } else {
    for (Index k = 0; static_cast<Index>(tokens.size()) < config.target_vocab_size; ++k)
      tokens.push_back("w" + std::to_string(k) + "</w>");
  }
  return Vocabulary("toy-tgt", std::move(tokens), kTargetSpecials);
}

// --- masked LM --------------------------------------------------------------

ToyMaskedLm::ToyMaskedLm(Tokenizer tokenizer, Matrix weights, Vector bias, Matrix positional)
    : tokenizer_(std::move(tokenizer)),
      weights_(std::move(weights)),
      bias_(std::move(bias)),
      positional_(std::move(positional)) {
  mask_id_ = tokenizer_.vocabulary().id("[MASK]");
  const Index v = tokenizer_.vocabulary().size();
  if (weights_.rows() != v || bias_.size() != v || positional_.cols() != v)
    throw ConfigError("toy masked LM weights do not match the vocabulary size");
}

std::vector<Index> ToyMaskedLm::mask_positions(const TokenSequence& input) const {
  std::vector<Index> out;
  for (std::size_t i = 0; i < input.token_ids.size(); ++i)
    if (input.token_ids[i] == mask_id_) out.push_back(static_cast<Index>(i));
  return out;
}

void ToyMaskedLm::check(const SoftPrompt& prompt, const TokenSequence& input) const {
  if (prompt.dim() != embed_dim())
    throw ConfigError("soft prompt dimension " + std::to_string(prompt.dim()) + " does not match embed_dim " +
                      std::to_string(embed_dim()));
  if (prompt.length() < 1) throw ConfigError("soft prompt needs at least one vector");
  if (static_cast<Index>(input.token_ids.size()) > positional_.rows())
    throw ConfigError("input longer than the toy masked LM's position table");
}

Matrix ToyMaskedLm::forward(const SoftPrompt& prompt, const TokenSequence& input) const {
  check(prompt, input);
  const auto slots = mask_positions(input);
  if (slots.empty()) throw UsageError("input has no mask slot");
  const Vector shared = weights_ * prompt.vectors.colwise().sum().transpose() + bias_;
  Matrix logits(static_cast<Index>(slots.size()), weights_.rows());
  for (std::size_t i = 0; i < slots.size(); ++i)
    logits.row(static_cast<Index>(i)) = (shared + positional_.row(slots[i]).transpose()).transpose();
  return logits;
}

Matrix ToyMaskedLm::backward(const SoftPrompt& prompt, const TokenSequence& input, const Matrix& logit_grad) const {
  check(prompt, input);
  const Vector row_grad = weights_.transpose() * logit_grad.colwise().sum().transpose();
  return Matrix::Ones(prompt.length(), 1) * row_grad.transpose();
}

std::string ToyMaskedLm::parameter_digest() const {
  return ParameterDigest().add(weights_).add(bias_).add(positional_).hex();
}

// --- text encoder -----------------------------------------------------------

ToyTextEncoder::ToyTextEncoder(Tokenizer tokenizer, Matrix table)
    : tokenizer_(std::move(tokenizer)), table_(std::move(table)) {
  if (table_.rows() != tokenizer_.vocabulary().size())
    throw ConfigError("toy text encoder table does not match the vocabulary size");
}

Vector ToyTextEncoder::encode(const TokenSequence& tokens) const {
  Vector e = Vector::Zero(table_.cols());
  for (TokenId id : tokens.token_ids) {
    if (id < 0 || id >= table_.rows()) throw UsageError("token id out of range for the text encoder");
    e += table_.row(id).transpose();
  }
  return e;
}

Vector ToyTextEncoder::encode_relaxed(const RelaxedSequence& input) const {
  if (input.slot_vectors.cols() != table_.rows() ||
      input.slot_vectors.rows() != static_cast<Index>(input.slot_positions.size()))
    throw ConfigError("relaxed slot vectors do not match the target vocabulary");
  Vector e = Vector::Zero(table_.cols());
  std::vector<bool> is_slot(input.sequence.token_ids.size(), false);
  for (Index pos : input.slot_positions) is_slot[static_cast<std::size_t>(pos)] = true;
  for (std::size_t i = 0; i < input.sequence.token_ids.size(); ++i)
    if (!is_slot[i]) e += table_.row(input.sequence.token_ids[i]).transpose();
  e += (input.slot_vectors * table_).colwise().sum().transpose();
  return e;
}

Matrix ToyTextEncoder::backward_relaxed(const RelaxedSequence& input, const Vector& embedding_grad) const {
  const RowVector per_slot = (table_ * embedding_grad).transpose();
  return Matrix::Ones(static_cast<Index>(input.slot_positions.size()), 1) * per_slot;
}

std::string ToyTextEncoder::parameter_digest() const { return ParameterDigest().add(table_).hex(); }

// --- generator --------------------------------------------------------------

ToyGenerator::ToyGenerator(Matrix weights, Index image_side, double noise)
    : weights_(std::move(weights)), side_(image_side), noise_(noise) {
  if (weights_.rows() != side_ * side_) throw ConfigError("toy generator rows must equal image_side^2");
}

Image ToyGenerator::generate(const Vector& conditioning, int /*steps*/, std::uint64_t seed) const {
  if (conditioning.size() != weights_.cols())
    throw ConfigError("conditioning dimension " + std::to_string(conditioning.size()) + " does not match " +
                      std::to_string(weights_.cols()));
  Vector pixels = weights_ * conditioning;
  if (noise_ > 0) {
    Rng rng(seed);
    for (Index i = 0; i < pixels.size(); ++i) pixels(i) += noise_ * rng.normal();
  }
  return unflatten(pixels, side_);
}

Vector ToyGenerator::backward(const Vector& conditioning, int /*steps*/, std::uint64_t /*seed*/,
                              const Image& image_grad) const {
  if (conditioning.size() != weights_.cols()) throw ConfigError("conditioning dimension mismatch");
  return weights_.transpose() * flatten(image_grad);
}

std::string ToyGenerator::parameter_digest() const { return ParameterDigest().add(weights_).hex(); }

// --- classifier -------------------------------------------------------------

ToyClassifier::ToyClassifier(Matrix feature_weights, Vector feature_bias, Matrix output_weights, Vector output_bias)
    : feature_weights_(std::move(feature_weights)),
      feature_bias_(std::move(feature_bias)),
      output_weights_(std::move(output_weights)),
      output_bias_(std::move(output_bias)) {
  if (feature_bias_.size() != feature_weights_.rows() || output_weights_.cols() != feature_weights_.rows() ||
      output_bias_.size() != output_weights_.rows())
    throw ConfigError("toy classifier weight shapes are inconsistent");
}

ClassifierForward ToyClassifier::forward(const Image& image) const {
  if (image.size() != feature_weights_.cols()) throw ConfigError("image shape does not match the classifier input");
  ClassifierForward out;
  out.features = feature_weights_ * flatten(image) + feature_bias_;
  out.probabilities = softmax(output_weights_ * out.features + output_bias_);
  return out;
}

Image ToyClassifier::backward(const Image& image, const Vector& feature_grad, const Vector& probability_grad) const {
  const auto fwd = forward(image);
  const Vector logit_grad = softmax_vjp(fwd.probabilities, probability_grad);
  const Vector total_feature_grad = feature_grad + output_weights_.transpose() * logit_grad;
  const Index side = static_cast<Index>(std::lround(std::sqrt(static_cast<double>(image.size()))));
  return unflatten(feature_weights_.transpose() * total_feature_grad, side);
}

std::string ToyClassifier::parameter_digest() const {
  return ParameterDigest().add(feature_weights_).add(feature_bias_).add(output_weights_).add(output_bias_).hex();
}

ClassifierOutput ToyClassifier::classify(const Image& image, const NeuronSpec& spec) const {
  return select_neurons(forward(image), {spec});
}

// --- text embeddings ----------------------------------------------------------

Vector HashingTextEmbedder::word_vector(std::string_view word) const {
  Rng rng(derive_seed(seed_, to_lower(word)));
  Vector v(dim_);
  for (Index i = 0; i < dim_; ++i) v(i) = rng.normal();
  return v;
}

Vector HashingTextEmbedder::embed(std::string_view text) const {
  Vector e = Vector::Zero(dim_);
  std::string word;
  auto flush = [&] {
    if (!word.empty()) e += word_vector(word);
    word.clear();
  };
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isalnum(u) || u >= 0x80 || c == '-' || c == '\'') {
      word.push_back(static_cast<char>(std::tolower(u)));
    } else {
      flush();
    }
  }
  flush();
  return e;
}

ToyJointEncoder::ToyJointEncoder(Matrix image_projection, HashingTextEmbedder text, std::optional<double> logit_scale)
    : projection_(std::move(image_projection)), text_(std::move(text)), logit_scale_(logit_scale) {}

Vector ToyJointEncoder::encode_image(const Image& image) const {
  if (image.size() != projection_.cols()) throw ConfigError("image shape does not match the joint encoder");
  return projection_ * flatten(image);
}

// --- assembly ---------------------------------------------------------------

ToyStack ToyStack::build(const ToyStackConfig& config) {
  config.validate();
  ToyStack stack;
  stack.config = config;
  Rng rng(derive_seed(config.rng_seed, "toy:weights"));
  const Index d = config.embed_dim;
  const Index pixels = config.image_side * config.image_side;
  const double bias_scale = config.zero_biases ? 0.0 : 1.0;

  auto source = Tokenizer::word_piece(toy_source_vocabulary(config));
  auto target = Tokenizer::end_of_word(toy_target_vocabulary(config));
  const Index vs = source.vocabulary().size();
  const Index vt = target.vocabulary().size();

  Matrix lm_weights = gaussian(rng, vs, d, 1.0 / std::sqrt(double(d)));
  Vector lm_bias = gaussian(rng, vs, 0.5 * bias_scale);
  Matrix positional = gaussian(rng, config.max_positions, vs, 0.25 * bias_scale);
  stack.masked_lm = std::make_shared<ToyMaskedLm>(source, std::move(lm_weights), std::move(lm_bias),
                                                  std::move(positional));

  Matrix table = gaussian(rng, vt, d, 1.0);
  table.row(target.vocabulary().id("<|pad|>")).setZero();
  stack.text_encoder = std::make_shared<ToyTextEncoder>(target, std::move(table));

  stack.generator = std::make_shared<ToyGenerator>(gaussian(rng, pixels, d, 1.0 / std::sqrt(double(d))),
                                                   config.image_side, config.generator_noise);

  Matrix fw = gaussian(rng, config.feature_width, pixels, 1.0 / std::sqrt(double(pixels)));
  Vector fb = gaussian(rng, config.feature_width, 0.1 * bias_scale);
  Matrix cw = gaussian(rng, config.num_classes, config.feature_width, 1.0 / std::sqrt(double(config.feature_width)));
  Vector cb = gaussian(rng, config.num_classes, 0.1 * bias_scale);
  stack.classifier = std::make_shared<ToyClassifier>(std::move(fw), std::move(fb), std::move(cw), std::move(cb));

  HashingTextEmbedder joint_text(d, derive_seed(config.rng_seed, "toy:joint-text"));
  stack.joint_encoder =
      std::make_shared<ToyJointEncoder>(gaussian(rng, d, pixels, 1.0), std::move(joint_text), std::nullopt);
  stack.sentence_embedder =
      std::make_shared<HashingTextEmbedder>(32, derive_seed(config.rng_seed, "toy:sentence"));
  return stack;
}

}  // namespace promptlens
