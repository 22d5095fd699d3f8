// Copyright 2026 The promptlens Authors
// SPDX-License-Identifier: Apache-2.0

#include "promptlens/prompt.hpp"

#include "promptlens/math.hpp"

#include <limits>
#include <sstream>

namespace promptlens {

std::string PromptTemplate::text() const {
  std::string out;
  for (const auto& part : parts) {
    const std::string piece = part.is_mask ? std::string(kMaskPlaceholder) : part.text;
    if (piece.empty()) continue;
    const bool glue = piece.size() == 1 && std::ispunct(static_cast<unsigned char>(piece[0]));
    if (!out.empty() && !glue) out.push_back(' ');
    out += piece;
  }
  return out;
}

PromptTemplate render_template(std::string_view fixed_text, int mask_count, const Tokenizer& tokenizer,
                               TokenId mask_id, MaskLayout layout, std::string_view terminator) {
  if (mask_count < 0) throw UsageError("mask_count must be non-negative");
  PromptTemplate out;
  out.fixed_text = std::string(fixed_text);
  out.mask_count = mask_count;

  if (fixed_text.find(kMaskPlaceholder) != std::string_view::npos) {
    int found = 0;
    std::size_t start = 0;
    while (true) {
      const auto hit = fixed_text.find(kMaskPlaceholder, start);
      const auto text = fixed_text.substr(start, hit == std::string_view::npos ? std::string_view::npos : hit - start);
      if (!text.empty()) out.parts.push_back({false, std::string(text)});
      if (hit == std::string_view::npos) break;
      out.parts.push_back({true, {}});
      ++found;
      start = hit + kMaskPlaceholder.size();
    }
    if (found != mask_count)
      throw UsageError("template text holds " + std::to_string(found) + " mask placeholders, expected " +
                       std::to_string(mask_count));
  } else {
    if (!fixed_text.empty()) out.parts.push_back({false, std::string(fixed_text)});
    for (int i = 0; i < mask_count; ++i) {
      if (layout == MaskLayout::kConnective && i > 0) out.parts.push_back({false, i == 1 ? "with" : "and"});
      out.parts.push_back({true, {}});
    }
    if (!terminator.empty()) out.parts.push_back({false, std::string(terminator)});
  }

  out.rendered.vocab_id = tokenizer.vocabulary().vocab_id();
  for (const auto& part : out.parts) {
    if (part.is_mask) {
      out.mask_positions.push_back(static_cast<Index>(out.rendered.token_ids.size()));
      out.rendered.token_ids.push_back(mask_id);
    } else {
      const auto ids = tokenizer.encode(part.text);
      out.rendered.token_ids.insert(out.rendered.token_ids.end(), ids.begin(), ids.end());
    }
  }
  return out;
}

// --- sampling ---------------------------------------------------------------

TokenSelection sample_with_noise(const Matrix& logits, double temperature, const Matrix& noise) {
  if (!(temperature > 0)) throw DomainError("Gumbel-softmax temperature must be positive");
  if (logits.hasNaN()) throw DomainError("NaN in masked-LM logits");
  if (noise.rows() != logits.rows() || noise.cols() != logits.cols()) throw UsageError("noise shape mismatch");
  TokenSelection out;
  out.temperature = temperature;
  out.noise = noise;
  out.one_hots = Matrix::Zero(logits.rows(), logits.cols());
  out.relaxed.resize(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    const RowVector perturbed = logits.row(i) + noise.row(i);
    if (!(perturbed.maxCoeff() > -std::numeric_limits<double>::infinity()))
      throw DomainError("every token of a slot is excluded");
    const Index hot = argmax(perturbed.transpose());
    out.one_hots(i, hot) = 1.0;
    out.source_ids.push_back(static_cast<TokenId>(hot));
    out.relaxed.row(i) = softmax(perturbed.transpose(), temperature).transpose();
  }
  return out;
}

TokenSelection sample_hard_tokens(const Matrix& logits, double temperature, Rng& rng) {
  Matrix noise(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i)
    for (Index j = 0; j < logits.cols(); ++j) noise(i, j) = rng.gumbel();
  return sample_with_noise(logits, temperature, noise);
}

Matrix straight_through_backward(const TokenSelection& selection, const Matrix& one_hot_grad) {
  Matrix out(one_hot_grad.rows(), one_hot_grad.cols());
  for (Index i = 0; i < one_hot_grad.rows(); ++i)
    out.row(i) = softmax_vjp(selection.relaxed.row(i).transpose(), one_hot_grad.row(i).transpose(),
                             selection.temperature)
                     .transpose();
  return out;
}

// --- vocabulary map ---------------------------------------------------------

VocabularyMap::VocabularyMap(std::vector<TokenId> rows, Index target_size)
    : rows_(std::move(rows)), target_size_(target_size) {
  for (TokenId t : rows_)
    if (t != kUnmapped && (t < 0 || t >= target_size_)) throw ConfigError("vocabulary map target out of range");
}

std::optional<TokenId> VocabularyMap::target_of(TokenId source) const {
  if (source < 0 || source >= source_size()) throw UsageError("source id out of range for the vocabulary map");
  const TokenId t = rows_[static_cast<std::size_t>(source)];
  if (t == kUnmapped) return std::nullopt;
  return t;
}

Index VocabularyMap::nonzeros() const {
  return static_cast<Index>(std::count_if(rows_.begin(), rows_.end(), [](TokenId t) { return t != kUnmapped; }));
}

Matrix VocabularyMap::apply(const Matrix& source_rows) const {
  if (source_rows.cols() != source_size()) throw UsageError("vectors do not index the source vocabulary");
  Matrix out = Matrix::Zero(source_rows.rows(), target_size_);
  for (Index s = 0; s < source_size(); ++s) {
    const TokenId t = rows_[static_cast<std::size_t>(s)];
    if (t != kUnmapped) out.col(t) += source_rows.col(s);
  }
  return out;
}

Matrix VocabularyMap::apply_transpose(const Matrix& target_rows) const {
  if (target_rows.cols() != target_size_) throw UsageError("vectors do not index the target vocabulary");
  Matrix out = Matrix::Zero(target_rows.rows(), source_size());
  for (Index s = 0; s < source_size(); ++s) {
    const TokenId t = rows_[static_cast<std::size_t>(s)];
    if (t != kUnmapped) out.col(s) = target_rows.col(t);
  }
  return out;
}

Matrix VocabularyMap::dense() const { return apply(Matrix::Identity(source_size(), source_size())); }

std::string VocabularyMap::serialize() const {
  std::ostringstream out;
  for (std::size_t s = 0; s < rows_.size(); ++s)
    if (rows_[s] != kUnmapped) out << s << '\t' << rows_[s] << '\n';
  return out.str();
}

VocabularyMap VocabularyMap::parse(std::string_view text, Index source_size, Index target_size) {
  std::vector<TokenId> rows(static_cast<std::size_t>(source_size), kUnmapped);
  std::istringstream in{std::string(text)};
  std::string line;
  long previous = -1;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream fields(line);
    long s = 0, t = 0;
    if (!(fields >> s >> t)) throw ConfigError("vocabulary map line " + std::to_string(line_no) + " is malformed");
    if (s <= previous) throw ConfigError("vocabulary map must be sorted by unique source id");
    if (s < 0 || s >= source_size) throw ConfigError("vocabulary map source id out of range");
    rows[static_cast<std::size_t>(s)] = static_cast<TokenId>(t);
    previous = s;
  }
  return VocabularyMap(std::move(rows), target_size);
}

VocabularyMap build_vocab_map(const Tokenizer& source, const Tokenizer& target) {
  const auto& vocab = source.vocabulary();
  std::vector<TokenId> rows(static_cast<std::size_t>(vocab.size()), kUnmapped);
  for (TokenId s = 0; s < vocab.size(); ++s) {
    if (vocab.is_special(s)) continue;
    const std::string surface = source.surface_form(s);
    if (surface.empty()) continue;
    const auto encoded = target.encode(surface);
    if (encoded.size() != 1) continue;
    const TokenId t = encoded.front();
    if (target.vocabulary().is_special(t)) continue;  // [UNK] and friends
    if (target.surface_form(t) != surface) continue;
    rows[static_cast<std::size_t>(s)] = t;
  }
  return VocabularyMap(std::move(rows), target.vocabulary().size());
}

TokenSelection translate_tokens(TokenSelection selection, const VocabularyMap& map) {
  selection.target_vectors = map.apply(selection.one_hots);
  selection.target_ids.clear();
  for (TokenId s : selection.source_ids) selection.target_ids.push_back(map.target_of(s).value_or(kUnmapped));
  return selection;
}

// --- conditioning prompt ------------------------------------------------------

bool ConditioningPrompt::all_unmapped() const {
  return !slot_unmapped.empty() && std::all_of(slot_unmapped.begin(), slot_unmapped.end(), [](bool b) { return b; });
}

bool ConditioningPrompt::any_unmapped() const {
  return std::any_of(slot_unmapped.begin(), slot_unmapped.end(), [](bool b) { return b; });
}

ConditioningPrompt assemble_conditioning_prompt(const PromptTemplate& prompt_template, const TokenSelection& selection,
                                                const Tokenizer& target, TokenId pad_id) {
  if (static_cast<int>(selection.target_ids.size()) != prompt_template.mask_count)
    throw UsageError("selection must carry one translated token per mask slot");
  ConditioningPrompt out;
  out.tokens.vocab_id = target.vocabulary().vocab_id();
  std::size_t slot = 0;
  for (const auto& part : prompt_template.parts) {
    if (part.is_mask) {
      const TokenId t = selection.target_ids[slot++];
      out.slot_positions.push_back(static_cast<Index>(out.tokens.token_ids.size()));
      out.slot_unmapped.push_back(t == kUnmapped);
      out.tokens.token_ids.push_back(t == kUnmapped ? pad_id : t);
    } else {
      const auto ids = target.encode(part.text);
      out.tokens.token_ids.insert(out.tokens.token_ids.end(), ids.begin(), ids.end());
    }
  }
  out.text = target.decode(out.tokens.token_ids);
  return out;
}

RelaxedSequence relaxed_sequence(const ConditioningPrompt& prompt, const TokenSelection& selection) {
  RelaxedSequence out;
  out.sequence = prompt.tokens;
  out.slot_positions = prompt.slot_positions;
  out.slot_vectors = selection.target_vectors;
  return out;
}

}  // namespace promptlens
