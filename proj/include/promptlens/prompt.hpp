// Copyright 2026 The promptlens Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "promptlens/adapters.hpp"
#include "promptlens/rng.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace promptlens {

/// Placeholder for a mask slot inside template text.
inline constexpr std::string_view kMaskPlaceholder = "[MASK]";

enum class MaskLayout {
  kAppended,    // "<fixed> [MASK] [MASK] ."
  kConnective,  // "<fixed> [MASK] with [MASK] and [MASK] ... ."
};

struct TemplatePart {
  bool is_mask = false;
  std::string text;
};

/// Fixed text interleaved with mask slots, rendered in the masked-LM vocabulary.
struct PromptTemplate {
  std::string fixed_text;
  int mask_count = 0;
  std::vector<TemplatePart> parts;
  TokenSequence rendered;
  std::vector<Index> mask_positions;

  bool optimizable() const { return mask_count >= 1; }
  /// Template text with "[MASK]" placeholders.
  std::string text() const;
};

/// Renders a template. When fixed_text already contains "[MASK]" placeholders
/// their count must equal mask_count and the layout is ignored; otherwise the
/// slots are laid out after the fixed text and the terminator closes the prompt.
PromptTemplate render_template(std::string_view fixed_text, int mask_count, const Tokenizer& tokenizer,
                               TokenId mask_id, MaskLayout layout = MaskLayout::kAppended,
                               std::string_view terminator = ".");

/// Hard token choice per mask slot with the relaxed sample kept for the
/// straight-through backward pass.
struct TokenSelection {
  Matrix one_hots;  // N x V_src, exactly one-hot
  Matrix relaxed;   // N x V_src, softmax((logits + noise) / temperature)
  Matrix noise;     // N x V_src Gumbel draws
  double temperature = 1.0;
  std::vector<TokenId> source_ids;
  std::vector<TokenId> target_ids;  // kUnmapped when the source row of the map is empty
  Matrix target_vectors;            // N x V_tgt, zero rows for unmapped slots

  Index slots() const { return one_hots.rows(); }
};

/// Gumbel-softmax with a straight-through estimator: the forward value is the
/// one-hot of argmax(logits + g), the backward pass uses the tempered softmax.
/// Logits equal to -inf are never selected.
TokenSelection sample_hard_tokens(const Matrix& logits, double temperature, Rng& rng);

/// Same as sample_hard_tokens with caller-provided Gumbel noise.
TokenSelection sample_with_noise(const Matrix& logits, double temperature, const Matrix& noise);

/// Gradient w.r.t. the logits given the gradient w.r.t. the one-hot outputs.
Matrix straight_through_backward(const TokenSelection& selection, const Matrix& one_hot_grad);

/// Row-sparse binary map from source-vocabulary one-hots to target-vocabulary
/// one-hots. Each row holds at most one target index; empty rows translate to
/// the zero vector.
class VocabularyMap {
 public:
  VocabularyMap() = default;
  VocabularyMap(std::vector<TokenId> rows, Index target_size);

  Index source_size() const { return static_cast<Index>(rows_.size()); }
  Index target_size() const { return target_size_; }
  std::optional<TokenId> target_of(TokenId source) const;
  Index nonzeros() const;
  const std::vector<TokenId>& rows() const { return rows_; }

  /// o M for a batch of row vectors (N x V_src -> N x V_tgt).
  Matrix apply(const Matrix& source_rows) const;
  /// g M^T (N x V_tgt -> N x V_src).
  Matrix apply_transpose(const Matrix& target_rows) const;
  Matrix dense() const;

  /// "source_id<TAB>target_id" lines for mapped rows, sorted by source id.
  std::string serialize() const;
  static VocabularyMap parse(std::string_view text, Index source_size, Index target_size);

  bool operator==(const VocabularyMap&) const = default;

 private:
  std::vector<TokenId> rows_;  // kUnmapped for empty rows
  Index target_size_ = 0;
};

/// Maps a source token to a target token when its lowercased surface form
/// (continuation marker stripped) encodes as exactly one target token.
/// Special tokens stay unmapped.
VocabularyMap build_vocab_map(const Tokenizer& source, const Tokenizer& target);

/// o_i^(C) = o_i M for every slot.
TokenSelection translate_tokens(TokenSelection selection, const VocabularyMap& map);

/// The conditioning prompt in the target vocabulary.
struct ConditioningPrompt {
  TokenSequence tokens;              // unmapped slots carry the pad id
  std::vector<Index> slot_positions;
  std::vector<bool> slot_unmapped;
  std::string text;

  bool all_unmapped() const;
  bool any_unmapped() const;
};

ConditioningPrompt assemble_conditioning_prompt(const PromptTemplate& prompt_template, const TokenSelection& selection,
                                                const Tokenizer& target, TokenId pad_id);

/// Differentiable view of an assembled prompt: slot rows are the translated
/// one-hot vectors.
RelaxedSequence relaxed_sequence(const ConditioningPrompt& prompt, const TokenSelection& selection);

}  // namespace promptlens
