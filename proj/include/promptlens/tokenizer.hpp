// Copyright 2026 The promptlens Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "promptlens/core.hpp"

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace promptlens {

/// Enumerable token-string <-> id table.
class Vocabulary {
 public:
  Vocabulary() = default;
  Vocabulary(std::string vocab_id, std::vector<std::string> tokens,
             std::vector<std::string> special_tokens = {});

  const std::string& vocab_id() const { return vocab_id_; }
  Index size() const { return static_cast<Index>(tokens_.size()); }
  const std::string& token(TokenId id) const;
  std::optional<TokenId> find(std::string_view token) const;
  TokenId id(std::string_view token) const;  // throws UsageError when absent
  bool is_special(TokenId id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::vector<std::string>& special_tokens() const { return specials_; }

 private:
  std::string vocab_id_;
  std::vector<std::string> tokens_;
  std::vector<std::string> specials_;
  std::unordered_map<std::string, TokenId> index_;
};

/// How sub-word pieces are marked.
enum class PieceStyle {
  kContinuationPrefix,  // "##ing" marks a non-initial piece (WordPiece)
  kEndOfWordSuffix,     // "dog</w>" marks a word-final piece (BPE-style)
};

/// Greedy longest-match sub-word tokenizer over a fixed vocabulary. Input is
/// lowercased; punctuation characters become single-character words; special
/// tokens embedded in the text are matched verbatim.
class Tokenizer {
 public:
  Tokenizer(Vocabulary vocabulary, PieceStyle style, std::string marker, std::string unk_token);

  static Tokenizer word_piece(Vocabulary vocabulary, std::string unk = "[UNK]") {
    return Tokenizer(std::move(vocabulary), PieceStyle::kContinuationPrefix, "##", std::move(unk));
  }
  static Tokenizer end_of_word(Vocabulary vocabulary, std::string unk = "<|unk|>") {
    return Tokenizer(std::move(vocabulary), PieceStyle::kEndOfWordSuffix, "</w>", std::move(unk));
  }

  const Vocabulary& vocabulary() const { return vocab_; }
  PieceStyle style() const { return style_; }
  const std::string& marker() const { return marker_; }

  std::vector<TokenId> encode(std::string_view text) const;
  TokenSequence encode_sequence(std::string_view text) const;
  std::string decode(std::span<const TokenId> ids) const;

  /// Surface form of a token with its piece marker removed, lowercased.
  std::string surface_form(TokenId id) const;

 private:
  std::vector<std::string> pre_tokenize(std::string_view text) const;
  void encode_word(const std::string& word, std::vector<TokenId>& out) const;

  Vocabulary vocab_;
  PieceStyle style_;
  std::string marker_;
  TokenId unk_id_;
};

std::string to_lower(std::string_view s);

}  // namespace promptlens
