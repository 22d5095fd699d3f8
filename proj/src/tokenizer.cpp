// Copyright 2026 The promptlens Authors
// SPDX-License-Identifier: Apache-2.0

#include "promptlens/tokenizer.hpp"

#include <algorithm>
#include <cctype>

namespace promptlens {

std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

Vocabulary::Vocabulary(std::string vocab_id, std::vector<std::string> tokens,
                       std::vector<std::string> special_tokens)
    : vocab_id_(std::move(vocab_id)), tokens_(std::move(tokens)), specials_(std::move(special_tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second)
      throw ConfigError("duplicate token '" + tokens_[i] + "' in vocabulary " + vocab_id_);
  }
  for (const auto& s : specials_) {
    if (!index_.contains(s)) throw ConfigError("special token '" + s + "' missing from " + vocab_id_);
  }
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || id >= size()) throw UsageError("token id out of range for " + vocab_id_);
  return tokens_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::id(std::string_view token) const {
  auto found = find(token);
  if (!found) throw UsageError("unknown token '" + std::string(token) + "' in " + vocab_id_);
  return *found;
}

bool Vocabulary::is_special(TokenId id) const {
  const auto& t = token(id);
  return std::find(specials_.begin(), specials_.end(), t) != specials_.end();
}

Tokenizer::Tokenizer(Vocabulary vocabulary, PieceStyle style, std::string marker, std::string unk_token)
    : vocab_(std::move(vocabulary)), style_(style), marker_(std::move(marker)) {
  unk_id_ = vocab_.id(unk_token);
}

std::vector<std::string> Tokenizer::pre_tokenize(std::string_view text) const {
  std::vector<std::string> words;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) words.push_back(to_lower(current));
    current.clear();
  };
  std::size_t i = 0;
  while (i < text.size()) {
    bool matched_special = false;
    for (const auto& special : vocab_.special_tokens()) {
      if (text.substr(i, special.size()) == special) {
        flush();
        words.push_back(special);
        i += special.size();
        matched_special = true;
        break;
      }
    }
    if (matched_special) continue;
    const auto c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      flush();
    } else if (std::ispunct(c)) {
      flush();
      words.emplace_back(1, static_cast<char>(c));
    } else {
      current.push_back(static_cast<char>(c));
    }
    ++i;
  }
  flush();
  return words;
}

void Tokenizer::encode_word(const std::string& word, std::vector<TokenId>& out) const {
  if (auto special = vocab_.find(word); special && vocab_.is_special(*special)) {
    out.push_back(*special);
    return;
  }
  std::vector<TokenId> pieces;
  std::size_t pos = 0;
  while (pos < word.size()) {
    std::optional<TokenId> hit;
    std::size_t end = word.size();
    for (; end > pos; --end) {
      const std::string piece = word.substr(pos, end - pos);
      std::string candidate;
      if (style_ == PieceStyle::kContinuationPrefix) {
        candidate = pos == 0 ? piece : marker_ + piece;
      } else {
        candidate = end == word.size() ? piece + marker_ : piece;
      }
      if ((hit = vocab_.find(candidate))) break;
    }
    if (!hit) {
      out.push_back(unk_id_);
      return;
    }
    pieces.push_back(*hit);
    pos = end;
  }
  out.insert(out.end(), pieces.begin(), pieces.end());
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& word : pre_tokenize(text)) encode_word(word, ids);
  return ids;
}

TokenSequence Tokenizer::encode_sequence(std::string_view text) const {
  return TokenSequence{encode(text), vocab_.vocab_id()};
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  auto is_punct_word = [](const std::string& w) {
    return w.size() == 1 && std::ispunct(static_cast<unsigned char>(w[0]));
  };
  bool open_word = false;  // end-of-word style: previous piece did not close its word
  for (TokenId id : ids) {
    std::string tok = vocab_.token(id);
    if (vocab_.is_special(id)) {
      if (!out.empty() && out.back() != ' ') out.push_back(' ');
      out += tok;
      open_word = false;
      continue;
    }
    if (style_ == PieceStyle::kContinuationPrefix) {
      if (tok.starts_with(marker_)) {
        out += tok.substr(marker_.size());
        continue;
      }
      if (!out.empty() && !is_punct_word(tok)) out.push_back(' ');
      out += tok;
    } else {
      const bool closes = tok.ends_with(marker_);
      if (closes) tok.resize(tok.size() - marker_.size());
      if (!open_word && !out.empty()) out.push_back(' ');
      out += tok;
      open_word = !closes;
    }
  }
  return out;
}

std::string Tokenizer::surface_form(TokenId id) const {
  std::string tok = to_lower(vocab_.token(id));
  if (style_ == PieceStyle::kContinuationPrefix) {
    if (tok.starts_with(marker_)) tok.erase(0, marker_.size());
  } else if (tok.ends_with(marker_)) {
    tok.resize(tok.size() - marker_.size());
  }
  return tok;
}

}  // namespace promptlens
