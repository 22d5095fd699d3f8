// Copyright 2026 The promptlens Authors
// SPDX-License-Identifier: Apache-2.0

// Independent oracles shared by the unit tests and the acceptance binary.
// None of them call into the code paths they check.

#pragma once

#include "promptlens/adapters.hpp"
#include "promptlens/rng.hpp"
#include "promptlens/tokenizer.hpp"
#include "promptlens/toy_stack.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace promptlens::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("promptlens-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Target token for a source token by plain string comparison: the source
/// token lowercased with a leading "##" dropped must equal a non-special
/// target token with its "</w>" suffix dropped. Specials never map.
inline std::optional<TokenId> string_match_target(const Vocabulary& source, TokenId s, const Vocabulary& target) {
  if (source.is_special(s)) return std::nullopt;
  std::string word;
  for (char c : source.token(s)) word += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (word.rfind("##", 0) == 0) word = word.substr(2);
  if (word.empty()) return std::nullopt;
  std::optional<TokenId> hit;
  for (TokenId t = 0; t < target.size(); ++t) {
    if (target.is_special(t)) continue;
    const std::string& tok = target.token(t);
    if (tok.size() < 4 || tok.compare(tok.size() - 4, 4, "</w>") != 0) continue;
    std::string stem;
    for (char c : tok.substr(0, tok.size() - 4)) stem += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (stem == word) {
      if (hit) return std::nullopt;  // ambiguous
      hit = t;
    }
  }
  return hit;
}

struct BruteForceEntry {
  double loss = 0.0;
  TokenId token = kUnset;
};

/// Class-neuron loss -log p_class for every source token placed in the single
/// slot of "a picture of a <slot> .", ascending. The prompt is built as text
/// and encoded through the target tokenizer; untranslatable tokens become
/// the pad token.
inline std::vector<BruteForceEntry> brute_force_ranking(const ToyStack& stack, Index class_index) {
  const auto& source = stack.masked_lm->tokenizer().vocabulary();
  const auto& target = stack.text_encoder->tokenizer().vocabulary();
  std::vector<BruteForceEntry> out;
  for (TokenId s = 0; s < source.size(); ++s) {
    const auto t = string_match_target(source, s, target);
    std::string slot = "<|pad|>";
    if (t) slot = target.token(*t).substr(0, target.token(*t).size() - 4);
    const Vector e = stack.text_encoder->encode_text("a picture of a " + slot + " .");
    const Image img = stack.generator->generate(e, 4, 0);
    const double p = stack.classifier->forward(img).probabilities(class_index);
    out.push_back({-std::log(p), s});
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.loss < b.loss; });
  return out;
}

/// Direct replay of the pseudo-label rule on one position: the token's
/// history mean replaces the label when strictly below the reference.
struct SimulatedPosition {
  TokenId label = kUnset;
  double reference = INFINITY;
  std::map<TokenId, std::vector<double>> history;

  void observe(TokenId token, double loss) {
    auto& h = history[token];
    h.push_back(loss);
    double sum = 0.0;
    for (double v : h) sum += v;
    const double mean = sum / static_cast<double>(h.size());
    if (mean < reference) {
      label = token;
      reference = mean;
    }
  }
};

}  // namespace promptlens::testing
