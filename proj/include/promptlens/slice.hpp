// Copyright 2026 The promptlens Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "promptlens/optimizer.hpp"

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace promptlens {

struct WordRun {
  TokenId token = kUnset;
  std::string word;
  int steps_to_label = -1;  // first step at which the final pseudo-label was held
  double best_activation_loss = 0.0;
  bool aborted = false;
};

struct ClassWordSet {
  Index class_index = 0;
  std::vector<std::string> words;
  std::vector<TokenId> tokens;
  std::vector<WordRun> runs;
};

/// Runs the optimizer k times on a single-mask template. Every run uses the
/// base configuration; tokens found by earlier runs have their logits forced
/// to -inf in later runs. Special tokens are excluded unless allow_special.
ClassWordSet extract_class_words(const AdapterSet& adapters, const RunConfig& base, int k = 4,
                                 bool allow_special = false);

enum class WordWrapping { kBare, kTemplated };

/// "a photo of a {word}" when templated.
std::string wrap_word(std::string_view word, WordWrapping wrapping);

struct Prototype {
  Vector embedding;
  bool degenerate = false;  // mean is (numerically) the zero vector
};

Prototype class_prototype(const std::vector<std::string>& words, const JointEncoder& encoder,
                          WordWrapping wrapping = WordWrapping::kBare);

enum class SliceLabel { kUnbiased, kBiased };

struct SliceImage {
  std::string id;
  Index true_class = 0;
  Vector embedding;
};

struct SliceAssignment {
  std::string id;
  Index true_class = 0;
  double own_similarity = 0.0;          // NaN when the own prototype is null
  double counterpart_similarity = 0.0;  // NaN when the counterpart prototype is null
  SliceLabel label = SliceLabel::kUnbiased;
  double score = 0.0;  // counterpart - own; the null side is replaced by a class median
};

/// Two-class slice labelling by cosine similarity to the class prototypes.
/// A null prototype (absent word set) is replaced, per true class, by the
/// median of the available similarity over that class's images.
std::vector<SliceAssignment> assign_slices(const std::vector<SliceImage>& images,
                                           const std::array<std::optional<Prototype>, 2>& prototypes);

struct RocPoint {
  double threshold = 0.0;
  double false_positive_rate = 0.0;
  double true_positive_rate = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;  // from (0,0) to (1,1)
  double auc = 0.0;
};

/// ROC of scores against binary ground truth (true = positive), AUC by the
/// trapezoid rule. Tied scores enter the curve as one point.
RocCurve roc_auc(const std::vector<double>& scores, const std::vector<bool>& positive);
RocCurve roc_auc(const std::vector<SliceAssignment>& assignments, const std::vector<SliceLabel>& truth);

struct ManifestEntry {
  std::filesystem::path path;
  Index true_class = 0;
  std::optional<SliceLabel> slice;
};

/// CSV with header "path,class[,slice]"; relative paths resolve against the
/// manifest's directory; slice is "biased" or "unbiased".
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest);

/// Image embeddings cached on disk under the SHA-256 of the file bytes and
/// the encoder id.
class EmbeddingCache {
 public:
  EmbeddingCache(std::filesystem::path directory, std::string encoder_id);

  Vector embed_file(const std::filesystem::path& image_path, const JointEncoder& encoder);
  int hits() const { return hits_; }
  int misses() const { return misses_; }

 private:
  std::filesystem::path dir_;
  std::string encoder_id_;
  int hits_ = 0;
  int misses_ = 0;
};

/// Group index for external group-robust trainers: 2 * class + (biased ? 1 : 0).
int group_index(Index true_class, SliceLabel label);

std::string assignments_table(const std::vector<SliceAssignment>& assignments);
std::string roc_table(const RocCurve& curve);
std::string group_table(const std::vector<SliceAssignment>& assignments);

}  // namespace promptlens
