// Copyright 2026 The promptlens Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "promptlens/chat.hpp"
#include "promptlens/registry.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace promptlens {

struct ActivationSample {
  Index index = 0;
  std::uint64_t seed = 0;
  Index predicted_class = -1;
  bool hit = false;
};

struct ActivationScoreResult {
  std::string prompt;
  Index class_index = 0;
  Index n_requested = 0;
  Index n_generated = 0;
  Index n_target_predicted = 0;
  double score = 0.0;  // percent
  std::vector<ActivationSample> samples;
  bool partial = false;
  std::string failure;
};

struct ActivationScoreOptions {
  Index n = 100;
  std::uint64_t seed = 0;
  int generator_steps = 4;
  /// 0 picks the hardware concurrency; serial when an adapter is not thread-safe.
  int threads = 0;
};

/// Percentage of n generations from a fixed prompt that the classifier assigns
/// to class_index. Generation i uses seed derive_seed(seed, "activation_score", i).
ActivationScoreResult activation_score(const AdapterSet& adapters, std::string_view prompt, Index class_index,
                                       const ActivationScoreOptions& options = {});

struct StabilityResult {
  std::vector<ActivationScoreResult> runs;
  double mean = 0.0;
  double sd = 0.0;  // n - 1 denominator
};

/// Independent activation-score runs; run r uses derive_seed(seed, "stability", r).
StabilityResult stability_eval(const AdapterSet& adapters, std::string_view prompt, Index class_index, int runs = 3,
                               const ActivationScoreOptions& options = {});

struct ClipIqaResult {
  double probability = 0.5;  // of the first prompt
  double similarity_first = 0.0;
  double similarity_second = 0.0;
  double scale = 1.0;
  bool scaled = false;  // true when the encoder's logit scale was applied
};

inline const std::pair<std::string, std::string> kClipIqaPrompts{"Good photo.", "Bad photo."};

/// Softmax over the (scaled) cosine similarities of the image to a prompt pair.
ClipIqaResult clip_iqa(const Image& image, const JointEncoder& encoder,
                       const std::pair<std::string, std::string>& prompts = kClipIqaPrompts);

/// "Good photo of a <class>" / "Bad photo of a <class>".
std::pair<std::string, std::string> semantic_clip_iqa_prompts(std::string_view class_name);
ClipIqaResult semantic_clip_iqa(const Image& image, std::string_view class_name, const JointEncoder& encoder);

double sts_similarity(std::string_view a, std::string_view b, const SentenceEmbedder& embedder);

enum class JudgeMetric { kGevalConsistency, kMosLlm };

std::string_view to_string(JudgeMetric metric);
JudgeMetric judge_metric_from_string(std::string_view name);

/// Integer rating from a judge sample: the first number after the last
/// "(1-5):" marker, or a bare leading number. Ratings outside [1, 5] or
/// non-integers are rejected.
std::optional<int> parse_rating(std::string_view text);

struct JudgeScore {
  JudgeMetric metric = JudgeMetric::kGevalConsistency;
  int n_requested = 0;
  std::vector<int> ratings;
  std::vector<std::string> dropped;  // unparseable samples
  double mean = 0.0;
  double sd = 0.0;  // population (n denominator) over the parsed ratings
  TemperatureClamp temperature;
  std::string model;
};

struct JudgeOptions {
  std::string model = "gpt-4-0613";
  int n = 20;
  double temperature = 2.0;
  RetryPolicy retry;
};

/// One n-sample request with the verbatim metric prompt. Throws
/// MalformedResponseError when no sample parses.
JudgeScore llm_judge(std::string_view report, std::string_view question, JudgeMetric metric, ChatClient& client,
                     const JudgeOptions& options = {});

nlohmann::json to_json(const ActivationScoreResult& r);
nlohmann::json to_json(const StabilityResult& r);
nlohmann::json to_json(const ClipIqaResult& r);
nlohmann::json to_json(const JudgeScore& r);

}  // namespace promptlens
