// Copyright 2026 The promptlens Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "promptlens/chat.hpp"
#include "promptlens/metrics.hpp"
#include "promptlens/registry.hpp"
#include "promptlens/stats.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace promptlens {

inline constexpr std::string_view kDefaultReasoningModel = "gpt-4o-mini";

struct ClassImage {
  Index attempt = 0;
  std::uint64_t seed = 0;
  Image image;
};

struct ClassImageSet {
  std::string prompt;
  Index class_index = 0;
  Index requested = 0;
  Index attempts = 0;
  Index misclassified = 0;
  Index unsafe_dropped = 0;
  std::vector<ClassImage> kept;
  double keep_ratio = 0.0;  // kept / attempts
};

struct ClassImageOptions {
  Index count = 50;
  /// 0 means 4 * count.
  Index attempt_cap = 0;
  std::uint64_t seed = 0;
  int generator_steps = 4;
};

/// Generates from the prompt until `count` images are kept or the attempt cap
/// is reached. Kept images are predicted as class_index and pass the
/// generator's safety filter. Attempt a uses derive_seed(seed, "class_images", a).
/// Throws DegenerateResultError when nothing is kept.
ClassImageSet generate_class_images(const AdapterSet& adapters, std::string_view prompt, Index class_index,
                                    const ClassImageOptions& options = {});

struct CaptionRecord {
  std::string image_ref;
  std::string caption;
  std::string client_id;
  nlohmann::json params;  // sampling parameters snapshot
};

struct CaptionDrop {
  std::string image_ref;
  std::string error;
};

struct CaptionBatch {
  std::vector<CaptionRecord> records;  // input order
  std::vector<CaptionDrop> drops;
};

struct ReasoningOptions {
  std::string model = std::string(kDefaultReasoningModel);
  double temperature = 0.2;
  RetryPolicy retry;
  /// Concurrent caption requests.
  int parallelism = 1;
};

struct CaptionInput {
  std::string image_ref;
  Image image;
};

inline constexpr std::string_view kCaptionUserText = "Describe the image";

/// Caption validity: non-empty with at most two sentence terminators.
bool valid_caption(std::string_view caption);

/// One captioning request per image with the verbatim caption system prompt.
/// Auth and quota errors propagate; other failures drop the image.
CaptionBatch caption_images(const std::vector<CaptionInput>& images, ChatClient& client,
                            const ReasoningOptions& options = {});

enum class Verdict { kBiased, kNotBiased };
enum class VerdictSource { kRule, kModel, kNone };

std::string_view to_string(Verdict v);
std::string_view to_string(VerdictSource s);

struct BiasReport {
  std::string class_name;
  std::string text;
  std::string title_line;  // empty when missing
  std::optional<Verdict> verdict;
  VerdictSource verdict_source = VerdictSource::kNone;
  bool validated = false;
  int regenerations = 0;
  nlohmann::json provenance;
};

std::string report_title(std::string_view class_name);

/// "Class: <NAME> - Captions: [...]" with the captions as a JSON string array.
std::string report_user_message(std::string_view class_name, const std::vector<std::string>& captions);

/// Keyword verdict over the report's conclusion; nullopt when undecided.
std::optional<Verdict> rule_verdict(std::string_view report);

/// Sends the verbatim report prompt; regenerates up to max_regenerations
/// times while the title line is missing; verdict by rule, then by a
/// follow-up classification query.
BiasReport compose_report(std::string_view class_name, const std::vector<std::string>& captions, ChatClient& client,
                          const ReasoningOptions& options = {}, int max_regenerations = 2);

struct CueSet {
  std::string class_name;
  std::vector<std::string> key_phrases;
  std::string full_prompt;
  bool full_prompt_valid = false;
  std::vector<std::string> warnings;

  /// full_prompt when valid, else "a picture of a <class> with <p1> and <p2> ...".
  std::string grounding_prompt() const;
};

bool valid_cue_prompt(std::string_view prompt, std::string_view class_name);

/// "Class: <NAME>\n\nReport:\n<report>".
std::string cue_user_message(std::string_view class_name, std::string_view report);

/// Parses the extractor's JSON object, tolerating a fenced code block.
CueSet parse_cue_response(std::string_view class_name, std::string_view response);

/// Sends the verbatim cue-extractor prompt; one retry on an unparseable
/// response, then MalformedResponseError.
CueSet extract_cues(std::string_view class_name, std::string_view report, ChatClient& client,
                    const ReasoningOptions& options = {});

enum class GroundingOutcome { kGrounded, kNeutral, kDegraded };
std::string_view to_string(GroundingOutcome o);

struct GroundingCase {
  std::string class_name;
  Index class_index = 0;
  std::string baseline_prompt;
  std::string cue_prompt;
};

struct GroundingRow {
  GroundingCase input;
  double baseline_score = 0.0;
  double cue_score = 0.0;
  double delta = 0.0;
  GroundingOutcome outcome = GroundingOutcome::kNeutral;
};

struct GroundingTable {
  std::vector<GroundingRow> rows;
  int grounded = 0;
  int neutral = 0;
  int degraded = 0;
  double mean_baseline = 0.0;
  double mean_cue = 0.0;
  std::optional<DeltaStatistics> stats;  // needs two or more classes
};

GroundingOutcome grounding_outcome(double delta);

/// Builds the table from precomputed scores.
GroundingTable grounding_table(const std::vector<GroundingCase>& cases, const std::vector<double>& baseline_scores,
                               const std::vector<double>& cue_scores);

/// Activation scores of both prompts per class (same generation seeds for
/// the pair), then the table.
GroundingTable grounding_eval(const AdapterSet& adapters, const std::vector<GroundingCase>& cases,
                              const ActivationScoreOptions& options = {});

std::string grounding_tsv(const GroundingTable& table);
nlohmann::json to_json(const GroundingTable& table);
nlohmann::json to_json(const DeltaStatistics& stats);
nlohmann::json to_json(const CaptionRecord& record);
nlohmann::json to_json(const BiasReport& report);
nlohmann::json to_json(const CueSet& cues);

}  // namespace promptlens
