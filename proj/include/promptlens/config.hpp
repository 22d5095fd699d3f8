// Copyright 2026 The promptlens Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "promptlens/optimizer.hpp"
#include "promptlens/registry.hpp"
#include "promptlens/slice.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace promptlens {

struct AdapterConfig {
  AdapterIds ids;
  /// Backend options, e.g. {"toy": {...}}.
  nlohmann::json options = nlohmann::json::object();

  bool operator==(const AdapterConfig&) const = default;
};

struct CredentialsConfig {
  /// Name of the environment variable holding the API key; the key itself
  /// never appears in a config.
  std::string api_key_env = "OPENAI_API_KEY";
  std::string base_url = "https://api.openai.com";
  /// Record every exchange to this journal (relative to the run directory).
  std::string journal = "chat_journal.jsonl";
  /// Serve all client calls from this journal instead of the network.
  std::string replay;

  bool operator==(const CredentialsConfig&) const = default;
};

struct OptimizeSection {
  RunConfig run;
  /// > 0 targets the top-k penultimate neurons of the class instead of `run.neurons`.
  int top_features = 0;

  bool operator==(const OptimizeSection&) const = default;
};

struct SliceSection {
  std::vector<Index> classes{0, 1};
  int k = 4;
  WordWrapping wrapping = WordWrapping::kBare;
  bool allow_special = false;
  std::string manifest;
  std::string cache_dir;

  bool operator==(const SliceSection&) const = default;
};

struct ReportSection {
  Index class_index = 0;
  /// Empty runs the optimize section for the class and uses its prompt.
  std::string prompt;
  Index images = 50;
  Index attempt_cap = 0;  // 0 = 4 * images
  std::string caption_model = "gpt-4o-mini";
  std::string report_model = "gpt-4o-mini";
  double temperature = 0.2;
  int parallelism = 4;
  int max_retries = 3;
  double initial_delay_seconds = 1.0;
  bool extract_cues = true;
  Index grounding_images = 100;

  bool operator==(const ReportSection&) const = default;
};

struct EvaluateSection {
  std::vector<std::string> metrics{"activation_score"};
  Index class_index = 0;
  std::string prompt;
  Index n = 100;
  int runs = 3;
  std::string report_file;
  std::string reference_file;
  std::string question;
  std::string judge_model = "gpt-4-0613";
  int judge_samples = 20;
  double judge_temperature = 2.0;
  std::vector<double> deltas;
  std::vector<double> samples_a;
  std::vector<double> samples_b;
  double tost_lower = -0.5;
  double tost_upper = 0.5;

  bool operator==(const EvaluateSection&) const = default;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_root = "runs";
  AdapterConfig adapters;
  std::vector<std::string> class_names;
  CredentialsConfig credentials;
  OptimizeSection optimize;
  SliceSection slice;
  ReportSection report;
  EvaluateSection evaluate;

  /// Configured name, or "class_<i>".
  std::string class_name(Index index) const;
  bool operator==(const ExperimentConfig&) const = default;
};

/// Parses and validates; every error is a ConfigError naming the field path.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& c);

ExperimentConfig load_config(const std::filesystem::path& path);

/// Canonical serialization and its SHA-256.
std::string canonical_config(const ExperimentConfig& c);
std::string config_hash(const ExperimentConfig& c);

/// Applies a dotted-path override, e.g. "optimize.learning_rate=0.05". The
/// value is parsed as JSON, falling back to a string.
void apply_override(nlohmann::json& config, const std::string& assignment);

}  // namespace promptlens
