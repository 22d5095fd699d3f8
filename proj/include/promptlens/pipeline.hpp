// Copyright 2026 The promptlens Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "promptlens/chat.hpp"
#include "promptlens/config.hpp"
#include "promptlens/metrics.hpp"
#include "promptlens/optimizer.hpp"
#include "promptlens/report.hpp"
#include "promptlens/store.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>

namespace promptlens {

AdapterSet build_adapters(const ExperimentConfig& config);

/// The optimize section's run configuration with top_features resolved.
RunConfig resolved_run_config(const ExperimentConfig& config, const AdapterSet& adapters);

/// Conditioning-prompt text for source tokens (one per mask slot).
std::string prompt_for_tokens(const PipelineContext& ctx, const std::vector<TokenId>& source_tokens);

/// "a picture of a <name>" ("an" before a vowel).
std::string baseline_prompt(std::string_view class_name);

struct RunControl {
  /// Steps to execute in this invocation before stopping as if interrupted; -1 runs to the end.
  int stop_after = -1;
  std::function<void(const std::string&)> log;
};

struct OptimizeOutcome {
  std::filesystem::path dir;
  bool completed = false;
  bool noop = false;  // resume of an already completed run
  RunRecord record;   // only when completed
  std::string prompt_text;
};

/// New run directory; per-step log (steps.jsonl), kept images, a checkpoint
/// after every step, then record.json and prompt.txt.
OptimizeOutcome optimize_command(const ExperimentConfig& config, const RunControl& control = {});

/// Continues an interrupted optimize run from its checkpoint. Errors when the
/// config snapshot or checkpoint no longer match the manifest hash.
OptimizeOutcome resume_command(const std::filesystem::path& dir, const RunControl& control = {});

struct SliceOutcome {
  std::filesystem::path dir;
  std::array<std::optional<ClassWordSet>, 2> words;
  std::vector<SliceAssignment> assignments;
  std::optional<RocCurve> roc;
};

SliceOutcome slice_discover_command(const ExperimentConfig& config, const RunControl& control = {});

struct ReportOutcome {
  std::filesystem::path dir;
  std::string prompt;
  ClassImageSet images;
  CaptionBatch captions;
  BiasReport report;
  std::optional<CueSet> cues;
  std::optional<GroundingTable> grounding;
};

/// Client from the credentials section: replay when configured, else HTTP;
/// journaled into `journal` when non-empty.
std::shared_ptr<ChatClient> make_chat_client(const ExperimentConfig& config, const std::filesystem::path& journal);

/// Images, captions, report, cues and grounding for cfg.report.class_index.
/// A null client is built with make_chat_client inside the run directory.
ReportOutcome report_command(const ExperimentConfig& config, std::shared_ptr<ChatClient> client = nullptr,
                             const RunControl& control = {});

struct EvaluateOutcome {
  std::filesystem::path dir;
  nlohmann::json results;
};

EvaluateOutcome evaluate_command(const ExperimentConfig& config, std::shared_ptr<ChatClient> client = nullptr,
                                 const RunControl& control = {});

}  // namespace promptlens
