// Copyright 2026 The promptlens Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "promptlens/objective.hpp"
#include "promptlens/prompt.hpp"
#include "promptlens/registry.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace promptlens {

enum class OptimizerKind { kSgd, kAdam };
enum class InitialLabels { kUnset, kRandom };

struct TemplateConfig {
  std::string fixed_text = "a picture of a";
  int mask_count = 1;
  MaskLayout layout = MaskLayout::kAppended;
  std::string terminator = ".";

  bool operator==(const TemplateConfig&) const = default;
};

struct RunConfig {
  Index class_index = 0;
  /// Empty means the output neuron of class_index.
  std::vector<NeuronSpec> neurons;
  /// Per mask position; empty means every position uses all neurons.
  std::vector<std::vector<Index>> neuron_subsets;
  TemplateConfig prompt;
  int steps = 300;
  double learning_rate = 0.1;
  int batch_size = 1;
  Index prompt_length = 1;
  double temperature = 1.0;
  int generator_steps = 4;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::kSgd;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double init_scale = 0.02;
  InitialLabels initial_labels = InitialLabels::kUnset;
  std::optional<std::string> injected_token;
  double injected_reference_loss = 1e6;
  bool use_mask_loss = true;
  int max_consecutive_nonfinite = 3;
  /// Source tokens whose logits are forced to -inf (word exclusion).
  std::vector<TokenId> excluded_tokens;

  void validate() const;
  std::vector<NeuronSpec> resolved_neurons() const;
  bool operator==(const RunConfig&) const = default;
};

/// Everything a forward pass needs besides the soft prompt.
struct PipelineContext {
  AdapterSet adapters;
  PromptTemplate prompt_template;
  VocabularyMap vocab_map;
  std::vector<NeuronSpec> neurons;
  Index target_class = 0;
  int generator_steps = 4;
  double temperature = 1.0;
  std::vector<TokenId> excluded_tokens;

  static PipelineContext build(const AdapterSet& adapters, const RunConfig& config);
  Index slots() const { return prompt_template.mask_count; }
};

/// One sample through text pipeline, generator and classifier.
struct SampleForward {
  TokenSelection selection;
  ConditioningPrompt prompt;
  RelaxedSequence relaxed;
  Vector embedding;
  Image image;
  ClassifierForward classifier;
  ClassifierOutput selected;
  std::uint64_t generator_seed = 0;
  bool relaxed_forward = false;
  double activation_loss = 0.0;
  Index predicted_class = -1;
};

/// Masked-LM logits with excluded tokens set to -inf.
Matrix masked_logits(const PipelineContext& ctx, const SoftPrompt& prompt);

/// With relaxed_forward the tempered softmax sample replaces the one-hot in the
/// forward value, which makes the whole pipeline smooth in the logits.
SampleForward forward_sample(const PipelineContext& ctx, const Matrix& logits, const Matrix& noise,
                             std::uint64_t generator_seed, bool relaxed_forward = false);

/// d(activation loss)/d(logits) for one sample (straight-through at the hard
/// point, exact for a relaxed forward).
Matrix activation_logit_grad(const PipelineContext& ctx, const SampleForward& sample);

/// Per-slot logit gradient of the text pipeline: the masked-LM backward.
Matrix soft_prompt_grad(const PipelineContext& ctx, const SoftPrompt& prompt, const Matrix& logit_grad);

struct SampleRecord {
  std::vector<TokenId> source_tokens;
  std::vector<std::string> source_words;
  std::vector<TokenId> target_tokens;  // kUnmapped for untranslatable slots
  std::string prompt_text;
  bool degenerate = false;  // every slot unmapped
  double activation_loss = 0.0;
  std::vector<double> aggregated_losses;
  Index predicted_class = -1;
  std::uint64_t generator_seed = 0;
  bool unsafe = false;
  std::optional<std::string> image;  // reference of the kept image

  bool operator==(const SampleRecord&) const = default;
};

struct StepRecord {
  int step = 0;
  std::uint64_t gumbel_seed = 0;
  std::vector<SampleRecord> samples;
  double activation_loss = 0.0;  // mean over the batch
  double mask_loss = 0.0;
  double total_loss = 0.0;
  std::vector<Index> mask_clamped_positions;
  std::vector<Index> updated_positions;
  std::vector<TokenId> pseudo_labels;   // after the update
  std::vector<double> reference_losses;
  double best_activation_loss = 0.0;    // minimum over steps so far
  bool skipped = false;
  std::string note;

  bool operator==(const StepRecord&) const = default;
};

struct KeptImage {
  int step = 0;
  int sample = 0;
  std::string reference;
  Image image;
};

struct RunRecord {
  std::vector<StepRecord> steps;
  std::vector<TokenId> final_tokens;
  std::vector<std::string> final_words;
  /// Per position: pseudo-label after every step that changed it.
  std::vector<std::vector<TokenId>> label_trajectory;
  std::vector<KeptImage> kept_images;
  int unsafe_dropped = 0;
  bool aborted = false;
  std::string abort_reason;
  std::string adapter_digest_before;
  std::string adapter_digest_after;
  double wall_clock_seconds = 0.0;

  /// First step whose pseudo-labels equal `tokens`, or -1.
  int first_step_with_labels(const std::vector<TokenId>& tokens) const;
};

/// Optimizer state sufficient to continue a run bit-exactly. Random streams are
/// derived from (seed, label, step), so no engine state is stored.
struct Checkpoint {
  int next_step = 0;
  SoftPrompt soft_prompt;
  PseudoLabelState labels;
  Matrix adam_m;
  Matrix adam_v;
  int adam_t = 0;
  int consecutive_nonfinite = 0;
  double best_activation_loss = 0.0;
  std::vector<std::vector<TokenId>> label_trajectory;
  int unsafe_dropped = 0;
  bool aborted = false;
  std::string abort_reason;
};

void to_json(nlohmann::json& j, const SampleRecord& r);
void from_json(const nlohmann::json& j, SampleRecord& r);
void to_json(nlohmann::json& j, const StepRecord& r);
void from_json(const nlohmann::json& j, StepRecord& r);
void to_json(nlohmann::json& j, const Checkpoint& c);
void from_json(const nlohmann::json& j, Checkpoint& c);
/// Record without wall-clock time and image pixels.
nlohmann::json record_to_json(const RunRecord& record);

nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j);

/// Pre-sets every position's pseudo-label to a source token with a large
/// finite reference loss so the first genuine history mean displaces it.
void inject_initial_pseudo_target(PseudoLabelState& state, const Tokenizer& tokenizer, std::string_view token,
                                  double reference_loss = 1e6);

/// Step-by-step driver for one optimization run.
class Optimization {
 public:
  Optimization(AdapterSet adapters, RunConfig config);
  static Optimization from_checkpoint(AdapterSet adapters, RunConfig config, const Checkpoint& checkpoint,
                                      std::vector<StepRecord> previous_steps = {});

  bool done() const;
  int next_step() const { return state_.next_step; }
  const RunConfig& config() const { return config_; }
  const PipelineContext& context() const { return ctx_; }
  const SoftPrompt& soft_prompt() const { return state_.soft_prompt; }
  const PseudoLabelState& labels() const { return state_.labels; }

  /// Runs one step. Adapter failures abort the run and are rethrown.
  const StepRecord& step();
  /// Images kept by the most recent step.
  const std::vector<KeptImage>& last_kept() const { return last_kept_; }

  Checkpoint checkpoint() const { return state_; }
  /// Runs to completion (or abort) and returns the record.
  RunRecord run();
  RunRecord finish();

 private:
  void apply_gradient(const Matrix& grad);
  std::vector<TokenId> final_tokens() const;

  AdapterSet adapters_;
  RunConfig config_;
  PipelineContext ctx_;
  Checkpoint state_;
  std::vector<StepRecord> steps_;
  std::vector<KeptImage> kept_;
  std::vector<KeptImage> last_kept_;
  std::vector<TokenId> last_sampled_;
  std::string digest_before_;
  double elapsed_ = 0.0;
};

RunRecord run_optimization(const AdapterSet& adapters, const RunConfig& config);

struct GradientCheckReport {
  int points = 0;
  double max_relative_error = 0.0;
  std::vector<double> relative_errors;
  std::vector<double> norm_with_mask;
  std::vector<double> norm_without_mask;
  double mean_norm_ratio = 0.0;  // without / with
};

/// Analytic versus central-difference gradient of the total loss w.r.t. the
/// soft prompt at random points, with fixed Gumbel noise and fixed random
/// pseudo-labels. The forward uses the relaxed sample because the hard
/// forward is piecewise constant in the soft prompt.
GradientCheckReport gradient_check(const AdapterSet& adapters, const RunConfig& config, int points = 20,
                                   double step = 1e-5, double point_scale = 1.0);

}  // namespace promptlens
