// Copyright 2026 The promptlens Authors
// SPDX-License-Identifier: Apache-2.0

#include "promptlens/optimizer.hpp"

#include "promptlens/math.hpp"
#include "promptlens/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>

namespace promptlens {

constexpr double kInf = std::numeric_limits<double>::infinity();

// --- configuration ------------------------------------------------------------

void RunConfig::validate() const {
  if (steps < 1) throw ConfigError("steps must be >= 1");
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (prompt_length < 1) throw ConfigError("prompt_length must be >= 1");
  if (!(temperature > 0)) throw ConfigError("temperature must be > 0");
  if (generator_steps < 1) throw ConfigError("generator_steps must be >= 1");
  if (prompt.mask_count < 1) throw ConfigError("prompt.mask_count must be >= 1 for optimization");
  if (!(init_scale >= 0)) throw ConfigError("init_scale must be >= 0");
  if (max_consecutive_nonfinite < 1) throw ConfigError("max_consecutive_nonfinite must be >= 1");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1) || !(adam_epsilon > 0))
    throw ConfigError("adam parameters out of range");
  if (!(injected_reference_loss < kInf)) throw ConfigError("injected_reference_loss must be finite");
  if (class_index < 0) throw ConfigError("class_index must be >= 0");
  for (const auto& spec : neurons) spec.validate();
  if (!neuron_subsets.empty() && static_cast<int>(neuron_subsets.size()) != prompt.mask_count)
    throw ConfigError("neuron_subsets needs one entry per mask slot");
}

std::vector<NeuronSpec> RunConfig::resolved_neurons() const {
  if (!neurons.empty()) return neurons;
  return {NeuronSpec::output({class_index})};
}

PipelineContext PipelineContext::build(const AdapterSet& adapters, const RunConfig& config) {
  config.validate();
  if (!adapters.masked_lm || !adapters.text_encoder || !adapters.generator || !adapters.classifier)
    throw AdapterError("optimization needs a masked LM, text encoder, generator and classifier");
  PipelineContext ctx;
  ctx.adapters = adapters;
  const auto& lm = *adapters.masked_lm;
  ctx.prompt_template = render_template(config.prompt.fixed_text, config.prompt.mask_count, lm.tokenizer(),
                                        lm.mask_id(), config.prompt.layout, config.prompt.terminator);
  ctx.vocab_map = build_vocab_map(lm.tokenizer(), adapters.text_encoder->tokenizer());
  ctx.neurons = config.resolved_neurons();
  ctx.target_class = config.class_index;
  ctx.generator_steps = config.generator_steps;
  ctx.temperature = config.temperature;
  ctx.excluded_tokens = config.excluded_tokens;

  const auto& cls = *adapters.classifier;
  if (config.class_index >= cls.num_classes()) throw ConfigError("class_index exceeds the classifier's classes");
  for (const auto& spec : ctx.neurons) {
    const Index width = spec.layer_role == LayerRole::kOutput ? cls.num_classes() : cls.feature_width();
    for (Index idx : spec.indices)
      if (idx < 0 || idx >= width) throw ConfigError("neuron index " + std::to_string(idx) + " out of range");
  }
  const Index vocab = lm.tokenizer().vocabulary().size();
  for (TokenId t : ctx.excluded_tokens)
    if (t < 0 || t >= vocab) throw ConfigError("excluded token id out of range");
  if (adapters.text_encoder->embed_dim() != adapters.generator->conditioning_dim())
    throw ConfigError("text encoder width does not match the generator conditioning width");
  return ctx;
}

// --- forward / backward -------------------------------------------------------

Matrix masked_logits(const PipelineContext& ctx, const SoftPrompt& prompt) {
  Matrix logits = ctx.adapters.masked_lm->forward(prompt, ctx.prompt_template.rendered);
  for (TokenId t : ctx.excluded_tokens) logits.col(t).setConstant(-kInf);
  return logits;
}

SampleForward forward_sample(const PipelineContext& ctx, const Matrix& logits, const Matrix& noise,
                             std::uint64_t generator_seed, bool relaxed_forward) {
  SampleForward out;
  out.generator_seed = generator_seed;
  out.relaxed_forward = relaxed_forward;
  out.selection = translate_tokens(sample_with_noise(logits, ctx.temperature, noise), ctx.vocab_map);
  if (relaxed_forward) out.selection.target_vectors = ctx.vocab_map.apply(out.selection.relaxed);
  const auto& encoder = *ctx.adapters.text_encoder;
  out.prompt = assemble_conditioning_prompt(ctx.prompt_template, out.selection, encoder.tokenizer(), encoder.pad_id());
  out.relaxed = relaxed_sequence(out.prompt, out.selection);
  out.embedding = encoder.encode_relaxed(out.relaxed);
  out.image = ctx.adapters.generator->generate(out.embedding, ctx.generator_steps, generator_seed);
  out.classifier = ctx.adapters.classifier->forward(out.image);
  out.selected = select_neurons(out.classifier, ctx.neurons);
  out.predicted_class = argmax(out.classifier.probabilities);
  out.activation_loss = activation_loss(out.selected);
  return out;
}

Matrix activation_logit_grad(const PipelineContext& ctx, const SampleForward& sample) {
  const Vector selected_grad = activation_loss_grad(sample.selected);
  const auto [feature_grad, prob_grad] = scatter_neuron_grad(sample.classifier, ctx.neurons, selected_grad);
  const Image image_grad = ctx.adapters.classifier->backward(sample.image, feature_grad, prob_grad);
  const Vector embedding_grad =
      ctx.adapters.generator->backward(sample.embedding, ctx.generator_steps, sample.generator_seed, image_grad);
  const Matrix slot_grad = ctx.adapters.text_encoder->backward_relaxed(sample.relaxed, embedding_grad);
  return straight_through_backward(sample.selection, ctx.vocab_map.apply_transpose(slot_grad));
}

Matrix soft_prompt_grad(const PipelineContext& ctx, const SoftPrompt& prompt, const Matrix& logit_grad) {
  return ctx.adapters.masked_lm->backward(prompt, ctx.prompt_template.rendered, logit_grad);
}

namespace {

Matrix row_softmax(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) out.row(i) = softmax(logits.row(i).transpose()).transpose();
  return out;
}

Matrix gumbel_noise(Index rows, Index cols, std::uint64_t seed) {
  Rng rng(seed);
  Matrix noise(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) noise(i, j) = rng.gumbel();
  return noise;
}

std::vector<TokenId> candidate_tokens(const Vocabulary& vocab, const std::vector<TokenId>& excluded) {
  const std::set<TokenId> skip(excluded.begin(), excluded.end());
  std::vector<TokenId> out;
  for (TokenId t = 0; t < vocab.size(); ++t)
    if (!vocab.is_special(t) && !skip.count(t)) out.push_back(t);
  return out;
}

std::string image_reference(int step, int sample) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "images/step_%06d_%d.pfm", step, sample);
  return buf;
}

}  // namespace

// --- injection ------------------------------------------------------------------

void inject_initial_pseudo_target(PseudoLabelState& state, const Tokenizer& tokenizer, std::string_view token,
                                  double reference_loss) {
  const auto& vocab = tokenizer.vocabulary();
  auto id = vocab.find(token);
  if (!id) {
    const auto pieces = tokenizer.encode(token);
    if (pieces.size() == 1 && !vocab.is_special(pieces.front())) id = pieces.front();
  }
  if (!id) throw UsageError("injected token '" + std::string(token) + "' is not in the source vocabulary");
  if (!std::isfinite(reference_loss)) throw UsageError("injected reference loss must be finite");
  for (auto& pos : state.positions) {
    pos.pseudo_label = *id;
    pos.reference_loss = reference_loss;
  }
}

// --- optimization ---------------------------------------------------------------

int RunRecord::first_step_with_labels(const std::vector<TokenId>& tokens) const {
  for (const auto& s : steps)
    if (!s.skipped && s.pseudo_labels == tokens) return s.step;
  return -1;
}

Optimization::Optimization(AdapterSet adapters, RunConfig config)
    : adapters_(std::move(adapters)), config_(std::move(config)), ctx_(PipelineContext::build(adapters_, config_)) {
  const Index d = adapters_.masked_lm->embed_dim();
  Rng init(derive_seed(config_.seed, "soft_prompt"));
  state_.soft_prompt.vectors.resize(config_.prompt_length, d);
  for (Index r = 0; r < config_.prompt_length; ++r)
    for (Index c = 0; c < d; ++c) state_.soft_prompt.vectors(r, c) = config_.init_scale * init.normal();
  state_.adam_m = Matrix::Zero(config_.prompt_length, d);
  state_.adam_v = Matrix::Zero(config_.prompt_length, d);
  state_.best_activation_loss = kInf;

  Index neuron_count = 0;
  for (const auto& spec : ctx_.neurons) neuron_count += static_cast<Index>(spec.indices.size());
  state_.labels = PseudoLabelState::initial(ctx_.slots(), neuron_count, config_.neuron_subsets);

  const auto& tokenizer = adapters_.masked_lm->tokenizer();
  if (config_.initial_labels == InitialLabels::kRandom) {
    const auto pool = candidate_tokens(tokenizer.vocabulary(), config_.excluded_tokens);
    if (pool.empty()) throw ConfigError("no candidate tokens for random initial pseudo-labels");
    Rng rng(derive_seed(config_.seed, "initial_labels"));
    for (auto& pos : state_.labels.positions) {
      pos.pseudo_label = pool[static_cast<std::size_t>(rng.next_u64() % pool.size())];
      pos.reference_loss = config_.injected_reference_loss;
    }
  }
  if (config_.injected_token)
    inject_initial_pseudo_target(state_.labels, tokenizer, *config_.injected_token, config_.injected_reference_loss);

  state_.label_trajectory.resize(state_.labels.positions.size());
  for (std::size_t i = 0; i < state_.labels.positions.size(); ++i)
    if (state_.labels.positions[i].is_set())
      state_.label_trajectory[i].push_back(state_.labels.positions[i].pseudo_label);
  digest_before_ = adapters_.parameter_digest();
}

Optimization Optimization::from_checkpoint(AdapterSet adapters, RunConfig config, const Checkpoint& checkpoint,
                                           std::vector<StepRecord> previous_steps) {
  Optimization out(std::move(adapters), std::move(config));
  if (checkpoint.soft_prompt.vectors.rows() != out.config_.prompt_length ||
      checkpoint.soft_prompt.vectors.cols() != out.adapters_.masked_lm->embed_dim())
    throw ConfigError("checkpoint soft prompt does not match the configuration");
  if (checkpoint.labels.positions.size() != out.state_.labels.positions.size())
    throw ConfigError("checkpoint pseudo-label state does not match the template");
  if (static_cast<int>(previous_steps.size()) != checkpoint.next_step)
    throw ConfigError("checkpoint step counter does not match the step log");
  out.state_ = checkpoint;
  out.steps_ = std::move(previous_steps);
  // Pixels of earlier images live in the run directory; only references are restored.
  for (const auto& rec : out.steps_)
    for (std::size_t b = 0; b < rec.samples.size(); ++b)
      if (rec.samples[b].image) out.kept_.push_back({rec.step, static_cast<int>(b), *rec.samples[b].image, Image()});
  return out;
}

bool Optimization::done() const { return state_.aborted || state_.next_step >= config_.steps; }

void Optimization::apply_gradient(const Matrix& grad) {
  Matrix& p = state_.soft_prompt.vectors;
  if (config_.optimizer == OptimizerKind::kSgd) {
    p -= config_.learning_rate * grad;
    return;
  }
  state_.adam_t += 1;
  state_.adam_m = config_.adam_beta1 * state_.adam_m + (1 - config_.adam_beta1) * grad;
  state_.adam_v = config_.adam_beta2 * state_.adam_v + (1 - config_.adam_beta2) * grad.cwiseAbs2();
  const double c1 = 1 - std::pow(config_.adam_beta1, state_.adam_t);
  const double c2 = 1 - std::pow(config_.adam_beta2, state_.adam_t);
  p.array() -= config_.learning_rate * (state_.adam_m.array() / c1) /
               ((state_.adam_v.array() / c2).sqrt() + config_.adam_epsilon);
}

const StepRecord& Optimization::step() {
  if (done()) throw UsageError("optimization run is already finished");
  const auto started = std::chrono::steady_clock::now();
  const int s = state_.next_step;
  const int batch = config_.batch_size;
  const auto& lm_vocab = adapters_.masked_lm->tokenizer().vocabulary();
  StepRecord rec;
  rec.step = s;
  rec.gumbel_seed = derive_seed(config_.seed, "gumbel", static_cast<std::uint64_t>(s));
  last_kept_.clear();

  bool finite = true;
  std::vector<SampleForward> samples;
  Matrix logit_grad;
  try {
    const Matrix logits = masked_logits(ctx_, state_.soft_prompt);
    const Matrix s_rows = row_softmax(logits);
    if (config_.use_mask_loss) {
      const auto mask = mask_loss(s_rows, state_.labels);
      rec.mask_loss = mask.value;
      rec.mask_clamped_positions = mask.clamped_positions;
      logit_grad = mask_loss_logit_grad(s_rows, state_.labels);
    } else {
      logit_grad = Matrix::Zero(logits.rows(), logits.cols());
    }
    for (int b = 0; b < batch; ++b) {
      const auto index = static_cast<std::uint64_t>(s) * static_cast<std::uint64_t>(batch) + b;
      const Matrix noise = gumbel_noise(logits.rows(), logits.cols(), derive_seed(config_.seed, "gumbel", index));
      samples.push_back(forward_sample(ctx_, logits, noise, derive_seed(config_.seed, "generator", index)));
      const auto& smp = samples.back();
      rec.activation_loss += smp.activation_loss / batch;
      logit_grad += activation_logit_grad(ctx_, smp) / static_cast<double>(batch);
    }
    finite = std::isfinite(rec.activation_loss) && std::isfinite(rec.mask_loss) && logit_grad.allFinite();
  } catch (const DomainError& e) {
    finite = false;
    rec.note = e.what();
  } catch (const AdapterError& e) {
    state_.aborted = true;
    state_.abort_reason = std::string("adapter failure at step ") + std::to_string(s) + ": " + e.what();
    elapsed_ += std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    throw;
  }

  for (std::size_t b = 0; b < samples.size(); ++b) {
    const auto& smp = samples[b];
    SampleRecord sr;
    sr.source_tokens = smp.selection.source_ids;
    for (TokenId t : sr.source_tokens) sr.source_words.push_back(lm_vocab.token(t));
    sr.target_tokens = smp.selection.target_ids;
    sr.prompt_text = smp.prompt.text;
    sr.degenerate = smp.prompt.all_unmapped();
    sr.activation_loss = smp.activation_loss;
    sr.predicted_class = smp.predicted_class;
    sr.generator_seed = smp.generator_seed;
    if (finite) {
      for (const auto& pos : state_.labels.positions) {
        try {
          sr.aggregated_losses.push_back(aggregated_loss(smp.selected, pos.neuron_subset));
        } catch (const DomainError&) {
          sr.aggregated_losses.push_back(std::numeric_limits<double>::quiet_NaN());
          finite = false;
        }
      }
    }
    const auto& caps = adapters_.generator->capabilities();
    sr.unsafe = caps.safety_checker && !adapters_.generator->is_safe(smp.image);
    if (sr.unsafe) {
      ++state_.unsafe_dropped;
    } else if (smp.predicted_class == ctx_.target_class) {
      sr.image = image_reference(s, static_cast<int>(b));
      last_kept_.push_back({s, static_cast<int>(b), *sr.image, smp.image});
    }
    rec.samples.push_back(std::move(sr));
  }

  if (!finite) {
    rec.skipped = true;
    if (rec.note.empty()) rec.note = "non-finite loss or gradient";
    rec.activation_loss = std::isfinite(rec.activation_loss) ? rec.activation_loss : 0.0;
    rec.mask_loss = std::isfinite(rec.mask_loss) ? rec.mask_loss : 0.0;
    for (auto& sr : rec.samples) {
      sr.aggregated_losses.clear();
      if (!std::isfinite(sr.activation_loss)) sr.activation_loss = 0.0;
      sr.image.reset();
    }
    last_kept_.clear();
    ++state_.consecutive_nonfinite;
    if (state_.consecutive_nonfinite >= config_.max_consecutive_nonfinite) {
      state_.aborted = true;
      state_.abort_reason = std::to_string(state_.consecutive_nonfinite) + " consecutive non-finite steps";
    }
  } else {
    state_.consecutive_nonfinite = 0;
    rec.total_loss = total_loss(rec.activation_loss, rec.mask_loss);
    std::set<Index> updated;
    for (std::size_t b = 0; b < samples.size(); ++b) {
      const auto report =
          update_pseudo_labels(state_.labels, samples[b].selection.source_ids, rec.samples[b].aggregated_losses);
      updated.insert(report.updated_positions.begin(), report.updated_positions.end());
    }
    rec.updated_positions.assign(updated.begin(), updated.end());
    for (Index i : rec.updated_positions) {
      auto& path = state_.label_trajectory[static_cast<std::size_t>(i)];
      const TokenId y = state_.labels.positions[static_cast<std::size_t>(i)].pseudo_label;
      if (path.empty() || path.back() != y) path.push_back(y);
    }
    apply_gradient(soft_prompt_grad(ctx_, state_.soft_prompt, logit_grad));
    state_.best_activation_loss = std::min(state_.best_activation_loss, rec.activation_loss);
    last_sampled_ = samples.back().selection.source_ids;
  }
  for (const auto& pos : state_.labels.positions) {
    rec.pseudo_labels.push_back(pos.pseudo_label);
    rec.reference_losses.push_back(pos.reference_loss);
  }
  rec.best_activation_loss = state_.best_activation_loss;
  kept_.insert(kept_.end(), last_kept_.begin(), last_kept_.end());
  state_.next_step += 1;
  steps_.push_back(std::move(rec));
  elapsed_ += std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return steps_.back();
}

std::vector<TokenId> Optimization::final_tokens() const {
  std::vector<TokenId> out;
  for (std::size_t i = 0; i < state_.labels.positions.size(); ++i) {
    const auto& pos = state_.labels.positions[i];
    if (pos.is_set()) out.push_back(pos.pseudo_label);
    else out.push_back(i < last_sampled_.size() ? last_sampled_[i] : kUnset);
  }
  return out;
}

RunRecord Optimization::run() {
  try {
    while (!done()) step();
  } catch (const AdapterError&) {
    // partial record below
  }
  return finish();
}

RunRecord Optimization::finish() {
  RunRecord out;
  out.steps = steps_;
  out.final_tokens = final_tokens();
  const auto& vocab = adapters_.masked_lm->tokenizer().vocabulary();
  for (TokenId t : out.final_tokens) out.final_words.push_back(t == kUnset ? std::string() : vocab.token(t));
  out.label_trajectory = state_.label_trajectory;
  out.kept_images = kept_;
  out.unsafe_dropped = state_.unsafe_dropped;
  out.aborted = state_.aborted;
  out.abort_reason = state_.abort_reason;
  out.adapter_digest_before = digest_before_;
  out.adapter_digest_after = adapters_.parameter_digest();
  out.wall_clock_seconds = elapsed_;
  return out;
}

RunRecord run_optimization(const AdapterSet& adapters, const RunConfig& config) {
  return Optimization(adapters, config).run();
}

// --- gradient check ---------------------------------------------------------------

GradientCheckReport gradient_check(const AdapterSet& adapters, const RunConfig& config, int points, double step,
                                   double point_scale) {
  if (points < 1 || !(step > 0)) throw UsageError("gradient check needs points >= 1 and a positive step");
  const auto ctx = PipelineContext::build(adapters, config);
  const Index d = adapters.masked_lm->embed_dim();
  const auto pool = candidate_tokens(adapters.masked_lm->tokenizer().vocabulary(), config.excluded_tokens);
  Index neuron_count = 0;
  for (const auto& spec : ctx.neurons) neuron_count += static_cast<Index>(spec.indices.size());

  GradientCheckReport report;
  report.points = points;
  double ratio_sum = 0.0;
  for (int k = 0; k < points; ++k) {
    Rng rng(derive_seed(config.seed, "gradcheck", static_cast<std::uint64_t>(k)));
    SoftPrompt prompt;
    prompt.vectors.resize(config.prompt_length, d);
    for (Index r = 0; r < prompt.vectors.rows(); ++r)
      for (Index c = 0; c < d; ++c) prompt.vectors(r, c) = point_scale * rng.normal();
    auto labels = PseudoLabelState::initial(ctx.slots(), neuron_count, config.neuron_subsets);
    for (auto& pos : labels.positions) {
      pos.pseudo_label = pool[static_cast<std::size_t>(rng.next_u64() % pool.size())];
      pos.reference_loss = 0.0;
    }
    const std::uint64_t gen_seed = rng.next_u64();
    const Matrix noise = gumbel_noise(ctx.slots(), adapters.masked_lm->tokenizer().vocabulary().size(),
                                      rng.next_u64());

    auto loss_at = [&](const SoftPrompt& p) {
      const Matrix logits = masked_logits(ctx, p);
      const double act = forward_sample(ctx, logits, noise, gen_seed, true).activation_loss;
      return act + mask_loss(row_softmax(logits), labels).value;
    };

    const Matrix logits = masked_logits(ctx, prompt);
    const auto sample = forward_sample(ctx, logits, noise, gen_seed, true);
    const Matrix act_grad = activation_logit_grad(ctx, sample);
    const Matrix mask_grad = mask_loss_logit_grad(row_softmax(logits), labels);
    const Matrix analytic = soft_prompt_grad(ctx, prompt, act_grad + mask_grad);
    const Matrix without_mask = soft_prompt_grad(ctx, prompt, act_grad);

    Matrix numeric(prompt.vectors.rows(), d);
    for (Index r = 0; r < numeric.rows(); ++r) {
      for (Index c = 0; c < d; ++c) {
        SoftPrompt plus = prompt, minus = prompt;
        plus.vectors(r, c) += step;
        minus.vectors(r, c) -= step;
        numeric(r, c) = (loss_at(plus) - loss_at(minus)) / (2 * step);
      }
    }
    const double scale = std::max(numeric.norm(), 1e-12);
    const double err = (analytic - numeric).norm() / scale;
    report.relative_errors.push_back(err);
    report.max_relative_error = std::max(report.max_relative_error, err);
    report.norm_with_mask.push_back(analytic.norm());
    report.norm_without_mask.push_back(without_mask.norm());
    ratio_sum += without_mask.norm() / std::max(analytic.norm(), 1e-300);
  }
  report.mean_norm_ratio = ratio_sum / points;
  return report;
}

// --- serialization ----------------------------------------------------------------

nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json data = nlohmann::json::array();
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Matrix matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Index>();
  const auto cols = j.at("cols").get<Index>();
  const auto& data = j.at("data");
  if (static_cast<Index>(data.size()) != rows * cols) throw ConfigError("matrix record has the wrong element count");
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r * cols + c)].get<double>();
  return m;
}

void to_json(nlohmann::json& j, const SampleRecord& r) {
  nlohmann::json agg = nlohmann::json::array();
  for (double v : r.aggregated_losses) agg.push_back(encode_real(v));
  j = {{"source_tokens", r.source_tokens},
       {"source_words", r.source_words},
       {"target_tokens", r.target_tokens},
       {"prompt", r.prompt_text},
       {"degenerate", r.degenerate},
       {"activation_loss", encode_real(r.activation_loss)},
       {"aggregated_losses", std::move(agg)},
       {"predicted_class", r.predicted_class},
       {"generator_seed", r.generator_seed},
       {"unsafe", r.unsafe},
       {"image", r.image ? nlohmann::json(*r.image) : nlohmann::json(nullptr)}};
}

void from_json(const nlohmann::json& j, SampleRecord& r) {
  r.source_tokens = j.at("source_tokens").get<std::vector<TokenId>>();
  r.source_words = j.at("source_words").get<std::vector<std::string>>();
  r.target_tokens = j.at("target_tokens").get<std::vector<TokenId>>();
  r.prompt_text = j.at("prompt").get<std::string>();
  r.degenerate = j.at("degenerate").get<bool>();
  r.activation_loss = decode_real(j.at("activation_loss"));
  r.aggregated_losses.clear();
  for (const auto& v : j.at("aggregated_losses")) r.aggregated_losses.push_back(decode_real(v));
  r.predicted_class = j.at("predicted_class").get<Index>();
  r.generator_seed = j.at("generator_seed").get<std::uint64_t>();
  r.unsafe = j.at("unsafe").get<bool>();
  if (j.at("image").is_null()) r.image.reset();
  else r.image = j.at("image").get<std::string>();
}

void to_json(nlohmann::json& j, const StepRecord& r) {
  nlohmann::json refs = nlohmann::json::array();
  for (double v : r.reference_losses) refs.push_back(encode_real(v));
  j = {{"step", r.step},
       {"gumbel_seed", r.gumbel_seed},
       {"samples", r.samples},
       {"activation_loss", encode_real(r.activation_loss)},
       {"mask_loss", encode_real(r.mask_loss)},
       {"total_loss", encode_real(r.total_loss)},
       {"mask_clamped_positions", r.mask_clamped_positions},
       {"updated_positions", r.updated_positions},
       {"pseudo_labels", r.pseudo_labels},
       {"reference_losses", std::move(refs)},
       {"best_activation_loss", encode_real(r.best_activation_loss)},
       {"skipped", r.skipped},
       {"note", r.note}};
}

void from_json(const nlohmann::json& j, StepRecord& r) {
  r.step = j.at("step").get<int>();
  r.gumbel_seed = j.at("gumbel_seed").get<std::uint64_t>();
  r.samples = j.at("samples").get<std::vector<SampleRecord>>();
  r.activation_loss = decode_real(j.at("activation_loss"));
  r.mask_loss = decode_real(j.at("mask_loss"));
  r.total_loss = decode_real(j.at("total_loss"));
  r.mask_clamped_positions = j.at("mask_clamped_positions").get<std::vector<Index>>();
  r.updated_positions = j.at("updated_positions").get<std::vector<Index>>();
  r.pseudo_labels = j.at("pseudo_labels").get<std::vector<TokenId>>();
  r.reference_losses.clear();
  for (const auto& v : j.at("reference_losses")) r.reference_losses.push_back(decode_real(v));
  r.best_activation_loss = decode_real(j.at("best_activation_loss"));
  r.skipped = j.at("skipped").get<bool>();
  r.note = j.at("note").get<std::string>();
}

void to_json(nlohmann::json& j, const Checkpoint& c) {
  j = {{"next_step", c.next_step},
       {"soft_prompt", matrix_to_json(c.soft_prompt.vectors)},
       {"labels", c.labels},
       {"adam_m", matrix_to_json(c.adam_m)},
       {"adam_v", matrix_to_json(c.adam_v)},
       {"adam_t", c.adam_t},
       {"consecutive_nonfinite", c.consecutive_nonfinite},
       {"best_activation_loss", encode_real(c.best_activation_loss)},
       {"label_trajectory", c.label_trajectory},
       {"unsafe_dropped", c.unsafe_dropped},
       {"aborted", c.aborted},
       {"abort_reason", c.abort_reason}};
}

void from_json(const nlohmann::json& j, Checkpoint& c) {
  c.next_step = j.at("next_step").get<int>();
  c.soft_prompt.vectors = matrix_from_json(j.at("soft_prompt"));
  c.labels = j.at("labels").get<PseudoLabelState>();
  c.adam_m = matrix_from_json(j.at("adam_m"));
  c.adam_v = matrix_from_json(j.at("adam_v"));
  c.adam_t = j.at("adam_t").get<int>();
  c.consecutive_nonfinite = j.at("consecutive_nonfinite").get<int>();
  c.best_activation_loss = decode_real(j.at("best_activation_loss"));
  c.label_trajectory = j.at("label_trajectory").get<std::vector<std::vector<TokenId>>>();
  c.unsafe_dropped = j.at("unsafe_dropped").get<int>();
  c.aborted = j.at("aborted").get<bool>();
  c.abort_reason = j.at("abort_reason").get<std::string>();
}

nlohmann::json record_to_json(const RunRecord& record) {
  nlohmann::json kept = nlohmann::json::array();
  for (const auto& k : record.kept_images) kept.push_back(k.reference);
  return {{"steps", record.steps},
          {"final_tokens", record.final_tokens},
          {"final_words", record.final_words},
          {"label_trajectory", record.label_trajectory},
          {"kept_images", std::move(kept)},
          {"unsafe_dropped", record.unsafe_dropped},
          {"aborted", record.aborted},
          {"abort_reason", record.abort_reason},
          {"adapter_digest_before", record.adapter_digest_before},
          {"adapter_digest_after", record.adapter_digest_after}};
}

}  // namespace promptlens
