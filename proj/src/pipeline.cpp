// Copyright 2026 The promptlens Authors
// SPDX-License-Identifier: Apache-2.0

#include "promptlens/pipeline.hpp"

#include "promptlens/hash.hpp"
#include "promptlens/image_io.hpp"
#include "promptlens/prompts.hpp"
#include "promptlens/rng.hpp"
#include "promptlens/slice.hpp"
#include "promptlens/stats.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace promptlens {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void say(const RunControl& control, const std::string& msg) {
  if (control.log) control.log(msg);
}

std::string tsv_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// Re-executed steps after a crash regenerate identical images; anything else
// would be an overwrite.
void write_image_once(RunDirectory& run, const std::string& name, const std::string& bytes) {
  for (const auto& e : run.artifacts()) {
    if (e.name != name) continue;
    if (e.sha256 == sha256_hex(bytes)) return;
    throw Error("artifact " + name + " exists with different content");
  }
  run.write_artifact(name, bytes, "image");
}

json checkpoint_state(const Checkpoint& ckpt, std::uintmax_t steps_bytes, const std::string& config_hash) {
  json j;
  to_json(j, ckpt);
  return {{"checkpoint", j}, {"steps_bytes", steps_bytes}, {"config_hash", config_hash}};
}

OptimizeOutcome drive(RunDirectory& run, Optimization& opt, const RunControl& control) {
  OptimizeOutcome out;
  out.dir = run.path();
  const std::string hash = run.manifest().value("config_hash", "");
  const fs::path steps_path = run.path() / "steps.jsonl";
  int executed = 0;
  while (!opt.done()) {
    if (control.stop_after >= 0 && executed >= control.stop_after) {
      say(control, "stopped after step " + std::to_string(opt.next_step()) + "; resume with `resume " +
                       run.path().string() + "`");
      return out;
    }
    const StepRecord* rec = nullptr;
    try {
      rec = &opt.step();
    } catch (const AdapterError& e) {
      const auto record = opt.finish();
      run.write_artifact("record.json", record_to_json(record).dump(2) + "\n", "record");
      run.update_manifest({{"status", "aborted"}, {"finished", utc_timestamp()}, {"abort_reason", e.what()}});
      throw;
    }
    run.append_line("steps.jsonl", json(*rec).dump());
    for (const auto& k : opt.last_kept()) write_image_once(run, k.reference, encode_pfm(k.image));
    run.write_state("checkpoint.json", checkpoint_state(opt.checkpoint(), fs::file_size(steps_path), hash).dump() + "\n");
    ++executed;
  }
  out.record = opt.finish();
  out.completed = true;
  out.prompt_text = out.record.final_tokens.empty() || out.record.final_tokens.front() == kUnset
                        ? std::string()
                        : prompt_for_tokens(opt.context(), out.record.final_tokens);
  run.seal_stream("steps.jsonl");
  run.write_artifact("record.json", record_to_json(out.record).dump(2) + "\n", "record");
  run.write_artifact("prompt.txt", out.prompt_text + "\n", "prompt");
  run.update_manifest({{"status", out.record.aborted ? "aborted" : "completed"}, {"finished", utc_timestamp()}});
  say(control, "final prompt: " + out.prompt_text);
  return out;
}

RetryPolicy retry_policy(const ReportSection& s) {
  RetryPolicy p;
  p.max_retries = s.max_retries;
  p.initial_delay_seconds = s.initial_delay_seconds;
  return p;
}

RunConfig class_run_config(const ExperimentConfig& config, const AdapterSet& adapters, Index class_index) {
  ExperimentConfig c = config;
  c.optimize.run.class_index = class_index;
  if (c.optimize.run.class_index != config.optimize.run.class_index) c.optimize.run.neurons.clear();
  return resolved_run_config(c, adapters);
}

std::vector<Image> generate_images(const AdapterSet& adapters, const std::string& prompt, Index n, std::uint64_t seed,
                                   int steps) {
  const Vector cond = adapters.text_encoder->encode_text(prompt);
  std::vector<Image> out;
  for (Index i = 0; i < n; ++i)
    out.push_back(adapters.generator->generate(cond, steps, derive_seed(seed, "evaluate_images", static_cast<std::uint64_t>(i))));
  return out;
}

}  // namespace

AdapterSet build_adapters(const ExperimentConfig& config) {
  return resolve_adapters(config.adapters.ids, config.adapters.options);
}

RunConfig resolved_run_config(const ExperimentConfig& config, const AdapterSet& adapters) {
  RunConfig run = config.optimize.run;
  if (config.optimize.top_features > 0) {
    if (!adapters.classifier) throw AdapterError("top_features needs a classifier");
    run.neurons = {select_top_neurons(*adapters.classifier, run.class_index, config.optimize.top_features)};
  }
  return run;
}

std::string prompt_for_tokens(const PipelineContext& ctx, const std::vector<TokenId>& source_tokens) {
  TokenSelection sel;
  for (TokenId t : source_tokens) {
    const auto target = t == kUnset ? std::nullopt : ctx.vocab_map.target_of(t);
    sel.target_ids.push_back(target ? *target : kUnmapped);
  }
  const auto& enc = *ctx.adapters.text_encoder;
  return assemble_conditioning_prompt(ctx.prompt_template, sel, enc.tokenizer(), enc.pad_id()).text;
}

std::string baseline_prompt(std::string_view class_name) {
  const bool vowel = !class_name.empty() &&
                     std::string_view("aeiou").find(static_cast<char>(std::tolower(static_cast<unsigned char>(class_name[0])))) !=
                         std::string_view::npos;
  return std::string(vowel ? "a picture of an " : "a picture of a ") + std::string(class_name);
}

OptimizeOutcome optimize_command(const ExperimentConfig& config, const RunControl& control) {
  const auto adapters = build_adapters(config);
  auto run = RunDirectory::create(config.output_root, config, "optimize");
  run.update_manifest({{"adapter_digest", adapters.parameter_digest()}});
  say(control, "run directory: " + run.path().string());
  Optimization opt(adapters, resolved_run_config(config, adapters));
  return drive(run, opt, control);
}

OptimizeOutcome resume_command(const fs::path& dir, const RunControl& control) {
  auto run = RunDirectory::open(dir);
  if (run.manifest().value("command", "") != "optimize") throw ConfigError(dir.string() + " is not an optimize run");
  if (run.status() == "completed" || run.status() == "aborted") {
    say(control, "run already " + run.status() + "; nothing to resume");
    OptimizeOutcome out;
    out.dir = dir;
    out.completed = true;
    out.noop = true;
    return out;
  }
  const auto config = run.config();
  const std::string hash = run.manifest().value("config_hash", "");
  const auto adapters = build_adapters(config);
  if (run.manifest().value("adapter_digest", adapters.parameter_digest()) != adapters.parameter_digest())
    throw AdapterError("adapter parameters differ from the interrupted run");
  const fs::path steps_path = dir / "steps.jsonl";

  if (!fs::exists(dir / "checkpoint.json")) {
    if (fs::exists(steps_path)) fs::resize_file(steps_path, 0);
    Optimization opt(adapters, resolved_run_config(config, adapters));
    return drive(run, opt, control);
  }
  json state;
  try {
    state = json::parse(read_file(dir / "checkpoint.json"));
  } catch (const json::exception& e) {
    throw ConfigError(dir.string() + "/checkpoint.json: " + e.what());
  }
  if (state.value("config_hash", "") != hash) throw ConfigError("checkpoint was written under a different config");
  const auto ckpt = state.at("checkpoint").get<Checkpoint>();
  // Drop a step logged after the last checkpoint.
  fs::resize_file(steps_path, state.at("steps_bytes").get<std::uintmax_t>());
  std::vector<StepRecord> steps;
  std::ifstream in(steps_path);
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) steps.push_back(json::parse(line).get<StepRecord>());
  say(control, "resuming at step " + std::to_string(ckpt.next_step));
  auto opt = Optimization::from_checkpoint(adapters, resolved_run_config(config, adapters), ckpt, std::move(steps));
  return drive(run, opt, control);
}

SliceOutcome slice_discover_command(const ExperimentConfig& config, const RunControl& control) {
  const auto adapters = build_adapters(config);
  auto run = RunDirectory::create(config.output_root, config, "slice-discover");
  SliceOutcome out;
  out.dir = run.path();
  const auto& s = config.slice;

  json words = json::array();
  for (std::size_t i = 0; i < 2; ++i) {
    const Index c = s.classes[i];
    RunConfig rc = class_run_config(config, adapters, c);
    rc.prompt.mask_count = 1;
    rc.neuron_subsets.clear();
    try {
      out.words[i] = extract_class_words(adapters, rc, s.k, s.allow_special);
    } catch (const DegenerateResultError& e) {
      say(control, "class " + std::to_string(c) + ": no word set (" + e.what() + ")");
    }
    json entry = {{"class_index", c}, {"class", config.class_name(c)}};
    if (out.words[i]) {
      json runs = json::array();
      for (const auto& r : out.words[i]->runs)
        runs.push_back({{"token", r.token}, {"word", r.word}, {"steps_to_label", r.steps_to_label}});
      entry["words"] = out.words[i]->words;
      entry["runs"] = runs;
    } else {
      entry["words"] = nullptr;
    }
    words.push_back(entry);
  }
  run.write_artifact("words.json", words.dump(2) + "\n", "words");

  if (!s.manifest.empty()) {
    if (!adapters.joint_encoder) throw CapabilityError("slice assignment needs a joint encoder");
    std::array<std::optional<Prototype>, 2> protos;
    for (std::size_t i = 0; i < 2; ++i)
      if (out.words[i]) protos[i] = class_prototype(out.words[i]->words, *adapters.joint_encoder, s.wrapping);
    EmbeddingCache cache(s.cache_dir.empty() ? fs::path(config.output_root) / "embedding_cache" : fs::path(s.cache_dir),
                         config.adapters.ids.joint_encoder);
    std::vector<SliceImage> images;
    std::vector<SliceLabel> truth;
    bool have_truth = true;
    for (const auto& e : read_manifest(s.manifest)) {
      const auto pos = e.true_class == s.classes[0] ? 0 : e.true_class == s.classes[1] ? 1 : -1;
      if (pos < 0) continue;
      images.push_back({e.path.string(), pos, cache.embed_file(e.path, *adapters.joint_encoder)});
      have_truth = have_truth && e.slice.has_value();
      truth.push_back(e.slice.value_or(SliceLabel::kUnbiased));
    }
    if (images.empty()) throw UsageError("manifest has no images of the configured classes");
    out.assignments = assign_slices(images, protos);
    run.write_artifact("assignments.tsv", assignments_table(out.assignments), "table");
    run.write_artifact("groups.tsv", group_table(out.assignments), "table");
    json metrics = {{"images", images.size()}, {"cache_hits", cache.hits()}, {"cache_misses", cache.misses()}};
    if (have_truth) {
      out.roc = roc_auc(out.assignments, truth);
      run.write_artifact("roc.tsv", roc_table(*out.roc), "plot");
      metrics["auc"] = out.roc->auc;
      say(control, "AUC " + tsv_number(out.roc->auc));
    }
    run.write_artifact("metrics.json", metrics.dump(2) + "\n", "metrics");
  }
  run.update_manifest({{"status", "completed"}, {"finished", utc_timestamp()}});
  return out;
}

std::shared_ptr<ChatClient> make_chat_client(const ExperimentConfig& config, const fs::path& journal) {
  std::shared_ptr<ChatClient> client;
  if (!config.credentials.replay.empty()) {
    client = std::make_shared<ReplayChatClient>(config.credentials.replay);
  } else {
    HttpClientConfig http;
    http.base_url = config.credentials.base_url;
    http.api_key_env = config.credentials.api_key_env;
    client = std::make_shared<HttpChatClient>(http);
  }
  if (!journal.empty()) client = std::make_shared<JournalingChatClient>(client, journal);
  return client;
}

ReportOutcome report_command(const ExperimentConfig& config, std::shared_ptr<ChatClient> client,
                             const RunControl& control) {
  const auto adapters = build_adapters(config);
  const auto& rs = config.report;
  if (!adapters.classifier || rs.class_index >= adapters.classifier->num_classes())
    throw ConfigError("report.class_index out of range");
  auto run = RunDirectory::create(config.output_root, config, "report");
  say(control, "run directory: " + run.path().string());
  for (const auto& p : prompts::all()) run.write_artifact("prompts/" + p.file_name, p.text, "prompt");
  if (!client)
    client = make_chat_client(config, config.credentials.journal.empty() ? fs::path() : run.path() / config.credentials.journal);

  ReportOutcome out;
  out.dir = run.path();
  const std::string name = config.class_name(rs.class_index);
  out.prompt = rs.prompt;
  if (out.prompt.empty()) {
    const RunConfig rc = class_run_config(config, adapters, rs.class_index);
    Optimization opt(adapters, rc);
    const auto record = opt.run();
    run.write_artifact("optimize_record.json", record_to_json(record).dump(2) + "\n", "record");
    if (record.aborted) throw AdapterError("prompt optimization aborted: " + record.abort_reason);
    if (record.final_tokens.empty() || record.final_tokens.front() == kUnset)
      throw DegenerateResultError("prompt optimization produced no tokens");
    out.prompt = prompt_for_tokens(opt.context(), record.final_tokens);
  }
  run.write_artifact("prompt.txt", out.prompt + "\n", "prompt");
  say(control, "prompt: " + out.prompt);

  ClassImageOptions gen;
  gen.count = rs.images;
  gen.attempt_cap = rs.attempt_cap;
  gen.seed = derive_seed(config.seed, "report_images", static_cast<std::uint64_t>(rs.class_index));
  gen.generator_steps = config.optimize.run.generator_steps;
  try {
    out.images = generate_class_images(adapters, out.prompt, rs.class_index, gen);
  } catch (const DegenerateResultError& e) {
    run.update_manifest({{"status", "aborted"}, {"finished", utc_timestamp()}, {"abort_reason", e.what()}});
    throw;
  }
  std::vector<CaptionInput> inputs;
  for (std::size_t i = 0; i < out.images.kept.size(); ++i) {
    char ref[64];
    std::snprintf(ref, sizeof ref, "images/kept_%03zu.pfm", i);
    run.write_artifact(ref, encode_pfm(out.images.kept[i].image), "image");
    inputs.push_back({ref, out.images.kept[i].image});
  }
  run.write_artifact("generation.json",
                     json{{"requested", out.images.requested},
                          {"attempts", out.images.attempts},
                          {"kept", out.images.kept.size()},
                          {"misclassified", out.images.misclassified},
                          {"unsafe_dropped", out.images.unsafe_dropped},
                          {"keep_ratio", out.images.keep_ratio}}
                             .dump(2) + "\n",
                     "metrics");

  ReasoningOptions caption_opts;
  caption_opts.model = rs.caption_model;
  caption_opts.temperature = rs.temperature;
  caption_opts.retry = retry_policy(rs);
  caption_opts.parallelism = rs.parallelism;
  out.captions = caption_images(inputs, *client, caption_opts);
  std::string lines;
  for (const auto& r : out.captions.records) lines += to_json(r).dump() + "\n";
  run.write_artifact("captions.jsonl", lines, "captions");
  if (!out.captions.drops.empty()) {
    std::string drops;
    for (const auto& d : out.captions.drops) {
      drops += json{{"image", d.image_ref}, {"error", d.error}}.dump() + "\n";
      say(control, "caption dropped for " + d.image_ref + ": " + d.error);
    }
    run.write_artifact("caption_drops.jsonl", drops, "log");
  }
  if (out.captions.records.empty()) throw DegenerateResultError("every captioning request failed");

  ReasoningOptions report_opts = caption_opts;
  report_opts.model = rs.report_model;
  std::vector<std::string> texts;
  for (const auto& r : out.captions.records) texts.push_back(r.caption);
  out.report = compose_report(name, texts, *client, report_opts);
  if (!out.report.validated) say(control, "report failed structure validation; stored unvalidated");
  run.write_artifact("report.md", out.report.text, "report");
  run.write_artifact("report.json", to_json(out.report).dump(2) + "\n", "report");

  if (rs.extract_cues) {
    out.cues = extract_cues(name, out.report.text, *client, report_opts);
    for (const auto& w : out.cues->warnings) say(control, "cues: " + w);
    run.write_artifact("cues.json", to_json(*out.cues).dump(2) + "\n", "cues");
    ActivationScoreOptions as;
    as.n = rs.grounding_images;
    as.seed = derive_seed(config.seed, "grounding_eval", 0);
    as.generator_steps = config.optimize.run.generator_steps;
    out.grounding = grounding_eval(
        adapters, {{name, rs.class_index, baseline_prompt(name), out.cues->grounding_prompt()}}, as);
    run.write_artifact("grounding.tsv", grounding_tsv(*out.grounding), "table");
    run.write_artifact("grounding.json", to_json(*out.grounding).dump(2) + "\n", "metrics");
  }
  run.update_manifest({{"status", "completed"}, {"finished", utc_timestamp()}});
  return out;
}

EvaluateOutcome evaluate_command(const ExperimentConfig& config, std::shared_ptr<ChatClient> client,
                                 const RunControl& control) {
  const auto& ev = config.evaluate;
  auto run = RunDirectory::create(config.output_root, config, "evaluate");
  EvaluateOutcome out;
  out.dir = run.path();
  out.results = json::object();
  std::string summary = "metric\tvalue\tsd\tn\n";
  auto add_summary = [&](const std::string& metric, double value, double sd, std::size_t n) {
    summary += metric + "\t" + tsv_number(value) + "\t" + tsv_number(sd) + "\t" + std::to_string(n) + "\n";
  };
  auto has = [&](const std::string& m) { return std::find(ev.metrics.begin(), ev.metrics.end(), m) != ev.metrics.end(); };

  const bool needs_adapters = has("activation_score") || has("stability") || has("clip_iqa") ||
                              has("semantic_clip_iqa") || has("sts");
  std::optional<AdapterSet> adapters;
  if (needs_adapters) adapters = build_adapters(config);
  const std::string name = config.class_name(ev.class_index);
  const std::string prompt = ev.prompt.empty() ? baseline_prompt(name) : ev.prompt;
  ActivationScoreOptions as;
  as.n = ev.n;
  as.seed = derive_seed(config.seed, "evaluate", 0);
  as.generator_steps = config.optimize.run.generator_steps;

  if (has("activation_score")) {
    const auto r = activation_score(*adapters, prompt, ev.class_index, as);
    out.results["activation_score"] = to_json(r);
    std::string rows = "index\tseed\tpredicted_class\thit\n";
    for (const auto& smp : r.samples)
      rows += std::to_string(smp.index) + "\t" + std::to_string(smp.seed) + "\t" + std::to_string(smp.predicted_class) +
              "\t" + (smp.hit ? "1" : "0") + "\n";
    run.write_artifact("activation_samples.tsv", rows, "plot");
    add_summary("activation_score", r.score, 0.0, static_cast<std::size_t>(r.n_generated));
  }
  if (has("stability")) {
    const auto r = stability_eval(*adapters, prompt, ev.class_index, ev.runs, as);
    out.results["stability"] = to_json(r);
    add_summary("stability", r.mean, r.sd, r.runs.size());
  }
  for (const std::string metric : {"clip_iqa", "semantic_clip_iqa"}) {
    if (!has(metric)) continue;
    if (!adapters->joint_encoder) throw CapabilityError(metric + " needs a joint encoder");
    const auto images = generate_images(*adapters, prompt, ev.n, as.seed, as.generator_steps);
    std::vector<double> probs;
    std::string rows = "index\tprobability\n";
    json meta;
    for (std::size_t i = 0; i < images.size(); ++i) {
      const auto r = metric == "clip_iqa" ? clip_iqa(images[i], *adapters->joint_encoder)
                                          : semantic_clip_iqa(images[i], name, *adapters->joint_encoder);
      probs.push_back(r.probability);
      rows += std::to_string(i) + "\t" + tsv_number(r.probability) + "\n";
      meta = to_json(r);
    }
    const auto m = mean_sd(probs);
    out.results[metric] = {{"mean", m.mean}, {"sd", m.sd}, {"n", probs.size()}, {"scaling", meta["scaling"]},
                           {"scale", meta["scale"]}};
    run.write_artifact(metric + ".tsv", rows, "plot");
    add_summary(metric, m.mean, m.sd, probs.size());
  }
  if (has("sts")) {
    if (!adapters->sentence_embedder) throw CapabilityError("sts needs a sentence embedder");
    if (ev.report_file.empty() || ev.reference_file.empty())
      throw ConfigError("evaluate.report_file and evaluate.reference_file are required for sts");
    const double v = sts_similarity(read_file(ev.report_file), read_file(ev.reference_file), *adapters->sentence_embedder);
    out.results["sts"] = {{"similarity", v}};
    add_summary("sts", v, 0.0, 1);
  }
  for (const std::string metric : {"geval_consistency", "mos_llm"}) {
    if (!has(metric)) continue;
    if (ev.report_file.empty()) throw ConfigError("evaluate.report_file is required for " + metric);
    if (!client)
      client = make_chat_client(config, config.credentials.journal.empty() ? fs::path() : run.path() / config.credentials.journal);
    JudgeOptions jo;
    jo.model = ev.judge_model;
    jo.n = ev.judge_samples;
    jo.temperature = ev.judge_temperature;
    const auto r = llm_judge(read_file(ev.report_file), ev.question, judge_metric_from_string(metric), *client, jo);
    if (r.temperature.clamped())
      say(control, metric + ": temperature clamped from " + tsv_number(r.temperature.requested) + " to " +
                       tsv_number(r.temperature.used));
    out.results[metric] = to_json(r);
    add_summary(metric, r.mean, r.sd, r.ratings.size());
  }
  if (has("delta_statistics")) {
    const auto s = delta_statistics(ev.deltas);
    out.results["delta_statistics"] = to_json(s);
    add_summary("delta_statistics", s.mean, s.sd, static_cast<std::size_t>(s.n));
  }
  if (has("tost")) {
    const auto t = tost_equivalence(ev.samples_a, ev.samples_b, ev.tost_lower, ev.tost_upper);
    out.results["tost"] = {{"mean_difference", t.mean_difference},
                           {"df", t.df},
                           {"p_lower", t.p_lower},
                           {"p_upper", t.p_upper},
                           {"equivalent", t.equivalent},
                           {"zero_variance_convention", t.zero_variance}};
    add_summary("tost", std::max(t.p_lower, t.p_upper), 0.0, ev.samples_a.size() + ev.samples_b.size());
  }
  run.write_artifact("results.json", out.results.dump(2) + "\n", "metrics");
  run.write_artifact("summary.tsv", summary, "table");
  run.update_manifest({{"status", "completed"}, {"finished", utc_timestamp()}});
  return out;
}

}  // namespace promptlens
