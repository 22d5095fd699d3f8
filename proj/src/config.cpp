// Copyright 2026 The promptlens Authors
// SPDX-License-Identifier: Apache-2.0

#include "promptlens/config.hpp"

#include "promptlens/hash.hpp"

#include <algorithm>
#include <fstream>
#include <set>

namespace promptlens {

using nlohmann::json;

namespace {

const std::vector<std::string> kMetrics = {"activation_score", "stability",        "clip_iqa",
                                           "semantic_clip_iqa", "sts",              "geval_consistency",
                                           "mos_llm",           "delta_statistics", "tost"};

// Typed access to one JSON object with field-path errors and unknown-key
// rejection.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError((path_.empty() ? std::string("config") : path_) + ": expected an object");
  }

  std::string path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void get(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) fail(key, "expected a boolean");
      out = v->get<bool>();
    }
  }
  void get(const std::string& key, int& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) fail(key, "expected an integer");
      out = v->get<int>();
    }
  }
  void get(const std::string& key, Index& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) fail(key, "expected an integer");
      out = v->get<Index>();
    }
  }
  void get(const std::string& key, std::uint64_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned()) fail(key, "expected a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void get(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) fail(key, "expected a number");
      out = v->get<double>();
    }
  }
  void get(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) fail(key, "expected a string");
      out = v->get<std::string>();
    }
  }
  void get(const std::string& key, std::vector<std::string>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array() || !std::all_of(v->begin(), v->end(), [](const json& e) { return e.is_string(); }))
        fail(key, "expected an array of strings");
      out = v->get<std::vector<std::string>>();
    }
  }
  void get(const std::string& key, std::vector<double>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array() || !std::all_of(v->begin(), v->end(), [](const json& e) { return e.is_number(); }))
        fail(key, "expected an array of numbers");
      out = v->get<std::vector<double>>();
    }
  }
  template <typename Int>
  void get_ints(const std::string& key, std::vector<Int>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array() || !std::all_of(v->begin(), v->end(), [](const json& e) { return e.is_number_integer(); }))
        fail(key, "expected an array of integers");
      out = v->get<std::vector<Int>>();
    }
  }
  template <typename Enum>
  void get_enum(const std::string& key, Enum& out, const std::vector<std::pair<std::string, Enum>>& names) {
    std::string s;
    get(key, s);
    if (!find(key)) return;
    for (const auto& [name, value] : names)
      if (name == s) {
        out = value;
        return;
      }
    std::string allowed;
    for (const auto& [name, _] : names) allowed += (allowed.empty() ? "" : ", ") + name;
    fail(key, "expected one of " + allowed);
  }

  void finish() const {
    for (const auto& [key, _] : j_.items())
      if (!seen_.count(key)) throw ConfigError(path(key) + ": unknown key");
  }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw ConfigError(path(key) + ": " + what);
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

const std::vector<std::pair<std::string, OptimizerKind>> kOptimizers = {{"sgd", OptimizerKind::kSgd},
                                                                         {"adam", OptimizerKind::kAdam}};
const std::vector<std::pair<std::string, InitialLabels>> kInitialLabels = {{"unset", InitialLabels::kUnset},
                                                                            {"random", InitialLabels::kRandom}};
const std::vector<std::pair<std::string, MaskLayout>> kLayouts = {{"appended", MaskLayout::kAppended},
                                                                   {"connective", MaskLayout::kConnective}};
const std::vector<std::pair<std::string, WordWrapping>> kWrappings = {{"bare", WordWrapping::kBare},
                                                                       {"templated", WordWrapping::kTemplated}};
const std::vector<std::pair<std::string, LayerRole>> kLayers = {{"output", LayerRole::kOutput},
                                                                 {"penultimate", LayerRole::kPenultimate}};

template <typename Enum>
std::string name_of(Enum value, const std::vector<std::pair<std::string, Enum>>& names) {
  for (const auto& [name, v] : names)
    if (v == value) return name;
  return {};
}

// Re-throws a validation error with the section prefix.
template <typename F>
void validated(const std::string& section, F&& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    if (what.rfind(section + ".", 0) == 0) throw;
    throw ConfigError(section + "." + what);
  }
}

void parse_optimize(const json& j, OptimizeSection& out, std::uint64_t global_seed) {
  Fields f(j, "optimize");
  auto& r = out.run;
  r.seed = global_seed;
  f.get("class_index", r.class_index);
  if (const json* neurons = f.find("neurons")) {
    if (!neurons->is_array()) f.fail("neurons", "expected an array");
    r.neurons.clear();
    for (std::size_t i = 0; i < neurons->size(); ++i) {
      Fields n((*neurons)[i], "optimize.neurons[" + std::to_string(i) + "]");
      NeuronSpec spec;
      n.get_enum("layer", spec.layer_role, kLayers);
      n.get_ints("indices", spec.indices);
      n.finish();
      r.neurons.push_back(std::move(spec));
    }
  }
  if (const json* subsets = f.find("neuron_subsets")) {
    if (!subsets->is_array()) f.fail("neuron_subsets", "expected an array of integer arrays");
    try {
      r.neuron_subsets = subsets->get<std::vector<std::vector<Index>>>();
    } catch (const json::exception&) {
      f.fail("neuron_subsets", "expected an array of integer arrays");
    }
  }
  if (const json* t = f.find("template")) {
    Fields tf(*t, "optimize.template");
    tf.get("fixed_text", r.prompt.fixed_text);
    tf.get("mask_count", r.prompt.mask_count);
    tf.get_enum("layout", r.prompt.layout, kLayouts);
    tf.get("terminator", r.prompt.terminator);
    tf.finish();
  }
  f.get("steps", r.steps);
  f.get("learning_rate", r.learning_rate);
  f.get("batch_size", r.batch_size);
  f.get("prompt_length", r.prompt_length);
  f.get("temperature", r.temperature);
  f.get("generator_steps", r.generator_steps);
  f.get("seed", r.seed);
  f.get_enum("optimizer", r.optimizer, kOptimizers);
  f.get("adam_beta1", r.adam_beta1);
  f.get("adam_beta2", r.adam_beta2);
  f.get("adam_epsilon", r.adam_epsilon);
  f.get("init_scale", r.init_scale);
  f.get_enum("initial_labels", r.initial_labels, kInitialLabels);
  if (const json* tok = f.find("injected_token")) {
    if (tok->is_null()) {
      r.injected_token.reset();
    } else if (tok->is_string()) {
      r.injected_token = tok->get<std::string>();
    } else {
      f.fail("injected_token", "expected a string or null");
    }
  }
  f.get("injected_reference_loss", r.injected_reference_loss);
  f.get("use_mask_loss", r.use_mask_loss);
  f.get("max_consecutive_nonfinite", r.max_consecutive_nonfinite);
  f.get_ints("excluded_tokens", r.excluded_tokens);
  f.get("top_features", out.top_features);
  f.finish();
  validated("optimize", [&] {
    r.validate();
    if (out.top_features < 0) throw ConfigError("top_features must be >= 0");
  });
}

void parse_slice(const json& j, SliceSection& out) {
  Fields f(j, "slice-discover");
  f.get_ints("classes", out.classes);
  f.get("k", out.k);
  f.get_enum("wrapping", out.wrapping, kWrappings);
  f.get("allow_special", out.allow_special);
  f.get("manifest", out.manifest);
  f.get("cache_dir", out.cache_dir);
  f.finish();
  if (out.classes.size() != 2 || out.classes[0] == out.classes[1] || out.classes[0] < 0 || out.classes[1] < 0)
    f.fail("classes", "expected two distinct non-negative class indices");
  if (out.k < 1) f.fail("k", "must be >= 1");
}

void parse_report(const json& j, ReportSection& out) {
  Fields f(j, "report");
  f.get("class_index", out.class_index);
  f.get("prompt", out.prompt);
  f.get("images", out.images);
  f.get("attempt_cap", out.attempt_cap);
  f.get("caption_model", out.caption_model);
  f.get("report_model", out.report_model);
  f.get("temperature", out.temperature);
  f.get("parallelism", out.parallelism);
  f.get("max_retries", out.max_retries);
  f.get("initial_delay_seconds", out.initial_delay_seconds);
  f.get("extract_cues", out.extract_cues);
  f.get("grounding_images", out.grounding_images);
  f.finish();
  if (out.class_index < 0) f.fail("class_index", "must be >= 0");
  if (out.images < 1) f.fail("images", "must be >= 1");
  if (out.attempt_cap < 0) f.fail("attempt_cap", "must be >= 0");
  if (!(out.temperature >= 0)) f.fail("temperature", "must be >= 0");
  if (out.parallelism < 1) f.fail("parallelism", "must be >= 1");
  if (out.max_retries < 0) f.fail("max_retries", "must be >= 0");
  if (!(out.initial_delay_seconds >= 0)) f.fail("initial_delay_seconds", "must be >= 0");
  if (out.grounding_images < 1) f.fail("grounding_images", "must be >= 1");
}

void parse_evaluate(const json& j, EvaluateSection& out) {
  Fields f(j, "evaluate");
  f.get("metrics", out.metrics);
  f.get("class_index", out.class_index);
  f.get("prompt", out.prompt);
  f.get("n", out.n);
  f.get("runs", out.runs);
  f.get("report_file", out.report_file);
  f.get("reference_file", out.reference_file);
  f.get("question", out.question);
  f.get("judge_model", out.judge_model);
  f.get("judge_samples", out.judge_samples);
  f.get("judge_temperature", out.judge_temperature);
  f.get("deltas", out.deltas);
  f.get("samples_a", out.samples_a);
  f.get("samples_b", out.samples_b);
  f.get("tost_lower", out.tost_lower);
  f.get("tost_upper", out.tost_upper);
  f.finish();
  for (const auto& m : out.metrics)
    if (std::find(kMetrics.begin(), kMetrics.end(), m) == kMetrics.end())
      f.fail("metrics", "unknown metric '" + m + "'");
  if (out.class_index < 0) f.fail("class_index", "must be >= 0");
  if (out.n < 1) f.fail("n", "must be >= 1");
  if (out.runs < 2) f.fail("runs", "must be >= 2");
  if (out.judge_samples < 1) f.fail("judge_samples", "must be >= 1");
  if (!(out.judge_temperature >= 0)) f.fail("judge_temperature", "must be >= 0");
  if (!(out.tost_lower < out.tost_upper)) f.fail("tost_lower", "must be < tost_upper");
}

json neurons_to_json(const std::vector<NeuronSpec>& specs) {
  json arr = json::array();
  for (const auto& s : specs) arr.push_back({{"layer", name_of(s.layer_role, kLayers)}, {"indices", s.indices}});
  return arr;
}

}  // namespace

std::string ExperimentConfig::class_name(Index index) const {
  if (index >= 0 && static_cast<std::size_t>(index) < class_names.size()) return class_names[static_cast<std::size_t>(index)];
  return "class_" + std::to_string(index);
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  Fields f(j, "");
  f.get("seed", c.seed);
  f.get("output_root", c.output_root);
  f.get("class_names", c.class_names);
  if (const json* a = f.find("adapters")) {
    Fields af(*a, "adapters");
    af.get("masked_lm", c.adapters.ids.masked_lm);
    af.get("text_encoder", c.adapters.ids.text_encoder);
    af.get("generator", c.adapters.ids.generator);
    af.get("classifier", c.adapters.ids.classifier);
    af.get("joint_encoder", c.adapters.ids.joint_encoder);
    af.get("sentence_embedder", c.adapters.ids.sentence_embedder);
    if (const json* opts = af.find("options")) {
      if (!opts->is_object()) af.fail("options", "expected an object");
      c.adapters.options = *opts;
    }
    // Backward-compatible shorthand for the toy backend's options.
    if (const json* toy = af.find("toy")) c.adapters.options["toy"] = *toy;
    af.finish();
    if (c.adapters.options.contains("toy")) {
      validated("adapters", [&] { (void)toy_config_from_json(c.adapters.options["toy"]); });
      c.adapters.options["toy"] = toy_config_to_json(toy_config_from_json(c.adapters.options["toy"]));
    }
  }
  if (const json* cr = f.find("credentials")) {
    Fields cf(*cr, "credentials");
    cf.get("api_key_env", c.credentials.api_key_env);
    cf.get("base_url", c.credentials.base_url);
    cf.get("journal", c.credentials.journal);
    cf.get("replay", c.credentials.replay);
    cf.finish();
    if (c.credentials.api_key_env.empty()) cf.fail("api_key_env", "must not be empty");
  }
  c.optimize.run.seed = c.seed;
  if (const json* s = f.find("optimize")) parse_optimize(*s, c.optimize, c.seed);
  if (const json* s = f.find("slice-discover")) parse_slice(*s, c.slice);
  if (const json* s = f.find("report")) parse_report(*s, c.report);
  if (const json* s = f.find("evaluate")) parse_evaluate(*s, c.evaluate);
  f.finish();
  if (c.output_root.empty()) f.fail("output_root", "must not be empty");
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  const auto& r = c.optimize.run;
  json optimize = {{"class_index", r.class_index},
                   {"neurons", neurons_to_json(r.neurons)},
                   {"neuron_subsets", r.neuron_subsets},
                   {"template",
                    {{"fixed_text", r.prompt.fixed_text},
                     {"mask_count", r.prompt.mask_count},
                     {"layout", name_of(r.prompt.layout, kLayouts)},
                     {"terminator", r.prompt.terminator}}},
                   {"steps", r.steps},
                   {"learning_rate", r.learning_rate},
                   {"batch_size", r.batch_size},
                   {"prompt_length", r.prompt_length},
                   {"temperature", r.temperature},
                   {"generator_steps", r.generator_steps},
                   {"seed", r.seed},
                   {"optimizer", name_of(r.optimizer, kOptimizers)},
                   {"adam_beta1", r.adam_beta1},
                   {"adam_beta2", r.adam_beta2},
                   {"adam_epsilon", r.adam_epsilon},
                   {"init_scale", r.init_scale},
                   {"initial_labels", name_of(r.initial_labels, kInitialLabels)},
                   {"injected_token", r.injected_token ? json(*r.injected_token) : json(nullptr)},
                   {"injected_reference_loss", r.injected_reference_loss},
                   {"use_mask_loss", r.use_mask_loss},
                   {"max_consecutive_nonfinite", r.max_consecutive_nonfinite},
                   {"excluded_tokens", r.excluded_tokens},
                   {"top_features", c.optimize.top_features}};
  const auto& s = c.slice;
  json slice = {{"classes", s.classes},
                {"k", s.k},
                {"wrapping", name_of(s.wrapping, kWrappings)},
                {"allow_special", s.allow_special},
                {"manifest", s.manifest},
                {"cache_dir", s.cache_dir}};
  const auto& p = c.report;
  json report = {{"class_index", p.class_index},
                 {"prompt", p.prompt},
                 {"images", p.images},
                 {"attempt_cap", p.attempt_cap},
                 {"caption_model", p.caption_model},
                 {"report_model", p.report_model},
                 {"temperature", p.temperature},
                 {"parallelism", p.parallelism},
                 {"max_retries", p.max_retries},
                 {"initial_delay_seconds", p.initial_delay_seconds},
                 {"extract_cues", p.extract_cues},
                 {"grounding_images", p.grounding_images}};
  const auto& e = c.evaluate;
  json evaluate = {{"metrics", e.metrics},
                   {"class_index", e.class_index},
                   {"prompt", e.prompt},
                   {"n", e.n},
                   {"runs", e.runs},
                   {"report_file", e.report_file},
                   {"reference_file", e.reference_file},
                   {"question", e.question},
                   {"judge_model", e.judge_model},
                   {"judge_samples", e.judge_samples},
                   {"judge_temperature", e.judge_temperature},
                   {"deltas", e.deltas},
                   {"samples_a", e.samples_a},
                   {"samples_b", e.samples_b},
                   {"tost_lower", e.tost_lower},
                   {"tost_upper", e.tost_upper}};
  const auto& ids = c.adapters.ids;
  return {{"seed", c.seed},
          {"output_root", c.output_root},
          {"class_names", c.class_names},
          {"adapters",
           {{"masked_lm", ids.masked_lm},
            {"text_encoder", ids.text_encoder},
            {"generator", ids.generator},
            {"classifier", ids.classifier},
            {"joint_encoder", ids.joint_encoder},
            {"sentence_embedder", ids.sentence_embedder},
            {"options", c.adapters.options}}},
          {"credentials",
           {{"api_key_env", c.credentials.api_key_env},
            {"base_url", c.credentials.base_url},
            {"journal", c.credentials.journal},
            {"replay", c.credentials.replay}}},
          {"optimize", optimize},
          {"slice-discover", slice},
          {"report", report},
          {"evaluate", evaluate}};
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

std::string canonical_config(const ExperimentConfig& c) { return config_to_json(c).dump(2); }

std::string config_hash(const ExperimentConfig& c) { return sha256_hex(canonical_config(c)); }

void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "': expected path=value");
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  json* node = &config;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("override '" + assignment + "': empty path component");
    if (!node->is_object()) {
      if (!node->is_null()) throw ConfigError("override '" + assignment + "': " + key + " is not inside an object");
      *node = json::object();
    }
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

}  // namespace promptlens
