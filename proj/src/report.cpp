// Copyright 2026 The promptlens Authors
// SPDX-License-Identifier: Apache-2.0

#include "promptlens/report.hpp"

#include "promptlens/hash.hpp"
#include "promptlens/image_io.hpp"
#include "promptlens/math.hpp"
#include "promptlens/prompts.hpp"
#include "promptlens/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdio>
#include <sstream>
#include <thread>

namespace promptlens {

using nlohmann::json;

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

int word_count(std::string_view s) {
  std::istringstream in{std::string(s)};
  int n = 0;
  for (std::string w; in >> w;) ++n;
  return n;
}

bool contains_any(const std::string& text, std::initializer_list<std::string_view> needles) {
  return std::any_of(needles.begin(), needles.end(),
                     [&](std::string_view n) { return text.find(n) != std::string::npos; });
}

SamplingParams reasoning_params(const ReasoningOptions& options) {
  SamplingParams p;
  p.temperature = options.temperature;
  p.top_p = 1.0;
  p.frequency_penalty = 0.0;
  p.presence_penalty = 0.0;
  p.n = 1;
  p.max_tokens = 0;
  return p;
}

}  // namespace

ClassImageSet generate_class_images(const AdapterSet& adapters, std::string_view prompt, Index class_index,
                                    const ClassImageOptions& options) {
  if (options.count < 1) throw UsageError("image count must be >= 1");
  if (!adapters.text_encoder || !adapters.generator || !adapters.classifier)
    throw AdapterError("image generation needs a text encoder, generator and classifier");
  const Index cap = options.attempt_cap > 0 ? options.attempt_cap : 4 * options.count;
  const bool filter = adapters.generator->capabilities().safety_checker;
  const Vector conditioning = adapters.text_encoder->encode_text(prompt);

  ClassImageSet out;
  out.prompt = std::string(prompt);
  out.class_index = class_index;
  out.requested = options.count;
  while (static_cast<Index>(out.kept.size()) < options.count && out.attempts < cap) {
    const Index a = out.attempts++;
    const auto seed = derive_seed(options.seed, "class_images", static_cast<std::uint64_t>(a));
    Image img = adapters.generator->generate(conditioning, options.generator_steps, seed);
    if (filter && !adapters.generator->is_safe(img)) {
      ++out.unsafe_dropped;
      continue;
    }
    if (argmax(adapters.classifier->forward(img).probabilities) != class_index) {
      ++out.misclassified;
      continue;
    }
    out.kept.push_back({a, seed, std::move(img)});
  }
  out.keep_ratio = static_cast<double>(out.kept.size()) / static_cast<double>(out.attempts);
  if (out.kept.empty())
    throw DegenerateResultError("no image kept for class " + std::to_string(class_index) + " after " +
                                std::to_string(out.attempts) + " attempts (" + std::to_string(out.misclassified) +
                                " misclassified, " + std::to_string(out.unsafe_dropped) + " unsafe)");
  return out;
}

bool valid_caption(std::string_view caption) {
  const std::string t = trim(caption);
  if (t.empty()) return false;
  const auto terminators = std::count_if(t.begin(), t.end(), [](char c) { return c == '.' || c == '!' || c == '?'; });
  return terminators <= 2;
}

CaptionBatch caption_images(const std::vector<CaptionInput>& images, ChatClient& client,
                            const ReasoningOptions& options) {
  SamplingParams params = reasoning_params(options);
  clamp_temperature(params, client);
  const json snapshot = params.to_json();

  const std::size_t n = images.size();
  std::vector<std::optional<CaptionRecord>> records(n);
  std::vector<std::string> errors(n);
  std::exception_ptr fatal;
  std::mutex fatal_mutex;

  auto run_one = [&](std::size_t i) {
    ChatRequest req;
    req.model = options.model;
    req.params = params;
    req.messages.push_back({"system", std::string(prompts::caption_system()), {}});
    req.messages.push_back({"user", std::string(kCaptionUserText), {{"image/png", encode_png(images[i].image)}}});
    try {
      const auto resp = complete_with_retry(client, req, options.retry, [](const ChatResponse& r) {
        if (!valid_caption(r.choices.front())) throw MalformedResponseError("caption is empty or not one sentence");
      });
      records[i] = CaptionRecord{images[i].image_ref, trim(resp.choices.front()), client.id(), snapshot};
    } catch (const AuthError&) {
      std::lock_guard lock(fatal_mutex);
      if (!fatal) fatal = std::current_exception();
    } catch (const QuotaError&) {
      std::lock_guard lock(fatal_mutex);
      if (!fatal) fatal = std::current_exception();
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  };

  const auto threads = static_cast<std::size_t>(std::clamp<int>(options.parallelism, 1, std::max<int>(1, static_cast<int>(n))));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n && !fatal; ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          {
            std::lock_guard lock(fatal_mutex);
            if (fatal) return;
          }
          run_one(i);
        }
      });
    for (auto& th : pool) th.join();
  }
  if (fatal) std::rethrow_exception(fatal);

  CaptionBatch out;
  for (std::size_t i = 0; i < n; ++i) {
    if (records[i]) {
      out.records.push_back(std::move(*records[i]));
    } else {
      out.drops.push_back({images[i].image_ref, errors[i]});
    }
  }
  return out;
}

std::string_view to_string(Verdict v) { return v == Verdict::kBiased ? "biased" : "not biased"; }

std::string_view to_string(VerdictSource s) {
  switch (s) {
    case VerdictSource::kRule:
      return "rule";
    case VerdictSource::kModel:
      return "model";
    case VerdictSource::kNone:
      break;
  }
  return "none";
}

std::string report_title(std::string_view class_name) {
  return "### Report on Class Activation Maximization for the Class '" + std::string(class_name) + "'";
}

std::string report_user_message(std::string_view class_name, const std::vector<std::string>& captions) {
  return "Class: " + std::string(class_name) + " - Captions: " + json(captions).dump();
}

std::optional<Verdict> rule_verdict(std::string_view report) {
  // The prompt asks the report to end with the verdict, so only the last
  // paragraph that talks about bias is read.
  const std::string text = lower(report);
  std::vector<std::string> paragraphs;
  std::string current;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (trim(line).empty()) {
      if (!current.empty()) paragraphs.push_back(current);
      current.clear();
    } else {
      current += line + "\n";
    }
  }
  if (!current.empty()) paragraphs.push_back(current);
  for (auto it = paragraphs.rbegin(); it != paragraphs.rend(); ++it) {
    if (it->find("bias") == std::string::npos) continue;
    if (contains_any(*it, {"not biased", "not be biased", "not inherently biased", "isn't biased", "is unbiased",
                           "not appear to be biased", "not seem to be biased", "no evidence of bias",
                           "not exhibit bias", "not show bias", "not exhibit significant bias"}))
      return Verdict::kNotBiased;
    if (contains_any(*it, {"is biased", "are biased", "be biased", "is likely biased", "indeed biased",
                           "exhibits bias", "shows bias", "is inherently biased"}))
      return Verdict::kBiased;
    return std::nullopt;
  }
  return std::nullopt;
}

BiasReport compose_report(std::string_view class_name, const std::vector<std::string>& captions, ChatClient& client,
                          const ReasoningOptions& options, int max_regenerations) {
  if (captions.empty()) throw UsageError("a report needs at least one caption");
  ChatRequest req;
  req.model = options.model;
  req.params = reasoning_params(options);
  const auto clamp = clamp_temperature(req.params, client);
  req.messages.push_back({"system", std::string(prompts::report_system()), {}});
  req.messages.push_back({"user", report_user_message(class_name, captions), {}});

  BiasReport out;
  out.class_name = std::string(class_name);
  const std::string title = report_title(class_name);
  for (int attempt = 0; attempt <= max_regenerations; ++attempt) {
    out.regenerations = attempt;
    out.text = complete_with_retry(client, req, options.retry).choices.front();
    out.title_line.clear();
    std::istringstream in(out.text);
    for (std::string line; std::getline(in, line);) {
      if (trim(line) == title) {
        out.title_line = trim(line);
        break;
      }
    }
    if (!out.title_line.empty()) {
      out.validated = true;
      break;
    }
  }

  out.verdict = rule_verdict(out.text);
  if (out.verdict) {
    out.verdict_source = VerdictSource::kRule;
  } else {
    ChatRequest follow;
    follow.model = options.model;
    follow.params = reasoning_params(options);
    follow.params.temperature = 0.0;
    follow.messages.push_back(
        {"system", "Read the bias report and answer with exactly one word: biased or not_biased.", {}});
    follow.messages.push_back({"user", out.text, {}});
    const std::string answer = lower(complete_with_retry(client, follow, options.retry).choices.front());
    if (contains_any(answer, {"not_biased", "not biased", "unbiased"})) {
      out.verdict = Verdict::kNotBiased;
    } else if (answer.find("biased") != std::string::npos) {
      out.verdict = Verdict::kBiased;
    }
    if (out.verdict) out.verdict_source = VerdictSource::kModel;
  }

  out.provenance = {{"client", client.id()},
                    {"model", options.model},
                    {"params", req.params.to_json()},
                    {"temperature_requested", clamp.requested},
                    {"system_prompt_sha256", sha256_hex(prompts::report_system())},
                    {"captions", captions}};
  return out;
}

std::string CueSet::grounding_prompt() const {
  if (full_prompt_valid) return full_prompt;
  std::string p = "a picture of a " + class_name + " with";
  for (std::size_t i = 0; i < key_phrases.size(); ++i) p += (i ? " and " : " ") + key_phrases[i];
  return p;
}

bool valid_cue_prompt(std::string_view prompt, std::string_view class_name) {
  const std::string p = lower(trim(prompt));
  const std::string c = lower(class_name);
  return p.rfind("a picture of a " + c + " with", 0) == 0 || p.rfind("a picture of an " + c + " with", 0) == 0;
}

std::string cue_user_message(std::string_view class_name, std::string_view report) {
  return "Class: " + std::string(class_name) + "\n\nReport:\n" + std::string(report);
}

CueSet parse_cue_response(std::string_view class_name, std::string_view response) {
  const auto open = response.find('{');
  const auto close = response.rfind('}');
  if (open == std::string_view::npos || close == std::string_view::npos || close < open)
    throw MalformedResponseError("cue response has no JSON object");
  json j;
  try {
    j = json::parse(response.substr(open, close - open + 1));
  } catch (const json::exception& e) {
    throw MalformedResponseError(std::string("cue response is not valid JSON: ") + e.what());
  }
  if (!j.contains("key-phrases") || !j["key-phrases"].is_array() || !j.contains("full-prompt") ||
      !j["full-prompt"].is_string())
    throw MalformedResponseError("cue response lacks \"key-phrases\" or \"full-prompt\"");

  CueSet out;
  out.class_name = std::string(class_name);
  for (const auto& item : j["key-phrases"]) {
    if (!item.is_string()) {
      out.warnings.push_back("non-string phrase dropped");
      continue;
    }
    std::string phrase = trim(item.get<std::string>());
    while (!phrase.empty() && (phrase.front() == '"' || phrase.front() == '\'')) phrase.erase(phrase.begin());
    while (!phrase.empty() && (phrase.back() == '"' || phrase.back() == '\'')) phrase.pop_back();
    const int words = word_count(phrase);
    if (words < 2 || words > 5) {
      out.warnings.push_back("phrase '" + phrase + "' has " + std::to_string(words) + " words; dropped");
      continue;
    }
    out.key_phrases.push_back(phrase);
  }
  if (out.key_phrases.size() > 5) {
    out.warnings.push_back(std::to_string(out.key_phrases.size()) + " phrases returned; truncated to 5");
    out.key_phrases.resize(5);
  }
  out.full_prompt = trim(j["full-prompt"].get<std::string>());
  out.full_prompt_valid = valid_cue_prompt(out.full_prompt, class_name);
  if (!out.full_prompt_valid) out.warnings.push_back("full prompt does not start with the class template");
  return out;
}

CueSet extract_cues(std::string_view class_name, std::string_view report, ChatClient& client,
                    const ReasoningOptions& options) {
  if (trim(report).empty()) throw UsageError("cue extraction needs a non-empty report");
  ChatRequest req;
  req.model = options.model;
  req.params = reasoning_params(options);
  clamp_temperature(req.params, client);
  req.messages.push_back({"system", std::string(prompts::cue_extractor_system()), {}});
  req.messages.push_back({"user", cue_user_message(class_name, report), {}});
  for (int attempt = 0;; ++attempt) {
    const auto resp = complete_with_retry(client, req, options.retry);
    try {
      return parse_cue_response(class_name, resp.choices.front());
    } catch (const MalformedResponseError&) {
      if (attempt >= 1) throw;
    }
  }
}

std::string_view to_string(GroundingOutcome o) {
  switch (o) {
    case GroundingOutcome::kGrounded:
      return "grounded";
    case GroundingOutcome::kDegraded:
      return "degraded";
    case GroundingOutcome::kNeutral:
      break;
  }
  return "neutral";
}

GroundingOutcome grounding_outcome(double delta) {
  if (delta > 0) return GroundingOutcome::kGrounded;
  if (delta < 0) return GroundingOutcome::kDegraded;
  return GroundingOutcome::kNeutral;
}

GroundingTable grounding_table(const std::vector<GroundingCase>& cases, const std::vector<double>& baseline_scores,
                               const std::vector<double>& cue_scores) {
  if (cases.size() != baseline_scores.size() || cases.size() != cue_scores.size())
    throw UsageError("grounding table needs one baseline and one cue score per class");
  GroundingTable out;
  std::vector<double> deltas;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    GroundingRow row{cases[i], baseline_scores[i], cue_scores[i], cue_scores[i] - baseline_scores[i],
                     GroundingOutcome::kNeutral};
    row.outcome = grounding_outcome(row.delta);
    switch (row.outcome) {
      case GroundingOutcome::kGrounded:
        ++out.grounded;
        break;
      case GroundingOutcome::kNeutral:
        ++out.neutral;
        break;
      case GroundingOutcome::kDegraded:
        ++out.degraded;
        break;
    }
    out.mean_baseline += row.baseline_score;
    out.mean_cue += row.cue_score;
    deltas.push_back(row.delta);
    out.rows.push_back(std::move(row));
  }
  if (!out.rows.empty()) {
    out.mean_baseline /= static_cast<double>(out.rows.size());
    out.mean_cue /= static_cast<double>(out.rows.size());
  }
  if (deltas.size() >= 2) out.stats = delta_statistics(deltas);
  return out;
}

GroundingTable grounding_eval(const AdapterSet& adapters, const std::vector<GroundingCase>& cases,
                              const ActivationScoreOptions& options) {
  if (options.n < 1) throw UsageError("grounding evaluation needs n_images >= 1");
  std::vector<double> base, cue;
  for (const auto& c : cases) {
    auto opts = options;
    opts.seed = derive_seed(options.seed, "grounding", static_cast<std::uint64_t>(c.class_index));
    base.push_back(activation_score(adapters, c.baseline_prompt, c.class_index, opts).score);
    cue.push_back(activation_score(adapters, c.cue_prompt, c.class_index, opts).score);
  }
  return grounding_table(cases, base, cue);
}

std::string grounding_tsv(const GroundingTable& table) {
  std::ostringstream out;
  out << "class\tclass_index\tbaseline_as\tcue_as\tdelta\toutcome\n";
  char buf[128];
  for (const auto& r : table.rows) {
    std::snprintf(buf, sizeof buf, "%.6f\t%.6f\t%.6f", r.baseline_score, r.cue_score, r.delta);
    out << r.input.class_name << '\t' << r.input.class_index << '\t' << buf << '\t' << to_string(r.outcome) << '\n';
  }
  return out.str();
}

json to_json(const DeltaStatistics& s) {
  const auto method = s.wilcoxon.method == WilcoxonMethod::kExact    ? "exact"
                      : s.wilcoxon.method == WilcoxonMethod::kNormal ? "normal"
                                                                      : "degenerate";
  return {{"n", s.n},
          {"mean", s.mean},
          {"sd", s.sd},
          {"ci95", {s.ci95.first, s.ci95.second}},
          {"t_critical", s.t_critical},
          {"t_stat", s.t_test.statistic},
          {"t_df", s.t_test.df},
          {"t_p", s.t_test.p_value},
          {"wilcoxon_stat", s.wilcoxon.statistic},
          {"wilcoxon_p", s.wilcoxon.p_value},
          {"wilcoxon_method", method},
          {"wilcoxon_n_nonzero", s.wilcoxon.n_nonzero}};
}

json to_json(const GroundingTable& t) {
  json rows = json::array();
  for (const auto& r : t.rows)
    rows.push_back({{"class", r.input.class_name},
                    {"class_index", r.input.class_index},
                    {"baseline_prompt", r.input.baseline_prompt},
                    {"cue_prompt", r.input.cue_prompt},
                    {"baseline_as", r.baseline_score},
                    {"cue_as", r.cue_score},
                    {"delta", r.delta},
                    {"outcome", to_string(r.outcome)}});
  json j = {{"rows", rows},
            {"grounded", t.grounded},
            {"neutral", t.neutral},
            {"degraded", t.degraded},
            {"mean_baseline_as", t.mean_baseline},
            {"mean_cue_as", t.mean_cue}};
  if (t.stats) j["stats"] = to_json(*t.stats);
  return j;
}

json to_json(const CaptionRecord& r) {
  return {{"image", r.image_ref}, {"caption", r.caption}, {"client", r.client_id}, {"params", r.params}};
}

json to_json(const BiasReport& r) {
  json j = {{"class", r.class_name},
            {"title_line", r.title_line},
            {"validated", r.validated},
            {"regenerations", r.regenerations},
            {"verdict_source", to_string(r.verdict_source)},
            {"provenance", r.provenance}};
  j["verdict"] = r.verdict ? json(std::string(to_string(*r.verdict))) : json(nullptr);
  return j;
}

json to_json(const CueSet& c) {
  return {{"class", c.class_name},
          {"key-phrases", c.key_phrases},
          {"full-prompt", c.full_prompt},
          {"full_prompt_valid", c.full_prompt_valid},
          {"grounding_prompt", c.grounding_prompt()},
          {"warnings", c.warnings}};
}

}  // namespace promptlens
