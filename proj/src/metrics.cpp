// Copyright 2026 The promptlens Authors
// SPDX-License-Identifier: Apache-2.0

#include "promptlens/metrics.hpp"

#include "promptlens/math.hpp"
#include "promptlens/prompts.hpp"
#include "promptlens/rng.hpp"
#include "promptlens/stats.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <charconv>
#include <cmath>
#include <mutex>
#include <thread>

namespace promptlens {

using nlohmann::json;

ActivationScoreResult activation_score(const AdapterSet& adapters, std::string_view prompt, Index class_index,
                                       const ActivationScoreOptions& options) {
  if (options.n < 1) throw UsageError("activation score needs n >= 1");
  if (!adapters.text_encoder || !adapters.generator || !adapters.classifier)
    throw AdapterError("activation score needs a text encoder, generator and classifier");
  if (class_index < 0 || class_index >= adapters.classifier->num_classes())
    throw ConfigError("class index " + std::to_string(class_index) + " out of range");

  const Vector conditioning = adapters.text_encoder->encode_text(prompt);
  ActivationScoreResult out;
  out.prompt = std::string(prompt);
  out.class_index = class_index;
  out.n_requested = options.n;

  const auto n = static_cast<std::size_t>(options.n);
  std::vector<std::optional<ActivationSample>> slots(n);
  std::vector<std::string> errors(n);

  auto run_one = [&](std::size_t i) {
    ActivationSample s;
    s.index = static_cast<Index>(i);
    s.seed = derive_seed(options.seed, "activation_score", i);
    try {
      const Image img = adapters.generator->generate(conditioning, options.generator_steps, s.seed);
      s.predicted_class = argmax(adapters.classifier->forward(img).probabilities);
      s.hit = s.predicted_class == class_index;
      slots[i] = s;
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  };

  const bool parallel = adapters.generator->capabilities().thread_safe && adapters.classifier->capabilities().thread_safe;
  unsigned threads = options.threads > 0 ? static_cast<unsigned>(options.threads) : std::thread::hardware_concurrency();
  threads = parallel ? std::clamp<unsigned>(threads, 1, static_cast<unsigned>(n)) : 1;
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) run_one(i);
      });
    for (auto& th : pool) th.join();
  }

  for (std::size_t i = 0; i < n; ++i) {
    if (slots[i]) {
      out.samples.push_back(*slots[i]);
      out.n_target_predicted += slots[i]->hit ? 1 : 0;
    } else {
      out.partial = true;
      if (out.failure.empty()) out.failure = "generation " + std::to_string(i) + ": " + errors[i];
    }
  }
  out.n_generated = static_cast<Index>(out.samples.size());
  if (out.n_generated == 0) throw AdapterError("every generation failed; first error: " + out.failure);
  out.score = 100.0 * static_cast<double>(out.n_target_predicted) / static_cast<double>(out.n_generated);
  return out;
}

StabilityResult stability_eval(const AdapterSet& adapters, std::string_view prompt, Index class_index, int runs,
                               const ActivationScoreOptions& options) {
  if (runs < 2) throw UsageError("stability evaluation needs at least two runs");
  StabilityResult out;
  std::vector<double> scores;
  for (int r = 0; r < runs; ++r) {
    auto opts = options;
    opts.seed = derive_seed(options.seed, "stability", static_cast<std::uint64_t>(r));
    out.runs.push_back(activation_score(adapters, prompt, class_index, opts));
    scores.push_back(out.runs.back().score);
  }
  const auto m = mean_sd(scores);
  out.mean = m.mean;
  out.sd = m.sd;
  return out;
}

ClipIqaResult clip_iqa(const Image& image, const JointEncoder& encoder,
                       const std::pair<std::string, std::string>& prompts) {
  const Vector img = encoder.encode_image(image);
  ClipIqaResult out;
  out.similarity_first = cosine_similarity(img, encoder.encode_text(prompts.first));
  out.similarity_second = cosine_similarity(img, encoder.encode_text(prompts.second));
  if (const auto scale = encoder.logit_scale()) {
    out.scale = *scale;
    out.scaled = true;
  }
  // Two-way softmax written as a logistic of the scaled difference.
  out.probability = 1.0 / (1.0 + std::exp(-out.scale * (out.similarity_first - out.similarity_second)));
  return out;
}

std::pair<std::string, std::string> semantic_clip_iqa_prompts(std::string_view class_name) {
  return {"Good photo of a " + std::string(class_name), "Bad photo of a " + std::string(class_name)};
}

ClipIqaResult semantic_clip_iqa(const Image& image, std::string_view class_name, const JointEncoder& encoder) {
  return clip_iqa(image, encoder, semantic_clip_iqa_prompts(class_name));
}

double sts_similarity(std::string_view a, std::string_view b, const SentenceEmbedder& embedder) {
  if (a.empty() || b.empty()) throw UsageError("STS needs non-empty texts");
  return cosine_similarity(embedder.embed(a), embedder.embed(b));
}

std::string_view to_string(JudgeMetric metric) {
  return metric == JudgeMetric::kGevalConsistency ? "geval_consistency" : "mos_llm";
}

JudgeMetric judge_metric_from_string(std::string_view name) {
  if (name == "geval_consistency") return JudgeMetric::kGevalConsistency;
  if (name == "mos_llm") return JudgeMetric::kMosLlm;
  throw ConfigError("unknown judge metric '" + std::string(name) + "'");
}

std::optional<int> parse_rating(std::string_view text) {
  constexpr std::string_view kMarker = "(1-5):";
  std::size_t pos = text.rfind(kMarker);
  pos = pos == std::string_view::npos ? 0 : pos + kMarker.size();
  while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
  if (pos < text.size() && text[pos] == '*') {  // markdown emphasis around the number
    while (pos < text.size() && (text[pos] == '*' || std::isspace(static_cast<unsigned char>(text[pos])))) ++pos;
  }
  int value = 0;
  const auto [end, ec] = std::from_chars(text.data() + pos, text.data() + text.size(), value);
  if (ec != std::errc{}) return std::nullopt;
  const std::size_t rest = static_cast<std::size_t>(end - text.data());
  if (rest + 1 < text.size() && text[rest] == '.' && std::isdigit(static_cast<unsigned char>(text[rest + 1])))
    return std::nullopt;
  if (value < 1 || value > 5) return std::nullopt;
  return value;
}

JudgeScore llm_judge(std::string_view report, std::string_view question, JudgeMetric metric, ChatClient& client,
                     const JudgeOptions& options) {
  if (options.n < 1) throw UsageError("judge needs n >= 1");
  const std::string_view base =
      metric == JudgeMetric::kGevalConsistency ? prompts::geval_consistency_system() : prompts::mos_llm_system();
  const std::string filled = prompts::fill(prompts::fill(base, "Question", question), "Description", report);

  ChatRequest req;
  req.model = options.model;
  req.messages.push_back({"system", filled, {}});
  req.params.n = options.n;
  req.params.temperature = options.temperature;

  JudgeScore out;
  out.metric = metric;
  out.n_requested = options.n;
  out.model = options.model;
  out.temperature = clamp_temperature(req.params, client);

  const ChatResponse resp = complete_with_retry(client, req, options.retry);
  for (const auto& sample : resp.choices) {
    if (const auto r = parse_rating(sample)) {
      out.ratings.push_back(*r);
    } else {
      out.dropped.push_back(sample);
    }
  }
  if (out.ratings.empty()) throw MalformedResponseError("no judge sample contained a rating");
  double sum = 0.0;
  for (int r : out.ratings) sum += r;
  out.mean = sum / static_cast<double>(out.ratings.size());
  double ss = 0.0;
  for (int r : out.ratings) ss += (r - out.mean) * (r - out.mean);
  out.sd = std::sqrt(ss / static_cast<double>(out.ratings.size()));
  return out;
}

json to_json(const ActivationScoreResult& r) {
  json samples = json::array();
  for (const auto& s : r.samples)
    samples.push_back({{"index", s.index}, {"seed", s.seed}, {"predicted_class", s.predicted_class}, {"hit", s.hit}});
  json j = {{"prompt", r.prompt},
            {"class_index", r.class_index},
            {"n_requested", r.n_requested},
            {"n_generated", r.n_generated},
            {"n_target_predicted", r.n_target_predicted},
            {"score", r.score},
            {"partial", r.partial},
            {"samples", samples}};
  if (r.partial) j["failure"] = r.failure;
  return j;
}

json to_json(const StabilityResult& r) {
  json runs = json::array();
  for (const auto& run : r.runs) runs.push_back(run.score);
  return {{"run_scores", runs}, {"mean", r.mean}, {"sd", r.sd}};
}

json to_json(const ClipIqaResult& r) {
  return {{"probability", r.probability},
          {"similarity_first", r.similarity_first},
          {"similarity_second", r.similarity_second},
          {"scale", r.scale},
          {"scaling", r.scaled ? "encoder_logit_scale" : "raw_cosine"}};
}

json to_json(const JudgeScore& r) {
  return {{"metric", to_string(r.metric)},
          {"model", r.model},
          {"n_requested", r.n_requested},
          {"ratings", r.ratings},
          {"dropped", r.dropped},
          {"mean", r.mean},
          {"sd", r.sd},
          {"temperature_requested", r.temperature.requested},
          {"temperature_used", r.temperature.used},
          {"temperature_clamped", r.temperature.clamped()}};
}

}  // namespace promptlens
