#include <doctest.h>

#include "promptlens/hash.hpp"
#include "promptlens/metrics.hpp"
#include "promptlens/prompts.hpp"
#include "promptlens/rng.hpp"
#include "support.hpp"

#include <string>

using namespace promptlens;

namespace {

// Predicts class 0 for a pseudo-random 10% of images (keyed on the pixel
// bytes), class 1 otherwise.
class FlipClassifier final : public VisualClassifier {
 public:
  Index num_classes() const override { return 2; }
  Index feature_width() const override { return 1; }
  ClassifierForward forward(const Image& image) const override {
    const std::string bytes(reinterpret_cast<const char*>(image.data()), sizeof(double) * static_cast<std::size_t>(image.size()));
    const std::string hex = sha256_hex(bytes).substr(0, 8);
    const double u = static_cast<double>(std::stoul(hex, nullptr, 16)) / 4294967296.0;
    ClassifierForward f;
    f.features = Vector::Zero(1);
    f.probabilities = Vector(2);
    f.probabilities << (u < 0.1 ? 0.9 : 0.1), (u < 0.1 ? 0.1 : 0.9);
    return f;
  }
  Image backward(const Image& image, const Vector&, const Vector&) const override {
    return Image::Zero(image.rows(), image.cols());
  }
};

class ConstantClassifier final : public VisualClassifier {
 public:
  explicit ConstantClassifier(Index winner) : winner_(winner) {}
  Index num_classes() const override { return 3; }
  Index feature_width() const override { return 1; }
  ClassifierForward forward(const Image&) const override {
    ClassifierForward f;
    f.features = Vector::Zero(1);
    f.probabilities = Vector::Constant(3, 0.2);
    f.probabilities(winner_) = 0.6;
    return f;
  }
  Image backward(const Image& image, const Vector&, const Vector&) const override {
    return Image::Zero(image.rows(), image.cols());
  }

 private:
  Index winner_;
};

class ThrowingGenerator final : public ImageGenerator {
 public:
  explicit ThrowingGenerator(std::shared_ptr<const ImageGenerator> inner, bool always) : inner_(std::move(inner)), always_(always) {}
  Index conditioning_dim() const override { return inner_->conditioning_dim(); }
  Image generate(const Vector& c, int steps, std::uint64_t seed) const override {
    if (always_ || seed % 3 == 0) throw AdapterError("out of memory");
    return inner_->generate(c, steps, seed);
  }
  Vector backward(const Vector& c, int steps, std::uint64_t seed, const Image& g) const override {
    return inner_->backward(c, steps, seed, g);
  }

 private:
  std::shared_ptr<const ImageGenerator> inner_;
  bool always_;
};

AdapterSet noisy_adapters(double noise = 0.5) {
  ToyStackConfig c;
  c.generator_noise = noise;
  return AdapterSet::from_toy(ToyStack::build(c));
}

MockChatClient judge_client(std::vector<std::string> samples, double max_temperature = 2.0) {
  return MockChatClient(
      [samples](const ChatRequest&, int) {
        ChatResponse r;
        r.choices = samples;
        return r;
      },
      "judge", max_temperature);
}

}  // namespace

TEST_CASE("activation score extremes") {
  auto adapters = noisy_adapters();
  adapters.classifier = std::make_shared<ConstantClassifier>(1);
  ActivationScoreOptions o;
  o.n = 37;
  CHECK(activation_score(adapters, "a tiger", 1, o).score == 100.0);
  CHECK(activation_score(adapters, "a tiger", 2, o).score == 0.0);
  CHECK_THROWS_AS(activation_score(adapters, "a tiger", 3, o), ConfigError);
  o.n = 0;
  CHECK_THROWS_AS(activation_score(adapters, "a tiger", 1, o), UsageError);
}

TEST_CASE("activation score is deterministic and thread-count independent") {
  const auto adapters = noisy_adapters();
  ActivationScoreOptions o;
  o.n = 200;
  o.seed = 3;
  o.threads = 1;
  const auto serial = activation_score(adapters, "a picture of a lion", 1, o);
  o.threads = 8;
  const auto parallel = activation_score(adapters, "a picture of a lion", 1, o);
  CHECK(serial.score == parallel.score);
  CHECK(to_json(serial) == to_json(parallel));
  CHECK(serial.samples.size() == 200);
  CHECK(serial.samples[5].seed == derive_seed(3, "activation_score", 5));
}

TEST_CASE("binomial check with a 10% classifier") {
  auto adapters = noisy_adapters(1.0);
  adapters.classifier = std::make_shared<FlipClassifier>();
  ActivationScoreOptions o;
  o.n = 2000;
  const double score = activation_score(adapters, "a picture", 0, o).score;
  // Three binomial standard deviations: 100 * 3 * sqrt(0.09 / 2000) = 2.01.
  CHECK(std::fabs(score - 10.0) <= 2.01);
  const auto st = stability_eval(adapters, "a picture", 0, 5, {.n = 400});
  CHECK(st.runs.size() == 5);
  CHECK(st.sd > 0.0);
}

TEST_CASE("stability of a deterministic generator") {
  const auto adapters = noisy_adapters(0.0);
  const auto st = stability_eval(adapters, "a picture of a tiger", 0, 3, {.n = 20});
  CHECK(st.sd == 0.0);
  CHECK(st.mean == st.runs[0].score);
  CHECK_THROWS_AS(stability_eval(adapters, "x", 0, 1), UsageError);
}

TEST_CASE("partial and total generation failures") {
  auto adapters = noisy_adapters();
  adapters.generator = std::make_shared<ThrowingGenerator>(adapters.generator, false);
  ActivationScoreOptions o;
  o.n = 60;
  const auto r = activation_score(adapters, "a tiger", 0, o);
  CHECK(r.partial);
  CHECK(r.n_generated < 60);
  CHECK(r.n_generated > 0);
  CHECK(r.score == doctest::Approx(100.0 * static_cast<double>(r.n_target_predicted) / static_cast<double>(r.n_generated)));
  adapters.generator = std::make_shared<ThrowingGenerator>(noisy_adapters().generator, true);
  CHECK_THROWS_AS(activation_score(adapters, "a tiger", 0, o), AdapterError);
}

TEST_CASE("clip-iqa") {
  const auto stack = ToyStack::build();
  Rng rng(8);
  for (int i = 0; i < 10; ++i) {
    Image img(4, 4);
    for (Index k = 0; k < 16; ++k) img.data()[k] = rng.normal();
    const auto a = clip_iqa(img, *stack.joint_encoder);
    const auto b = clip_iqa(img, *stack.joint_encoder, {kClipIqaPrompts.second, kClipIqaPrompts.first});
    CHECK(std::fabs(a.probability + b.probability - 1.0) <= 1e-12);
    CHECK(a.similarity_first == b.similarity_second);
    // Identical prompts give exactly one half.
    CHECK(clip_iqa(img, *stack.joint_encoder, {"Good photo.", "Good photo."}).probability == 0.5);
  }
  const auto p = semantic_clip_iqa_prompts("tiger");
  CHECK(p.first == "Good photo of a tiger");
  CHECK(p.second == "Bad photo of a tiger");
  CHECK_THROWS_AS(clip_iqa(Image::Zero(4, 4), *stack.joint_encoder), DomainError);
}

TEST_CASE("sts") {
  const auto stack = ToyStack::build();
  CHECK(sts_similarity("a tiger in the woods", "a tiger in the woods", *stack.sentence_embedder) ==
        doctest::Approx(1.0).epsilon(1e-12));
  const double s = sts_similarity("a tiger in the woods", "a boat on the sea", *stack.sentence_embedder);
  CHECK(s < 1.0);
  CHECK(s == doctest::Approx(sts_similarity("a boat on the sea", "a tiger in the woods", *stack.sentence_embedder)));
  CHECK_THROWS_AS(sts_similarity("", "x", *stack.sentence_embedder), UsageError);
}

TEST_CASE("rating parser") {
  CHECK(parse_rating("4") == 4);
  CHECK(parse_rating(" 5 because") == 5);
  CHECK(parse_rating("Consistency (1-5): 3") == 3);
  CHECK(parse_rating("Evaluation Form (1-5): 2\nAnswer (1-5): **4**") == 4);
  CHECK_FALSE(parse_rating("3.5"));
  CHECK_FALSE(parse_rating("Score (1-5): 7"));
  CHECK_FALSE(parse_rating("0"));
  CHECK_FALSE(parse_rating("excellent"));
  CHECK(judge_metric_from_string(to_string(JudgeMetric::kMosLlm)) == JudgeMetric::kMosLlm);
}

TEST_CASE("judge aggregates") {
  auto twenty_fours = judge_client(std::vector<std::string>(20, "4"));
  const auto a = llm_judge("report", "Is it biased?", JudgeMetric::kGevalConsistency, twenty_fours);
  CHECK(a.mean == 4.0);
  CHECK(a.sd == 0.0);
  CHECK(a.ratings.size() == 20);

  std::vector<std::string> mixed(10, "3");
  mixed.insert(mixed.end(), 10, "5");
  auto split = judge_client(mixed);
  const auto b = llm_judge("report", "q", JudgeMetric::kMosLlm, split);
  CHECK(b.mean == 4.0);
  CHECK(b.sd == 1.0);

  auto partly = judge_client({"4", "n/a", "2"});
  const auto c = llm_judge("r", "q", JudgeMetric::kMosLlm, partly);
  CHECK(c.ratings == std::vector<int>{4, 2});
  CHECK(c.dropped.size() == 1);

  auto none = judge_client({"n/a", "?"});
  JudgeOptions o;
  o.retry.max_retries = 0;
  CHECK_THROWS_AS(llm_judge("r", "q", JudgeMetric::kMosLlm, none, o), MalformedResponseError);
}

TEST_CASE("judge request") {
  auto client = judge_client({"3"}, 1.0);
  const auto s = llm_judge("THE REPORT", "THE QUESTION", JudgeMetric::kGevalConsistency, client);
  CHECK(s.temperature.requested == 2.0);
  CHECK(s.temperature.used == 1.0);
  CHECK(s.temperature.clamped());
  const auto req = client.requests().at(0);
  CHECK(req.model == "gpt-4-0613");
  CHECK(req.params.n == 20);
  CHECK(req.params.temperature == 1.0);
  REQUIRE(req.messages.size() == 1);
  CHECK(req.messages[0].role == "system");
  const std::string want = prompts::fill(prompts::fill(prompts::geval_consistency_system(), "Question", "THE QUESTION"),
                                         "Description", "THE REPORT");
  CHECK(req.messages[0].text == want);
  CHECK(want.find("{{") == std::string::npos);
}
