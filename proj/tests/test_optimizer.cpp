#include <doctest.h>

#include "promptlens/optimizer.hpp"
#include "support.hpp"

#include <atomic>

using namespace promptlens;

namespace {

AdapterSet toy_adapters() { return AdapterSet::from_toy(ToyStack::build()); }

// Delegates to the toy generator and fails from call `fail_at` on.
class FailingGenerator final : public ImageGenerator {
 public:
  FailingGenerator(std::shared_ptr<const ImageGenerator> inner, int fail_at) : inner_(std::move(inner)), fail_at_(fail_at) {}
  Index conditioning_dim() const override { return inner_->conditioning_dim(); }
  Image generate(const Vector& c, int steps, std::uint64_t seed) const override {
    if (calls_++ >= fail_at_) throw AdapterError("generator backend unavailable");
    return inner_->generate(c, steps, seed);
  }
  Vector backward(const Vector& c, int steps, std::uint64_t seed, const Image& g) const override {
    return inner_->backward(c, steps, seed, g);
  }

 private:
  std::shared_ptr<const ImageGenerator> inner_;
  int fail_at_;
  mutable std::atomic<int> calls_{0};
};

}  // namespace

TEST_CASE("analytic gradient matches central differences") {
  const auto adapters = toy_adapters();
  RunConfig rc;
  rc.prompt_length = 3;
  rc.prompt.mask_count = 2;
  rc.prompt.layout = MaskLayout::kConnective;
  rc.neurons = {NeuronSpec::penultimate({0, 3}), NeuronSpec::output({1})};
  const auto report = gradient_check(adapters, rc, 20);
  CHECK(report.points == 20);
  CHECK(report.max_relative_error < 1e-3);
  // Dropping the mask term changes the gradient.
  CHECK(report.mean_norm_ratio != doctest::Approx(1.0));
}

TEST_CASE("converges to the brute-force argmin") {
  const auto stack = ToyStack::build();
  const auto adapters = AdapterSet::from_toy(stack);
  for (Index cls = 0; cls < 3; ++cls) {
    const TokenId best = testing::brute_force_ranking(stack, cls).front().token;
    int hits = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      RunConfig rc;
      rc.class_index = cls;
      rc.seed = seed;
      hits += run_optimization(adapters, rc).final_tokens.at(0) == best;
    }
    CHECK(hits >= 4);
  }
}

TEST_CASE("frozen oracle tokens") {
  const auto stack = ToyStack::build();
  const auto& vocab = stack.masked_lm->tokenizer().vocabulary();
  CHECK(vocab.token(testing::brute_force_ranking(stack, 0).front().token) == "picture");
  CHECK(vocab.token(testing::brute_force_ranking(stack, 1).front().token) == "and");
  CHECK(vocab.token(testing::brute_force_ranking(stack, 2).front().token) == ".");
}

TEST_CASE("identical configs give identical records") {
  const auto adapters = toy_adapters();
  RunConfig rc;
  rc.steps = 40;
  rc.batch_size = 2;
  rc.seed = 21;
  rc.optimizer = OptimizerKind::kAdam;
  rc.learning_rate = 0.05;
  const auto a = record_to_json(run_optimization(adapters, rc));
  const auto b = record_to_json(run_optimization(adapters, rc));
  CHECK(a.dump() == b.dump());
  rc.seed = 22;
  CHECK(record_to_json(run_optimization(adapters, rc)).dump() != a.dump());
}

TEST_CASE("resume from a serialized checkpoint matches the uninterrupted run") {
  const auto adapters = toy_adapters();
  RunConfig rc;
  rc.steps = 60;
  rc.seed = 4;
  rc.optimizer = OptimizerKind::kAdam;
  const auto full = record_to_json(run_optimization(adapters, rc));

  Optimization first(adapters, rc);
  std::vector<StepRecord> steps;
  for (int i = 0; i < 25; ++i) steps.push_back(first.step());
  const nlohmann::json saved = first.checkpoint();
  const auto restored = saved.get<Checkpoint>();
  CHECK(restored.next_step == 25);
  auto second = Optimization::from_checkpoint(adapters, rc, restored, steps);
  CHECK(record_to_json(second.run()).dump() == full.dump());
}

TEST_CASE("step records") {
  const auto adapters = toy_adapters();
  RunConfig rc;
  rc.steps = 5;
  rc.batch_size = 3;
  const auto record = run_optimization(adapters, rc);
  REQUIRE(record.steps.size() == 5);
  for (const auto& s : record.steps) {
    CHECK(s.samples.size() == 3);
    CHECK(s.pseudo_labels.size() == 1);
    CHECK(s.total_loss == doctest::Approx(s.activation_loss + s.mask_loss));
  }
  CHECK(record.adapter_digest_before == record.adapter_digest_after);
  CHECK(record.final_words.size() == 1);
  CHECK(record.kept_images.size() <= 15);
  for (const auto& k : record.kept_images) CHECK_FALSE(k.reference.empty());
}

TEST_CASE("excluded tokens are never sampled") {
  const auto adapters = toy_adapters();
  const auto& vocab = adapters.masked_lm->tokenizer().vocabulary();
  RunConfig rc;
  rc.steps = 60;
  for (const char* w : {"picture", "a", "of", "[PAD]", "[UNK]", "[MASK]"}) rc.excluded_tokens.push_back(vocab.id(w));
  const auto record = run_optimization(adapters, rc);
  for (const auto& s : record.steps)
    for (const auto& sample : s.samples)
      for (TokenId t : sample.source_tokens)
        CHECK(std::find(rc.excluded_tokens.begin(), rc.excluded_tokens.end(), t) == rc.excluded_tokens.end());
}

TEST_CASE("injected pseudo-target") {
  const auto adapters = toy_adapters();
  RunConfig rc;
  rc.steps = 1;
  rc.injected_token = "boat";
  Optimization opt(adapters, rc);
  CHECK(opt.labels().positions[0].pseudo_label == adapters.masked_lm->tokenizer().vocabulary().id("boat"));
  CHECK(opt.labels().positions[0].reference_loss == 1e6);
  rc.injected_token = "zebra";
  CHECK_THROWS_AS(Optimization(adapters, rc), UsageError);
}

TEST_CASE("configuration errors") {
  RunConfig rc;
  rc.learning_rate = -1;
  CHECK_THROWS_WITH_AS(rc.validate(), "learning_rate must be > 0", ConfigError);
  rc = {};
  rc.prompt.mask_count = 0;
  CHECK_THROWS_AS(rc.validate(), ConfigError);
  rc = {};
  rc.neuron_subsets = {{0}, {0}};
  CHECK_THROWS_AS(rc.validate(), ConfigError);
}

TEST_CASE("adapter failure aborts with a partial record") {
  auto adapters = toy_adapters();
  adapters.generator = std::make_shared<FailingGenerator>(adapters.generator, 7);
  RunConfig rc;
  rc.steps = 20;
  const auto record = run_optimization(adapters, rc);
  CHECK(record.aborted);
  CHECK(record.abort_reason.find("unavailable") != std::string::npos);
  CHECK(record.steps.size() < 20);
}
