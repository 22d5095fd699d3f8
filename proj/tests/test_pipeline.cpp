#include <doctest.h>

#include "promptlens/image_io.hpp"
#include "promptlens/pipeline.hpp"
#include "promptlens/prompts.hpp"
#include "support.hpp"

#include <fstream>

using namespace promptlens;
using promptlens::testing::TempDir;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

ExperimentConfig base_config(const fs::path& root) {
  ExperimentConfig c;
  c.seed = 2;
  c.output_root = root.string();
  c.class_names = {"picture", "conjunction", "period"};
  c.optimize.run.steps = 30;
  return c;
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

ChatResponse reply(std::string text) {
  ChatResponse r;
  r.choices.push_back(std::move(text));
  return r;
}

}  // namespace

TEST_CASE("baseline prompt article") {
  CHECK(baseline_prompt("tiger") == "a picture of a tiger");
  CHECK(baseline_prompt("owl") == "a picture of an owl");
  CHECK(baseline_prompt("Eagle") == "a picture of an Eagle");
}

TEST_CASE("optimize, interrupt, resume") {
  TempDir dir("pipe-opt");
  const auto cfg = base_config(dir.path());
  const auto full = optimize_command(cfg);
  CHECK(full.completed);
  CHECK(fs::exists(full.dir / "record.json"));
  CHECK(fs::exists(full.dir / "prompt.txt"));
  CHECK(line_count(full.dir / "steps.jsonl") == 30);
  CHECK(RunDirectory::open(full.dir).status() == "completed");
  CHECK(resume_command(full.dir).noop);

  const auto partial = optimize_command(cfg, {.stop_after = 12});
  CHECK_FALSE(partial.completed);
  CHECK(line_count(partial.dir / "steps.jsonl") == 12);
  const auto resumed = resume_command(partial.dir);
  CHECK(resumed.completed);
  CHECK(read_file(resumed.dir / "record.json") == read_file(full.dir / "record.json"));
  CHECK(read_file(resumed.dir / "steps.jsonl") == read_file(full.dir / "steps.jsonl"));

  const auto edited = optimize_command(cfg, {.stop_after = 3});
  auto j = json::parse(read_file(edited.dir / "config.json"));
  j["optimize"]["learning_rate"] = 0.5;
  std::ofstream(edited.dir / "config.json") << j.dump(2);
  CHECK_THROWS_AS(resume_command(edited.dir), ConfigError);
}

TEST_CASE("slice discovery with a manifest") {
  TempDir dir("pipe-slice");
  auto cfg = base_config(dir.path());
  cfg.optimize.run.steps = 40;
  cfg.slice.k = 2;
  cfg.adapters.options = {{"toy", {{"generator_noise", 0.5}}}};
  const auto adapters = build_adapters(cfg);
  std::ofstream manifest(dir.path() / "m.csv");
  manifest << "path,class,slice\n";
  for (int i = 0; i < 6; ++i) {
    const auto name = "img" + std::to_string(i) + ".pfm";
    const Vector e = adapters.text_encoder->encode_text(i % 2 ? "and" : "picture");
    write_pfm(dir.path() / name, adapters.generator->generate(e, 4, static_cast<std::uint64_t>(i)));
    manifest << name << ',' << (i % 2) << ',' << (i < 3 ? "biased" : "unbiased") << '\n';
  }
  manifest.close();
  cfg.slice.manifest = (dir.path() / "m.csv").string();
  const auto out = slice_discover_command(cfg);
  CHECK(fs::exists(out.dir / "words.json"));
  CHECK(fs::exists(out.dir / "groups.tsv"));
  CHECK(out.assignments.size() == 6);
  REQUIRE(out.roc);
  CHECK(out.roc->auc >= 0.0);
  CHECK(out.roc->auc <= 1.0);
  const auto metrics = json::parse(read_file(out.dir / "metrics.json"));
  CHECK(metrics["cache_misses"] == 6);
}

TEST_CASE("report command with a mock client") {
  TempDir dir("pipe-report");
  auto cfg = base_config(dir.path());
  cfg.adapters.options = {{"toy", {{"generator_noise", 0.6}}}};
  cfg.report.class_index = 1;
  cfg.report.prompt = "a picture of a lion with sea and woods and and";
  cfg.report.images = 6;
  cfg.report.grounding_images = 20;
  cfg.report.parallelism = 2;
  auto client = std::make_shared<MockChatClient>([](const ChatRequest& r, int) {
    const auto& sys = r.messages[0].text;
    if (sys == prompts::caption_system()) return reply("A lion behind a fence.");
    if (sys == prompts::report_system())
      return reply(report_title("conjunction") + "\n\nFences appear often.\n\nThe classifier is biased.");
    return reply(R"({"key-phrases": ["metal fence", "tall grass"], "full-prompt": "a picture of a conjunction with metal fence"})");
  });
  const auto out = report_command(cfg, client);
  CHECK(out.images.kept.size() <= 6);
  CHECK(out.captions.records.size() == out.images.kept.size());
  CHECK(out.report.validated);
  CHECK(out.report.verdict == Verdict::kBiased);
  REQUIRE(out.cues);
  REQUIRE(out.grounding);
  CHECK(out.grounding->rows.size() == 1);
  CHECK(out.grounding->rows[0].input.baseline_prompt == "a picture of a conjunction");
  for (const char* f : {"prompt.txt", "generation.json", "captions.jsonl", "report.md", "report.json", "cues.json",
                        "grounding.tsv", "grounding.json", "prompts/caption_system.txt"})
    CHECK_MESSAGE(fs::exists(out.dir / f), f);
  CHECK(read_file(out.dir / "report.md") == out.report.text);
  CHECK(line_count(out.dir / "captions.jsonl") == out.captions.records.size());
}

TEST_CASE("evaluate command") {
  TempDir dir("pipe-eval");
  auto cfg = base_config(dir.path());
  cfg.evaluate.metrics = {"delta_statistics", "tost", "activation_score"};
  cfg.evaluate.deltas = {1, 2, 3, 4, 6};
  cfg.evaluate.samples_a = {1.0, 1.1, 0.9, 1.05};
  cfg.evaluate.samples_b = {1.0, 0.95, 1.02, 1.01};
  cfg.evaluate.n = 20;
  const auto out = evaluate_command(cfg);
  const auto results = json::parse(read_file(out.dir / "results.json"));
  CHECK(results == out.results);
  CHECK(results["delta_statistics"]["mean"] == doctest::Approx(3.2));
  CHECK(results["tost"].contains("equivalent"));
  CHECK(results["activation_score"]["n_generated"] == 20);
  CHECK(fs::exists(out.dir / "summary.tsv"));
  CHECK(fs::exists(out.dir / "activation_samples.tsv"));
}
