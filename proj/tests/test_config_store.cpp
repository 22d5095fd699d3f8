#include <doctest.h>

#include "promptlens/config.hpp"
#include "promptlens/hash.hpp"
#include "promptlens/store.hpp"
#include "support.hpp"

#include <fstream>

using namespace promptlens;
using promptlens::testing::TempDir;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Crash {};

ExperimentConfig small_config(const fs::path& root) {
  ExperimentConfig c;
  c.seed = 3;
  c.output_root = root.string();
  return c;
}

}  // namespace

TEST_CASE("defaults") {
  const auto c = config_from_json(json::object());
  CHECK(c.optimize.run.learning_rate == 0.1);
  CHECK(c.optimize.run.prompt_length == 1);
  CHECK(c.optimize.run.temperature == 1.0);
  CHECK(c.slice.k == 4);
  CHECK(c.report.images == 50);
  CHECK(c.evaluate.n == 100);
  CHECK(c.evaluate.judge_samples == 20);
  CHECK(c.credentials.api_key_env == "OPENAI_API_KEY");
  CHECK(c.class_name(1) == "class_1");
  CHECK(c == ExperimentConfig{});
}

TEST_CASE("validation errors name the field") {
  CHECK_THROWS_WITH_AS(config_from_json(json::parse(R"({"optimize": {"learning_rate": -1}})")),
                       "optimize.learning_rate must be > 0", ConfigError);
  CHECK_THROWS_WITH_AS(config_from_json(json::parse(R"({"optimize": {"stepz": 3}})")), "optimize.stepz: unknown key",
                       ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"seed": "x"})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"report": {"images": 0}})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"optimize": {"optimizer": "lbfgs"}})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"output_root": ""})")), ConfigError);
}

TEST_CASE("round trip and hash") {
  auto c = config_from_json(json::parse(R"({
    "seed": 11,
    "class_names": ["a", "b"],
    "optimize": {"steps": 12, "optimizer": "adam", "injected_token": "boat",
                 "neurons": [{"layer": "penultimate", "indices": [1, 2]}]},
    "slice-discover": {"k": 2, "wrapping": "templated"},
    "evaluate": {"deltas": [1.5, -2], "metrics": ["delta_statistics"]}
  })"));
  CHECK(c.optimize.run.seed == 11);
  CHECK(c.optimize.run.injected_token == "boat");
  CHECK(config_from_json(config_to_json(c)) == c);
  CHECK(config_hash(config_from_json(config_to_json(c))) == config_hash(c));
  CHECK(config_hash(c) == sha256_hex(canonical_config(c)));
  auto d = c;
  d.optimize.run.steps = 13;
  CHECK(config_hash(d) != config_hash(c));

  TempDir dir("cfg");
  std::ofstream(dir.path() / "c.json") << "// comment\n" << config_to_json(c).dump();
  CHECK(load_config(dir.path() / "c.json") == c);
  CHECK_THROWS_AS(load_config(dir.path() / "missing.json"), ConfigError);
}

TEST_CASE("overrides") {
  json j = json::object();
  apply_override(j, "optimize.learning_rate=0.05");
  apply_override(j, "report.caption_model=gpt-4o");
  apply_override(j, "evaluate.metrics=[\"stability\"]");
  CHECK(j["optimize"]["learning_rate"] == 0.05);
  CHECK(j["report"]["caption_model"] == "gpt-4o");
  const auto c = config_from_json(j);
  CHECK(c.optimize.run.learning_rate == 0.05);
  CHECK(c.evaluate.metrics == std::vector<std::string>{"stability"});
  CHECK_THROWS_AS(apply_override(j, "novalue"), ConfigError);
  CHECK_THROWS_AS(apply_override(j, "optimize..steps=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(j, "optimize.learning_rate.x=1"), ConfigError);
}

TEST_CASE("atomic write keeps the old file on a crash") {
  TempDir dir("atomic");
  const auto path = dir.path() / "f.txt";
  atomic_write(path, "old");
  CHECK_THROWS_AS(atomic_write(path, "new", [](const fs::path&) { throw Crash{}; }), Crash);
  CHECK(read_file(path) == "old");
  atomic_write(path, "new");
  CHECK(read_file(path) == "new");
}

TEST_CASE("run directory artifacts") {
  TempDir dir("runs");
  const auto cfg = small_config(dir.path());
  auto run = RunDirectory::create(dir.path(), cfg, "optimize");
  CHECK(run.path().filename().string() == "optimize-" + config_hash(cfg).substr(0, 12) + "-000");
  CHECK(run.status() == "running");
  CHECK(run.manifest()["config_hash"] == config_hash(cfg));
  CHECK(run.manifest()["prompt_sha256"].size() >= 4);
  CHECK(run.config() == cfg);

  const auto second = RunDirectory::create(dir.path(), cfg, "optimize");
  CHECK(second.path().filename().string().ends_with("-001"));

  const auto& a = run.write_artifact("a.txt", "alpha", "text");
  CHECK(a.sequence == 1);
  CHECK(a.sha256 == sha256_hex("alpha"));
  run.append_line("log.jsonl", "{}");
  run.append_line("log.jsonl", "{\"x\":1}");
  run.seal_stream("log.jsonl");
  const auto& b = run.write_artifact("sub/b.txt", "beta", "text");
  CHECK(b.sequence == 3);
  CHECK_THROWS_AS(run.write_artifact("a.txt", "again", "text"), Error);
  CHECK(read_file(run.path() / "a.txt") == "alpha");
  CHECK_THROWS_AS(run.seal_stream("nope"), UsageError);

  const auto index = RunDirectory::read_index(run.path());
  REQUIRE(index.size() == 3);
  CHECK(index[1].name == "log.jsonl");
  CHECK(index[1].sha256 == sha256_hex("{}\n{\"x\":1}\n"));
  for (std::size_t i = 1; i < index.size(); ++i) CHECK(index[i].sequence > index[i - 1].sequence);

  run.write_state("checkpoint.json", "1");
  run.write_state("checkpoint.json", "2");
  CHECK(read_file(run.path() / "checkpoint.json") == "2");
  CHECK(RunDirectory::read_index(run.path()).size() == 3);

  run.update_manifest({{"status", "completed"}});
  CHECK(RunDirectory::open(run.path()).status() == "completed");
  CHECK(RunDirectory::open(run.path()).artifacts() == index);
  CHECK_THROWS_AS(RunDirectory::open(dir.path() / "nothing"), ConfigError);
}

TEST_CASE("crash while renaming the index leaves the previous index valid") {
  TempDir dir("crash");
  auto run = RunDirectory::create(dir.path(), small_config(dir.path()), "evaluate");
  run.write_artifact("first.txt", "1", "text");
  run.index_before_rename = [](const fs::path&) { throw Crash{}; };
  CHECK_THROWS_AS(run.write_artifact("second.txt", "2", "text"), Crash);
  const auto index = RunDirectory::read_index(run.path());
  REQUIRE(index.size() == 1);
  CHECK(index[0].name == "first.txt");
  CHECK(run.artifacts().size() == 1);
}

TEST_CASE("edited config snapshot is rejected") {
  TempDir dir("edited");
  auto run = RunDirectory::create(dir.path(), small_config(dir.path()), "optimize");
  auto j = json::parse(read_file(run.path() / "config.json"));
  j["optimize"]["steps"] = 7;
  std::ofstream(run.path() / "config.json") << j.dump(2);
  CHECK_THROWS_AS(RunDirectory::open(run.path()).config(), ConfigError);
}
