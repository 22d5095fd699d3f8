// Copyright 2026 The promptlens Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end: optimize, slice-discover, report, evaluate, resume.

#include "promptlens/pipeline.hpp"
#include "promptlens/version.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

using nlohmann::json;
using namespace promptlens;

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitAdapter = 3;
constexpr int kExitDegenerate = 4;

struct CommonFlags {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("-c,--config", flags.config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--set", flags.overrides, "Override a config field, e.g. optimize.steps=100");
  cmd->add_option("--seed", flags.seed, "Global seed");
  cmd->add_option("--output", flags.output, "Output root for run directories");
}

ExperimentConfig load_with_overrides(const CommonFlags& flags, const std::vector<std::string>& extra) {
  std::ifstream in(flags.config_path);
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(flags.config_path + ": " + e.what());
  }
  if (flags.seed) j["seed"] = *flags.seed;
  if (flags.output) j["output_root"] = *flags.output;
  for (const auto& o : extra) apply_override(j, o);
  for (const auto& o : flags.overrides) apply_override(j, o);
  return config_from_json(j);
}

void log_line(const std::string& msg) { std::cerr << msg << '\n'; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Data-free classifier explanation by prompt-optimized image generation"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  CommonFlags opt_flags, slice_flags, report_flags, eval_flags;
  std::optional<int> opt_class, opt_steps, report_class;
  std::optional<double> opt_lr;
  int stop_after = -1, resume_stop_after = -1;
  std::string resume_dir;

  auto* optimize = app.add_subcommand("optimize", "Optimize a soft prompt for a class");
  add_common(optimize, opt_flags);
  optimize->add_option("--class", opt_class, "Target class index");
  optimize->add_option("--steps", opt_steps, "Optimization steps");
  optimize->add_option("--lr", opt_lr, "Learning rate");
  optimize->add_option("--stop-after", stop_after, "Stop after this many steps (resumable)");

  auto* slice = app.add_subcommand("slice-discover", "Extract class words and assign slices");
  add_common(slice, slice_flags);

  auto* report = app.add_subcommand("report", "Generate, caption and report on a class");
  add_common(report, report_flags);
  report->add_option("--class", report_class, "Class index");

  auto* evaluate = app.add_subcommand("evaluate", "Compute metrics and statistics");
  add_common(evaluate, eval_flags);

  auto* resume = app.add_subcommand("resume", "Continue an interrupted optimize run");
  resume->add_option("dir", resume_dir, "Run directory")->required()->check(CLI::ExistingDirectory);
  resume->add_option("--stop-after", resume_stop_after, "Stop after this many further steps");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  RunControl control;
  control.log = log_line;
  try {
    if (*optimize) {
      std::vector<std::string> extra;
      if (opt_class) extra.push_back("optimize.class_index=" + std::to_string(*opt_class));
      if (opt_steps) extra.push_back("optimize.steps=" + std::to_string(*opt_steps));
      if (opt_lr) extra.push_back("optimize.learning_rate=" + json(*opt_lr).dump());
      const auto cfg = load_with_overrides(opt_flags, extra);
      control.stop_after = stop_after;
      const auto out = optimize_command(cfg, control);
      std::cout << out.dir.string() << '\n';
      if (out.completed && out.record.aborted) {
        log_line("run aborted: " + out.record.abort_reason);
        return kExitDegenerate;
      }
    } else if (*slice) {
      const auto out = slice_discover_command(load_with_overrides(slice_flags, {}), control);
      std::cout << out.dir.string() << '\n';
    } else if (*report) {
      std::vector<std::string> extra;
      if (report_class) extra.push_back("report.class_index=" + std::to_string(*report_class));
      const auto out = report_command(load_with_overrides(report_flags, extra), nullptr, control);
      std::cout << out.dir.string() << '\n';
    } else if (*evaluate) {
      const auto out = evaluate_command(load_with_overrides(eval_flags, {}), nullptr, control);
      std::cout << read_file(out.dir / "summary.tsv") << out.dir.string() << '\n';
    } else if (*resume) {
      control.stop_after = resume_stop_after;
      const auto out = resume_command(resume_dir, control);
      std::cout << out.dir.string() << '\n';
    }
  } catch (const ConfigError& e) {
    log_line(std::string("config error: ") + e.what());
    return kExitConfig;
  } catch (const UsageError& e) {
    log_line(std::string("usage error: ") + e.what());
    return kExitConfig;
  } catch (const AdapterError& e) {
    log_line(std::string("adapter error: ") + e.what());
    return kExitAdapter;
  } catch (const ClientError& e) {
    log_line(std::string("client error: ") + e.what());
    return kExitAdapter;
  } catch (const DegenerateResultError& e) {
    log_line(std::string("degenerate result: ") + e.what());
    return kExitDegenerate;
  } catch (const std::exception& e) {
    log_line(std::string("error: ") + e.what());
    return kExitFailure;
  }
  return kExitOk;
}
