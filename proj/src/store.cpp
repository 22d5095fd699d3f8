// Copyright 2026 The promptlens Authors
// SPDX-License-Identifier: Apache-2.0

#include "promptlens/store.hpp"

#include "promptlens/hash.hpp"
#include "promptlens/prompts.hpp"
#include "promptlens/version.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

namespace promptlens {

namespace fs = std::filesystem;
using nlohmann::json;

void atomic_write(const fs::path& path, std::string_view bytes, const std::function<void(const fs::path&)>& before_rename) {
  fs::path temp = path;
  temp += ".tmp";
  {
    std::ofstream out(temp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + temp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw Error("write to " + temp.string() + " failed");
  }
  if (before_rename) before_rename(temp);
  fs::rename(temp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

namespace {

json entry_to_json(const ArtifactEntry& e) {
  return {{"sequence", e.sequence}, {"name", e.name}, {"kind", e.kind}, {"sha256", e.sha256}, {"bytes", e.bytes}};
}

ArtifactEntry entry_from_json(const json& j) {
  return {j.at("sequence").get<int>(), j.at("name").get<std::string>(), j.at("kind").get<std::string>(),
          j.at("sha256").get<std::string>(), j.at("bytes").get<std::uintmax_t>()};
}

}  // namespace

RunDirectory::RunDirectory(fs::path dir, json manifest, std::vector<ArtifactEntry> index)
    : dir_(std::move(dir)), manifest_(std::move(manifest)), index_(std::move(index)) {}

RunDirectory RunDirectory::create(const fs::path& root, const ExperimentConfig& config, const std::string& command) {
  fs::create_directories(root);
  const std::string hash = config_hash(config);
  fs::path dir;
  for (int n = 0;; ++n) {
    char suffix[16];
    std::snprintf(suffix, sizeof suffix, "%03d", n);
    dir = root / (command + "-" + hash.substr(0, 12) + "-" + suffix);
    if (fs::create_directory(dir)) break;
    if (n > 9999) throw Error("no free run directory under " + root.string());
  }
  json prompt_hashes = json::object();
  for (const auto& p : prompts::all()) prompt_hashes[p.file_name] = sha256_hex(p.text);
  json manifest = {{"format", 1},
                   {"command", command},
                   {"code_version", kVersion},
                   {"created", utc_timestamp()},
                   {"config_hash", hash},
                   {"seed", config.seed},
                   {"prompt_sha256", prompt_hashes},
                   {"status", "running"}};
  atomic_write(dir / "manifest.json", manifest.dump(2) + "\n");
  RunDirectory run(dir, manifest, {});
  atomic_write(dir / "config.json", canonical_config(config) + "\n");
  run.save_index();
  return run;
}

RunDirectory RunDirectory::open(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) throw ConfigError(dir.string() + " is not a run directory (no manifest.json)");
  json manifest;
  try {
    manifest = json::parse(read_file(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw ConfigError(dir.string() + "/manifest.json: " + e.what());
  }
  return RunDirectory(dir, std::move(manifest), read_index(dir));
}

std::vector<ArtifactEntry> RunDirectory::read_index(const fs::path& dir) {
  std::vector<ArtifactEntry> out;
  if (!fs::exists(dir / "index.json")) return out;
  const json j = json::parse(read_file(dir / "index.json"));
  for (const auto& e : j.at("artifacts")) out.push_back(entry_from_json(e));
  return out;
}

ExperimentConfig RunDirectory::config() const {
  json j;
  try {
    j = json::parse(read_file(dir_ / "config.json"));
  } catch (const json::exception& e) {
    throw ConfigError(dir_.string() + "/config.json: " + e.what());
  }
  auto cfg = config_from_json(j);
  const std::string expected = manifest_.value("config_hash", "");
  if (config_hash(cfg) != expected)
    throw ConfigError("config snapshot in " + dir_.string() + " does not match the manifest hash " + expected);
  return cfg;
}

void RunDirectory::save_index() {
  json arr = json::array();
  for (const auto& e : index_) arr.push_back(entry_to_json(e));
  atomic_write(dir_ / "index.json", json{{"artifacts", arr}}.dump(2) + "\n", index_before_rename);
}

void RunDirectory::mark_partial(const std::string& what) const {
  try {
    std::ofstream out(dir_ / "PARTIAL", std::ios::app);
    out << utc_timestamp() << ' ' << what << '\n';
  } catch (...) {
  }
}

const ArtifactEntry& RunDirectory::write_artifact(const std::string& name, std::string_view bytes,
                                                  const std::string& kind) {
  const fs::path target = dir_ / name;
  for (const auto& e : index_)
    if (e.name == name) throw Error("artifact " + name + " already exists");
  if (fs::exists(target)) throw Error("artifact " + name + " already exists");
  try {
    fs::create_directories(target.parent_path());
    atomic_write(target, bytes);
  } catch (const std::exception& e) {
    mark_partial("writing " + name + ": " + e.what());
    throw Error("writing artifact " + name + ": " + e.what());
  }
  const int seq = index_.empty() ? 1 : index_.back().sequence + 1;
  index_.push_back({seq, name, kind, sha256_hex(bytes), bytes.size()});
  try {
    save_index();
  } catch (...) {
    index_.pop_back();
    throw;
  }
  return index_.back();
}

void RunDirectory::append_line(const std::string& name, std::string_view line, const std::string& kind) {
  bool known = false;
  for (const auto& e : index_) known = known || e.name == name;
  if (!known) {
    const int seq = index_.empty() ? 1 : index_.back().sequence + 1;
    index_.push_back({seq, name, kind, "", 0});
    save_index();
  }
  std::ofstream out(dir_ / name, std::ios::app | std::ios::binary);
  out << line << '\n';
  out.flush();
  if (!out) {
    mark_partial("appending to " + name);
    throw Error("append to " + name + " failed");
  }
}

void RunDirectory::seal_stream(const std::string& name) {
  for (auto& e : index_) {
    if (e.name != name) continue;
    const std::string bytes = fs::exists(dir_ / name) ? read_file(dir_ / name) : std::string();
    e.sha256 = sha256_hex(bytes);
    e.bytes = bytes.size();
    save_index();
    return;
  }
  throw UsageError("no stream named " + name);
}

void RunDirectory::write_state(const std::string& name, std::string_view bytes) { atomic_write(dir_ / name, bytes); }

void RunDirectory::update_manifest(const json& patch) {
  manifest_.merge_patch(patch);
  atomic_write(dir_ / "manifest.json", manifest_.dump(2) + "\n");
}

}  // namespace promptlens
