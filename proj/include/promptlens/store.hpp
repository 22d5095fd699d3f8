// Copyright 2026 The promptlens Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "promptlens/config.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace promptlens {

/// Writes bytes to a sibling temporary file and renames it over `path`.
/// `before_rename` runs between the two steps (crash simulation in tests).
void atomic_write(const std::filesystem::path& path, std::string_view bytes,
                  const std::function<void(const std::filesystem::path& temp)>& before_rename = {});

std::string read_file(const std::filesystem::path& path);

struct ArtifactEntry {
  int sequence = 0;
  std::string name;  // relative to the run directory
  std::string kind;
  std::string sha256;  // empty for open append-only streams
  std::uintmax_t bytes = 0;

  bool operator==(const ArtifactEntry&) const = default;
};

/// One run's directory: manifest.json (written first), config.json snapshot,
/// index.json (artifact index), artifacts, and mutable state files
/// (checkpoint.json). Artifacts are never overwritten.
class RunDirectory {
 public:
  /// Creates root/<command>-<config hash prefix>-<NNN> with the first free NNN.
  static RunDirectory create(const std::filesystem::path& root, const ExperimentConfig& config,
                             const std::string& command);
  static RunDirectory open(const std::filesystem::path& dir);

  const std::filesystem::path& path() const { return dir_; }
  const nlohmann::json& manifest() const { return manifest_; }
  std::string status() const { return manifest_.value("status", ""); }

  /// Snapshot config; ConfigError when it no longer matches the manifest hash.
  ExperimentConfig config() const;

  /// New artifact (temp + rename); throws Error if the name exists.
  const ArtifactEntry& write_artifact(const std::string& name, std::string_view bytes, const std::string& kind);
  /// Appends to an append-only stream, registering it on first use.
  void append_line(const std::string& name, std::string_view line, const std::string& kind = "stream");
  /// Records the final digest and size of a stream.
  void seal_stream(const std::string& name);
  /// Replaces a mutable state file atomically (not indexed).
  void write_state(const std::string& name, std::string_view bytes);

  std::vector<ArtifactEntry> artifacts() const { return index_; }
  static std::vector<ArtifactEntry> read_index(const std::filesystem::path& dir);

  /// Updates manifest fields (status, timestamps, notes) atomically.
  void update_manifest(const nlohmann::json& patch);

  /// Test hook run between temp write and rename of the index.
  std::function<void(const std::filesystem::path&)> index_before_rename;

 private:
  RunDirectory(std::filesystem::path dir, nlohmann::json manifest, std::vector<ArtifactEntry> index);
  void save_index();
  void mark_partial(const std::string& what) const;

  std::filesystem::path dir_;
  nlohmann::json manifest_;
  std::vector<ArtifactEntry> index_;
};

std::string utc_timestamp();

}  // namespace promptlens
