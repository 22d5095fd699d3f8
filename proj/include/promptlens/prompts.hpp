// Copyright 2026 The promptlens Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace promptlens::prompts {

// Verbatim system prompts, embedded from prompts/*.txt at build time.

std::string_view caption_system();
std::string_view report_system();
std::string_view cue_extractor_system();
std::string_view geval_consistency_system();
std::string_view mos_llm_system();

struct NamedPrompt {
  std::string file_name;  // e.g. "caption_system.txt"
  std::string_view text;
};

std::vector<NamedPrompt> all();

/// Replaces every "{{key}}" occurrence.
std::string fill(std::string_view prompt, std::string_view key, std::string_view value);

}  // namespace promptlens::prompts
