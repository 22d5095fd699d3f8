// Copyright 2026 The promptlens Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "promptlens/core.hpp"

#include <filesystem>
#include <string>

namespace promptlens {

/// Single-channel portable float map (little-endian float32), lossless for
/// the generator's float output.
std::string encode_pfm(const Image& image);
Image decode_pfm(std::string_view bytes);

void write_pfm(const std::filesystem::path& path, const Image& image);
Image read_pfm(const std::filesystem::path& path);

/// 8-bit grayscale PNG, min-max normalized; used for upload to vision
/// clients only.
std::string encode_png(const Image& image);

std::string base64_encode(std::string_view bytes);

}  // namespace promptlens
