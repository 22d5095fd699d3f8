// Copyright 2026 The promptlens Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace promptlens {

/// Derives a child seed from a root seed, a stream label and an index.
/// Every stochastic component draws from its own labeled stream so that runs are
/// reproducible and resumable without serializing engine state.
std::uint64_t derive_seed(std::uint64_t root, std::string_view label, std::uint64_t index = 0);

/// Thin wrapper over mt19937_64 with platform-independent transforms (the
/// standard distributions are implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in the open interval (0, 1).
  double uniform();

  double normal();

  /// Standard Gumbel draw, -log(-log(u)).
  double gumbel();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace promptlens
