// Copyright 2026 The promptlens Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace promptlens {

using Scalar = double;
using Index = Eigen::Index;

template <typename S>
using MatrixX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using VectorX = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using RowVectorX = Eigen::Matrix<S, 1, Eigen::Dynamic>;

using Matrix = MatrixX<Scalar>;
using Vector = VectorX<Scalar>;
using RowVector = RowVectorX<Scalar>;

/// A generated image: image_side x image_side intensities, row-major pixel order
/// when flattened.
using Image = Matrix;

using TokenId = std::int32_t;

/// Sentinel target id for source tokens without a translation.
inline constexpr TokenId kUnmapped = -1;
/// Sentinel pseudo-label before any update.
inline constexpr TokenId kUnset = -1;

struct TokenSequence {
  std::vector<TokenId> token_ids;
  std::string vocab_id;

  bool operator==(const TokenSequence&) const = default;
};

// Error taxonomy. The CLI maps these onto exit codes.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or mismatched dimensions between components.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Operation called outside its contract (empty subset, zero mask slots, ...).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Numeric input outside the function domain (non-positive probability, NaN logits).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A pretrained-component adapter failed or could not be resolved.
class AdapterError : public Error {
 public:
  using Error::Error;
};

/// The adapter lacks an optional capability (weight introspection, joint encoder).
class CapabilityError : public AdapterError {
 public:
  using AdapterError::AdapterError;
};

/// The pipeline ran but produced nothing usable (no kept images, exhausted vocabulary).
class DegenerateResultError : public Error {
 public:
  using Error::Error;
};

}  // namespace promptlens
