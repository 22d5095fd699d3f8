// Copyright 2026 The promptlens Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "promptlens/core.hpp"

#include <string>
#include <string_view>

namespace promptlens {

/// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

/// Incremental digest over the raw bytes of dense matrices, used to detect
/// parameter mutation in frozen adapters.
class ParameterDigest {
 public:
  template <typename Derived>
  ParameterDigest& add(const Eigen::MatrixBase<Derived>& m) {
    const auto dense = m.eval();
    buffer_.append(reinterpret_cast<const char*>(dense.data()),
                   static_cast<std::size_t>(dense.size()) * sizeof(typename Derived::Scalar));
    return *this;
  }
  std::string hex() const { return sha256_hex(buffer_); }

 private:
  std::string buffer_;
};

}  // namespace promptlens
