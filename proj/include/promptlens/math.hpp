// Copyright 2026 The promptlens Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "promptlens/core.hpp"

#include <cmath>
#include <limits>

namespace promptlens {

/// Clamp applied inside every logarithm of a probability.
inline constexpr double kLogEpsilon = 1e-12;

/// Numerically stable softmax of a vector. Entries equal to -inf get probability 0.
template <typename Derived>
VectorX<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& logits) {
  using S = typename Derived::Scalar;
  const S peak = logits.maxCoeff();
  // Scalar exp: the vectorized one maps -inf to a denormal instead of 0.
  VectorX<S> out = (logits.array() - peak).unaryExpr([](S v) { return std::exp(v); }).matrix();
  return out / out.sum();
}

/// Tempered softmax, softmax(logits / temperature).
template <typename Derived>
VectorX<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& logits,
                                          typename Derived::Scalar temperature) {
  return softmax((logits / temperature).eval());
}

/// Vector-Jacobian product of y = softmax(z / temperature):
/// dz = (1/temperature) * y .* (dy - <y, dy>).
template <typename DerivedY, typename DerivedG>
VectorX<typename DerivedY::Scalar> softmax_vjp(const Eigen::MatrixBase<DerivedY>& y,
                                               const Eigen::MatrixBase<DerivedG>& upstream,
                                               typename DerivedY::Scalar temperature = 1) {
  const auto inner = y.dot(upstream);
  return (y.array() * (upstream.array() - inner)).matrix() / temperature;
}

template <typename S>
S clamped_log(S value) {
  return std::log(std::max(value, static_cast<S>(kLogEpsilon)));
}

/// Cosine similarity. Throws DomainError when either vector has zero norm.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar cosine_similarity(const Eigen::MatrixBase<DerivedA>& a,
                                            const Eigen::MatrixBase<DerivedB>& b) {
  const auto na = a.norm();
  const auto nb = b.norm();
  if (na == 0 || nb == 0) throw DomainError("cosine similarity of a zero vector");
  return a.dot(b) / (na * nb);
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

template <typename Derived>
bool any_nan(const Eigen::MatrixBase<Derived>& m) {
  return m.hasNaN();
}

/// First index of the maximum entry (ties resolve to the lower index).
template <typename Derived>
Index argmax(const Eigen::MatrixBase<Derived>& v) {
  Index best = 0;
  for (Index i = 1; i < v.size(); ++i) {
    if (v(i) > v(best)) best = i;
  }
  return best;
}

/// Flattens an image in row-major pixel order.
inline Vector flatten(const Image& image) {
  Vector out(image.size());
  for (Index r = 0; r < image.rows(); ++r)
    for (Index c = 0; c < image.cols(); ++c) out(r * image.cols() + c) = image(r, c);
  return out;
}

inline Image unflatten(const Vector& pixels, Index side) {
  Image out(side, side);
  for (Index r = 0; r < side; ++r)
    for (Index c = 0; c < side; ++c) out(r, c) = pixels(r * side + c);
  return out;
}

}  // namespace promptlens
