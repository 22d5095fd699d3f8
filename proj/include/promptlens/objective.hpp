// Copyright 2026 The promptlens Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "promptlens/adapters.hpp"

#include <nlohmann/json.hpp>

#include <limits>
#include <map>
#include <span>
#include <vector>

namespace promptlens {

/// Per-neuron activation loss: -n for feature neurons, -log n for class neurons.
double activation_term(double activation, NeuronKind kind);
double activation_term_grad(double activation, NeuronKind kind);

/// Sum of activation_term over all selected neurons.
double activation_loss(const ClassifierOutput& out);
Vector activation_loss_grad(const ClassifierOutput& out);

/// Activation loss restricted to a subset of the selected neurons.
double aggregated_loss(const ClassifierOutput& out, std::span<const Index> subset);

struct PositionState {
  TokenId pseudo_label = kUnset;
  double reference_loss = std::numeric_limits<double>::infinity();
  std::vector<Index> neuron_subset;
  std::map<TokenId, std::vector<double>> history;

  bool is_set() const { return pseudo_label != kUnset; }
  bool operator==(const PositionState&) const = default;
};

/// One entry per mask position.
struct PseudoLabelState {
  std::vector<PositionState> positions;

  /// Every position starts unset with L = +inf. Positions without an explicit
  /// subset are tied to all K neurons.
  static PseudoLabelState initial(Index position_count, Index neuron_count,
                                  const std::vector<std::vector<Index>>& subsets = {});

  bool operator==(const PseudoLabelState&) const = default;
};

struct PseudoLabelUpdate {
  std::vector<Index> updated_positions;
  std::vector<double> history_means;  // per position, after appending this step's loss
};

/// Appends each position's loss to the history of its predicted token; when the
/// history mean is strictly below the reference loss the pseudo-label moves to
/// that token and the reference loss to the mean.
PseudoLabelUpdate update_pseudo_labels(PseudoLabelState& state, std::span<const TokenId> predicted,
                                       std::span<const double> aggregated_losses);

struct MaskLoss {
  double value = 0.0;
  std::vector<Index> clamped_positions;  // positions where s_{i,y_i} hit the epsilon clamp
};

/// Cross-entropy of each set pseudo-label under the softmax rows (N x V).
MaskLoss mask_loss(const Matrix& softmax_rows, const PseudoLabelState& state);

/// d(mask loss)/d(logits) = s_i - onehot(y_i) for set positions, zero otherwise.
Matrix mask_loss_logit_grad(const Matrix& softmax_rows, const PseudoLabelState& state);

/// Activation part plus the (already negated) cross-entropy part.
double total_loss(double activation_part, double mask_part);

void to_json(nlohmann::json& j, const PseudoLabelState& state);
void from_json(const nlohmann::json& j, PseudoLabelState& state);

/// JSON has no infinity; +inf travels as the string "inf".
nlohmann::json encode_real(double value);
double decode_real(const nlohmann::json& j);

}  // namespace promptlens
