// Copyright 2026 The promptlens Authors
// SPDX-License-Identifier: Apache-2.0

#include "promptlens/objective.hpp"

#include "promptlens/math.hpp"

#include <cmath>
#include <numeric>

namespace promptlens {

double activation_term(double activation, NeuronKind kind) {
  if (kind == NeuronKind::kFeature) return -activation;
  if (!(activation >= 0)) throw DomainError("class-neuron activation must be a probability");
  return -clamped_log(activation);
}

double activation_term_grad(double activation, NeuronKind kind) {
  if (kind == NeuronKind::kFeature) return -1.0;
  return -1.0 / std::max(activation, kLogEpsilon);
}

double activation_loss(const ClassifierOutput& out) {
  double total = 0.0;
  for (Index k = 0; k < out.size(); ++k)
    total += activation_term(out.selected_activations(k), out.neuron_kinds[static_cast<std::size_t>(k)]);
  return total;
}

Vector activation_loss_grad(const ClassifierOutput& out) {
  Vector g(out.size());
  for (Index k = 0; k < out.size(); ++k)
    g(k) = activation_term_grad(out.selected_activations(k), out.neuron_kinds[static_cast<std::size_t>(k)]);
  return g;
}

double aggregated_loss(const ClassifierOutput& out, std::span<const Index> subset) {
  if (subset.empty()) throw UsageError("aggregated loss over an empty neuron subset");
  double total = 0.0;
  for (Index k : subset) {
    if (k < 0 || k >= out.size()) throw UsageError("neuron subset index out of range");
    total += activation_term(out.selected_activations(k), out.neuron_kinds[static_cast<std::size_t>(k)]);
  }
  return total;
}

PseudoLabelState PseudoLabelState::initial(Index position_count, Index neuron_count,
                                           const std::vector<std::vector<Index>>& subsets) {
  if (neuron_count < 1) throw UsageError("at least one neuron is required");
  if (!subsets.empty() && static_cast<Index>(subsets.size()) != position_count)
    throw ConfigError("neuron subsets must be given for every mask position");
  PseudoLabelState state;
  state.positions.resize(static_cast<std::size_t>(position_count));
  for (Index i = 0; i < position_count; ++i) {
    auto& subset = state.positions[static_cast<std::size_t>(i)].neuron_subset;
    if (subsets.empty()) {
      subset.resize(static_cast<std::size_t>(neuron_count));
      std::iota(subset.begin(), subset.end(), Index{0});
    } else {
      subset = subsets[static_cast<std::size_t>(i)];
      if (subset.empty()) throw ConfigError("neuron subset of position " + std::to_string(i) + " is empty");
      for (Index k : subset)
        if (k < 0 || k >= neuron_count) throw ConfigError("neuron subset index out of range");
    }
  }
  return state;
}

PseudoLabelUpdate update_pseudo_labels(PseudoLabelState& state, std::span<const TokenId> predicted,
                                       std::span<const double> aggregated_losses) {
  if (predicted.size() != state.positions.size() || aggregated_losses.size() != state.positions.size())
    throw UsageError("one predicted token and one loss per mask position are required");
  PseudoLabelUpdate report;
  for (std::size_t i = 0; i < state.positions.size(); ++i) {
    auto& pos = state.positions[i];
    auto& hist = pos.history[predicted[i]];
    hist.push_back(aggregated_losses[i]);
    const double mean = std::accumulate(hist.begin(), hist.end(), 0.0) / static_cast<double>(hist.size());
    report.history_means.push_back(mean);
    if (mean < pos.reference_loss) {
      pos.pseudo_label = predicted[i];
      pos.reference_loss = mean;
      report.updated_positions.push_back(static_cast<Index>(i));
    }
  }
  return report;
}

MaskLoss mask_loss(const Matrix& softmax_rows, const PseudoLabelState& state) {
  if (softmax_rows.rows() != static_cast<Index>(state.positions.size()))
    throw UsageError("one softmax row per mask position is required");
  MaskLoss out;
  for (std::size_t i = 0; i < state.positions.size(); ++i) {
    const auto& pos = state.positions[i];
    if (!pos.is_set()) continue;
    const double s = softmax_rows(static_cast<Index>(i), pos.pseudo_label);
    if (s < kLogEpsilon) out.clamped_positions.push_back(static_cast<Index>(i));
    out.value -= clamped_log(s);
  }
  return out;
}

Matrix mask_loss_logit_grad(const Matrix& softmax_rows, const PseudoLabelState& state) {
  Matrix g = Matrix::Zero(softmax_rows.rows(), softmax_rows.cols());
  for (std::size_t i = 0; i < state.positions.size(); ++i) {
    const auto& pos = state.positions[i];
    if (!pos.is_set()) continue;
    const auto row = static_cast<Index>(i);
    g.row(row) = softmax_rows.row(row);
    g(row, pos.pseudo_label) -= 1.0;
  }
  return g;
}

double total_loss(double activation_part, double mask_part) {
  if (!std::isfinite(activation_part) || !std::isfinite(mask_part))
    throw DomainError("total loss requires finite parts");
  return activation_part + mask_part;
}

nlohmann::json encode_real(double value) {
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  if (std::isnan(value)) return "nan";
  return value;
}

double decode_real(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    throw ConfigError("unexpected real encoding '" + s + "'");
  }
  return j.get<double>();
}

void to_json(nlohmann::json& j, const PseudoLabelState& state) {
  j = nlohmann::json::array();
  for (const auto& pos : state.positions) {
    nlohmann::json history = nlohmann::json::object();
    for (const auto& [token, losses] : pos.history) {
      nlohmann::json arr = nlohmann::json::array();
      for (double v : losses) arr.push_back(encode_real(v));
      history[std::to_string(token)] = std::move(arr);
    }
    j.push_back({{"pseudo_label", pos.pseudo_label},
                 {"reference_loss", encode_real(pos.reference_loss)},
                 {"neuron_subset", pos.neuron_subset},
                 {"history", std::move(history)}});
  }
}

void from_json(const nlohmann::json& j, PseudoLabelState& state) {
  state.positions.clear();
  for (const auto& item : j) {
    PositionState pos;
    pos.pseudo_label = item.at("pseudo_label").get<TokenId>();
    pos.reference_loss = decode_real(item.at("reference_loss"));
    pos.neuron_subset = item.at("neuron_subset").get<std::vector<Index>>();
    for (const auto& [token, losses] : item.at("history").items()) {
      auto& hist = pos.history[static_cast<TokenId>(std::stol(token))];
      for (const auto& v : losses) hist.push_back(decode_real(v));
    }
    state.positions.push_back(std::move(pos));
  }
}

}  // namespace promptlens
