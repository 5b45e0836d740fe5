#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "oodscore/matrix.hpp"

namespace oodscore {

/// Final linear layer: logits = W * f + bias.
struct ClassifierHead {
  Matrix W;                  // K x d
  std::vector<double> bias;  // K

  std::size_t num_classes() const noexcept { return W.rows(); }
  std::size_t dim() const noexcept { return W.cols(); }

  void validate() const;

  friend bool operator==(const ClassifierHead&, const ClassifierHead&) = default;
};

/// Pre-extracted penultimate features with whatever model outputs came
/// alongside them. Optional tensors are absent rather than zero-filled.
struct FeatureDataset {
  Matrix features;                                  // N x d
  std::optional<Matrix> logits;                     // N x K
  std::optional<std::vector<std::int32_t>> labels;  // N
  std::optional<std::vector<std::int32_t>> predicted;
  // K when known from logits or a paired head, 0 otherwise.
  std::size_t num_classes = 0;

  std::size_t size() const noexcept { return features.rows(); }
  std::size_t dim() const noexcept { return features.cols(); }

  /// Stored predictions, else row-argmax of logits (lowest index on ties).
  /// Throws ValidationError when neither is available.
  std::vector<std::int32_t> predicted_classes() const;

  /// Checks every invariant; `head` additionally pins d and K.
  void validate(const ClassifierHead* head = nullptr) const;

  friend bool operator==(const FeatureDataset&, const FeatureDataset&) = default;
};

struct LoadedDataset {
  FeatureDataset dataset;
  std::optional<ClassifierHead> head;
};

LoadedDataset read_dataset(const std::filesystem::path& dir);

void write_dataset(const FeatureDataset& dataset, const ClassifierHead* head,
                   const std::filesystem::path& dir);

/// Lowest index of the maximum entry.
std::int32_t argmax(std::span<const double> row);

/// Row i is W * features[i] + bias.
Matrix compute_logits(const Matrix& features, const ClassifierHead& head);

struct LogitConsistency {
  // max over entries of |stored - recomputed| / max(max_j |recomputed_row_j|, 1e-12)
  double max_relative_deviation = 0.0;
  std::size_t worst_row = 0;
  bool consistent = true;
};

inline constexpr double kLogitConsistencyTolerance = 1e-4;

struct DerivedLogits {
  Matrix logits;
  std::optional<LogitConsistency> consistency;  // set when the dataset stores logits
};

DerivedLogits derive_logits(const FeatureDataset& dataset, const ClassifierHead& head,
                            double tolerance = kLogitConsistencyTolerance);

}  // namespace oodscore
