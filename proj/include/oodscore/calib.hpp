#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "oodscore/datastore.hpp"
#include "oodscore/matrix.hpp"

namespace oodscore {

/// Training-set statistics the detector needs at inference time.
struct CalibrationStats {
  Matrix mu;                               // K x d class feature means
  std::vector<double> w_col;               // d, column sums of W
  std::vector<double> s_class;             // K, mean energy confidence per class
  double s_global = 0.0;                   // mean energy confidence over all samples
  double temperature = 1.0;
  std::vector<std::int32_t> class_counts;  // K
  // Activation clip level for ReAct, fitted on the same training features.
  std::optional<double> react_clip;

  std::size_t num_classes() const noexcept { return mu.rows(); }
  std::size_t dim() const noexcept { return mu.cols(); }

  void validate() const;

  friend bool operator==(const CalibrationStats&, const CalibrationStats&) = default;
};

enum class Grouping {
  automatic,  // labels when present, else predicted classes
  labels,
  predicted,
};

struct CalibrationConfig {
  double temperature = 1.0;
  Grouping grouping = Grouping::automatic;
  std::optional<double> react_percentile = 90.0;
};

/// phi(s) = -log sum_j exp(s_j / T), evaluated with a max shift.
double energy_confidence(std::span<const double> logits, double temperature);

/// Summation in a fixed binary-tree order, independent of thread count.
double pairwise_sum(std::span<const double> values);

/// Row c is the arithmetic mean of the feature rows whose group is c.
/// Throws CalibrationError naming the first class with no members.
Matrix class_means(const Matrix& features, std::span<const std::int32_t> group, std::size_t num_classes);

/// Element i is sum_j W(j, i).
std::vector<double> column_weight_sums(const Matrix& W);

std::vector<std::int32_t> resolve_grouping(const FeatureDataset& train, Grouping grouping);

CalibrationStats fit_calibration(const FeatureDataset& train, const ClassifierHead& head,
                                 const CalibrationConfig& cfg = {});

void write_stats(const CalibrationStats& stats, const std::filesystem::path& dir);
CalibrationStats read_stats(const std::filesystem::path& dir);

}  // namespace oodscore
