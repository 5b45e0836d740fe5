#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "oodscore/datastore.hpp"
#include "oodscore/metrics.hpp"
#include "oodscore/report.hpp"
#include "oodscore/scores.hpp"

namespace oodscore {

enum class OodKind { mean_shift, scale_shift, prototype_free };

const char* ood_kind_name(OodKind kind);
OodKind parse_ood_kind(const std::string& name);

/// ID class c is drawn as proto_scale * W_c + noise_sigma * N(0, I).
struct SynthConfig {
  std::size_t num_classes = 10;
  std::size_t dim = 64;
  std::size_t n_per_class = 50;
  std::size_t n_ood = 500;
  double proto_scale = 4.0;
  double noise_sigma = 0.5;
  OodKind ood_kind = OodKind::prototype_free;
  double shift_mag = 0.0;
  std::uint64_t seed = 1;

  void validate() const;

  /// Builds a config from key=value pairs; unknown keys are rejected.
  static SynthConfig from_pairs(const std::map<std::string, std::string>& pairs);
};

/// Rows are independent unit-norm Gaussian directions; bias is zero.
ClassifierHead make_head(std::size_t num_classes, std::size_t dim, std::uint64_t seed);

/// n_per_class samples per class in class-major order, labelled, with
/// logits from the head. `stream` names the random stream so that distinct
/// splits never share draws.
FeatureDataset sample_id(const ClassifierHead& head, const SynthConfig& cfg,
                         const std::string& stream = "id");

/// n_ood unlabelled samples:
///   mean_shift      proto_scale * W_c + sigma * z + shift_mag * u
///   scale_shift     proto_scale * W_c + sigma * (1 + shift_mag) * z
///   prototype_free  shift_mag * u + sigma * z
/// with c = i mod K, z standard normal and u a random unit vector. Draws do
/// not depend on shift_mag, so sweeps over it reuse the same randomness.
FeatureDataset sample_ood(const ClassifierHead& head, const SynthConfig& cfg);

struct SyntheticData {
  ClassifierHead head;
  FeatureDataset train;
  FeatureDataset test;
  FeatureDataset ood;
};

/// Head, calibration split, held-out ID split and OOD set.
SyntheticData make_synthetic(const SynthConfig& cfg);

std::string ood_dataset_name(const SynthConfig& cfg);

struct ExperimentResult {
  std::vector<MetricRow> rows;
  std::vector<ScoreVector> id_scores;
  std::vector<ScoreVector> ood_scores;
};

/// Calibrates on the train split, scores the test split and the OOD set
/// with every method, and evaluates each pair.
ExperimentResult run_synthetic_experiment(const SynthConfig& cfg, const std::vector<MethodSpec>& methods,
                                          double tpr_target = kDefaultTpr, unsigned threads = 1);

}  // namespace oodscore
