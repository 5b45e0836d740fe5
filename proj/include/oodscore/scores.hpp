#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "oodscore/calib.hpp"
#include "oodscore/datastore.hpp"

namespace oodscore {

/// Weights of the calibrated decoupled score.
///   lambda * xi+ / (s_sample + b * s_class) + (1 - lambda) * xi- / (s_global + b * s_class)
/// b_coef = 0 drops the class-mean confidence (the GAFD-C variant).
struct GafdParams {
  double lambda = 0.5;
  double b_coef = 1.0;
  double temperature = 1.0;

  void validate() const;
};

struct DecoupledScores {
  double xi_plus = 0.0;
  double xi_minus = 0.0;
  // L1 mass of components with w_i * df_i == 0, normalized like xi+/xi-.
  double residual = 0.0;
};

inline constexpr double kSingularityThreshold = 1e-12;

/// Splits f - mu_c by the sign of w_col[i] * (f - mu_c)[i] and returns the
/// L1 mass of each part relative to ||f||_1. Throws ValidationError when
/// ||f||_1 == 0 or the lengths differ.
DecoupledScores decouple(std::span<const double> f, std::span<const double> mu_c,
                         std::span<const double> w_col);

/// Calibrated score for one sample against class `predicted_class`.
double gafd_cc_score(std::span<const double> f, std::span<const double> logits_row,
                     const CalibrationStats& stats, const GafdParams& params,
                     std::size_t predicted_class);

/// Same, with the predicted class taken as argmax(logits_row).
double gafd_cc_score(std::span<const double> f, std::span<const double> logits_row,
                     const CalibrationStats& stats, const GafdParams& params);

double msp_score(std::span<const double> logits_row);
double maxlogit_score(std::span<const double> logits_row);

/// T * log sum_j exp(s_j / T); higher means more in-distribution.
double energy_detection_score(std::span<const double> logits_row, double temperature);

/// Energy score of the head applied to min(f, clip) elementwise.
double react_score(std::span<const double> f, const ClassifierHead& head, double clip_threshold,
                   double temperature);

/// Percentile of all activations with lower interpolation: the element at
/// sorted index floor(p / 100 * (n - 1)).
double react_fit_threshold(const Matrix& train_features, double percentile = 90.0);

enum class Method { msp, maxlogit, energy, react, gafd_cc };

const char* method_name(Method m);
Method parse_method(const std::string& name);

struct MethodSpec {
  Method method = Method::gafd_cc;
  GafdParams gafd;           // used by gafd_cc
  double temperature = 1.0;  // energy, react
  // ReAct clip level; falls back to the calibration stats when unset.
  std::optional<double> react_clip;

  /// Compact identifier that fixes every parameter, e.g.
  /// "gafd_cc[lambda=0.5;b=1;T=1]". Contains no commas.
  std::string label() const;
  /// Parameter record as a JSON object string.
  std::string params_json() const;

  static MethodSpec from_json(const std::string& text);
};

/// Detection scores for one dataset; higher means more in-distribution.
struct ScoreVector {
  MethodSpec method;
  std::vector<double> values;
};

/// Scores every row. `head` is needed for react and for datasets lacking
/// logits; `stats` for gafd_cc and react without an explicit clip. Rows that
/// fail are collected and reported together via RowFailureError.
ScoreVector score_batch(const FeatureDataset& dataset, const ClassifierHead* head,
                        const CalibrationStats* stats, const MethodSpec& spec, unsigned threads = 1);

struct StoredScores {
  ScoreVector scores;
  std::string dataset;  // name of the scored dataset
};

/// Container with a single "scores" tensor plus a method.json sidecar.
void write_scores(const ScoreVector& scores, const std::string& dataset_name,
                  const std::filesystem::path& dir);
StoredScores read_scores(const std::filesystem::path& dir);

}  // namespace oodscore
