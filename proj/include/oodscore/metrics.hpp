#pragma once

#include <cstddef>
#include <span>

namespace oodscore {

// Scores follow the "higher = in-distribution" convention and a sample is
// accepted as ID iff score >= tau.

struct EvalResult {
  double auroc = 0.0;
  double fpr = 0.0;  // FPR at tpr_target (FPR95 by default)
  double threshold = 0.0;
  double tpr_target = 0.95;
  std::size_t n_id = 0;
  std::size_t n_ood = 0;

  friend bool operator==(const EvalResult&, const EvalResult&) = default;
};

inline constexpr double kDefaultTpr = 0.95;

/// P(id > ood) + 0.5 P(id == ood) by mid-rank statistics, O(n log n).
double auroc(std::span<const double> id_scores, std::span<const double> ood_scores);

/// Largest tau drawn from id_scores with fraction(id >= tau) >= tpr_target.
double threshold_at_tpr(std::span<const double> id_scores, double tpr_target);

/// Fraction of OOD scores >= threshold_at_tpr(id_scores, tpr_target).
double fpr_at_tpr(std::span<const double> id_scores, std::span<const double> ood_scores,
                  double tpr_target = kDefaultTpr);

EvalResult evaluate(std::span<const double> id_scores, std::span<const double> ood_scores,
                    double tpr_target = kDefaultTpr);

}  // namespace oodscore
