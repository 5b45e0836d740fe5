#include "oodscore/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "oodscore/error.hpp"

namespace oodscore {

namespace {

void require_scores(std::span<const double> v, const char* what) {
  if (v.empty()) throw ValidationError(std::string("empty input: no ") + what + " scores");
  for (double x : v) {
    if (!std::isfinite(x)) throw ValidationError(std::string(what) + " scores contain a non-finite value");
  }
}

void require_tpr(double tpr) {
  if (!(tpr > 0.0 && tpr <= 1.0)) throw ValidationError("tpr target must lie in (0, 1]");
}

}  // namespace

double auroc(std::span<const double> id_scores, std::span<const double> ood_scores) {
  require_scores(id_scores, "ID");
  require_scores(ood_scores, "OOD");
  const std::size_t n_id = id_scores.size();
  const std::size_t n_ood = ood_scores.size();

  struct Item {
    double score;
    bool is_id;
  };
  std::vector<Item> all;
  all.reserve(n_id + n_ood);
  for (double s : id_scores) all.push_back({s, true});
  for (double s : ood_scores) all.push_back({s, false});
  std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.score < b.score; });

  // Twice the rank sum of the ID group, kept integral so that ties at
  // half-ranks are exact.
  std::uint64_t twice_rank_sum = 0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j < all.size() && all[j].score == all[i].score) ++j;
    // 1-based ranks i+1..j share the mid-rank (i+1+j)/2.
    const std::uint64_t twice_mid = static_cast<std::uint64_t>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) {
      if (all[t].is_id) twice_rank_sum += twice_mid;
    }
    i = j;
  }
  const std::uint64_t twice_u = twice_rank_sum - static_cast<std::uint64_t>(n_id) * (n_id + 1);
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(n_id) * static_cast<double>(n_ood));
}

double threshold_at_tpr(std::span<const double> id_scores, double tpr_target) {
  require_scores(id_scores, "ID");
  require_tpr(tpr_target);
  std::vector<double> sorted(id_scores.begin(), id_scores.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const double n = static_cast<double>(sorted.size());
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    if (static_cast<double>(k + 1) / n >= tpr_target) return sorted[k];
  }
  return sorted.back();
}

double fpr_at_tpr(std::span<const double> id_scores, std::span<const double> ood_scores,
                  double tpr_target) {
  require_scores(ood_scores, "OOD");
  const double tau = threshold_at_tpr(id_scores, tpr_target);
  const auto accepted = std::count_if(ood_scores.begin(), ood_scores.end(), [tau](double s) { return s >= tau; });
  return static_cast<double>(accepted) / static_cast<double>(ood_scores.size());
}

EvalResult evaluate(std::span<const double> id_scores, std::span<const double> ood_scores,
                    double tpr_target) {
  EvalResult r;
  r.auroc = auroc(id_scores, ood_scores);
  r.threshold = threshold_at_tpr(id_scores, tpr_target);
  r.fpr = fpr_at_tpr(id_scores, ood_scores, tpr_target);
  r.tpr_target = tpr_target;
  r.n_id = id_scores.size();
  r.n_ood = ood_scores.size();
  return r;
}

}  // namespace oodscore
