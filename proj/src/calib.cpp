#include "oodscore/calib.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "oodscore/container.hpp"
#include "oodscore/error.hpp"
#include "oodscore/scores.hpp"

namespace oodscore {

namespace {

const std::set<std::string> kStatsNames = {"mu", "w_col", "s_class", "s_global",
                                           "temperature", "class_counts", "react_clip"};

double pairwise_sum_impl(const double* p, std::size_t n) {
  if (n <= 8) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += p[i];
    return acc;
  }
  const std::size_t half = n / 2;
  return pairwise_sum_impl(p, half) + pairwise_sum_impl(p + half, n - half);
}

const Tensor& need(const std::map<std::string, Tensor>& t, const std::string& name, DType dtype,
                   std::size_t rank) {
  auto it = t.find(name);
  if (it == t.end()) throw ValidationError("stats container has no '" + name + "' tensor");
  if (it->second.dtype != dtype || it->second.shape.size() != rank) {
    throw ValidationError("stats tensor '" + name + "' has the wrong dtype or rank");
  }
  return it->second;
}

std::int64_t dim(std::size_t v) { return static_cast<std::int64_t>(v); }

}  // namespace

double energy_confidence(std::span<const double> logits, double temperature) {
  double peak = -std::numeric_limits<double>::infinity();
  for (double s : logits) peak = std::max(peak, s);
  double acc = 0.0;
  for (double s : logits) acc += std::exp((s - peak) / temperature);
  return -(peak / temperature + std::log(acc));
}

double pairwise_sum(std::span<const double> values) {
  return pairwise_sum_impl(values.data(), values.size());
}

Matrix class_means(const Matrix& features, std::span<const std::int32_t> group, std::size_t num_classes) {
  if (group.size() != features.rows()) {
    throw ValidationError("grouping has " + std::to_string(group.size()) + " entries for " +
                          std::to_string(features.rows()) + " feature rows");
  }
  std::vector<std::vector<std::size_t>> members(num_classes);
  for (std::size_t i = 0; i < group.size(); ++i) {
    const auto c = group[i];
    if (c < 0 || static_cast<std::size_t>(c) >= num_classes) {
      throw ValidationError("group value " + std::to_string(c) + " at row " + std::to_string(i) +
                            " is outside [0, " + std::to_string(num_classes) + ")");
    }
    members[static_cast<std::size_t>(c)].push_back(i);
  }
  Matrix mu(num_classes, features.cols());
  std::vector<double> column;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (members[c].empty()) throw CalibrationError("empty class " + std::to_string(c));
    column.resize(members[c].size());
    for (std::size_t t = 0; t < features.cols(); ++t) {
      for (std::size_t m = 0; m < members[c].size(); ++m) column[m] = features(members[c][m], t);
      mu(c, t) = pairwise_sum(column) / static_cast<double>(members[c].size());
    }
  }
  return mu;
}

std::vector<double> column_weight_sums(const Matrix& W) {
  std::vector<double> out(W.cols(), 0.0);
  for (std::size_t j = 0; j < W.rows(); ++j) {
    const auto row = W.row(j);
    for (std::size_t i = 0; i < row.size(); ++i) out[i] += row[i];
  }
  return out;
}

std::vector<std::int32_t> resolve_grouping(const FeatureDataset& train, Grouping grouping) {
  switch (grouping) {
    case Grouping::labels:
      if (!train.labels) throw ValidationError("grouping 'labels' requires the 'labels' tensor");
      return *train.labels;
    case Grouping::predicted:
      if (!train.predicted && !train.logits) {
        throw ValidationError("grouping 'predicted' requires the 'predicted' or 'logits' tensor");
      }
      return train.predicted_classes();
    case Grouping::automatic:
      if (train.labels) return *train.labels;
      return resolve_grouping(train, Grouping::predicted);
  }
  throw ValidationError("unknown grouping");
}

CalibrationStats fit_calibration(const FeatureDataset& train, const ClassifierHead& head,
                                 const CalibrationConfig& cfg) {
  if (!(cfg.temperature > 0.0) || !std::isfinite(cfg.temperature)) {
    throw ValidationError("temperature must be positive and finite");
  }
  train.validate(&head);
  const std::size_t k = head.num_classes();

  FeatureDataset with_logits = train;
  if (!with_logits.logits) with_logits.logits = compute_logits(train.features, head);
  const Matrix& logits = *with_logits.logits;

  const auto group = resolve_grouping(with_logits, cfg.grouping);

  CalibrationStats stats;
  stats.temperature = cfg.temperature;
  stats.mu = class_means(train.features, group, k);
  stats.w_col = column_weight_sums(head.W);

  std::vector<double> phi(logits.rows());
  for (std::size_t i = 0; i < phi.size(); ++i) phi[i] = energy_confidence(logits.row(i), cfg.temperature);

  std::vector<std::vector<double>> per_class(k);
  for (std::size_t i = 0; i < phi.size(); ++i) per_class[static_cast<std::size_t>(group[i])].push_back(phi[i]);
  stats.s_class.resize(k);
  stats.class_counts.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    stats.class_counts[c] = static_cast<std::int32_t>(per_class[c].size());
    stats.s_class[c] = pairwise_sum(per_class[c]) / static_cast<double>(per_class[c].size());
  }
  stats.s_global = pairwise_sum(phi) / static_cast<double>(phi.size());

  if (cfg.react_percentile) stats.react_clip = react_fit_threshold(train.features, *cfg.react_percentile);
  stats.validate();
  return stats;
}

void CalibrationStats::validate() const {
  const std::size_t k = mu.rows();
  const std::size_t d = mu.cols();
  if (k == 0 || d == 0) throw ValidationError("calibration stats are empty");
  if (w_col.size() != d) throw ValidationError("w_col length does not match the feature dimension");
  if (s_class.size() != k || class_counts.size() != k) {
    throw ValidationError("s_class/class_counts length does not match the class count");
  }
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ValidationError("temperature must be positive");
  auto finite = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  if (!finite(mu.data()) || !finite(w_col) || !finite(s_class) || !std::isfinite(s_global)) {
    throw ValidationError("calibration stats contain non-finite values");
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (class_counts[c] < 1) throw CalibrationError("empty class " + std::to_string(c));
  }
  if (react_clip && !std::isfinite(*react_clip)) throw ValidationError("react_clip is not finite");
}

void write_stats(const CalibrationStats& s, const std::filesystem::path& dir) {
  s.validate();
  std::vector<NamedTensor> entries = {
      {"mu", "mu.bin", Tensor::real({dim(s.mu.rows()), dim(s.mu.cols())}, s.mu.data())},
      {"w_col", "w_col.bin", Tensor::real({dim(s.w_col.size())}, s.w_col)},
      {"s_class", "s_class.bin", Tensor::real({dim(s.s_class.size())}, s.s_class)},
      {"s_global", "s_global.bin", Tensor::real({1}, {s.s_global})},
      {"temperature", "temperature.bin", Tensor::real({1}, {s.temperature})},
      {"class_counts", "class_counts.bin", Tensor::integer({dim(s.class_counts.size())}, s.class_counts)},
  };
  if (s.react_clip) entries.push_back({"react_clip", "react_clip.bin", Tensor::real({1}, {*s.react_clip})});
  write_container(dir, entries);
}

CalibrationStats read_stats(const std::filesystem::path& dir) {
  const auto t = read_container(dir, kStatsNames);
  CalibrationStats s;
  const Tensor& mu = need(t, "mu", DType::f32, 2);
  s.mu = Matrix(static_cast<std::size_t>(mu.shape[0]), static_cast<std::size_t>(mu.shape[1]), mu.reals);
  s.w_col = need(t, "w_col", DType::f32, 1).reals;
  s.s_class = need(t, "s_class", DType::f32, 1).reals;
  const Tensor& g = need(t, "s_global", DType::f32, 1);
  const Tensor& temp = need(t, "temperature", DType::f32, 1);
  if (g.reals.size() != 1 || temp.reals.size() != 1) {
    throw ValidationError("s_global and temperature must be scalars of shape [1]");
  }
  s.s_global = g.reals[0];
  s.temperature = temp.reals[0];
  s.class_counts = need(t, "class_counts", DType::i32, 1).ints;
  if (t.contains("react_clip")) {
    const Tensor& clip = need(t, "react_clip", DType::f32, 1);
    if (clip.reals.size() != 1) throw ValidationError("react_clip must be a scalar of shape [1]");
    s.react_clip = clip.reals[0];
  }
  s.validate();
  return s;
}

}  // namespace oodscore
