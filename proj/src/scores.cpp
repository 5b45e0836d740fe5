#include "oodscore/scores.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <thread>

#include "json.hpp"
#include "oodscore/container.hpp"
#include "oodscore/error.hpp"

namespace oodscore {

namespace {

constexpr const char* kSidecar = "method.json";

std::string fmt_param(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // Prefer the shortest representation that round-trips.
  for (int prec = 1; prec <= 17; ++prec) {
    char shorter[32];
    std::snprintf(shorter, sizeof shorter, "%.*g", prec, v);
    if (std::strtod(shorter, nullptr) == v) return shorter;
  }
  return buf;
}

void require_finite_param(double v, const char* name) {
  if (!std::isfinite(v)) throw ValidationError(std::string(name) + " must be finite");
}

}  // namespace

void GafdParams::validate() const {
  require_finite_param(lambda, "lambda");
  require_finite_param(b_coef, "b");
  if (lambda < 0.0 || lambda > 1.0) throw ValidationError("lambda out of range [0, 1]: " + fmt_param(lambda));
  if (b_coef < 0.0) throw ValidationError("b out of range (must be >= 0): " + fmt_param(b_coef));
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ValidationError("temperature must be positive: " + fmt_param(temperature));
  }
}

DecoupledScores decouple(std::span<const double> f, std::span<const double> mu_c,
                         std::span<const double> w_col) {
  if (f.size() != mu_c.size() || f.size() != w_col.size()) {
    throw ValidationError("decouple: feature, class mean and weight sums differ in length");
  }
  double norm = 0.0;
  for (double v : f) norm += std::abs(v);
  if (norm == 0.0) throw ValidationError("degenerate input: ||f||_1 == 0");

  double plus = 0.0, minus = 0.0, zero = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double dev = f[i] - mu_c[i];
    const double product = w_col[i] * dev;
    if (product > 0.0) {
      plus += std::abs(dev);
    } else if (product < 0.0) {
      minus += std::abs(dev);
    } else {
      zero += std::abs(dev);
    }
  }
  return {plus / norm, minus / norm, zero / norm};
}

double gafd_cc_score(std::span<const double> f, std::span<const double> logits_row,
                     const CalibrationStats& stats, const GafdParams& params,
                     std::size_t predicted_class) {
  if (predicted_class >= stats.num_classes()) {
    throw ValidationError("no calibration statistics for class " + std::to_string(predicted_class));
  }
  if (stats.class_counts[predicted_class] < 1) {
    throw CalibrationError("empty class " + std::to_string(predicted_class));
  }
  if (f.size() != stats.dim()) {
    throw ValidationError("feature length " + std::to_string(f.size()) +
                          " does not match calibration dimension " + std::to_string(stats.dim()));
  }
  const auto parts = decouple(f, stats.mu.row(predicted_class), stats.w_col);
  const double s_sample = energy_confidence(logits_row, params.temperature);
  const double s_class = stats.s_class[predicted_class];
  const double plus_den = s_sample + params.b_coef * s_class;
  const double minus_den = stats.s_global + params.b_coef * s_class;
  if (std::abs(plus_den) < kSingularityThreshold) {
    throw ValidationError("singular denominator s_sample + b*s_class = " + fmt_param(plus_den));
  }
  if (std::abs(minus_den) < kSingularityThreshold) {
    throw ValidationError("singular denominator s_global + b*s_class = " + fmt_param(minus_den));
  }
  return params.lambda * parts.xi_plus / plus_den + (1.0 - params.lambda) * parts.xi_minus / minus_den;
}

double gafd_cc_score(std::span<const double> f, std::span<const double> logits_row,
                     const CalibrationStats& stats, const GafdParams& params) {
  return gafd_cc_score(f, logits_row, stats, params, static_cast<std::size_t>(argmax(logits_row)));
}

double msp_score(std::span<const double> logits_row) {
  double peak = -std::numeric_limits<double>::infinity();
  for (double s : logits_row) peak = std::max(peak, s);
  double acc = 0.0;
  for (double s : logits_row) acc += std::exp(s - peak);
  return 1.0 / acc;
}

double maxlogit_score(std::span<const double> logits_row) {
  return *std::max_element(logits_row.begin(), logits_row.end());
}

double energy_detection_score(std::span<const double> logits_row, double temperature) {
  return -temperature * energy_confidence(logits_row, temperature);
}

double react_score(std::span<const double> f, const ClassifierHead& head, double clip_threshold,
                   double temperature) {
  if (!(clip_threshold > 0.0)) throw ValidationError("react clip threshold must be positive");
  if (f.size() != head.dim()) throw ValidationError("react: feature length does not match W");
  std::vector<double> logits(head.num_classes());
  for (std::size_t j = 0; j < logits.size(); ++j) {
    const auto w = head.W.row(j);
    double acc = head.bias[j];
    for (std::size_t i = 0; i < f.size(); ++i) acc += w[i] * std::min(f[i], clip_threshold);
    logits[j] = acc;
  }
  return energy_detection_score(logits, temperature);
}

double react_fit_threshold(const Matrix& train_features, double percentile) {
  if (train_features.empty()) throw ValidationError("react_fit_threshold: empty input");
  if (!(percentile > 0.0 && percentile <= 100.0)) {
    throw ValidationError("percentile must lie in (0, 100]: " + fmt_param(percentile));
  }
  std::vector<double> values = train_features.data();
  const auto n = values.size();
  auto index = static_cast<std::size_t>(std::floor(percentile / 100.0 * static_cast<double>(n - 1)));
  index = std::min(index, n - 1);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(index), values.end());
  return values[index];
}

const char* method_name(Method m) {
  switch (m) {
    case Method::msp: return "msp";
    case Method::maxlogit: return "maxlogit";
    case Method::energy: return "energy";
    case Method::react: return "react";
    case Method::gafd_cc: return "gafd_cc";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  for (Method m : {Method::msp, Method::maxlogit, Method::energy, Method::react, Method::gafd_cc}) {
    if (name == method_name(m)) return m;
  }
  throw ValidationError("unknown method '" + name + "' (expected msp|maxlogit|energy|react|gafd_cc)");
}

std::string MethodSpec::label() const {
  switch (method) {
    case Method::msp:
    case Method::maxlogit:
      return method_name(method);
    case Method::energy:
      return "energy[T=" + fmt_param(temperature) + "]";
    case Method::react:
      return "react[clip=" + (react_clip ? fmt_param(*react_clip) : std::string("stats")) +
             ";T=" + fmt_param(temperature) + "]";
    case Method::gafd_cc:
      return "gafd_cc[lambda=" + fmt_param(gafd.lambda) + ";b=" + fmt_param(gafd.b_coef) +
             ";T=" + fmt_param(gafd.temperature) + "]";
  }
  return "?";
}

std::string MethodSpec::params_json() const {
  nlohmann::ordered_json j;
  j["method"] = method_name(method);
  switch (method) {
    case Method::msp:
    case Method::maxlogit:
      break;
    case Method::energy:
      j["temperature"] = temperature;
      break;
    case Method::react:
      j["temperature"] = temperature;
      if (react_clip) j["clip"] = *react_clip;
      break;
    case Method::gafd_cc:
      j["lambda"] = gafd.lambda;
      j["b"] = gafd.b_coef;
      j["temperature"] = gafd.temperature;
      break;
  }
  return j.dump();
}

MethodSpec MethodSpec::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("cannot parse method record: ") + e.what());
  }
  if (!j.is_object() || !j.contains("method") || !j["method"].is_string()) {
    throw ValidationError("method record lacks a 'method' name");
  }
  const std::set<std::string> known = {"method", "temperature", "clip", "lambda", "b"};
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ValidationError("unknown key '" + key + "' in method record");
    if (key != "method" && !value.is_number()) throw ValidationError("'" + key + "' must be a number");
  }
  MethodSpec spec;
  spec.method = parse_method(j["method"].get<std::string>());
  if (j.contains("temperature")) spec.temperature = j["temperature"].get<double>();
  if (j.contains("clip")) spec.react_clip = j["clip"].get<double>();
  if (j.contains("lambda")) spec.gafd.lambda = j["lambda"].get<double>();
  if (j.contains("b")) spec.gafd.b_coef = j["b"].get<double>();
  spec.gafd.temperature = spec.temperature;
  return spec;
}

ScoreVector score_batch(const FeatureDataset& ds, const ClassifierHead* head,
                        const CalibrationStats* stats, const MethodSpec& spec, unsigned threads) {
  if (ds.size() == 0) throw ValidationError("empty dataset");
  ds.validate(head);

  std::optional<Matrix> computed;
  if (!ds.logits && spec.method != Method::react) {
    if (!head) throw ValidationError("dataset has no logits and no classifier head to derive them");
    computed = compute_logits(ds.features, *head);
  }
  const Matrix* logits = ds.logits ? &*ds.logits : computed ? &*computed : nullptr;

  double clip = 0.0;
  std::vector<std::int32_t> predicted;
  switch (spec.method) {
    case Method::msp:
    case Method::maxlogit:
      break;
    case Method::energy:
      if (!(spec.temperature > 0.0)) throw ValidationError("temperature must be positive");
      break;
    case Method::react:
      if (!head) throw ValidationError("react requires a classifier head");
      if (!(spec.temperature > 0.0)) throw ValidationError("temperature must be positive");
      if (spec.react_clip) {
        clip = *spec.react_clip;
      } else if (stats && stats->react_clip) {
        clip = *stats->react_clip;
      } else {
        throw ValidationError("react requires a clip threshold (flag or calibration stats)");
      }
      if (!(clip > 0.0)) throw ValidationError("react clip threshold must be positive");
      break;
    case Method::gafd_cc:
      spec.gafd.validate();
      if (!stats) throw ValidationError("gafd_cc requires calibration statistics");
      if (stats->dim() != ds.dim()) {
        throw ValidationError("calibration dimension " + std::to_string(stats->dim()) +
                              " does not match dataset d=" + std::to_string(ds.dim()));
      }
      if (stats->num_classes() != logits->cols()) {
        throw ValidationError("calibration has " + std::to_string(stats->num_classes()) +
                              " classes but logits have " + std::to_string(logits->cols()));
      }
      if (spec.gafd.temperature != stats->temperature) {
        throw ValidationError("temperature mismatch: stats were fitted at T=" +
                              fmt_param(stats->temperature) + ", scoring requested T=" +
                              fmt_param(spec.gafd.temperature));
      }
      if (ds.predicted) {
        predicted = *ds.predicted;
      } else {
        predicted.resize(ds.size());
        for (std::size_t i = 0; i < ds.size(); ++i) predicted[i] = argmax(logits->row(i));
      }
      break;
  }

  const std::size_t n = ds.size();
  ScoreVector out{spec, std::vector<double>(n, 0.0)};
  std::vector<std::optional<std::string>> errors(n);

  auto score_row = [&](std::size_t i) {
    try {
      double v = 0.0;
      switch (spec.method) {
        case Method::msp: v = msp_score(logits->row(i)); break;
        case Method::maxlogit: v = maxlogit_score(logits->row(i)); break;
        case Method::energy: v = energy_detection_score(logits->row(i), spec.temperature); break;
        case Method::react: v = react_score(ds.features.row(i), *head, clip, spec.temperature); break;
        case Method::gafd_cc:
          v = gafd_cc_score(ds.features.row(i), logits->row(i), *stats, spec.gafd,
                            static_cast<std::size_t>(predicted[i]));
          break;
      }
      if (!std::isfinite(v)) throw ValidationError("non-finite score");
      out.values[i] = v;
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  };

  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n)));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) score_row(i);
  } else {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (n + workers - 1) / workers;
    for (unsigned w = 0; w < workers; ++w) {
      const std::size_t begin = w * chunk;
      const std::size_t end = std::min(n, begin + chunk);
      if (begin >= end) break;
      pool.emplace_back([&, begin, end] {
        for (std::size_t i = begin; i < end; ++i) score_row(i);
      });
    }
  }

  std::vector<RowFailure> failures;
  for (std::size_t i = 0; i < n; ++i) {
    if (errors[i]) failures.push_back({i, *errors[i]});
  }
  if (!failures.empty()) throw RowFailureError(std::move(failures));
  return out;
}

void write_scores(const ScoreVector& scores, const std::string& dataset_name,
                  const std::filesystem::path& dir) {
  if (scores.values.empty()) throw ValidationError("empty score vector");
  nlohmann::ordered_json sidecar = nlohmann::ordered_json::parse(scores.method.params_json());
  nlohmann::ordered_json record;
  record["method"] = sidecar;
  record["label"] = scores.method.label();
  record["dataset"] = dataset_name;
  record["n"] = scores.values.size();
  write_container(dir,
                  {{"scores", "scores.bin",
                    Tensor::real({static_cast<std::int64_t>(scores.values.size())}, scores.values)}},
                  {{kSidecar, record.dump(2) + "\n"}});
}

StoredScores read_scores(const std::filesystem::path& dir) {
  const auto tensors = read_container(dir, {"scores"});
  auto it = tensors.find("scores");
  if (it == tensors.end()) throw ValidationError("score container has no 'scores' tensor");
  if (it->second.dtype != DType::f32 || it->second.shape.size() != 1) {
    throw ValidationError("'scores' must be a 1-D f32 tensor");
  }
  const auto sidecar_path = dir / kSidecar;
  if (!std::filesystem::exists(sidecar_path)) throw IoError("'" + sidecar_path.string() + "' not found");
  nlohmann::json record;
  try {
    record = nlohmann::json::parse(read_text_file(sidecar_path));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("cannot parse ") + kSidecar + ": " + e.what());
  }
  if (!record.is_object() || !record.contains("method") || !record.contains("dataset") ||
      !record["dataset"].is_string() || !record.contains("n") || !record["n"].is_number_unsigned()) {
    throw ValidationError(std::string(kSidecar) + " is missing required fields");
  }
  StoredScores out;
  out.scores.method = MethodSpec::from_json(record["method"].dump());
  out.scores.values = it->second.reals;
  out.dataset = record["dataset"].get<std::string>();
  if (record["n"].get<std::size_t>() != out.scores.values.size()) {
    throw ValidationError(std::string(kSidecar) + " count does not match the scores tensor");
  }
  return out;
}

}  // namespace oodscore
