#include "oodscore/synth.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>

#include "oodscore/error.hpp"
#include "oodscore/rng.hpp"

namespace oodscore {

namespace {

std::vector<double> unit_vector(SplitMix64& rng, std::size_t dim) {
  std::vector<double> v(dim);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (auto& x : v) {
      x = rng.normal();
      norm += x * x;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  char* end = nullptr;
  errno = 0;
  const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  if (v.empty() || v[0] == '-' || end != v.c_str() + v.size() || errno != 0) {
    throw ValidationError("synth config: '" + key + "' must be a non-negative integer, got '" + v + "'");
  }
  return static_cast<std::size_t>(x);
}

double parse_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(x)) {
    throw ValidationError("synth config: '" + key + "' must be a finite number, got '" + v + "'");
  }
  return x;
}

std::string fmt_short(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

FeatureDataset finish(const ClassifierHead& head, Matrix features) {
  FeatureDataset ds;
  ds.logits = compute_logits(features, head);
  ds.features = std::move(features);
  ds.num_classes = head.num_classes();
  return ds;
}

}  // namespace

const char* ood_kind_name(OodKind kind) {
  switch (kind) {
    case OodKind::mean_shift: return "mean_shift";
    case OodKind::scale_shift: return "scale_shift";
    case OodKind::prototype_free: return "prototype_free";
  }
  return "?";
}

OodKind parse_ood_kind(const std::string& name) {
  for (OodKind k : {OodKind::mean_shift, OodKind::scale_shift, OodKind::prototype_free}) {
    if (name == ood_kind_name(k)) return k;
  }
  throw ValidationError("unknown ood_kind '" + name + "' (expected mean_shift|scale_shift|prototype_free)");
}

void SynthConfig::validate() const {
  if (num_classes < 2) throw ValidationError("synth config: K must be at least 2");
  if (dim < 1) throw ValidationError("synth config: d must be at least 1");
  if (n_per_class < 1) throw ValidationError("synth config: n_per_class must be at least 1");
  if (n_ood < 1) throw ValidationError("synth config: n_ood must be at least 1");
  if (!(proto_scale > 0.0) || !std::isfinite(proto_scale)) {
    throw ValidationError("synth config: proto_scale must be positive");
  }
  if (!(noise_sigma > 0.0) || !std::isfinite(noise_sigma)) {
    throw ValidationError("synth config: noise_sigma must be positive");
  }
  if (!(shift_mag >= 0.0) || !std::isfinite(shift_mag)) {
    throw ValidationError("synth config: shift_mag must be non-negative");
  }
}

SynthConfig SynthConfig::from_pairs(const std::map<std::string, std::string>& pairs) {
  SynthConfig cfg;
  for (const auto& [key, value] : pairs) {
    if (key == "K") cfg.num_classes = parse_size(key, value);
    else if (key == "d") cfg.dim = parse_size(key, value);
    else if (key == "n_per_class") cfg.n_per_class = parse_size(key, value);
    else if (key == "n_ood") cfg.n_ood = parse_size(key, value);
    else if (key == "proto_scale") cfg.proto_scale = parse_double(key, value);
    else if (key == "noise_sigma") cfg.noise_sigma = parse_double(key, value);
    else if (key == "ood_kind") cfg.ood_kind = parse_ood_kind(value);
    else if (key == "shift_mag") cfg.shift_mag = parse_double(key, value);
    else if (key == "seed") cfg.seed = parse_size(key, value);
    else throw ValidationError("synth config: unknown key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

ClassifierHead make_head(std::size_t num_classes, std::size_t dim, std::uint64_t seed) {
  if (num_classes < 1 || dim < 1) throw ValidationError("make_head: K and d must be positive");
  auto rng = SplitMix64::stream(seed, "head");
  ClassifierHead head;
  head.W = Matrix(num_classes, dim);
  for (std::size_t j = 0; j < num_classes; ++j) {
    const auto v = unit_vector(rng, dim);
    std::copy(v.begin(), v.end(), head.W.row(j).begin());
  }
  head.bias.assign(num_classes, 0.0);
  return head;
}

FeatureDataset sample_id(const ClassifierHead& head, const SynthConfig& cfg, const std::string& stream) {
  cfg.validate();
  const std::size_t k = head.num_classes();
  const std::size_t d = head.dim();
  auto rng = SplitMix64::stream(cfg.seed, stream);
  Matrix features(k * cfg.n_per_class, d);
  std::vector<std::int32_t> labels(features.rows());
  std::size_t row = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const auto proto = head.W.row(c);
    for (std::size_t s = 0; s < cfg.n_per_class; ++s, ++row) {
      auto f = features.row(row);
      for (std::size_t i = 0; i < d; ++i) f[i] = cfg.proto_scale * proto[i] + cfg.noise_sigma * rng.normal();
      labels[row] = static_cast<std::int32_t>(c);
    }
  }
  FeatureDataset ds = finish(head, std::move(features));
  ds.labels = std::move(labels);
  return ds;
}

FeatureDataset sample_ood(const ClassifierHead& head, const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t k = head.num_classes();
  const std::size_t d = head.dim();
  auto rng = SplitMix64::stream(cfg.seed, "ood");
  Matrix features(cfg.n_ood, d);
  std::vector<double> noise(d);
  for (std::size_t row = 0; row < cfg.n_ood; ++row) {
    for (auto& z : noise) z = rng.normal();
    const auto direction = unit_vector(rng, d);
    const auto proto = head.W.row(row % k);
    auto f = features.row(row);
    for (std::size_t i = 0; i < d; ++i) {
      switch (cfg.ood_kind) {
        case OodKind::mean_shift:
          f[i] = cfg.proto_scale * proto[i] + cfg.noise_sigma * noise[i] + cfg.shift_mag * direction[i];
          break;
        case OodKind::scale_shift:
          f[i] = cfg.proto_scale * proto[i] + cfg.noise_sigma * (1.0 + cfg.shift_mag) * noise[i];
          break;
        case OodKind::prototype_free:
          f[i] = cfg.shift_mag * direction[i] + cfg.noise_sigma * noise[i];
          break;
      }
    }
  }
  return finish(head, std::move(features));
}

SyntheticData make_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  SyntheticData data;
  data.head = make_head(cfg.num_classes, cfg.dim, cfg.seed);
  data.train = sample_id(data.head, cfg, "id.train");
  data.test = sample_id(data.head, cfg, "id.test");
  data.ood = sample_ood(data.head, cfg);
  return data;
}

std::string ood_dataset_name(const SynthConfig& cfg) {
  return std::string(ood_kind_name(cfg.ood_kind)) + "_delta" + fmt_short(cfg.shift_mag);
}

ExperimentResult run_synthetic_experiment(const SynthConfig& cfg, const std::vector<MethodSpec>& methods,
                                          double tpr_target, unsigned threads) {
  const SyntheticData data = make_synthetic(cfg);
  std::map<double, CalibrationStats> stats_by_temperature;
  auto stats_for = [&](double temperature) -> const CalibrationStats& {
    auto it = stats_by_temperature.find(temperature);
    if (it == stats_by_temperature.end()) {
      CalibrationConfig cc;
      cc.temperature = temperature;
      cc.grouping = Grouping::labels;
      it = stats_by_temperature.emplace(temperature, fit_calibration(data.train, data.head, cc)).first;
    }
    return it->second;
  };

  ExperimentResult out;
  const std::string ood_name = ood_dataset_name(cfg);
  for (const auto& spec : methods) {
    const double t = spec.method == Method::gafd_cc ? spec.gafd.temperature : spec.temperature;
    const CalibrationStats& stats = stats_for(t);
    auto id = score_batch(data.test, &data.head, &stats, spec, threads);
    auto ood = score_batch(data.ood, &data.head, &stats, spec, threads);
    out.rows.push_back({spec.label(), "id_test", ood_name, evaluate(id.values, ood.values, tpr_target)});
    out.id_scores.push_back(std::move(id));
    out.ood_scores.push_back(std::move(ood));
  }
  return out;
}

}  // namespace oodscore
