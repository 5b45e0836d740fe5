#include "oodscore/datastore.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "oodscore/container.hpp"
#include "oodscore/error.hpp"

namespace oodscore {

namespace {

const std::set<std::string> kDatasetNames = {"features", "logits", "labels", "predicted", "W", "bias"};

void require_finite(std::span<const double> values, const char* what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw ValidationError(std::string(what) + " contains a non-finite value at flat index " +
                            std::to_string(i));
    }
  }
}

void check_classes(const std::vector<std::int32_t>& v, std::size_t n, std::size_t k,
                   const char* what) {
  if (v.size() != n) {
    throw ValidationError(std::string(what) + " has " + std::to_string(v.size()) +
                          " entries, expected " + std::to_string(n));
  }
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] < 0 || (k > 0 && static_cast<std::size_t>(v[i]) >= k)) {
      throw ValidationError(std::string(what) + "[" + std::to_string(i) + "] = " +
                            std::to_string(v[i]) + " is outside [0, " +
                            (k > 0 ? std::to_string(k) : std::string("K")) + ")");
    }
  }
}

const Tensor& expect(const std::map<std::string, Tensor>& tensors, const std::string& name,
                     DType dtype, std::size_t rank) {
  const Tensor& t = tensors.at(name);
  if (t.dtype != dtype) {
    throw ValidationError("tensor '" + name + "' must have dtype " + dtype_name(dtype) +
                          ", found " + dtype_name(t.dtype));
  }
  if (t.shape.size() != rank) {
    throw ValidationError("tensor '" + name + "' must have rank " + std::to_string(rank) +
                          ", found " + std::to_string(t.shape.size()));
  }
  return t;
}

Matrix to_matrix(const Tensor& t) {
  return Matrix(static_cast<std::size_t>(t.shape[0]), static_cast<std::size_t>(t.shape[1]), t.reals);
}

std::int64_t dim(std::size_t v) { return static_cast<std::int64_t>(v); }

}  // namespace

void ClassifierHead::validate() const {
  if (W.rows() == 0 || W.cols() == 0) throw ValidationError("classifier head W is empty");
  if (bias.size() != W.rows()) {
    throw ValidationError("classifier head: bias has " + std::to_string(bias.size()) +
                          " entries but W has " + std::to_string(W.rows()) + " rows");
  }
  require_finite(W.data(), "W");
  require_finite(bias, "bias");
}

std::int32_t argmax(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j) {
    if (row[j] > row[best]) best = j;
  }
  return static_cast<std::int32_t>(best);
}

std::vector<std::int32_t> FeatureDataset::predicted_classes() const {
  if (predicted) return *predicted;
  if (!logits) throw ValidationError("dataset has neither predicted classes nor logits");
  std::vector<std::int32_t> out(logits->rows());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = argmax(logits->row(i));
  return out;
}

void FeatureDataset::validate(const ClassifierHead* head) const {
  const std::size_t n = features.rows();
  const std::size_t d = features.cols();
  if (n == 0) throw ValidationError("empty dataset");
  if (d == 0) throw ValidationError("features have zero dimension");
  require_finite(features.data(), "features");

  std::size_t k = num_classes;
  if (head) {
    head->validate();
    if (head->dim() != d) {
      throw ValidationError("W has " + std::to_string(head->dim()) + " columns but features have d=" +
                            std::to_string(d));
    }
    if (k != 0 && k != head->num_classes()) {
      throw ValidationError("num_classes does not match the classifier head");
    }
    k = head->num_classes();
  }
  if (logits) {
    if (logits->rows() != n) {
      throw ValidationError("logits have " + std::to_string(logits->rows()) + " rows, expected N=" +
                            std::to_string(n));
    }
    if (k != 0 && logits->cols() != k) {
      throw ValidationError("logits have " + std::to_string(logits->cols()) + " columns, expected K=" +
                            std::to_string(k));
    }
    k = logits->cols();
    require_finite(logits->data(), "logits");
  }
  if ((logits || head) && k < 2) throw ValidationError("need at least 2 classes, found " + std::to_string(k));
  if (!logits && !head && num_classes != 0) {
    throw ValidationError("num_classes is set without logits or a classifier head");
  }
  if (labels) check_classes(*labels, n, k, "labels");
  if (predicted) check_classes(*predicted, n, k, "predicted");
}

LoadedDataset read_dataset(const std::filesystem::path& dir) {
  const auto tensors = read_container(dir, kDatasetNames);
  if (!tensors.contains("features")) throw ValidationError("container has no 'features' tensor");
  if (tensors.contains("W") != tensors.contains("bias")) {
    throw ValidationError("'W' and 'bias' must be present together");
  }

  LoadedDataset out;
  FeatureDataset& ds = out.dataset;
  ds.features = to_matrix(expect(tensors, "features", DType::f32, 2));
  if (tensors.contains("logits")) ds.logits = to_matrix(expect(tensors, "logits", DType::f32, 2));
  if (tensors.contains("labels")) ds.labels = expect(tensors, "labels", DType::i32, 1).ints;
  if (tensors.contains("predicted")) ds.predicted = expect(tensors, "predicted", DType::i32, 1).ints;
  if (tensors.contains("W")) {
    ClassifierHead head;
    head.W = to_matrix(expect(tensors, "W", DType::f32, 2));
    head.bias = expect(tensors, "bias", DType::f32, 1).reals;
    out.head = std::move(head);
  }
  if (out.head) {
    ds.num_classes = out.head->num_classes();
  } else if (ds.logits) {
    ds.num_classes = ds.logits->cols();
  }
  ds.validate(out.head ? &*out.head : nullptr);
  return out;
}

void write_dataset(const FeatureDataset& ds, const ClassifierHead* head,
                   const std::filesystem::path& dir) {
  ds.validate(head);
  std::vector<NamedTensor> entries;
  entries.push_back({"features", "features.bin",
                     Tensor::real({dim(ds.size()), dim(ds.dim())}, ds.features.data())});
  if (ds.logits) {
    entries.push_back({"logits", "logits.bin",
                       Tensor::real({dim(ds.logits->rows()), dim(ds.logits->cols())}, ds.logits->data())});
  }
  if (ds.labels) {
    entries.push_back({"labels", "labels.bin", Tensor::integer({dim(ds.labels->size())}, *ds.labels)});
  }
  if (ds.predicted) {
    entries.push_back(
        {"predicted", "predicted.bin", Tensor::integer({dim(ds.predicted->size())}, *ds.predicted)});
  }
  if (head) {
    entries.push_back({"W", "w.bin", Tensor::real({dim(head->W.rows()), dim(head->W.cols())}, head->W.data())});
    entries.push_back({"bias", "bias.bin", Tensor::real({dim(head->bias.size())}, head->bias)});
  }
  write_container(dir, entries);
}

Matrix compute_logits(const Matrix& features, const ClassifierHead& head) {
  if (features.cols() != head.dim()) {
    throw ValidationError("shape mismatch: features have d=" + std::to_string(features.cols()) +
                          " but W has " + std::to_string(head.dim()) + " columns");
  }
  if (head.bias.size() != head.num_classes()) throw ValidationError("shape mismatch: bias length differs from K");
  const std::size_t k = head.num_classes();
  Matrix out(features.rows(), k);
  for (std::size_t i = 0; i < features.rows(); ++i) {
    const auto f = features.row(i);
    for (std::size_t j = 0; j < k; ++j) {
      const auto w = head.W.row(j);
      double acc = head.bias[j];
      for (std::size_t t = 0; t < f.size(); ++t) acc += w[t] * f[t];
      out(i, j) = acc;
    }
  }
  return out;
}

DerivedLogits derive_logits(const FeatureDataset& ds, const ClassifierHead& head, double tolerance) {
  DerivedLogits out{compute_logits(ds.features, head), std::nullopt};
  if (ds.logits) {
    const Matrix& stored = *ds.logits;
    if (stored.rows() != out.logits.rows() || stored.cols() != out.logits.cols()) {
      throw ValidationError("shape mismatch: stored logits differ in shape from W * features");
    }
    LogitConsistency report;
    for (std::size_t i = 0; i < stored.rows(); ++i) {
      const auto fresh = out.logits.row(i);
      double scale = 0.0;
      for (double v : fresh) scale = std::max(scale, std::abs(v));
      scale = std::max(scale, 1e-12);
      for (std::size_t j = 0; j < fresh.size(); ++j) {
        const double dev = std::abs(stored(i, j) - fresh[j]) / scale;
        if (dev > report.max_relative_deviation) {
          report.max_relative_deviation = dev;
          report.worst_row = i;
        }
      }
    }
    report.consistent = report.max_relative_deviation <= tolerance;
    out.consistency = report;
  }
  return out;
}

}  // namespace oodscore
