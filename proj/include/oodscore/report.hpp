#pragma once

#include <string>
#include <vector>

#include "oodscore/metrics.hpp"

namespace oodscore {

/// One evaluated (method, ID dataset, OOD dataset) triple.
struct MetricRow {
  std::string method;
  std::string dataset_id;
  std::string dataset_ood;
  EvalResult result;
};

/// "method,dataset_id,dataset_ood,auroc,fpr95,threshold,n_id,n_ood"
std::string csv_header();

/// Reals in fixed 6-decimal format, newline-terminated.
std::string format_csv_row(const MetricRow& row);

/// Parses rows, skipping blank lines and header lines. Parsed results carry
/// the 6-decimal values as printed.
std::vector<MetricRow> parse_metrics_csv(const std::string& text);

/// Markdown table with one row per method (sorted) and an AUROC/FPR95 column
/// pair per OOD dataset (sorted), values in percent. An Average pair is added
/// when there is more than one dataset. With `best_bold`, the best value of
/// each column (max AUROC, min FPR95) is wrapped in **...**.
/// Throws ValidationError on a duplicate (method, dataset_ood) key.
std::string render_markdown_report(const std::vector<MetricRow>& rows, bool best_bold);

}  // namespace oodscore
