#include "oodscore/report.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "oodscore/error.hpp"

namespace oodscore {

namespace {

void check_field(const std::string& s, const char* what) {
  if (s.empty() || s.find_first_of(",\n\r\"") != std::string::npos) {
    throw ValidationError(std::string(what) + " '" + s + "' is empty or contains CSV metacharacters");
  }
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_real(const std::string& s, std::size_t line_no) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw ValidationError("line " + std::to_string(line_no) + ": '" + s + "' is not a number");
  }
  return v;
}

std::size_t parse_count(const std::string& s, std::size_t line_no) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ValidationError("line " + std::to_string(line_no) + ": '" + s + "' is not a count");
  }
  return v;
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

}  // namespace

std::string csv_header() { return "method,dataset_id,dataset_ood,auroc,fpr95,threshold,n_id,n_ood\n"; }

std::string format_csv_row(const MetricRow& row) {
  check_field(row.method, "method");
  check_field(row.dataset_id, "dataset_id");
  check_field(row.dataset_ood, "dataset_ood");
  char buf[128];
  std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,%zu,%zu\n", row.result.auroc, row.result.fpr,
                row.result.threshold, row.result.n_id, row.result.n_ood);
  return row.method + "," + row.dataset_id + "," + row.dataset_ood + "," + buf;
}

std::vector<MetricRow> parse_metrics_csv(const std::string& text) {
  std::vector<MetricRow> rows;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.rfind("method,", 0) == 0) continue;
    const auto f = split(line, ',');
    if (f.size() != 8) {
      throw ValidationError("line " + std::to_string(line_no) + ": expected 8 fields, found " +
                            std::to_string(f.size()));
    }
    MetricRow r;
    r.method = f[0];
    r.dataset_id = f[1];
    r.dataset_ood = f[2];
    r.result.auroc = parse_real(f[3], line_no);
    r.result.fpr = parse_real(f[4], line_no);
    r.result.threshold = parse_real(f[5], line_no);
    r.result.n_id = parse_count(f[6], line_no);
    r.result.n_ood = parse_count(f[7], line_no);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string render_markdown_report(const std::vector<MetricRow>& rows, bool best_bold) {
  std::map<std::string, std::map<std::string, EvalResult>> table;
  std::set<std::string> datasets;
  for (const auto& r : rows) {
    if (!table[r.method].emplace(r.dataset_ood, r.result).second) {
      throw ValidationError("duplicate key (" + r.method + ", " + r.dataset_ood + ")");
    }
    datasets.insert(r.dataset_ood);
  }
  if (table.empty()) throw ValidationError("no metric rows to report");

  std::vector<std::string> columns(datasets.begin(), datasets.end());
  const bool with_average = columns.size() > 1;

  // cells[method][2 * column + {0: auroc, 1: fpr}]
  const std::size_t ncols = 2 * (columns.size() + (with_average ? 1 : 0));
  std::map<std::string, std::vector<std::optional<double>>> cells;
  for (const auto& [method, by_ds] : table) {
    auto& row = cells[method];
    row.assign(ncols, std::nullopt);
    double sum_auroc = 0.0, sum_fpr = 0.0;
    for (std::size_t c = 0; c < columns.size(); ++c) {
      auto it = by_ds.find(columns[c]);
      if (it == by_ds.end()) continue;
      row[2 * c] = it->second.auroc;
      row[2 * c + 1] = it->second.fpr;
      sum_auroc += it->second.auroc;
      sum_fpr += it->second.fpr;
    }
    if (with_average && by_ds.size() == columns.size()) {
      row[ncols - 2] = sum_auroc / static_cast<double>(columns.size());
      row[ncols - 1] = sum_fpr / static_cast<double>(columns.size());
    }
  }

  std::vector<std::optional<double>> best(ncols);
  for (std::size_t k = 0; k < ncols; ++k) {
    const bool higher_better = k % 2 == 0;
    for (const auto& [_, row] : cells) {
      if (!row[k]) continue;
      if (!best[k] || (higher_better ? *row[k] > *best[k] : *row[k] < *best[k])) best[k] = row[k];
    }
  }

  std::ostringstream out;
  out << "| Method |";
  for (const auto& c : columns) out << ' ' << c << " AUROC↑ | " << c << " FPR95↓ |";
  if (with_average) out << " Average AUROC↑ | Average FPR95↓ |";
  out << "\n|---|";
  for (std::size_t k = 0; k < ncols; ++k) out << "---:|";
  out << '\n';
  for (const auto& [method, row] : cells) {
    out << "| " << method << " |";
    for (std::size_t k = 0; k < ncols; ++k) {
      if (!row[k]) {
        out << " - |";
        continue;
      }
      const std::string v = pct(*row[k]);
      out << ' ' << (best_bold && *row[k] == *best[k] ? "**" + v + "**" : v) << " |";
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace oodscore
