#include "oodscore/error.hpp"

namespace oodscore {

namespace {

std::string summarize(const std::vector<RowFailure>& failures) {
  std::string msg = std::to_string(failures.size()) + " row(s) failed";
  if (!failures.empty()) {
    msg += "; first: row " + std::to_string(failures.front().row) + ": " + failures.front().message;
  }
  return msg;
}

}  // namespace

RowFailureError::RowFailureError(std::vector<RowFailure> failures)
    : std::runtime_error(summarize(failures)), failures_(std::move(failures)) {}

}  // namespace oodscore
