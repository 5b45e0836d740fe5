#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace oodscore {

// Malformed or inconsistent input. The CLI maps this to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Filesystem failure (missing file, unwritable directory). Exit code 3.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RowFailure {
  std::size_t row;
  std::string message;
};

// One or more rows of a batch could not be scored. Exit code 4.
class RowFailureError : public std::runtime_error {
 public:
  explicit RowFailureError(std::vector<RowFailure> failures);

  const std::vector<RowFailure>& failures() const noexcept { return failures_; }

 private:
  std::vector<RowFailure> failures_;
};

}  // namespace oodscore

namespace oodscore {

class CalibrationError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

}  // namespace oodscore
