#pragma once

#include <stdexcept>
#include <string>

namespace dcrnet {

/// Error categories. The numeric values double as CLI exit codes.
enum class ErrorKind : int {
  Usage = 1,
  Config = 2,
  Data = 3,
  Numeric = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string message)
      : std::runtime_error(std::move(message)), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct UsageError : Error {
  explicit UsageError(std::string m) : Error(ErrorKind::Usage, std::move(m)) {}
};

struct ConfigError : Error {
  explicit ConfigError(std::string m) : Error(ErrorKind::Config, std::move(m)) {}
};

struct DataError : Error {
  explicit DataError(std::string m) : Error(ErrorKind::Data, std::move(m)) {}
};

struct NumericError : Error {
  explicit NumericError(std::string m) : Error(ErrorKind::Numeric, std::move(m)) {}
};

/// Shape/size mismatch between tensors or between a tensor and an operator.
struct DimensionError : UsageError {
  explicit DimensionError(std::string m) : UsageError(std::move(m)) {}
};

}  // namespace dcrnet
