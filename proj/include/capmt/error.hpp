#pragma once

#include <stdexcept>
#include <string>

namespace capmt {

// All library failures derive from Error and carry a stable machine-readable
// code; the CLI prints "error:<code>: <message>" and exits nonzero.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& m) : Error("E_DIM", m) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error("E_CONFIG", m) {}
};
struct InputError : Error {
  explicit InputError(const std::string& m) : Error("E_INPUT", m) {}
};
struct FormatError : Error {
  explicit FormatError(const std::string& m) : Error("E_FORMAT", m) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& m) : Error("E_NUMERIC", m) {}
};
struct UsageError : Error {
  explicit UsageError(const std::string& m) : Error("E_USAGE", m) {}
};
struct IoError : Error {
  explicit IoError(const std::string& m) : Error("E_IO", m) {}
};

}  // namespace capmt
