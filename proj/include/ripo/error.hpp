#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ripo {

enum class ErrorKind {
  kDimension,
  kInvalidArgument,
  kDomain,
  kIo,
  kDivergence,
};

std::string_view to_string(ErrorKind kind);

// Every failure the library reports carries a machine-readable kind so the
// CLI can emit a structured error record.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace ripo
