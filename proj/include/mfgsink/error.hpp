#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mfgsink {

enum class ErrorKind {
  ZeroMass,
  GridMismatch,
  DegenerateKernel,
  Infeasible,
  NonConvexDirect,
  StaleMessages,
  MaxIterations,
  ParseError,
  ValidationError,
  IoError,
  SizeExceeded,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ZeroMass: return "ZeroMass";
    case ErrorKind::GridMismatch: return "GridMismatch";
    case ErrorKind::DegenerateKernel: return "DegenerateKernel";
    case ErrorKind::Infeasible: return "Infeasible";
    case ErrorKind::NonConvexDirect: return "NonConvexDirect";
    case ErrorKind::StaleMessages: return "StaleMessages";
    case ErrorKind::MaxIterations: return "MaxIterations";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::ValidationError: return "ValidationError";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::SizeExceeded: return "SizeExceeded";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a machine-readable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace mfgsink
