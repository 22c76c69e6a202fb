#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace femnet {

enum class ErrorCode {
  DegenerateInput,
  EmptyMesh,
  InvalidMesh,
  DegenerateCell,
  IsolatedNode,
  ShapeMismatch,
  GraphNotRecorded,
  NonFiniteOutput,
  TransportAbsent,
  MaxNfeExceeded,
  StepUnderflow,
  InvalidSpec,
  KTooLarge,
  ZeroVariance,
  Io,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::EmptyMesh: return "EmptyMesh";
    case ErrorCode::InvalidMesh: return "InvalidMesh";
    case ErrorCode::DegenerateCell: return "DegenerateCell";
    case ErrorCode::IsolatedNode: return "IsolatedNode";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::GraphNotRecorded: return "GraphNotRecorded";
    case ErrorCode::NonFiniteOutput: return "NonFiniteOutput";
    case ErrorCode::TransportAbsent: return "TransportAbsent";
    case ErrorCode::MaxNfeExceeded: return "MaxNfeExceeded";
    case ErrorCode::StepUnderflow: return "StepUnderflow";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::ZeroVariance: return "ZeroVariance";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (notably the CLI) can map it to an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) fail(code, what);
}

}  // namespace femnet
