// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fedboost {

enum class Errc {
  InvalidLayout,
  NonFiniteInput,
  EmptyDataset,
  ShapeMismatch,
  InvalidCovariance,
  DegenerateSplit,
  WeakKey,
  PlaintextOutOfRange,
  KeyMismatch,
  CapacityExceeded,
  NonFiniteGradient,
  InvalidWeight,
  GradientOverflow,
  EmptyCohort,
  DegenerateCohort,
  RoundAborted,
  ProtocolViolation,
  ChannelClosed,
  TransportError,
  FrameTooLarge,
  Timeout,
  ConfigError,
  IoError,
  InvalidArgument,
};

constexpr std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::InvalidLayout: return "InvalidLayout";
    case Errc::NonFiniteInput: return "NonFiniteInput";
    case Errc::EmptyDataset: return "EmptyDataset";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::InvalidCovariance: return "InvalidCovariance";
    case Errc::DegenerateSplit: return "DegenerateSplit";
    case Errc::WeakKey: return "WeakKey";
    case Errc::PlaintextOutOfRange: return "PlaintextOutOfRange";
    case Errc::KeyMismatch: return "KeyMismatch";
    case Errc::CapacityExceeded: return "CapacityExceeded";
    case Errc::NonFiniteGradient: return "NonFiniteGradient";
    case Errc::InvalidWeight: return "InvalidWeight";
    case Errc::GradientOverflow: return "GradientOverflow";
    case Errc::EmptyCohort: return "EmptyCohort";
    case Errc::DegenerateCohort: return "DegenerateCohort";
    case Errc::RoundAborted: return "RoundAborted";
    case Errc::ProtocolViolation: return "ProtocolViolation";
    case Errc::ChannelClosed: return "ChannelClosed";
    case Errc::TransportError: return "TransportError";
    case Errc::FrameTooLarge: return "FrameTooLarge";
    case Errc::Timeout: return "Timeout";
    case Errc::ConfigError: return "ConfigError";
    case Errc::IoError: return "IoError";
    case Errc::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (and the CLI's machine-readable error line) can branch on it.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code),
        detail_(message) {}

  Errc code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  Errc code_;
  std::string detail_;
};

[[noreturn]] inline void fail(Errc code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace fedboost
