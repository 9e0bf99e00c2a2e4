#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tfilm {

enum class ErrorCode {
  ShapeMismatch,
  NonDivisibleLength,
  NonScalarRoot,
  NonDeterministicFunction,
  ChannelMismatch,
  KernelLargerThanInput,
  WindowLargerThanInput,
  ChannelsNotDivisible,
  InvalidRate,
  ConfigInvariantViolation,
  LengthInvariantViolation,
  TooShort,
  InvalidCutoff,
  InvalidRipple,
  SignalTooShort,
  LengthMismatch,
  ZeroReference,
  InvalidSpec,
  PatchTooLong,
  BadMagic,
  TruncatedFile,
  UnsupportedWavEncoding,
  EmptyDataset,
  NonFiniteLoss,
  Io,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonDivisibleLength: return "NonDivisibleLength";
    case ErrorCode::NonScalarRoot: return "NonScalarRoot";
    case ErrorCode::NonDeterministicFunction: return "NonDeterministicFunction";
    case ErrorCode::ChannelMismatch: return "ChannelMismatch";
    case ErrorCode::KernelLargerThanInput: return "KernelLargerThanInput";
    case ErrorCode::WindowLargerThanInput: return "WindowLargerThanInput";
    case ErrorCode::ChannelsNotDivisible: return "ChannelsNotDivisible";
    case ErrorCode::InvalidRate: return "InvalidRate";
    case ErrorCode::ConfigInvariantViolation: return "ConfigInvariantViolation";
    case ErrorCode::LengthInvariantViolation: return "LengthInvariantViolation";
    case ErrorCode::TooShort: return "TooShort";
    case ErrorCode::InvalidCutoff: return "InvalidCutoff";
    case ErrorCode::InvalidRipple: return "InvalidRipple";
    case ErrorCode::SignalTooShort: return "SignalTooShort";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::ZeroReference: return "ZeroReference";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::PatchTooLong: return "PatchTooLong";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::UnsupportedWavEncoding: return "UnsupportedWavEncoding";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

// Every failure in the library is reported as an Error carrying a code, so
// callers (and the CLI exit-code mapping) can branch on the kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace tfilm
