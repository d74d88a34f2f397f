#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rtsearch {

enum class ErrorCode {
  Io,
  Format,
  EmptyVocabulary,
  Index,
  InvalidLength,
  InvalidM,
  InvalidK,
  DimensionMismatch,
  ZeroVector,
  EmptyText,
  Transport,
  Protocol,
  NoImage,
  EmptyInput,
  Config,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::Io: return "IoError";
    case ErrorCode::Format: return "FormatError";
    case ErrorCode::EmptyVocabulary: return "EmptyVocabulary";
    case ErrorCode::Index: return "IndexError";
    case ErrorCode::InvalidLength: return "InvalidLength";
    case ErrorCode::InvalidM: return "InvalidM";
    case ErrorCode::InvalidK: return "InvalidK";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::EmptyText: return "EmptyText";
    case ErrorCode::Transport: return "TransportError";
    case ErrorCode::Protocol: return "ProtocolError";
    case ErrorCode::NoImage: return "NoImage";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::Config: return "ConfigError";
  }
  return "Error";
}

/// Every failure raised by the library carries a code so callers (the CLI in
/// particular) can map it to an exit status without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

  /// Same code, message prefixed with the pipeline stage that raised it.
  [[nodiscard]] Error in_stage(std::string_view stage) const {
    return Error(code_, std::string(stage) + ": " + detail());
  }

  [[nodiscard]] std::string detail() const {
    std::string_view what_sv = what();
    auto prefix = to_string(code_).size() + 2;
    return std::string(what_sv.size() >= prefix ? what_sv.substr(prefix) : what_sv);
  }

 private:
  ErrorCode code_;
};

// filter_vocabulary reports an all-removed vocabulary as EmptyResult.
inline constexpr ErrorCode EmptyResult = ErrorCode::EmptyVocabulary;

}  // namespace rtsearch
