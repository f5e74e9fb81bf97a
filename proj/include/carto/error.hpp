#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace carto {

enum class ErrorCode {
  // knowledge tree
  UnknownParent,
  UnknownNode,
  KindViolation,
  EmptyText,
  NodeDeleted,
  CannotDeleteRoot,
  ScoreOutOfRange,
  WrongKind,
  NoScoredChildren,
  // gateway
  MissingPlaceholder,
  ProviderUnavailable,
  Timeout,
  MalformedProbeResponse,
  DimensionMismatch,
  // elicitation
  EmptyGeneration,
  CannotRegenerateHumanNode,
  // stats
  TooFewSamples,
  ZeroVariance,
  DegenerateMarginals,
  InsufficientData,
  // evaluation
  Stalled,
  UnparseableVerdict,
  MissingTranscript,
  InsufficientMinority,
  LengthMismatch,
  BankMismatch,
  // concepts
  EmptySummary,
  TooFewPoints,
  SynthesisParseError,
  // storage
  SchemaVersionMismatch,
  CorruptFile,
  // service
  UnknownSession,
  VersionConflict,
  JobNotFound,
  Unauthorized,
  // generic
  InvalidArgument,
  IoError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownParent: return "UnknownParent";
    case ErrorCode::UnknownNode: return "UnknownNode";
    case ErrorCode::KindViolation: return "KindViolation";
    case ErrorCode::EmptyText: return "EmptyText";
    case ErrorCode::NodeDeleted: return "NodeDeleted";
    case ErrorCode::CannotDeleteRoot: return "CannotDeleteRoot";
    case ErrorCode::ScoreOutOfRange: return "ScoreOutOfRange";
    case ErrorCode::WrongKind: return "WrongKind";
    case ErrorCode::NoScoredChildren: return "NoScoredChildren";
    case ErrorCode::MissingPlaceholder: return "MissingPlaceholder";
    case ErrorCode::ProviderUnavailable: return "ProviderUnavailable";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::MalformedProbeResponse: return "MalformedProbeResponse";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::EmptyGeneration: return "EmptyGeneration";
    case ErrorCode::CannotRegenerateHumanNode: return "CannotRegenerateHumanNode";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::ZeroVariance: return "ZeroVariance";
    case ErrorCode::DegenerateMarginals: return "DegenerateMarginals";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::Stalled: return "Stalled";
    case ErrorCode::UnparseableVerdict: return "UnparseableVerdict";
    case ErrorCode::MissingTranscript: return "MissingTranscript";
    case ErrorCode::InsufficientMinority: return "InsufficientMinority";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::BankMismatch: return "BankMismatch";
    case ErrorCode::EmptySummary: return "EmptySummary";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::SynthesisParseError: return "SynthesisParseError";
    case ErrorCode::SchemaVersionMismatch: return "SchemaVersionMismatch";
    case ErrorCode::CorruptFile: return "CorruptFile";
    case ErrorCode::UnknownSession: return "UnknownSession";
    case ErrorCode::VersionConflict: return "VersionConflict";
    case ErrorCode::JobNotFound: return "JobNotFound";
    case ErrorCode::Unauthorized: return "Unauthorized";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so that
/// the service and CLI can map it onto a status code or an error document.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), message_(message) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }
  /// Message without the code prefix.
  [[nodiscard]] const std::string& message() const noexcept { return message_; }

 private:
  ErrorCode code_;
  std::string message_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace carto
