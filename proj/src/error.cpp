#include "wslab/error.hpp"

namespace wslab {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ZeroRow: return "ZeroRow";
    case ErrorCode::BudgetExceeded: return "BudgetExceeded";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::VersionUnsupported: return "VersionUnsupported";
    case ErrorCode::TruncationTooLarge: return "TruncationTooLarge";
    case ErrorCode::ShortRead: return "ShortRead";
    case ErrorCode::WriteError: return "WriteError";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::NoSolution: return "NoSolution";
    case ErrorCode::ZeroFeatureNorm: return "ZeroFeatureNorm";
    case ErrorCode::RankZero: return "RankZero";
    case ErrorCode::FullRowRank: return "FullRowRank";
    case ErrorCode::ZeroLift: return "ZeroLift";
    case ErrorCode::DegenerateProjection: return "DegenerateProjection";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::NumericalFailure: return "NumericalFailure";
  }
  return "Unknown";
}

namespace {
std::string decorate(ErrorCode code, const std::string& message,
                     std::optional<std::int64_t> index) {
  std::string out(to_string(code));
  if (index) out += "[" + std::to_string(*index) + "]";
  out += ": ";
  out += message;
  return out;
}
}  // namespace

Error::Error(ErrorCode code, const std::string& message,
             std::optional<std::int64_t> index)
    : std::runtime_error(decorate(code, message, index)),
      code_(code),
      index_(index) {}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigError:
    case ErrorCode::InvalidArgument:
      return 2;
    case ErrorCode::BadMagic:
    case ErrorCode::VersionUnsupported:
    case ErrorCode::TruncationTooLarge:
    case ErrorCode::ShortRead:
    case ErrorCode::WriteError:
    case ErrorCode::DimMismatch:
    case ErrorCode::IndexOutOfRange:
    case ErrorCode::BudgetExceeded:
      return 3;
    default:
      return 4;
  }
}

}  // namespace wslab
