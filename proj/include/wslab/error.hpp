#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace wslab {

enum class ErrorCode {
  ZeroRow,
  BudgetExceeded,
  IndexOutOfRange,
  BadMagic,
  VersionUnsupported,
  TruncationTooLarge,
  ShortRead,
  WriteError,
  DimMismatch,
  NoSolution,
  ZeroFeatureNorm,
  RankZero,
  FullRowRank,
  ZeroLift,
  DegenerateProjection,
  InvalidArgument,
  ConfigError,
  NumericalFailure,
};

std::string_view to_string(ErrorCode code);

// Every failure in the library surfaces as this exception. `index()` carries
// the offending row / line number when one exists.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message,
        std::optional<std::int64_t> index = std::nullopt);

  ErrorCode code() const noexcept { return code_; }
  std::optional<std::int64_t> index() const noexcept { return index_; }

 private:
  ErrorCode code_;
  std::optional<std::int64_t> index_;
};

// Process exit status used by the command line driver.
int exit_code_for(ErrorCode code);

}  // namespace wslab
