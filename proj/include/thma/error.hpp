#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace thma {

enum class ErrorCode {
  Io,
  InvalidArgument,
  MalformedRecord,
  HeaderMismatch,
  EmptyCloud,
  OutOfMercatorBand,
  FrameMismatch,
  DegenerateTrajectory,
  MalformedTileFile,
  InvalidDescriptor,
  DegenerateOrientation,
  InvalidAxes,
  DegenerateCone,
  ClassMismatch,
  IndivisibleSequence,
  ShapeMismatch,
  InvalidConfig,
  MalformedJson,
  NotFound,
  AlreadyDecided,
  MalformedDecision,
  DuplicateItem,
  StageFailed,
};

std::string_view to_string(ErrorCode code);

// Every failure raised by the library carries a code so callers (CLI, HTTP
// layer, tests) can dispatch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace thma
