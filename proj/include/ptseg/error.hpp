#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ptseg {

enum class ErrorCode {
  DegenerateHorizon,
  AmbiguousAxis,
  InvalidStepCount,
  SingularHomography,
  KeyPointBehindCamera,
  EmptyBoundingBox,
  InvalidArgument,
  ShapeMismatch,
  EmptyLabelSet,
  NoInstances,
  IncompatibleChain,
  DegenerateGeometry,
  MalformedRecord,
  LengthMismatch,
  RowMismatch,
  MissingGeometry,
  Io,
  Config,
  Checkpoint,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Library-wide exception; `code()` identifies the failure class.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Configuration errors carry the offending key so the CLI can report it.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& message)
      : Error(ErrorCode::Config, "[" + key + "] " + message), key_(std::move(key)) {}

  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

}  // namespace ptseg
