#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dff {

enum class ErrorCode {
  InvalidArgument,
  NonNegativityViolated,
  NonFinite,
  ChannelMismatch,
  EmptyBatch,
  ShapeMismatch,
  RankTooLarge,
  DegenerateInput,
  LayoutMismatch,
  SizeMismatch,
  EmptySet,
  EmptyPart,
  EmptyUnion,
  NoForeground,
  MissingGroundTruth,
  NoParts,
  LayerNotFound,
  ModelLoadError,
  BadMagic,
  VersionUnsupported,
  DimMismatch,
  IoError,
  ConfigError,
};

/// Broad failure class used to pick a process exit status.
enum class ErrorCategory { Config, Data, Numeric };

std::string_view to_string(ErrorCode code) noexcept;
ErrorCategory category_of(ErrorCode code) noexcept;

/// what() reads "[stage] Code: detail", or "Code: detail" without a stage.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail, const std::string& stage = {});

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }
  const std::string& stage() const noexcept { return stage_; }

  /// Same error attributed to a pipeline stage.
  Error in_stage(const std::string& stage) const { return Error(code_, detail_, stage); }

 private:
  ErrorCode code_;
  std::string detail_;
  std::string stage_;
};

}  // namespace dff
