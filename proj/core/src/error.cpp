#include "dff/error.hpp"

namespace dff {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::NonNegativityViolated: return "NonNegativityViolated";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::ChannelMismatch: return "ChannelMismatch";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::RankTooLarge: return "RankTooLarge";
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::LayoutMismatch: return "LayoutMismatch";
    case ErrorCode::SizeMismatch: return "SizeMismatch";
    case ErrorCode::EmptySet: return "EmptySet";
    case ErrorCode::EmptyPart: return "EmptyPart";
    case ErrorCode::EmptyUnion: return "EmptyUnion";
    case ErrorCode::NoForeground: return "NoForeground";
    case ErrorCode::MissingGroundTruth: return "MissingGroundTruth";
    case ErrorCode::NoParts: return "NoParts";
    case ErrorCode::LayerNotFound: return "LayerNotFound";
    case ErrorCode::ModelLoadError: return "ModelLoadError";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::VersionUnsupported: return "VersionUnsupported";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

ErrorCategory category_of(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::RankTooLarge:
    case ErrorCode::LayerNotFound:
    case ErrorCode::ConfigError:
    case ErrorCode::NoParts:
      return ErrorCategory::Config;
    case ErrorCode::DegenerateInput:
    case ErrorCode::NonFinite:
      return ErrorCategory::Numeric;
    default:
      return ErrorCategory::Data;
  }
}

namespace {

std::string compose(ErrorCode code, const std::string& detail, const std::string& stage) {
  std::string out = stage.empty() ? std::string() : "[" + stage + "] ";
  out += to_string(code);
  out += ": ";
  out += detail;
  return out;
}

}  // namespace

Error::Error(ErrorCode code, const std::string& detail, const std::string& stage)
    : std::runtime_error(compose(code, detail, stage)), code_(code), detail_(detail), stage_(stage) {}

}  // namespace dff
