#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dic {

enum class ErrorCode {
  IoError,
  UnsupportedFormat,
  BorderTooLarge,
  EmptyGrid,
  InvalidArgument,
  ImageTooSmall,
  OutOfDomain,
  DegenerateSpectrum,
  DegenerateSubset,
  AllInvalid,
  SeedFailed,
  RankDeficient,
  SingularDeformation,
  GridTooSmall,
  BadMagic,
  VersionMismatch,
  TruncatedFile,
  NoMatch,
  ParseError,
  NonInvertibleSpec,
  NoCrossing,
  TooFewEntries,
};

inline std::string_view to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::BorderTooLarge: return "BorderTooLarge";
    case ErrorCode::EmptyGrid: return "EmptyGrid";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ImageTooSmall: return "ImageTooSmall";
    case ErrorCode::OutOfDomain: return "OutOfDomain";
    case ErrorCode::DegenerateSpectrum: return "DegenerateSpectrum";
    case ErrorCode::DegenerateSubset: return "DegenerateSubset";
    case ErrorCode::AllInvalid: return "AllInvalid";
    case ErrorCode::SeedFailed: return "SeedFailed";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::SingularDeformation: return "SingularDeformation";
    case ErrorCode::GridTooSmall: return "GridTooSmall";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::NoMatch: return "NoMatch";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::NonInvertibleSpec: return "NonInvertibleSpec";
    case ErrorCode::NoCrossing: return "NoCrossing";
    case ErrorCode::TooFewEntries: return "TooFewEntries";
  }
  return "Unknown";
}

/// Exception carrying a machine-readable code alongside the diagnostic text.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace dic
