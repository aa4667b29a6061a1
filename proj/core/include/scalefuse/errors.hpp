#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace scalefuse {

enum class ErrorCode {
  kDegenerateDepth,
  kInsufficientSamples,
  kRankDeficient,
  kZeroBaseline,
  kDegenerateTranslation,
  kNoConsensus,
  kZeroTranslation,
  kEmptyObservation,
  kNoValidPixels,
  kInsufficientFrames,
  kBadMagic,
  kTruncatedFile,
  kDimensionMismatch,
  kMalformedHeader,
  kOverflowDepth,
  kIo,
  kConfig,
};

std::string_view to_string(ErrorCode code);

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace scalefuse
