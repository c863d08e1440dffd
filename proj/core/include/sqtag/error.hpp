#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sqtag {

enum class ErrorCode {
  DimensionMismatch,
  InvalidDim,
  EmptySequence,
  MalformedLine,
  InvalidLabel,
  InvalidSequence,
  DevTooLarge,
  EmbeddingDimMismatch,
  UnparseableValue,
  BadRegex,
  LabelOutOfRange,
  BadMagic,
  UnsupportedVersion,
  TruncatedFile,
  ChecksumMismatch,
  BadConfig,
  NonFiniteLoss,
  EmptyCorpus,
  MissingPredictions,
  Io,
};

std::string_view to_string(ErrorCode code);

// Every failure raised by the library carries a code so callers (and the CLI
// exit-code mapping) can branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace sqtag
