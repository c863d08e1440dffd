#include "sqtag/error.hpp"

namespace sqtag {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::InvalidDim: return "InvalidDim";
    case ErrorCode::EmptySequence: return "EmptySequence";
    case ErrorCode::MalformedLine: return "MalformedLine";
    case ErrorCode::InvalidLabel: return "InvalidLabel";
    case ErrorCode::InvalidSequence: return "InvalidSequence";
    case ErrorCode::DevTooLarge: return "DevTooLarge";
    case ErrorCode::EmbeddingDimMismatch: return "DimMismatch";
    case ErrorCode::UnparseableValue: return "UnparseableValue";
    case ErrorCode::BadRegex: return "BadRegex";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::BadConfig: return "BadConfig";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::MissingPredictions: return "MissingPredictions";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace sqtag
