#pragma once

#include <stdexcept>
#include <string>

namespace rlvr {

enum class ErrorKind {
  kInvalidTemperature,
  kInvalidInput,
  kShape,
  kRank,
  kConfig,
  kVocabulary,
  kContext,
  kInvalidDistribution,
  kEmptyBatch,
  kAlignment,
  kEmptySet,
  kDegenerateGroup,
  kFormat,
  kParse,
  kIo,
  kOversampleCapExhausted,
};

const char* to_string(ErrorKind kind);

// Every failure raised by the library carries a kind so callers (and tests)
// can dispatch on the category without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidTemperature: return "invalid-temperature";
    case ErrorKind::kInvalidInput: return "invalid-input";
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kRank: return "rank";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kVocabulary: return "vocabulary";
    case ErrorKind::kContext: return "context";
    case ErrorKind::kInvalidDistribution: return "invalid-distribution";
    case ErrorKind::kEmptyBatch: return "empty-batch";
    case ErrorKind::kAlignment: return "alignment";
    case ErrorKind::kEmptySet: return "empty-set";
    case ErrorKind::kDegenerateGroup: return "degenerate-group";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kParse: return "parse";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kOversampleCapExhausted: return "oversample-cap-exhausted";
  }
  return "unknown";
}

}  // namespace rlvr
