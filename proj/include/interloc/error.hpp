#pragma once

#include <stdexcept>
#include <string>

namespace interloc {

/// Broad failure class, used by the CLI to choose an exit code.
enum class ErrorCategory { Usage, Data, Numeric };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

#define INTERLOC_DEFINE_ERROR(Name, Category)                               \
  class Name : public Error {                                               \
   public:                                                                  \
    explicit Name(const std::string& what)                                  \
        : Error(ErrorCategory::Category, std::string(#Name ": ") + what) {} \
  };

INTERLOC_DEFINE_ERROR(ConfigError, Usage)
INTERLOC_DEFINE_ERROR(UsageError, Usage)
INTERLOC_DEFINE_ERROR(DataError, Data)
INTERLOC_DEFINE_ERROR(UnknownToken, Data)
INTERLOC_DEFINE_ERROR(DegenerateSpan, Data)
INTERLOC_DEFINE_ERROR(DegenerateDurations, Data)
INTERLOC_DEFINE_ERROR(SamplingExhausted, Data)
INTERLOC_DEFINE_ERROR(NoCandidate, Data)
INTERLOC_DEFINE_ERROR(NoSignal, Data)
INTERLOC_DEFINE_ERROR(OverlapError, Data)
INTERLOC_DEFINE_ERROR(EmptyFeedbackList, Data)
INTERLOC_DEFINE_ERROR(EmptyPredictions, Data)
INTERLOC_DEFINE_ERROR(InsufficientFeedback, Data)
INTERLOC_DEFINE_ERROR(SchemaVersionMismatch, Data)
INTERLOC_DEFINE_ERROR(ChecksumMismatch, Data)
INTERLOC_DEFINE_ERROR(ShapeMismatch, Numeric)
INTERLOC_DEFINE_ERROR(DisconnectedGraph, Numeric)
INTERLOC_DEFINE_ERROR(NumericFault, Numeric)
INTERLOC_DEFINE_ERROR(NonFiniteLoss, Numeric)

#undef INTERLOC_DEFINE_ERROR

}  // namespace interloc
