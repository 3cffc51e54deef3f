#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace seqx {

// Every failure the library reports. The service maps each code to exactly
// one HTTP status and machine code.
enum class ErrorCode {
  BadMagic,
  CountMismatch,
  Truncated,
  IoFailure,
  MissingClass,
  InvalidArgument,
  InsufficientInstances,
  EmptyTrainSet,
  SingleClassTrainSet,
  DivergedLoss,
  NonFiniteActivation,
  BadCheckpoint,
  IncompleteCatalog,
  MissingGuess,
  UnknownImageId,
  OutOfRangeItem,
  SatWithoutExplanation,
  UnpopulatedState,
  WrongPhase,
  ExplanationNotIssued,
  NoEligibleExampleImage,
  CorruptLog,
  UnknownSession,
  ZeroPooledSD,
  TooFewSamples,
  IncompleteSession,
  EmptyArm,
  UnknownPolicy,
  MalformedRequest,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadMagic: return "bad_magic";
    case ErrorCode::CountMismatch: return "count_mismatch";
    case ErrorCode::Truncated: return "truncated";
    case ErrorCode::IoFailure: return "io_failure";
    case ErrorCode::MissingClass: return "missing_class";
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::InsufficientInstances: return "insufficient_instances";
    case ErrorCode::EmptyTrainSet: return "empty_train_set";
    case ErrorCode::SingleClassTrainSet: return "single_class_train_set";
    case ErrorCode::DivergedLoss: return "diverged_loss";
    case ErrorCode::NonFiniteActivation: return "non_finite_activation";
    case ErrorCode::BadCheckpoint: return "bad_checkpoint";
    case ErrorCode::IncompleteCatalog: return "incomplete_catalog";
    case ErrorCode::MissingGuess: return "missing_guess";
    case ErrorCode::UnknownImageId: return "unknown_image_id";
    case ErrorCode::OutOfRangeItem: return "out_of_range_item";
    case ErrorCode::SatWithoutExplanation: return "sat_without_explanation";
    case ErrorCode::UnpopulatedState: return "unpopulated_state";
    case ErrorCode::WrongPhase: return "wrong_phase";
    case ErrorCode::ExplanationNotIssued: return "explanation_not_issued";
    case ErrorCode::NoEligibleExampleImage: return "no_eligible_example_image";
    case ErrorCode::CorruptLog: return "corrupt_log";
    case ErrorCode::UnknownSession: return "unknown_session";
    case ErrorCode::ZeroPooledSD: return "zero_pooled_sd";
    case ErrorCode::TooFewSamples: return "too_few_samples";
    case ErrorCode::IncompleteSession: return "incomplete_session";
    case ErrorCode::EmptyArm: return "empty_arm";
    case ErrorCode::UnknownPolicy: return "unknown_policy";
    case ErrorCode::MalformedRequest: return "malformed_request";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace seqx
