#pragma once

// SPDX-License-Identifier: Apache-2.0

#include <stdexcept>
#include <string>
#include <string_view>

namespace fist {

/// Every failure the library reports carries one of these codes.
enum class ErrorCode {
  EmptySequence,
  InvalidLogprob,
  EmptyCandidate,
  EmptyReference,
  EmptyReferences,
  EmptyDocument,
  AllZero,
  NoSections,
  InvalidJitter,
  EmptySection,
  EmptyDataset,
  IoFailure,
  SerializationFailure,
  ValidationFailure,
  ProviderUnavailable,
  AuthFailure,
  MalformedProviderReply,
  BudgetExhausted,
  InvalidRequest,
  EmptyResponse,
  InvalidThreshold,
  NoReferenceFacts,
  IllegalTransition,
  IllegalState,
  CurationIncomplete,
  UnknownItem,
  UnknownRun,
  StaleRevision,
  ModelMissing,
  LockFailure,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptySequence: return "EmptySequence";
    case ErrorCode::InvalidLogprob: return "InvalidLogprob";
    case ErrorCode::EmptyCandidate: return "EmptyCandidate";
    case ErrorCode::EmptyReference: return "EmptyReference";
    case ErrorCode::EmptyReferences: return "EmptyReferences";
    case ErrorCode::EmptyDocument: return "EmptyDocument";
    case ErrorCode::AllZero: return "AllZero";
    case ErrorCode::NoSections: return "NoSections";
    case ErrorCode::InvalidJitter: return "InvalidJitter";
    case ErrorCode::EmptySection: return "EmptySection";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::SerializationFailure: return "SerializationFailure";
    case ErrorCode::ValidationFailure: return "ValidationFailure";
    case ErrorCode::ProviderUnavailable: return "ProviderUnavailable";
    case ErrorCode::AuthFailure: return "AuthFailure";
    case ErrorCode::MalformedProviderReply: return "MalformedProviderReply";
    case ErrorCode::BudgetExhausted: return "BudgetExhausted";
    case ErrorCode::InvalidRequest: return "InvalidRequest";
    case ErrorCode::EmptyResponse: return "EmptyResponse";
    case ErrorCode::InvalidThreshold: return "InvalidThreshold";
    case ErrorCode::NoReferenceFacts: return "NoReferenceFacts";
    case ErrorCode::IllegalTransition: return "IllegalTransition";
    case ErrorCode::IllegalState: return "IllegalState";
    case ErrorCode::CurationIncomplete: return "CurationIncomplete";
    case ErrorCode::UnknownItem: return "UnknownItem";
    case ErrorCode::UnknownRun: return "UnknownRun";
    case ErrorCode::StaleRevision: return "StaleRevision";
    case ErrorCode::ModelMissing: return "ModelMissing";
    case ErrorCode::LockFailure: return "LockFailure";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace fist
