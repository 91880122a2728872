#include "mash/error.hpp"

namespace mash {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::MalformedInput: return "MalformedInput";
    case ErrorCode::NonPositiveTime: return "NonPositiveTime";
    case ErrorCode::UnknownCauseCode: return "UnknownCauseCode";
    case ErrorCode::EmptyCluster: return "EmptyCluster";
    case ErrorCode::TauBeyondFollowUp: return "TauBeyondFollowUp";
    case ErrorCode::CensoringTimeUnavailable: return "CensoringTimeUnavailable";
    case ErrorCode::DegenerateCovariate: return "DegenerateCovariate";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::GhatZeroBeforeTau: return "GhatZeroBeforeTau";
    case ErrorCode::DivisionByZeroGhat: return "DivisionByZeroGhat";
    case ErrorCode::SingularDesign: return "SingularDesign";
    case ErrorCode::NoEventsForCause: return "NoEventsForCause";
    case ErrorCode::BootstrapFitFailure: return "BootstrapFitFailure";
    case ErrorCode::RejectionBudgetExceeded: return "RejectionBudgetExceeded";
    case ErrorCode::InvalidProbability: return "InvalidProbability";
    case ErrorCode::RootNotBracketed: return "RootNotBracketed";
    case ErrorCode::ReplicationQuality: return "ReplicationQuality";
  }
  return "Unknown";
}

int exit_code(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::GhatZeroBeforeTau:
    case ErrorCode::DivisionByZeroGhat:
    case ErrorCode::SingularDesign:
    case ErrorCode::NoEventsForCause:
    case ErrorCode::BootstrapFitFailure:
    case ErrorCode::RejectionBudgetExceeded:
    case ErrorCode::InvalidProbability:
    case ErrorCode::RootNotBracketed:
      return 3;
    case ErrorCode::ReplicationQuality:
      return 4;
    default:
      return 2;
  }
}

}  // namespace mash
