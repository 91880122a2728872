#pragma once

#include <stdexcept>
#include <string>

namespace mash {

enum class ErrorCode {
  // input / validation
  MissingColumn,
  MalformedInput,
  NonPositiveTime,
  UnknownCauseCode,
  EmptyCluster,
  TauBeyondFollowUp,
  CensoringTimeUnavailable,
  DegenerateCovariate,
  InvalidArgument,
  // numerical
  GhatZeroBeforeTau,
  DivisionByZeroGhat,
  SingularDesign,
  NoEventsForCause,
  BootstrapFitFailure,
  RejectionBudgetExceeded,
  InvalidProbability,
  RootNotBracketed,
  // replication quality
  ReplicationQuality,
};

const char* to_string(ErrorCode code) noexcept;

// Process exit code for the CLI: 2 input, 3 numeric, 4 replication quality.
int exit_code(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace mash
