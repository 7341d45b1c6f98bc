#pragma once

#include <stdexcept>
#include <string>

#include "json.hpp"

namespace steerkit {

enum class ErrorCode {
  VMDViolation,
  NoReturnFound,
  ResidualTooLarge,
  EpsilonUnreachable,
  TargetOutOfRange,
  BudgetExceeded,
  DegenerateBudget,
  NoTransitFound,
  SupportOverlap,
  IntegrationFailure,
  HypothesisViolation,
  ConfigError,
};

const char* error_name(ErrorCode code);

// Every domain failure carries a stable code plus machine-readable details.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, nlohmann::json details = nlohmann::json::object())
      : std::runtime_error(message), code_(code), details_(std::move(details)) {}

  ErrorCode code() const { return code_; }
  const nlohmann::json& details() const { return details_; }
  nlohmann::json to_json() const;

 private:
  ErrorCode code_;
  nlohmann::json details_;
};

}  // namespace steerkit
