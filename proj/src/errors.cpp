#include "steerkit/errors.hpp"

namespace steerkit {

const char* error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::VMDViolation: return "VMDViolation";
    case ErrorCode::NoReturnFound: return "NoReturnFound";
    case ErrorCode::ResidualTooLarge: return "ResidualTooLarge";
    case ErrorCode::EpsilonUnreachable: return "EpsilonUnreachable";
    case ErrorCode::TargetOutOfRange: return "TargetOutOfRange";
    case ErrorCode::BudgetExceeded: return "BudgetExceeded";
    case ErrorCode::DegenerateBudget: return "DegenerateBudget";
    case ErrorCode::NoTransitFound: return "NoTransitFound";
    case ErrorCode::SupportOverlap: return "SupportOverlap";
    case ErrorCode::IntegrationFailure: return "IntegrationFailure";
    case ErrorCode::HypothesisViolation: return "HypothesisViolation";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

nlohmann::json Error::to_json() const {
  return {{"error", error_name(code_)}, {"message", what()}, {"details", details_}};
}

}  // namespace steerkit
