// SPDX-License-Identifier: Apache-2.0
#include "ronar/error.hpp"

#include <fmt/format.h>

namespace ronar {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedRecord: return "MalformedRecord";
    case ErrorCode::NonMonotonicTimestamps: return "NonMonotonicTimestamps";
    case ErrorCode::MissingRequiredStream: return "MissingRequiredStream";
    case ErrorCode::EmptyEpisode: return "EmptyEpisode";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ImageTooSmall: return "ImageTooSmall";
    case ErrorCode::EmptyFlow: return "EmptyFlow";
    case ErrorCode::NoImageInWindow: return "NoImageInWindow";
    case ErrorCode::TooFewFrames: return "TooFewFrames";
    case ErrorCode::StatsMismatch: return "StatsMismatch";
    case ErrorCode::DuplicateObjectId: return "DuplicateObjectId";
    case ErrorCode::ProviderUnavailable: return "ProviderUnavailable";
    case ErrorCode::ResponseTooLong: return "ResponseTooLong";
    case ErrorCode::RateLimited: return "RateLimited";
    case ErrorCode::UnknownJointName: return "UnknownJointName";
    case ErrorCode::UnknownState: return "UnknownState";
    case ErrorCode::OutOfOrderEvent: return "OutOfOrderEvent";
    case ErrorCode::EmptyHistory: return "EmptyHistory";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::MalformedProviderAnswer: return "MalformedProviderAnswer";
    case ErrorCode::EmptyEvidence: return "EmptyEvidence";
    case ErrorCode::DuplicateStateName: return "DuplicateStateName";
    case ErrorCode::EmptyStateList: return "EmptyStateList";
    case ErrorCode::InvalidFailureSpec: return "InvalidFailureSpec";
    case ErrorCode::PortInUse: return "PortInUse";
    case ErrorCode::BadConfig: return "BadConfig";
    case ErrorCode::SessionNotFound: return "SessionNotFound";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(fmt::format("{}: {}", to_string(code), message)), code_(code) {}

bool is_provider_error(ErrorCode code) noexcept {
  return code == ErrorCode::ProviderUnavailable || code == ErrorCode::ResponseTooLong ||
         code == ErrorCode::RateLimited;
}

}  // namespace ronar
