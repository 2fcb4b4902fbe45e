// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ronar {

enum class ErrorCode {
  // episode_log
  MalformedRecord,
  NonMonotonicTimestamps,
  MissingRequiredStream,
  EmptyEpisode,
  // vision
  DimensionMismatch,
  ImageTooSmall,
  EmptyFlow,
  NoImageInWindow,
  // key_event
  TooFewFrames,
  StatsMismatch,
  // scene_graph
  DuplicateObjectId,
  // provider / summarizer
  ProviderUnavailable,
  ResponseTooLong,
  RateLimited,
  UnknownJointName,
  UnknownState,
  // narrator
  OutOfOrderEvent,
  EmptyHistory,
  EmptyInput,
  MalformedProviderAnswer,
  EmptyEvidence,
  // task_sim
  DuplicateStateName,
  EmptyStateList,
  InvalidFailureSpec,
  // service
  PortInUse,
  BadConfig,
  SessionNotFound,
  // general
  InvalidArgument,
  Io,
};

std::string_view to_string(ErrorCode code);

/// Single exception type for the library. The code identifies the contract
/// violation; the message carries the details (line number, stream name...).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class RateLimitedError : public Error {
 public:
  RateLimitedError(const std::string& message, std::optional<double> retry_after_s)
      : Error(ErrorCode::RateLimited, message), retry_after_s_(retry_after_s) {}

  std::optional<double> retry_after_s() const noexcept { return retry_after_s_; }

 private:
  std::optional<double> retry_after_s_;
};

/// True for errors raised by a text-generation provider call.
bool is_provider_error(ErrorCode code) noexcept;

}  // namespace ronar
