// SPDX-License-Identifier: Apache-2.0
//
// Text-generation provider boundary. Everything that calls a language model
// goes through Provider::complete().
#pragma once

#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ronar/error.hpp"

namespace ronar {

struct GenerationParams {
  int max_length = 1024;  // token budget for the completion
  double temperature = 0.0;
};

struct ProviderRequest {
  std::string system_prompt;
  std::string user_prompt;
  GenerationParams params;
  std::string request_id;
};

struct ProviderResponse {
  std::string text;
  int prompt_tokens = 0;
  int completion_tokens = 0;
  double latency_s = 0.0;
  std::string provider;
};

class Provider {
 public:
  virtual ~Provider() = default;
  /// Throws Error with ProviderUnavailable, ResponseTooLong or RateLimited.
  virtual ProviderResponse complete(const ProviderRequest& request) = 0;
  virtual std::string name() const = 0;
};

/// Stable 64-bit FNV-1a hash rendered as 16 hex digits.
std::string stable_hash(std::string_view text);

/// Whitespace-delimited token estimate.
int approx_tokens(std::string_view text);

/// Deterministic stand-in for a language model. The reply encodes the mode
/// token ("MODE: <m>" line), the number of history items ("- [#k] ..." lines)
/// and a hash of both prompts, e.g. "MOCK[mode=info;hist=0;h=1a2b...]".
/// Episode markers "[episode:<id>]" are echoed as ";ids=a,b".
class MockProvider final : public Provider {
 public:
  MockProvider() = default;

  ProviderResponse complete(const ProviderRequest& request) override;
  std::string name() const override { return "mock"; }

  /// Text appended after the digest, e.g. a canned answer token.
  void set_reply_suffix(std::string suffix);
  /// Calls matching `when` throw Error(code).
  void set_failure_rule(std::function<bool(const ProviderRequest&)> when, ErrorCode code = ErrorCode::ProviderUnavailable);
  void clear_failure_rule();

  std::vector<ProviderRequest> captured() const;
  void clear_captured();

  /// The digest the mock would produce, without recording the call.
  static std::string digest(const ProviderRequest& request);

 private:
  mutable std::mutex mutex_;
  std::string suffix_;
  std::function<bool(const ProviderRequest&)> failure_when_;
  ErrorCode failure_code_ = ErrorCode::ProviderUnavailable;
  std::vector<ProviderRequest> captured_;
};

struct HttpProviderOptions {
  std::string endpoint;  // scheme://host[:port]
  std::string path = "/v1/chat/completions";
  std::string model;
  std::string credential_env_var;
  double timeout_s = 60.0;
};

/// OpenAI-compatible chat-completions client. The credential is read from
/// the named environment variable at call time.
class HttpProvider final : public Provider {
 public:
  explicit HttpProvider(HttpProviderOptions options);
  ProviderResponse complete(const ProviderRequest& request) override;
  std::string name() const override { return "http:" + options_.model; }

 private:
  HttpProviderOptions options_;
};

/// Bounds the number of concurrent calls into `inner`; waiters are served in
/// arrival order.
class LimitedProvider final : public Provider {
 public:
  LimitedProvider(std::shared_ptr<Provider> inner, std::size_t max_in_flight);
  ProviderResponse complete(const ProviderRequest& request) override;
  std::string name() const override { return inner_->name(); }

  std::size_t peak_in_flight() const;

 private:
  std::shared_ptr<Provider> inner_;
  std::size_t max_in_flight_;
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<std::uint64_t> waiting_;
  std::uint64_t next_ticket_ = 0;
  std::size_t in_flight_ = 0;
  std::size_t peak_ = 0;
};

struct ProviderConfig {
  std::string provider = "mock";  // mock | http
  std::string endpoint;
  std::string model;
  std::string credential_env_var;
  std::size_t max_in_flight = 4;
  double timeout_s = 60.0;
};

/// Reads {provider, endpoint, model, credential_env_var[, max_in_flight, timeout_s]}.
/// A "credential" key in the file is rejected. Throws BadConfig.
ProviderConfig load_provider_config(const std::filesystem::path& path);
ProviderConfig parse_provider_config(std::string_view json_text);

std::shared_ptr<Provider> make_provider(const ProviderConfig& config);

}  // namespace ronar
