// SPDX-License-Identifier: Apache-2.0
#include "ronar/provider.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

namespace ronar {

using nlohmann::json;

std::string stable_hash(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

int approx_tokens(std::string_view text) {
  int n = 0;
  bool in_word = false;
  for (char c : text) {
    const bool space = c == ' ' || c == '\n' || c == '\t' || c == '\r';
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

// ---------------------------------------------------------------------------
// MockProvider

namespace {

std::string find_mode(std::string_view prompt) {
  constexpr std::string_view kKey = "MODE: ";
  std::size_t pos = 0;
  while ((pos = prompt.find(kKey, pos)) != std::string_view::npos) {
    if (pos == 0 || prompt[pos - 1] == '\n') {
      auto end = prompt.find('\n', pos);
      auto token = prompt.substr(pos + kKey.size(), end == std::string_view::npos ? std::string_view::npos : end - pos - kKey.size());
      while (!token.empty() && (token.back() == ' ' || token.back() == '\r')) token.remove_suffix(1);
      return std::string(token);
    }
    pos += kKey.size();
  }
  return {};
}

std::size_t count_history_items(std::string_view prompt) {
  std::size_t n = 0;
  std::size_t pos = 0;
  while (pos < prompt.size()) {
    auto end = prompt.find('\n', pos);
    if (end == std::string_view::npos) end = prompt.size();
    if (prompt.substr(pos, end - pos).starts_with("- [#")) ++n;
    pos = end + 1;
  }
  return n;
}

std::vector<std::string> find_episode_ids(std::string_view prompt) {
  std::vector<std::string> ids;
  constexpr std::string_view kKey = "[episode:";
  std::size_t pos = 0;
  while ((pos = prompt.find(kKey, pos)) != std::string_view::npos) {
    const auto end = prompt.find(']', pos);
    if (end == std::string_view::npos) break;
    std::string id(prompt.substr(pos + kKey.size(), end - pos - kKey.size()));
    if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(std::move(id));
    pos = end;
  }
  return ids;
}

}  // namespace

std::string MockProvider::digest(const ProviderRequest& request) {
  std::string mode = find_mode(request.user_prompt);
  if (mode.empty()) mode = find_mode(request.system_prompt);
  if (mode.empty()) mode = "none";
  const auto hist = count_history_items(request.user_prompt);
  const auto hash = stable_hash(request.system_prompt + '\x1f' + request.user_prompt);
  std::string out = fmt::format("MOCK[mode={};hist={};h={}", mode, hist, hash);
  if (auto ids = find_episode_ids(request.user_prompt); !ids.empty()) out += fmt::format(";ids={}", fmt::join(ids, ","));
  out += ']';
  return out;
}

ProviderResponse MockProvider::complete(const ProviderRequest& request) {
  std::string suffix;
  {
    std::lock_guard lock(mutex_);
    captured_.push_back(request);
    if (failure_when_ && failure_when_(request)) {
      if (failure_code_ == ErrorCode::RateLimited) throw RateLimitedError("mock rate limit", 1.0);
      throw Error(failure_code_, "mock provider configured to fail");
    }
    suffix = suffix_;
  }
  ProviderResponse response;
  response.text = digest(request) + suffix;
  response.provider = name();
  response.prompt_tokens = approx_tokens(request.system_prompt) + approx_tokens(request.user_prompt);
  response.completion_tokens = approx_tokens(response.text);
  if (response.completion_tokens > request.params.max_length)
    throw Error(ErrorCode::ResponseTooLong, fmt::format("{} tokens exceeds max_length {}", response.completion_tokens, request.params.max_length));
  return response;
}

void MockProvider::set_reply_suffix(std::string suffix) {
  std::lock_guard lock(mutex_);
  suffix_ = std::move(suffix);
}

void MockProvider::set_failure_rule(std::function<bool(const ProviderRequest&)> when, ErrorCode code) {
  std::lock_guard lock(mutex_);
  failure_when_ = std::move(when);
  failure_code_ = code;
}

void MockProvider::clear_failure_rule() {
  std::lock_guard lock(mutex_);
  failure_when_ = nullptr;
}

std::vector<ProviderRequest> MockProvider::captured() const {
  std::lock_guard lock(mutex_);
  return captured_;
}

void MockProvider::clear_captured() {
  std::lock_guard lock(mutex_);
  captured_.clear();
}

// ---------------------------------------------------------------------------
// HttpProvider

HttpProvider::HttpProvider(HttpProviderOptions options) : options_(std::move(options)) {
  if (options_.endpoint.empty()) throw Error(ErrorCode::BadConfig, "http provider requires an endpoint");
  if (options_.model.empty()) throw Error(ErrorCode::BadConfig, "http provider requires a model");
}

ProviderResponse HttpProvider::complete(const ProviderRequest& request) {
  std::string credential;
  if (!options_.credential_env_var.empty()) {
    const char* value = std::getenv(options_.credential_env_var.c_str());
    if (!value || !*value)
      throw Error(ErrorCode::ProviderUnavailable, fmt::format("credential variable '{}' is not set", options_.credential_env_var));
    credential = value;
  }

  json body{{"model", options_.model},
            {"temperature", request.params.temperature},
            {"max_tokens", request.params.max_length},
            {"messages", json::array({{{"role", "system"}, {"content", request.system_prompt}},
                                      {{"role", "user"}, {"content", request.user_prompt}}})}};

  httplib::Client client(options_.endpoint);
  const auto timeout = std::chrono::duration<double>(options_.timeout_s);
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  httplib::Headers headers;
  if (!credential.empty()) headers.emplace("Authorization", "Bearer " + credential);
  if (!request.request_id.empty()) headers.emplace("X-Request-Id", request.request_id);

  const auto started = std::chrono::steady_clock::now();
  auto result = client.Post(options_.path, headers, body.dump(), "application/json");
  const double latency = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  if (!result) throw Error(ErrorCode::ProviderUnavailable, fmt::format("request failed: {}", httplib::to_string(result.error())));

  if (result->status == 429) {
    std::optional<double> retry_after;
    if (result->has_header("Retry-After")) {
      try {
        retry_after = std::stod(result->get_header_value("Retry-After"));
      } catch (const std::exception&) {
      }
    }
    throw RateLimitedError("provider returned 429", retry_after);
  }
  if (result->status != 200)
    throw Error(ErrorCode::ProviderUnavailable, fmt::format("provider returned HTTP {}", result->status));

  json reply;
  try {
    reply = json::parse(result->body);
    const auto& choice = reply.at("choices").at(0);
    ProviderResponse response;
    response.text = choice.at("message").at("content").get<std::string>();
    if (choice.value("finish_reason", std::string{}) == "length")
      throw Error(ErrorCode::ResponseTooLong, fmt::format("completion truncated at max_length {}", request.params.max_length));
    if (reply.contains("usage")) {
      response.prompt_tokens = reply["usage"].value("prompt_tokens", 0);
      response.completion_tokens = reply["usage"].value("completion_tokens", 0);
    } else {
      response.prompt_tokens = approx_tokens(request.system_prompt) + approx_tokens(request.user_prompt);
      response.completion_tokens = approx_tokens(response.text);
    }
    response.latency_s = latency;
    response.provider = name();
    return response;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ProviderUnavailable, fmt::format("unparseable provider reply: {}", e.what()));
  }
}

// ---------------------------------------------------------------------------
// LimitedProvider

LimitedProvider::LimitedProvider(std::shared_ptr<Provider> inner, std::size_t max_in_flight)
    : inner_(std::move(inner)), max_in_flight_(std::max<std::size_t>(1, max_in_flight)) {}

ProviderResponse LimitedProvider::complete(const ProviderRequest& request) {
  {
    std::unique_lock lock(mutex_);
    const auto ticket = next_ticket_++;
    waiting_.push_back(ticket);
    cv_.wait(lock, [&] { return waiting_.front() == ticket && in_flight_ < max_in_flight_; });
    waiting_.pop_front();
    ++in_flight_;
    peak_ = std::max(peak_, in_flight_);
  }
  cv_.notify_all();
  struct Release {
    LimitedProvider* self;
    ~Release() {
      {
        std::lock_guard lock(self->mutex_);
        --self->in_flight_;
      }
      self->cv_.notify_all();
    }
  } release{this};
  return inner_->complete(request);
}

std::size_t LimitedProvider::peak_in_flight() const {
  std::lock_guard lock(mutex_);
  return peak_;
}

// ---------------------------------------------------------------------------
// Config

ProviderConfig parse_provider_config(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::BadConfig, fmt::format("provider config is not valid JSON: {}", e.what()));
  }
  if (!j.is_object()) throw Error(ErrorCode::BadConfig, "provider config must be an object");
  if (j.contains("credential") || j.contains("api_key"))
    throw Error(ErrorCode::BadConfig, "credentials must come from credential_env_var, not the config file");
  ProviderConfig c;
  try {
    c.provider = j.value("provider", std::string{"mock"});
    c.endpoint = j.value("endpoint", std::string{});
    c.model = j.value("model", std::string{});
    c.credential_env_var = j.value("credential_env_var", std::string{});
    c.max_in_flight = j.value("max_in_flight", std::size_t{4});
    c.timeout_s = j.value("timeout_s", 60.0);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadConfig, e.what());
  }
  if (c.provider != "mock" && c.provider != "http") throw Error(ErrorCode::BadConfig, fmt::format("unknown provider '{}'", c.provider));
  if (c.provider == "http" && (c.endpoint.empty() || c.model.empty()))
    throw Error(ErrorCode::BadConfig, "http provider requires endpoint and model");
  return c;
}

ProviderConfig load_provider_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::BadConfig, fmt::format("cannot open provider config '{}'", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_provider_config(ss.str());
}

std::shared_ptr<Provider> make_provider(const ProviderConfig& config) {
  std::shared_ptr<Provider> inner;
  if (config.provider == "http") {
    inner = std::make_shared<HttpProvider>(HttpProviderOptions{config.endpoint, "/v1/chat/completions", config.model,
                                                               config.credential_env_var, config.timeout_s});
  } else {
    inner = std::make_shared<MockProvider>();
  }
  return std::make_shared<LimitedProvider>(std::move(inner), config.max_in_flight);
}

}  // namespace ronar
