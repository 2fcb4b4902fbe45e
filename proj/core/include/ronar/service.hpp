// SPDX-License-Identifier: Apache-2.0
//
// HTTP + WebSocket service: episode browsing, offline replay sessions and
// live sessions driven by the simulator, with mode switching and operator
// interventions.
//
// Every session keeps an ordered message log {seq, kind, t, payload}. A
// WebSocket client first receives the whole log, then live messages, so
// late joiners see the same sequence as clients connected from the start.
// Heartbeats repeat the last seq, are sent per client when idle and are not
// part of the log. A client whose buffer overflows is disconnected.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ronar/pipeline.hpp"
#include "ronar/provider.hpp"

namespace ronar {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  std::uint16_t port = 8080;  // 0 picks a free port
  std::filesystem::path episodes_dir = "episodes";
  std::optional<std::filesystem::path> provider_config;  // mock when absent
  std::optional<std::filesystem::path> prompts_dir;
  std::optional<std::filesystem::path> ui_dir;  // static console build served under /ui
  double replay_speed = 10.0;                   // episode seconds per wall second; 0 = unpaced
  std::size_t client_buffer = 4096;             // messages queued per client before disconnect
  int client_socket_buffer = 0;                 // SO_SNDBUF bytes for stream sockets; 0 = OS default
  double heartbeat_s = 1.0;
  PipelineOptions pipeline;
};

/// Reads a JSON config file. Keys: host, port, episodes, provider_config,
/// prompts_dir, ui_dir, replay_speed, client_buffer, client_socket_buffer, heartbeat_s, threshold,
/// modalities, mode. Throws BadConfig.
ServiceConfig load_service_config(const std::filesystem::path& path);
ServiceConfig parse_service_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

/// Applies RONAR_HOST, RONAR_PORT, RONAR_EPISODES, RONAR_PROVIDER_CONFIG and
/// RONAR_REPLAY_SPEED when set. Throws BadConfig on unparseable values.
void apply_env_overrides(ServiceConfig& config);

class Service {
 public:
  /// `provider` overrides the provider config (tests inject a mock).
  explicit Service(ServiceConfig config, std::shared_ptr<Provider> provider = nullptr);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds and starts accepting. Throws PortInUse or BadConfig.
  void start();
  /// Stops sessions and connections and joins all threads.
  void stop();
  /// Blocks until stop() is called from another thread.
  void wait();
  std::uint16_t port() const;

  /// In-process access to a session's message log (serialized messages).
  std::vector<std::string> session_log(const std::string& session_id) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace ronar
