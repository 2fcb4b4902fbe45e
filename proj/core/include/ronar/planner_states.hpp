// SPDX-License-Identifier: Apache-2.0
//
// Naming conventions for synthesized planner states. Every action state
// `s` has companions `s/query_user` and `s/teleoperation`.
#pragma once

#include <string>
#include <string_view>

namespace ronar::states {

inline constexpr std::string_view kStart = "start";
inline constexpr std::string_view kTaskComplete = "task_complete";
inline constexpr std::string_view kAborted = "aborted";
inline constexpr std::string_view kQueryUserSuffix = "/query_user";
inline constexpr std::string_view kTeleoperationSuffix = "/teleoperation";

inline std::string query_user(std::string_view action) { return std::string(action) + std::string(kQueryUserSuffix); }
inline std::string teleoperation(std::string_view action) { return std::string(action) + std::string(kTeleoperationSuffix); }

inline bool is_query_user(std::string_view s) { return s.ends_with(kQueryUserSuffix) && s.size() > kQueryUserSuffix.size(); }
inline bool is_teleoperation(std::string_view s) {
  return s.ends_with(kTeleoperationSuffix) && s.size() > kTeleoperationSuffix.size();
}
inline bool is_recovery(std::string_view s) { return is_query_user(s) || is_teleoperation(s); }
inline bool is_terminal(std::string_view s) { return s == kTaskComplete || s == kAborted; }

/// The action state a companion belongs to; `s` itself for action states.
inline std::string_view base_action(std::string_view s) {
  if (is_query_user(s)) return s.substr(0, s.size() - kQueryUserSuffix.size());
  if (is_teleoperation(s)) return s.substr(0, s.size() - kTeleoperationSuffix.size());
  return s;
}

}  // namespace ronar::states
