// SPDX-License-Identifier: Apache-2.0
//
// Progressive narration: each narration is generated from the full prior
// narration history, the newest experience summary and a mode directive.
// Also trajectory summaries, system overviews and failure analysis.
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ronar/prompts.hpp"
#include "ronar/provider.hpp"
#include "ronar/summarizer.hpp"

namespace ronar {

enum class NarrationMode { Alert, Info, Debug };

std::string_view to_string(NarrationMode m);
/// Throws InvalidArgument on anything but alert | info | debug.
NarrationMode parse_narration_mode(std::string_view s);

/// Alert-mode reply meaning "nothing needs attention".
inline constexpr std::string_view kEmptyAlertMarker = "[NO_ALERT]";

struct NarrationInstance {
  std::size_t index = 0;
  std::size_t event_index = 0;
  NarrationMode mode = NarrationMode::Info;
  std::string text;
  double created_at = 0.0;  // episode time of the key event
  PromptProvenance provenance;
  bool degraded = false;

  bool is_empty_alert() const;
};

void to_json(nlohmann::json& j, const NarrationInstance& n);
void from_json(const nlohmann::json& j, NarrationInstance& n);

/// Append-only, contiguously indexed.
class NarrationHistory {
 public:
  /// Throws InvalidArgument unless item.index == size().
  void append(NarrationInstance item);
  const std::vector<NarrationInstance>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  const NarrationInstance& back() const { return items_.back(); }

 private:
  std::vector<NarrationInstance> items_;
};

/// "- [#k] text" lines, or "(none)".
std::string format_history(std::span<const NarrationInstance> items);

struct NarratorOptions {
  GenerationParams generation;
  /// 0 keeps the full history in every prompt. Otherwise only the last
  /// `history_window` narrations are listed, preceded by a trajectory summary
  /// of the older ones.
  std::size_t history_window = 0;
  std::string episode_id;
};

class Narrator {
 public:
  Narrator(Provider& provider, const PromptLibrary& prompts = PromptLibrary::builtin(), NarratorOptions options = {});

  /// Throws OutOfOrderEvent unless summary.event_index exceeds the last
  /// narrated event. Provider failures append a degraded placeholder.
  const NarrationInstance& narrate(const ExperienceSummary& summary, NarrationMode mode);
  /// The prompt narrate() would send next, without calling the provider.
  RenderedPrompt build_prompt(const ExperienceSummary& summary, NarrationMode mode);

  const NarrationHistory& history() const { return history_; }

 private:
  std::string history_section();

  Provider& provider_;
  const PromptLibrary& prompts_;
  NarratorOptions options_;
  NarrationHistory history_;
  std::size_t request_counter_ = 0;
  std::size_t pinned_upto_ = 0;
  std::string pinned_summary_;
};

/// Episode-level summary over the whole history. Throws EmptyHistory.
std::string trajectory_summary(const NarrationHistory& history, Provider& provider, std::string_view episode_id = {},
                               const PromptLibrary& prompts = PromptLibrary::builtin(), GenerationParams params = {});

inline constexpr std::string_view kDefaultOverviewQuery =
    "Summarize the failures, how they were recovered, and recommendations for improving the robot.";

struct TrajectorySummary {
  std::string episode_id;
  std::string text;
};

/// Collection-level overview. An empty query uses kDefaultOverviewQuery.
/// Throws EmptyInput.
std::string system_overview(std::span<const TrajectorySummary> summaries, std::string_view query, Provider& provider,
                            const PromptLibrary& prompts = PromptLibrary::builtin(), GenerationParams params = {});

enum class AnalysisTask { Pred, Loc, Exp, Rec };

std::string_view to_string(AnalysisTask t);
AnalysisTask parse_analysis_task(std::string_view s);

struct FailureAnalysis {
  AnalysisTask task = AnalysisTask::Loc;
  std::string answer;
  std::vector<std::size_t> cited_events;  // event indices
  std::optional<double> failure_time;     // Loc only
  std::string confidence_note;
  PromptProvenance provenance;
};

void to_json(nlohmann::json& j, const FailureAnalysis& a);

struct AnalysisInput {
  std::span<const ExperienceSummary> summaries;  // ordered by time
  const NarrationHistory* history = nullptr;
  std::optional<double> query_time;  // required for Pred, Exp and Rec
  double t_start = 0.0;
  double t_end = 0.0;
  std::string task_name;
};

/// Indices into `summaries` visible to `task`: Pred sees events strictly
/// before the query time; Exp and Rec see events up to the query time plus
/// the first event at or after it; Loc sees every event.
std::vector<std::size_t> analysis_window(AnalysisTask task, std::span<const ExperienceSummary> summaries,
                                         std::optional<double> query_time);

/// Parses "FAILURE_TIME: <seconds>". Absent when no such token is found.
std::optional<double> parse_failure_time(std::string_view answer);

/// Throws EmptyEvidence, MalformedProviderAnswer (Loc) or InvalidArgument.
FailureAnalysis analyze_failure(AnalysisTask task, const AnalysisInput& input, Provider& provider,
                                const PromptLibrary& prompts = PromptLibrary::builtin(), GenerationParams params = {});

}  // namespace ronar
