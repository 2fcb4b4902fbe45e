// SPDX-License-Identifier: Apache-2.0
//
// Experience summaries: for each key event a deterministic environment,
// internal and planning digest, plus provider prose for the first two.
#pragma once

#include <atomic>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ronar/episode_log.hpp"
#include "ronar/key_event.hpp"
#include "ronar/prompts.hpp"
#include "ronar/provider.hpp"
#include "ronar/scene_graph.hpp"

namespace ronar {

struct TaskSpec {
  std::string name;
  std::string description;
  std::vector<std::string> subgoals;
};

/// Sub-goals from the episode metadata, or the order in which action states
/// are first entered when the metadata has none.
TaskSpec task_spec_for(const EpisodeLog& episode);

enum class SubgoalOutcome { Success, Failure, Aborted, InProgress };

std::string_view to_string(SubgoalOutcome o);

struct SubgoalExecution {
  std::string subgoal;
  SubgoalOutcome outcome = SubgoalOutcome::InProgress;
  double t_start = 0.0;
  double t_end = 0.0;

  friend bool operator==(const SubgoalExecution&, const SubgoalExecution&) = default;
};

struct PlanningDigest {
  std::string task_name;
  std::string task_description;
  std::vector<std::string> subgoal_sequence;
  std::string current_subgoal;
  std::vector<SubgoalExecution> history;

  std::string text() const;
};

/// Replays planner transitions up to `now`. Throws UnknownState when a
/// transition enters a state that is neither a sub-goal, a recovery
/// companion of one, nor a terminal state.
PlanningDigest summarize_planning(std::span<const PlannerTransition> events, double now, const TaskSpec& spec);

inline constexpr double kNearLimitFraction = 0.05;

/// True when `value` lies within `fraction` of the range from either limit.
bool near_limit(double value, double limit_min, double limit_max, double fraction = kNearLimitFraction);

std::string_view part_unit(PartType type);

struct PartState {
  std::string name;
  PartType type = PartType::Other;
  double value = 0.0;
  std::optional<double> previous;
  double limit_min = 0.0;
  double limit_max = 0.0;
  bool near_limit = false;

  bool unchanged() const { return previous && *previous == value; }
};

std::string format_part_line(const PartState& part);

struct InternalDigest {
  std::vector<PartState> parts;  // one per joint value of the frame, by name
  std::optional<Pose2D> base_pose;
  std::optional<Pose2D> previous_base_pose;

  std::vector<std::string> lines() const;
  std::string text() const;
};

/// Throws UnknownJointName when a joint of `current` is not in `config`.
InternalDigest internal_digest(const MultimodalFrame& current, const MultimodalFrame* previous, const RobotConfig& config);

/// One line per part: "name | type | [min, max] unit | description".
std::string robot_config_text(const RobotConfig& config);

struct PromptProvenance {
  std::string purpose;
  std::string template_name;
  int template_version = 0;
  std::string request_id;
  std::string prompt_hash;
  std::string provider;
  std::string error;  // empty when the call succeeded
};

struct EnvironmentSummary {
  SceneGraph graph;
  std::string digest;
  std::optional<std::string> prose;
  PromptProvenance provenance;
};

struct InternalSummary {
  InternalDigest digest;
  std::optional<std::string> prose;
  PromptProvenance provenance;
};

struct ExperienceSummary {
  std::size_t event_index = 0;
  std::size_t frame_index = 0;
  double timestamp = 0.0;
  Trigger trigger = Trigger::ThresholdFire;
  std::optional<std::string> image;
  EnvironmentSummary environment;
  InternalSummary internal;
  PlanningDigest planning;

  bool degraded() const { return !environment.prose || !internal.prose; }
  /// Text handed to the narrator.
  std::string text() const;
};

void to_json(nlohmann::json& j, const PromptProvenance& p);
void to_json(nlohmann::json& j, const ExperienceSummary& s);

struct SummarizerOptions {
  double distance_cutoff = kDefaultDistanceCutoff;
  RelationMargins margins;
  GenerationParams generation;
};

/// Summarizes the key events of one episode. Provider calls for the
/// environment and internal prose of an event run concurrently.
class Summarizer {
 public:
  Summarizer(const EpisodeLog& episode, std::span<const MultimodalFrame> frames, Detector& detector, Provider& provider,
             const PromptLibrary& prompts = PromptLibrary::builtin(), SummarizerOptions options = {});

  EnvironmentSummary summarize_environment(const KeyEvent& event);
  InternalSummary summarize_internal(const KeyEvent& event, const KeyEvent* previous);
  PlanningDigest summarize_planning(double now) const;
  /// Provider failures leave prose absent (degraded); digests are unaffected.
  ExperienceSummary summarize_event(const KeyEvent& event, const KeyEvent* previous, std::size_t event_index);

  const TaskSpec& task() const { return task_; }

 private:
  const MultimodalFrame& frame_of(const KeyEvent& event) const;
  std::string next_request_id(std::string_view purpose);
  std::optional<std::string> call(const RenderedPrompt& prompt, PromptProvenance& provenance);

  const EpisodeLog& episode_;
  std::span<const MultimodalFrame> frames_;
  Detector& detector_;
  Provider& provider_;
  const PromptLibrary& prompts_;
  SummarizerOptions options_;
  TaskSpec task_;
  std::string config_text_;
  std::atomic<std::size_t> request_counter_{0};
};

}  // namespace ronar
