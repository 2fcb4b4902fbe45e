// SPDX-License-Identifier: Apache-2.0
//
// Linear task state machines with query-user / teleoperation recovery
// companions, and a seeded simulator that executes them to produce
// ground-truthed synthetic episodes (or runs live, step by step).
#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ronar/episode_log.hpp"
#include "ronar/image.hpp"

namespace ronar {

enum class StateType { Navigation, Detection, Manipulation };

std::string_view to_string(StateType t);
std::optional<StateType> parse_state_type(std::string_view s);
/// navigate_* -> Navigation, look_for_* -> Detection, anything else -> Manipulation.
StateType state_type_of(std::string_view action);

/// Edge triggers.
namespace triggers {
inline constexpr std::string_view kSuccess = "success";
inline constexpr std::string_view kFailure = "failure";
inline constexpr std::string_view kTeleopAck = "teleop_ack";
inline constexpr std::string_view kRetry = "retry";
inline constexpr std::string_view kAbort = "abort";
}  // namespace triggers

struct MachineEdge {
  std::string from;
  std::string trigger;
  std::string to;

  friend bool operator==(const MachineEdge&, const MachineEdge&) = default;
  friend auto operator<=>(const MachineEdge&, const MachineEdge&) = default;
};

struct StateMachine {
  std::vector<std::string> actions;
  std::vector<std::string> states;  // actions, then companions, then terminals
  std::vector<MachineEdge> edges;

  const std::string& initial() const { return actions.front(); }
  std::optional<std::string> next(std::string_view state, std::string_view trigger) const;
  bool has_state(std::string_view state) const;
  std::vector<std::string> triggers_from(std::string_view state) const;
};

/// Throws EmptyStateList or DuplicateStateName.
StateMachine synthesize_machine(std::span<const std::string> actions);

void to_json(nlohmann::json& j, const StateMachine& m);
void from_json(const nlohmann::json& j, StateMachine& m);

/// Outcome recorded on a planner transition taken with `trigger`.
std::string_view outcome_for_trigger(std::string_view trigger);

struct FailureSpec {
  std::string target_state;
  double offset_s = 2.0;  // seconds into the visit when the incident starts
  StateType kind = StateType::Manipulation;
  bool recoverable = true;
  std::string signature;  // free-text description; a default is filled in

  friend bool operator==(const FailureSpec&, const FailureSpec&) = default;
};

void to_json(nlohmann::json& j, const FailureSpec& f);
void from_json(const nlohmann::json& j, FailureSpec& f);
std::vector<FailureSpec> load_failure_specs(const std::filesystem::path& path);

inline constexpr std::size_t kMaxFailures = 3;

/// Checks target existence, kind/state-type agreement, count, offsets and
/// that a non-recoverable failure comes last. Returns the specs ordered by
/// the position of their target state. Throws InvalidFailureSpec.
std::vector<FailureSpec> validate_failures(const StateMachine& machine, std::span<const FailureSpec> failures);

struct TaskObject {
  std::string id;
  std::string label;
  double size_m = 0.2;  // physical extent used for the image-plane box
  double height_m = 0.8;
};

struct TaskDefinition {
  std::string name;
  std::string description;
  std::vector<std::string> actions;
  /// Objects placed at the destination of each navigation action, keyed by
  /// that action's name.
  std::map<std::string, std::vector<TaskObject>> objects;
};

const std::vector<TaskDefinition>& task_library();
/// Throws InvalidArgument for unknown names.
const TaskDefinition& find_task(std::string_view name);

/// Stretch-like arm/head/base description used by simulated episodes.
RobotConfig simulated_robot_config();

struct DurationParams {
  double navigation_min = 4.0, navigation_max = 6.5;
  double detection_min = 3.0, detection_max = 4.5;
  double manipulation_min = 4.0, manipulation_max = 6.0;
  double query_min = 2.0, query_max = 3.5;
  double teleoperation_min = 3.0, teleoperation_max = 4.5;
  double tail = 1.0;  // idle time after a terminal state
};

struct SimOptions {
  DurationParams durations;
  int image_width = 320;
  int image_height = 240;
  bool render_images = true;
  /// When false, query_user and teleoperation wait for intervene().
  bool auto_operator = true;
};

enum class Intervention { Retry, Abort, TeleopAck };

std::string_view to_string(Intervention i);
/// Throws InvalidArgument.
Intervention parse_intervention(std::string_view s);

/// Records produced by one simulation step.
struct StepOutput {
  double t = 0.0;
  std::vector<std::pair<std::string, Sample>> samples;  // stream name -> sample
  std::vector<PlannerTransition> transitions;
  std::vector<DetectionRecord> detections;
  std::vector<FailureLabel> failures;
  std::vector<std::pair<std::string, GrayImage>> images;  // relative path -> pixels
  /// Set on steps that fall on the aligned-frame grid (every 0.2 s).
  std::optional<MultimodalFrame> frame;
};

class Simulator {
 public:
  Simulator(TaskDefinition task, std::string episode_id, std::uint64_t seed, std::vector<FailureSpec> failures, SimOptions options = {});
  ~Simulator();
  Simulator(Simulator&&) noexcept;
  Simulator& operator=(Simulator&&) noexcept;

  /// Advances by one tick (1/20 s). Must not be called once finished().
  StepOutput step();
  bool finished() const;

  double time() const;
  const std::string& state() const;
  bool awaiting_operator() const;
  /// Queues an operator command, applied on the next step. Throws
  /// InvalidArgument when the command does not apply to the current state.
  void intervene(Intervention action);

  const StateMachine& machine() const;
  /// Episode containing every record emitted so far.
  EpisodeLog episode() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

inline constexpr double kSimTick = 0.05;

struct GeneratedEpisode {
  EpisodeLog episode;
  std::vector<std::pair<std::string, GrayImage>> images;
  std::vector<FailureSpec> failures;
  std::uint64_t seed = 0;
  std::vector<std::string> visited_states;
};

/// Runs the simulator with the scripted operator until it finishes.
GeneratedEpisode generate_episode(const TaskDefinition& task, std::string episode_id, std::uint64_t seed,
                                  std::span<const FailureSpec> failures, SimOptions options = {});

/// Writes <dir>/<id>.jsonl, <dir>/<id>.manifest.json and the PNG images.
std::filesystem::path write_generated(const GeneratedEpisode& generated, const std::filesystem::path& dir);

struct SuiteEntry {
  std::string episode_id;
  std::string task;
  std::uint64_t seed = 0;
  std::vector<FailureSpec> failures;
};

/// The twelve fixture episodes: four tasks with zero, one and three failures.
const std::vector<SuiteEntry>& fixture_suite();

/// Renders one head-camera view. Exposed for tests and benchmarks.
struct CameraPose {
  double heading = 0.0;  // base yaw + camera pan, rad
  double tilt = 0.0;     // rad
  double travel = 0.0;   // accumulated base travel, m
  double lift = 0.0;
  double arm = 0.0;
};

class SceneRenderer {
 public:
  SceneRenderer(std::uint64_t seed, int width, int height);
  /// Averages views along the pose path from `from` to `to` (motion blur).
  GrayImage render(const CameraPose& from, const CameraPose& to, std::span<const DetectedObject> objects) const;

  static constexpr double kPixelsPerRadian = 254.6479;  // 1600 px texture around a full turn

 private:
  double sample_world(double x, double y) const;
  int width_;
  int height_;
  int world_w_;
  int world_h_;
  std::vector<float> world_;
  std::vector<float> arm_texture_;  // kArmTextureW x kArmTextureH, moves with the arm
};

}  // namespace ronar
