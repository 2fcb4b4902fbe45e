// SPDX-License-Identifier: Apache-2.0
//
// Episode data model: one recorded task execution with mixed-rate sensor
// streams, planner transitions, detections and ground-truth failure labels,
// plus alignment of those streams onto a fixed-interval frame sequence.
#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace ronar {

/// Data categories used throughout key-event selection.
enum class Category { Environment, Internal, TaskPlanning };

std::string_view to_string(Category c);
std::optional<Category> parse_category(std::string_view s);

/// Well-known stream and joint names understood by align().
namespace streams {
inline constexpr std::string_view kHeadCamera = "head_camera";
inline constexpr std::string_view kDepthCamera = "depth_camera";
inline constexpr std::string_view kOdometry = "odometry";  // [x, y, yaw]
inline constexpr std::string_view kFlowMagnitude = "flow_magnitude";  // precomputed [lambda]
inline constexpr std::string_view kJointPrefix = "joint/";
}  // namespace streams

namespace joints {
inline constexpr std::string_view kCameraPan = "camera_pan";
inline constexpr std::string_view kCameraTilt = "camera_tilt";
inline constexpr std::string_view kArmExtension = "arm_extension";
inline constexpr std::string_view kLift = "lift";
inline constexpr std::string_view kWristYaw = "wrist_yaw";
inline constexpr std::string_view kGripper = "gripper";
}  // namespace joints

struct ImageRef {
  std::string path;  // relative to the episode file's directory

  friend bool operator==(const ImageRef&, const ImageRef&) = default;
};

using SampleValue = std::variant<std::vector<double>, ImageRef>;

struct Sample {
  double t = 0.0;
  SampleValue value;
};

struct SensorStream {
  std::string name;
  Category category = Category::Internal;
  std::vector<Sample> samples;

  bool is_image() const;
};

struct PlannerTransition {
  double t = 0.0;
  std::string from_state;
  std::string to_state;
  std::string outcome;  // outcome of from_state: success | failure | aborted | started
};

struct BoundingBox {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  double center_x() const { return 0.5 * (x0 + x1); }
  double center_y() const { return 0.5 * (y0 + y1); }
};

struct DetectedObject {
  std::string object_id;
  std::string label;
  BoundingBox box;
  std::optional<double> distance;  // meters from the robot
};

struct DetectionRecord {
  double t = 0.0;
  std::string image;
  std::vector<DetectedObject> objects;
};

struct FailureLabel {
  double t = 0.0;
  std::string reason;
  std::string recovery;
};

enum class PartType { Prismatic, Revolute, Base, Camera, Gripper, Other };

std::string_view to_string(PartType t);
std::optional<PartType> parse_part_type(std::string_view s);

struct RobotPart {
  std::string name;
  std::string description;
  double limit_min = 0.0;
  double limit_max = 0.0;
  PartType type = PartType::Other;
};

struct RobotConfig {
  std::vector<RobotPart> parts;

  const RobotPart* find(std::string_view name) const;
};

struct EpisodeLog {
  std::string episode_id;
  std::string task_name;
  std::string task_description;
  std::vector<std::string> subgoals;  // optional; empty when the log does not carry them
  std::vector<SensorStream> streams;
  std::vector<PlannerTransition> planner_events;
  std::vector<DetectionRecord> detections;
  std::vector<FailureLabel> failure_labels;
  RobotConfig robot_config;
  std::filesystem::path base_dir;  // images resolve against this

  const SensorStream* stream(std::string_view name) const;
  bool has_category(Category c) const;
  /// Earliest timestamp over all streams and planner events.
  double t_start() const;
  /// Latest timestamp over all streams and planner events.
  double t_end() const;
  std::filesystem::path resolve(const std::string& relative) const { return base_dir / relative; }
};

struct Pose2D {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;

  friend bool operator==(const Pose2D&, const Pose2D&) = default;
};

/// Absolute changes between consecutive aligned frames.
struct MotionDeltas {
  double d_pos = 0.0;  // m
  double d_rot = 0.0;  // rad
  double d_cam = 0.0;  // rad
  double d_arm = 0.0;  // m

  friend bool operator==(const MotionDeltas&, const MotionDeltas&) = default;
};

struct MultimodalFrame {
  std::size_t index = 0;
  double timestamp = 0.0;
  std::optional<std::string> head_image;
  std::optional<std::string> depth_image;
  std::optional<Pose2D> base_pose;
  std::map<std::string, double> joint_values;
  std::map<std::string, double> aux_values;  // other scalar streams, keyed by stream name
  std::string planner_state;
  MotionDeltas deltas;
  std::optional<double> flow_magnitude;

  friend bool operator==(const MultimodalFrame&, const MultimodalFrame&) = default;
};

/// Reads and validates a JSONL episode. Throws Error with MalformedRecord,
/// NonMonotonicTimestamps or MissingRequiredStream.
EpisodeLog load_episode(const std::filesystem::path& path);
EpisodeLog parse_episode(std::istream& in, const std::filesystem::path& base_dir);

/// Deterministic serialization: meta first, then records ordered by time.
void write_episode(const EpisodeLog& episode, std::ostream& out);
void save_episode(const EpisodeLog& episode, const std::filesystem::path& path);

/// Default interval between aligned frames, seconds.
inline constexpr double kDefaultInterval = 0.2;

/// Resamples every stream onto t_start + i * interval using the sample with
/// the nearest timestamp (ties go to the earlier sample). Planner state is
/// the state in effect at the frame time.
std::vector<MultimodalFrame> align(const EpisodeLog& episode, double interval = kDefaultInterval);

/// Index of the sample nearest to t; ties resolve to the earlier sample.
/// Requires a non-empty, strictly increasing sample list.
std::size_t nearest_sample(std::span<const Sample> samples, double t);

/// Wraps an angle into (-pi, pi].
double wrap_angle(double a);

MotionDeltas motion_between(const MultimodalFrame& prev, const MultimodalFrame& curr);

/// Re-expresses aligned frames as an episode whose streams are sampled at the
/// frame timestamps. Metadata is copied from `like`.
EpisodeLog frames_as_episode(std::span<const MultimodalFrame> frames, const EpisodeLog& like);

void to_json(nlohmann::json& j, const DetectedObject& o);
void from_json(const nlohmann::json& j, DetectedObject& o);
void to_json(nlohmann::json& j, const RobotConfig& c);
void from_json(const nlohmann::json& j, RobotConfig& c);
void to_json(nlohmann::json& j, const MultimodalFrame& f);
void from_json(const nlohmann::json& j, MultimodalFrame& f);

void write_frames_jsonl(std::span<const MultimodalFrame> frames, std::ostream& out);
std::vector<MultimodalFrame> read_frames_jsonl(std::istream& in);

}  // namespace ronar
