// SPDX-License-Identifier: Apache-2.0
//
// Multimodal key-event classifier: per-task z-score normalization of flow and
// joint-motion parameters, a positive cumulative sum that resets at every key
// event, threshold firing and planner-transition firing.
#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ronar/episode_log.hpp"

namespace ronar {

class ImageSource;

enum class MovementCategory { Pos, Rot, Cam, Arm, None };
enum class Trigger { ThresholdFire, PlannerTransition };

std::string_view to_string(MovementCategory c);
std::string_view to_string(Trigger t);
std::optional<MovementCategory> parse_movement_category(std::string_view s);
std::optional<Trigger> parse_trigger(std::string_view s);

inline constexpr std::size_t kAxisCount = 4;  // pos, rot, cam, arm

/// Per-axis activity thresholds for movement_category().
struct AxisEpsilon {
  double pos = 0.005;  // m
  double rot = 0.01;   // rad
  double cam = 0.01;   // rad
  double arm = 0.005;  // m
};

/// Axis whose delta/epsilon ratio is largest among axes exceeding their
/// epsilon; None when no axis does. Equal ratios prefer pos, rot, cam, arm.
MovementCategory movement_category(const MotionDeltas& deltas, const AxisEpsilon& epsilon = {});

struct ParameterStats {
  double mean = 0.0;
  double std = 0.0;
  std::size_t count = 0;

  bool degenerate() const { return !(std > 0.0); }
  /// max(0, (value - mean) / std); zero when degenerate.
  double positive_z(double value) const;
};

struct NormalizationStats {
  std::array<ParameterStats, kAxisCount> flow;   // flow magnitude per movement category
  ParameterStats flow_pooled;                    // every frame with flow; used for category None
  std::array<ParameterStats, kAxisCount> joint;  // motion delta per axis
  AxisEpsilon epsilon;
};

/// Deltas of one axis, or nullopt when the frame lacks the underlying stream.
std::optional<double> axis_delta(const MultimodalFrame& frame, std::size_t axis);

/// Exact two-pass population statistics over the frames of one task.
/// Throws TooFewFrames with fewer than two frames in total.
NormalizationStats compute_stats(std::span<const MultimodalFrame> frames, const AxisEpsilon& epsilon = {});
NormalizationStats compute_stats(std::span<const std::vector<MultimodalFrame>> episodes, const AxisEpsilon& epsilon = {});

struct ModalitySet {
  bool environment = false;
  bool internal = false;
  bool task_planning = false;

  bool empty() const { return !environment && !internal && !task_planning; }
  std::string to_string() const;  // "E,I,TP"
  /// Parses "E,I,TP"-style lists. Throws InvalidArgument on unknown or empty sets.
  static ModalitySet parse(std::string_view text);
  static ModalitySet all() { return {true, true, true}; }

  friend bool operator==(const ModalitySet&, const ModalitySet&) = default;
};

/// Parses "E;I;TP;E,I" into a list of sets.
std::vector<ModalitySet> parse_modality_sets(std::string_view text);

struct KeyEvent {
  std::size_t frame_index = 0;
  double timestamp = 0.0;
  Trigger trigger = Trigger::ThresholdFire;
  double accumulated = 0.0;
  MovementCategory movement = MovementCategory::None;
  std::optional<std::size_t> sharpest_frame;
  std::optional<std::string> sharpest_image;

  friend bool operator==(const KeyEvent&, const KeyEvent&) = default;
};

void to_json(nlohmann::json& j, const KeyEvent& e);
void from_json(const nlohmann::json& j, KeyEvent& e);

/// Fills sharpest_frame / sharpest_image for each event from frames within
/// `window` seconds. Events with no image in the window keep them absent.
void attach_sharpest(std::span<KeyEvent> events, std::span<const MultimodalFrame> frames, ImageSource& images,
                     double window = 1.0);

inline constexpr double kDefaultThreshold = 80.0;
inline constexpr double kDefaultTolerance = 1.5;

/// Sum of the enabled, clamped z-scores of one frame.
double frame_contribution(const MultimodalFrame& frame, const NormalizationStats& stats, const ModalitySet& modalities);

/// Runs the accumulate-and-reset classifier over frames in order. A frame that
/// is both a planner transition and over threshold yields one
/// PlannerTransition event. Throws StatsMismatch.
std::vector<KeyEvent> classify(std::span<const MultimodalFrame> frames, const NormalizationStats& stats, double threshold,
                               const ModalitySet& modalities);

/// Fraction of failure times with an event within +-tolerance; 1.0 when there
/// are no failures.
double capture_rate(std::span<const double> event_times, std::span<const double> failure_times,
                    double tolerance = kDefaultTolerance);
double capture_rate(std::span<const KeyEvent> events, std::span<const FailureLabel> failures,
                    double tolerance = kDefaultTolerance);

/// Welford running mean/variance.
class RunningStats {
 public:
  void push(double x);
  ParameterStats snapshot() const;
  std::size_t count() const { return count_; }

 private:
  std::size_t count_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

/// Online variant used for live narration: statistics are accumulated with
/// Welford updates and frozen once `freeze_after` frames have been observed.
class StreamingClassifier {
 public:
  StreamingClassifier(double threshold, ModalitySet modalities, AxisEpsilon epsilon = {}, std::size_t freeze_after = 100);

  /// Feeds the next aligned frame; returns a key event when one fires.
  std::optional<KeyEvent> push(const MultimodalFrame& frame);

  bool frozen() const { return frames_seen_ >= freeze_after_; }
  NormalizationStats stats() const;

 private:
  double threshold_;
  ModalitySet modalities_;
  AxisEpsilon epsilon_;
  std::size_t freeze_after_;
  std::size_t frames_seen_ = 0;
  std::array<RunningStats, kAxisCount> flow_;
  RunningStats flow_pooled_;
  std::array<RunningStats, kAxisCount> joint_;
  std::optional<NormalizationStats> frozen_stats_;
  double accumulator_ = 0.0;
  std::optional<std::string> last_state_;
};

}  // namespace ronar
