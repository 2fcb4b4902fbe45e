// SPDX-License-Identifier: Apache-2.0
#include "ronar/key_event.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "ronar/error.hpp"
#include "ronar/vision.hpp"

namespace ronar {

std::string_view to_string(MovementCategory c) {
  switch (c) {
    case MovementCategory::Pos: return "pos";
    case MovementCategory::Rot: return "rot";
    case MovementCategory::Cam: return "cam";
    case MovementCategory::Arm: return "arm";
    case MovementCategory::None: return "none";
  }
  return "none";
}

std::string_view to_string(Trigger t) {
  return t == Trigger::ThresholdFire ? "ThresholdFire" : "PlannerTransition";
}

std::optional<MovementCategory> parse_movement_category(std::string_view s) {
  if (s == "pos") return MovementCategory::Pos;
  if (s == "rot") return MovementCategory::Rot;
  if (s == "cam") return MovementCategory::Cam;
  if (s == "arm") return MovementCategory::Arm;
  if (s == "none") return MovementCategory::None;
  return std::nullopt;
}

std::optional<Trigger> parse_trigger(std::string_view s) {
  if (s == "ThresholdFire") return Trigger::ThresholdFire;
  if (s == "PlannerTransition") return Trigger::PlannerTransition;
  return std::nullopt;
}

MovementCategory movement_category(const MotionDeltas& d, const AxisEpsilon& eps) {
  const std::array<double, kAxisCount> delta{d.d_pos, d.d_rot, d.d_cam, d.d_arm};
  const std::array<double, kAxisCount> limit{eps.pos, eps.rot, eps.cam, eps.arm};
  auto best = MovementCategory::None;
  double best_ratio = 0.0;
  for (std::size_t a = 0; a < kAxisCount; ++a) {
    if (!(delta[a] > limit[a])) continue;
    const double ratio = delta[a] / limit[a];
    if (best == MovementCategory::None || ratio > best_ratio) {
      best = static_cast<MovementCategory>(a);
      best_ratio = ratio;
    }
  }
  return best;
}

double ParameterStats::positive_z(double value) const {
  if (degenerate()) return 0.0;
  return std::max(0.0, (value - mean) / std);
}

std::optional<double> axis_delta(const MultimodalFrame& f, std::size_t axis) {
  auto has_joint = [&](std::string_view name) { return f.joint_values.count(std::string(name)) > 0; };
  switch (axis) {
    case 0: return f.base_pose ? std::optional(f.deltas.d_pos) : std::nullopt;
    case 1: return f.base_pose ? std::optional(f.deltas.d_rot) : std::nullopt;
    case 2:
      return has_joint(joints::kCameraPan) || has_joint(joints::kCameraTilt) ? std::optional(f.deltas.d_cam) : std::nullopt;
    case 3:
      return has_joint(joints::kArmExtension) || has_joint(joints::kLift) ? std::optional(f.deltas.d_arm) : std::nullopt;
    default: return std::nullopt;
  }
}

namespace {

ParameterStats two_pass(const std::vector<double>& values) {
  ParameterStats s;
  s.count = values.size();
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  if (*lo == *hi) {
    s.mean = *lo;
    return s;  // constant series: std exactly zero
  }
  double sq = 0.0;
  for (double v : values) sq += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(sq / static_cast<double>(values.size()));
  return s;
}

const ParameterStats& flow_stats_for(const NormalizationStats& stats, MovementCategory category) {
  if (category == MovementCategory::None) return stats.flow_pooled;
  const auto& s = stats.flow[static_cast<std::size_t>(category)];
  return s.count == 0 ? stats.flow_pooled : s;
}

}  // namespace

NormalizationStats compute_stats(std::span<const std::vector<MultimodalFrame>> episodes, const AxisEpsilon& epsilon) {
  std::size_t total = 0;
  for (const auto& ep : episodes) total += ep.size();
  if (total < 2) throw Error(ErrorCode::TooFewFrames, fmt::format("need at least 2 frames, got {}", total));

  std::array<std::vector<double>, kAxisCount> flow;
  std::vector<double> pooled;
  std::array<std::vector<double>, kAxisCount> joint;
  for (const auto& ep : episodes) {
    for (const auto& f : ep) {
      if (f.flow_magnitude) {
        pooled.push_back(*f.flow_magnitude);
        const auto cat = movement_category(f.deltas, epsilon);
        if (cat != MovementCategory::None) flow[static_cast<std::size_t>(cat)].push_back(*f.flow_magnitude);
      }
      for (std::size_t a = 0; a < kAxisCount; ++a)
        if (auto d = axis_delta(f, a)) joint[a].push_back(*d);
    }
  }

  NormalizationStats stats;
  stats.epsilon = epsilon;
  stats.flow_pooled = two_pass(pooled);
  for (std::size_t a = 0; a < kAxisCount; ++a) {
    stats.flow[a] = two_pass(flow[a]);
    stats.joint[a] = two_pass(joint[a]);
  }
  return stats;
}

NormalizationStats compute_stats(std::span<const MultimodalFrame> frames, const AxisEpsilon& epsilon) {
  std::vector<std::vector<MultimodalFrame>> one{std::vector<MultimodalFrame>(frames.begin(), frames.end())};
  return compute_stats(std::span<const std::vector<MultimodalFrame>>(one), epsilon);
}

std::string ModalitySet::to_string() const {
  std::string out;
  auto add = [&](const char* s) {
    if (!out.empty()) out += ',';
    out += s;
  };
  if (environment) add("E");
  if (internal) add("I");
  if (task_planning) add("TP");
  return out;
}

ModalitySet ModalitySet::parse(std::string_view text) {
  ModalitySet set;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto comma = text.find(',', pos);
    if (comma == std::string_view::npos) comma = text.size();
    auto token = text.substr(pos, comma - pos);
    while (!token.empty() && token.front() == ' ') token.remove_prefix(1);
    while (!token.empty() && token.back() == ' ') token.remove_suffix(1);
    if (token == "E") set.environment = true;
    else if (token == "I") set.internal = true;
    else if (token == "TP") set.task_planning = true;
    else if (!token.empty()) throw Error(ErrorCode::InvalidArgument, fmt::format("unknown modality '{}'", token));
    pos = comma + 1;
  }
  if (set.empty()) throw Error(ErrorCode::InvalidArgument, "modality set must not be empty");
  return set;
}

std::vector<ModalitySet> parse_modality_sets(std::string_view text) {
  std::vector<ModalitySet> sets;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto semi = text.find(';', pos);
    if (semi == std::string_view::npos) semi = text.size();
    if (semi > pos) sets.push_back(ModalitySet::parse(text.substr(pos, semi - pos)));
    pos = semi + 1;
  }
  if (sets.empty()) throw Error(ErrorCode::InvalidArgument, "no modality sets given");
  return sets;
}

double frame_contribution(const MultimodalFrame& f, const NormalizationStats& stats, const ModalitySet& modalities) {
  double sum = 0.0;
  if (modalities.environment && f.flow_magnitude) {
    const auto cat = movement_category(f.deltas, stats.epsilon);
    sum += flow_stats_for(stats, cat).positive_z(*f.flow_magnitude);
  }
  if (modalities.internal) {
    for (std::size_t a = 0; a < kAxisCount; ++a)
      if (auto d = axis_delta(f, a)) sum += stats.joint[a].positive_z(*d);
  }
  return sum;
}

std::vector<KeyEvent> classify(std::span<const MultimodalFrame> frames, const NormalizationStats& stats, double threshold,
                               const ModalitySet& modalities) {
  if (!(threshold >= 0.0)) throw Error(ErrorCode::InvalidArgument, "threshold must be >= 0");
  if (modalities.empty()) throw Error(ErrorCode::InvalidArgument, "modality set must not be empty");

  for (const auto& f : frames) {
    if (modalities.environment && f.flow_magnitude && stats.flow_pooled.count == 0)
      throw Error(ErrorCode::StatsMismatch, fmt::format("frame {} has flow but the statistics have none", f.index));
    if (modalities.internal)
      for (std::size_t a = 0; a < kAxisCount; ++a)
        if (axis_delta(f, a) && stats.joint[a].count == 0)
          throw Error(ErrorCode::StatsMismatch,
                      fmt::format("frame {} has axis '{}' but the statistics have none", f.index, to_string(static_cast<MovementCategory>(a))));
  }

  std::vector<KeyEvent> events;
  double acc = 0.0;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto& f = frames[i];
    acc += frame_contribution(f, stats, modalities);
    const bool transition = modalities.task_planning && i > 0 && f.planner_state != frames[i - 1].planner_state;
    const bool fired = acc > threshold && (modalities.environment || modalities.internal);
    if (!transition && !fired) continue;
    events.push_back(KeyEvent{i, f.timestamp, transition ? Trigger::PlannerTransition : Trigger::ThresholdFire, acc,
                              movement_category(f.deltas, stats.epsilon), std::nullopt, std::nullopt});
    acc = 0.0;
  }
  return events;
}

double capture_rate(std::span<const double> event_times, std::span<const double> failure_times, double tolerance) {
  if (!(tolerance >= 0.0)) throw Error(ErrorCode::InvalidArgument, "tolerance must be >= 0");
  if (failure_times.empty()) return 1.0;
  constexpr double kSlack = 1e-9;  // absorbs representation error of frame timestamps
  std::vector<double> sorted(event_times.begin(), event_times.end());
  std::sort(sorted.begin(), sorted.end());
  std::size_t captured = 0;
  for (double f : failure_times) {
    auto it = std::lower_bound(sorted.begin(), sorted.end(), f - tolerance - kSlack);
    if (it != sorted.end() && *it <= f + tolerance + kSlack) ++captured;
  }
  return static_cast<double>(captured) / static_cast<double>(failure_times.size());
}

double capture_rate(std::span<const KeyEvent> events, std::span<const FailureLabel> failures, double tolerance) {
  std::vector<double> et;
  std::vector<double> ft;
  for (const auto& e : events) et.push_back(e.timestamp);
  for (const auto& f : failures) ft.push_back(f.t);
  return capture_rate(et, ft, tolerance);
}

void RunningStats::push(double x) {
  ++count_;
  const double delta = x - mean_;
  mean_ += delta / static_cast<double>(count_);
  m2_ += delta * (x - mean_);
}

ParameterStats RunningStats::snapshot() const {
  ParameterStats s;
  s.count = count_;
  s.mean = mean_;
  s.std = count_ > 0 ? std::sqrt(std::max(0.0, m2_ / static_cast<double>(count_))) : 0.0;
  return s;
}

StreamingClassifier::StreamingClassifier(double threshold, ModalitySet modalities, AxisEpsilon epsilon, std::size_t freeze_after)
    : threshold_(threshold), modalities_(modalities), epsilon_(epsilon), freeze_after_(freeze_after) {
  if (!(threshold >= 0.0)) throw Error(ErrorCode::InvalidArgument, "threshold must be >= 0");
  if (modalities.empty()) throw Error(ErrorCode::InvalidArgument, "modality set must not be empty");
}

NormalizationStats StreamingClassifier::stats() const {
  if (frozen_stats_) return *frozen_stats_;
  NormalizationStats s;
  s.epsilon = epsilon_;
  s.flow_pooled = flow_pooled_.snapshot();
  for (std::size_t a = 0; a < kAxisCount; ++a) {
    s.flow[a] = flow_[a].snapshot();
    s.joint[a] = joint_[a].snapshot();
  }
  return s;
}

std::optional<KeyEvent> StreamingClassifier::push(const MultimodalFrame& f) {
  if (!frozen_stats_) {
    if (f.flow_magnitude) {
      flow_pooled_.push(*f.flow_magnitude);
      const auto cat = movement_category(f.deltas, epsilon_);
      if (cat != MovementCategory::None) flow_[static_cast<std::size_t>(cat)].push(*f.flow_magnitude);
    }
    for (std::size_t a = 0; a < kAxisCount; ++a)
      if (auto d = axis_delta(f, a)) joint_[a].push(*d);
    ++frames_seen_;
    if (frames_seen_ >= freeze_after_) frozen_stats_ = stats();
  } else {
    ++frames_seen_;
  }

  const auto current = stats();
  accumulator_ += frame_contribution(f, current, modalities_);
  const bool transition = modalities_.task_planning && last_state_ && *last_state_ != f.planner_state;
  last_state_ = f.planner_state;
  const bool fired = accumulator_ > threshold_ && (modalities_.environment || modalities_.internal);
  if (!transition && !fired) return std::nullopt;
  KeyEvent ev{f.index, f.timestamp, transition ? Trigger::PlannerTransition : Trigger::ThresholdFire, accumulator_,
              movement_category(f.deltas, epsilon_), std::nullopt, std::nullopt};
  accumulator_ = 0.0;
  return ev;
}

void to_json(nlohmann::json& j, const KeyEvent& e) {
  j = nlohmann::json{{"frame_index", e.frame_index},
                     {"t", e.timestamp},
                     {"trigger", to_string(e.trigger)},
                     {"accumulated", e.accumulated},
                     {"movement", to_string(e.movement)}};
  j["sharpest_frame"] = e.sharpest_frame ? nlohmann::json(*e.sharpest_frame) : nlohmann::json(nullptr);
  j["sharpest_image"] = e.sharpest_image ? nlohmann::json(*e.sharpest_image) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, KeyEvent& e) {
  e.frame_index = j.at("frame_index").get<std::size_t>();
  e.timestamp = j.at("t").get<double>();
  auto trigger = parse_trigger(j.at("trigger").get<std::string>());
  if (!trigger) throw Error(ErrorCode::MalformedRecord, "unknown trigger");
  e.trigger = *trigger;
  e.accumulated = j.value("accumulated", 0.0);
  e.movement = parse_movement_category(j.value("movement", std::string{"none"})).value_or(MovementCategory::None);
  e.sharpest_frame.reset();
  e.sharpest_image.reset();
  if (j.contains("sharpest_frame") && !j["sharpest_frame"].is_null()) e.sharpest_frame = j["sharpest_frame"].get<std::size_t>();
  if (j.contains("sharpest_image") && !j["sharpest_image"].is_null()) e.sharpest_image = j["sharpest_image"].get<std::string>();
}

void attach_sharpest(std::span<KeyEvent> events, std::span<const MultimodalFrame> frames, ImageSource& images, double window) {
  for (auto& e : events) {
    try {
      const auto idx = select_sharpest(frames, e.timestamp, window, images);
      e.sharpest_frame = idx;
      e.sharpest_image = frames[idx].head_image;
    } catch (const Error& err) {
      if (err.code() != ErrorCode::NoImageInWindow) throw;
    }
  }
}

}  // namespace ronar
