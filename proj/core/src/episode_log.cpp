// SPDX-License-Identifier: Apache-2.0
#include "ronar/episode_log.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>
#include <tuple>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "ronar/error.hpp"

namespace ronar {

using nlohmann::json;

std::string_view to_string(Category c) {
  switch (c) {
    case Category::Environment: return "Environment";
    case Category::Internal: return "Internal";
    case Category::TaskPlanning: return "TaskPlanning";
  }
  return "Internal";
}

std::optional<Category> parse_category(std::string_view s) {
  if (s == "Environment" || s == "E") return Category::Environment;
  if (s == "Internal" || s == "I") return Category::Internal;
  if (s == "TaskPlanning" || s == "TP") return Category::TaskPlanning;
  return std::nullopt;
}

std::string_view to_string(PartType t) {
  switch (t) {
    case PartType::Prismatic: return "prismatic";
    case PartType::Revolute: return "revolute";
    case PartType::Base: return "base";
    case PartType::Camera: return "camera";
    case PartType::Gripper: return "gripper";
    case PartType::Other: return "other";
  }
  return "other";
}

std::optional<PartType> parse_part_type(std::string_view s) {
  if (s == "prismatic") return PartType::Prismatic;
  if (s == "revolute") return PartType::Revolute;
  if (s == "base") return PartType::Base;
  if (s == "camera") return PartType::Camera;
  if (s == "gripper") return PartType::Gripper;
  if (s == "other") return PartType::Other;
  return std::nullopt;
}

bool SensorStream::is_image() const {
  return !samples.empty() && std::holds_alternative<ImageRef>(samples.front().value);
}

const RobotPart* RobotConfig::find(std::string_view name) const {
  auto it = std::find_if(parts.begin(), parts.end(), [&](const RobotPart& p) { return p.name == name; });
  return it == parts.end() ? nullptr : &*it;
}

const SensorStream* EpisodeLog::stream(std::string_view name) const {
  auto it = std::find_if(streams.begin(), streams.end(), [&](const SensorStream& s) { return s.name == name; });
  return it == streams.end() ? nullptr : &*it;
}

bool EpisodeLog::has_category(Category c) const {
  return std::any_of(streams.begin(), streams.end(), [&](const SensorStream& s) { return s.category == c; });
}

double EpisodeLog::t_start() const {
  double t = std::numeric_limits<double>::infinity();
  for (const auto& s : streams)
    if (!s.samples.empty()) t = std::min(t, s.samples.front().t);
  if (!planner_events.empty()) t = std::min(t, planner_events.front().t);
  return t;
}

double EpisodeLog::t_end() const {
  double t = -std::numeric_limits<double>::infinity();
  for (const auto& s : streams)
    if (!s.samples.empty()) t = std::max(t, s.samples.back().t);
  if (!planner_events.empty()) t = std::max(t, planner_events.back().t);
  return t;
}

// ---------------------------------------------------------------------------
// JSON helpers

void to_json(json& j, const DetectedObject& o) {
  j = json{{"id", o.object_id},
           {"label", o.label},
           {"box", {o.box.x0, o.box.y0, o.box.x1, o.box.y1}},
           {"distance_m", o.distance ? json(*o.distance) : json(nullptr)}};
}

void from_json(const json& j, DetectedObject& o) {
  o.object_id = j.at("id").get<std::string>();
  o.label = j.value("label", std::string{});
  const auto& box = j.at("box");
  if (!box.is_array() || box.size() != 4) throw std::invalid_argument("box must be [x0,y0,x1,y1]");
  o.box = {box[0].get<double>(), box[1].get<double>(), box[2].get<double>(), box[3].get<double>()};
  if (j.contains("distance_m") && !j["distance_m"].is_null())
    o.distance = j["distance_m"].get<double>();
  else
    o.distance.reset();
}

void to_json(json& j, const RobotConfig& c) {
  json parts = json::array();
  for (const auto& p : c.parts) {
    parts.push_back({{"name", p.name},
                     {"description", p.description},
                     {"limit", {p.limit_min, p.limit_max}},
                     {"part_type", to_string(p.type)}});
  }
  j = json{{"parts", parts}};
}

void from_json(const json& j, RobotConfig& c) {
  c.parts.clear();
  for (const auto& p : j.at("parts")) {
    RobotPart part;
    part.name = p.at("name").get<std::string>();
    part.description = p.value("description", std::string{});
    const auto& lim = p.at("limit");
    part.limit_min = lim.at(0).get<double>();
    part.limit_max = lim.at(1).get<double>();
    auto type = parse_part_type(p.value("part_type", std::string{"other"}));
    if (!type) throw std::invalid_argument("unknown part_type");
    part.type = *type;
    c.parts.push_back(std::move(part));
  }
}

void to_json(json& j, const MultimodalFrame& f) {
  j = json{{"index", f.index}, {"t", f.timestamp}, {"planner_state", f.planner_state}};
  j["head_image"] = f.head_image ? json(*f.head_image) : json(nullptr);
  j["depth_image"] = f.depth_image ? json(*f.depth_image) : json(nullptr);
  j["base_pose"] = f.base_pose ? json{f.base_pose->x, f.base_pose->y, f.base_pose->yaw} : json(nullptr);
  j["joints"] = f.joint_values;
  j["aux"] = f.aux_values;
  j["deltas"] = {{"d_pos", f.deltas.d_pos}, {"d_rot", f.deltas.d_rot}, {"d_cam", f.deltas.d_cam}, {"d_arm", f.deltas.d_arm}};
  j["flow_magnitude"] = f.flow_magnitude ? json(*f.flow_magnitude) : json(nullptr);
}

void from_json(const json& j, MultimodalFrame& f) {
  f.index = j.at("index").get<std::size_t>();
  f.timestamp = j.at("t").get<double>();
  f.planner_state = j.value("planner_state", std::string{});
  auto opt_string = [&](const char* key) -> std::optional<std::string> {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    return j[key].get<std::string>();
  };
  f.head_image = opt_string("head_image");
  f.depth_image = opt_string("depth_image");
  if (j.contains("base_pose") && !j["base_pose"].is_null()) {
    const auto& p = j["base_pose"];
    f.base_pose = Pose2D{p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()};
  } else {
    f.base_pose.reset();
  }
  f.joint_values = j.value("joints", std::map<std::string, double>{});
  f.aux_values = j.value("aux", std::map<std::string, double>{});
  const auto& d = j.at("deltas");
  f.deltas = {d.at("d_pos").get<double>(), d.at("d_rot").get<double>(), d.at("d_cam").get<double>(),
              d.at("d_arm").get<double>()};
  if (j.contains("flow_magnitude") && !j["flow_magnitude"].is_null())
    f.flow_magnitude = j["flow_magnitude"].get<double>();
  else
    f.flow_magnitude.reset();
}

// ---------------------------------------------------------------------------
// Loading

namespace {

[[noreturn]] void malformed(std::size_t line, const std::string& what) {
  throw Error(ErrorCode::MalformedRecord, fmt::format("line {}: {}", line, what));
}

double require_time(const json& rec, std::size_t line) {
  if (!rec.contains("t") || !rec["t"].is_number()) malformed(line, "field 't' missing or not a number");
  double t = rec["t"].get<double>();
  if (!std::isfinite(t)) malformed(line, "field 't' is not finite");
  return t;
}

std::string require_string(const json& rec, const char* field, std::size_t line, bool allow_empty = false) {
  if (!rec.contains(field) || !rec[field].is_string()) malformed(line, fmt::format("field '{}' missing or not a string", field));
  auto s = rec[field].get<std::string>();
  if (!allow_empty && s.empty()) malformed(line, fmt::format("field '{}' is empty", field));
  return s;
}

}  // namespace

EpisodeLog parse_episode(std::istream& in, const std::filesystem::path& base_dir) {
  EpisodeLog ep;
  ep.base_dir = base_dir;
  std::map<std::string, std::size_t> stream_index;
  std::vector<std::pair<double, std::size_t>> deferred_times;  // detections + labels, checked after range is known
  bool seen_meta = false;
  std::string text;
  std::size_t line_no = 0;

  while (std::getline(in, text)) {
    ++line_no;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(text);
    } catch (const json::parse_error& e) {
      malformed(line_no, fmt::format("invalid JSON ({})", e.what()));
    }
    if (!rec.is_object()) malformed(line_no, "record is not an object");
    const std::string kind = rec.value("kind", std::string{});

    if (!seen_meta) {
      if (kind != "meta") malformed(line_no, "first record must be kind 'meta'");
      seen_meta = true;
      ep.episode_id = require_string(rec, "episode_id", line_no);
      ep.task_name = require_string(rec, "task_name", line_no);
      ep.task_description = rec.value("task_description", std::string{});
      try {
        if (rec.contains("subgoals")) ep.subgoals = rec["subgoals"].get<std::vector<std::string>>();
        if (rec.contains("robot_config")) ep.robot_config = rec["robot_config"].get<RobotConfig>();
      } catch (const std::exception& e) {
        malformed(line_no, fmt::format("field 'robot_config'/'subgoals': {}", e.what()));
      }
      std::set<std::string> names;
      for (const auto& part : ep.robot_config.parts) {
        if (!names.insert(part.name).second) malformed(line_no, fmt::format("field 'robot_config': duplicate part '{}'", part.name));
        if (!(part.limit_min < part.limit_max)) malformed(line_no, fmt::format("field 'robot_config': part '{}' has min >= max", part.name));
      }
      continue;
    }

    if (kind == "sample") {
      const auto name = require_string(rec, "stream", line_no);
      auto category = parse_category(rec.value("category", std::string{}));
      if (!category) malformed(line_no, "field 'category' must be Environment, Internal or TaskPlanning");
      const double t = require_time(rec, line_no);
      if (!rec.contains("value")) malformed(line_no, "field 'value' missing");
      const auto& v = rec["value"];
      Sample sample{t, {}};
      if (v.is_array()) {
        std::vector<double> values;
        for (const auto& x : v) {
          if (!x.is_number()) malformed(line_no, "field 'value' must contain numbers");
          values.push_back(x.get<double>());
        }
        sample.value = std::move(values);
      } else if (v.is_object() && v.contains("image") && v["image"].is_string()) {
        sample.value = ImageRef{v["image"].get<std::string>()};
      } else {
        malformed(line_no, "field 'value' must be a number array or {\"image\": path}");
      }

      auto [it, inserted] = stream_index.try_emplace(name, ep.streams.size());
      if (inserted) ep.streams.push_back(SensorStream{name, *category, {}});
      auto& stream = ep.streams[it->second];
      if (stream.category != *category) malformed(line_no, fmt::format("field 'category': stream '{}' changes category", name));
      if (!stream.samples.empty()) {
        if (stream.samples.back().value.index() != sample.value.index())
          malformed(line_no, fmt::format("field 'value': stream '{}' mixes images and numbers", name));
        if (!(t > stream.samples.back().t))
          throw Error(ErrorCode::NonMonotonicTimestamps,
                      fmt::format("stream '{}' at line {}: t={} does not follow t={}", name, line_no, t, stream.samples.back().t));
      }
      stream.samples.push_back(std::move(sample));
    } else if (kind == "planner") {
      PlannerTransition tr;
      tr.t = require_time(rec, line_no);
      tr.from_state = require_string(rec, "from_state", line_no);
      tr.to_state = require_string(rec, "to_state", line_no);
      tr.outcome = rec.value("outcome", std::string{"success"});
      if (!ep.planner_events.empty() && tr.t < ep.planner_events.back().t)
        throw Error(ErrorCode::NonMonotonicTimestamps, fmt::format("stream 'planner' at line {}: t={} decreases", line_no, tr.t));
      ep.planner_events.push_back(std::move(tr));
    } else if (kind == "detection") {
      DetectionRecord det;
      det.t = require_time(rec, line_no);
      det.image = require_string(rec, "image", line_no);
      if (!rec.contains("objects") || !rec["objects"].is_array()) malformed(line_no, "field 'objects' missing or not an array");
      for (const auto& o : rec["objects"]) {
        DetectedObject obj;
        try {
          obj = o.get<DetectedObject>();
        } catch (const std::exception& e) {
          malformed(line_no, fmt::format("field 'objects': {}", e.what()));
        }
        if (!(obj.box.x0 < obj.box.x1) || !(obj.box.y0 < obj.box.y1)) malformed(line_no, fmt::format("field 'box' of '{}' is degenerate", obj.object_id));
        if (obj.distance && *obj.distance < 0) malformed(line_no, fmt::format("field 'distance_m' of '{}' is negative", obj.object_id));
        det.objects.push_back(std::move(obj));
      }
      deferred_times.emplace_back(det.t, line_no);
      ep.detections.push_back(std::move(det));
    } else if (kind == "failure_label") {
      FailureLabel label;
      label.t = require_time(rec, line_no);
      label.reason = require_string(rec, "reason", line_no, true);
      label.recovery = require_string(rec, "recovery", line_no, true);
      deferred_times.emplace_back(label.t, line_no);
      ep.failure_labels.push_back(std::move(label));
    } else if (kind == "meta") {
      malformed(line_no, "duplicate 'meta' record");
    } else {
      malformed(line_no, fmt::format("field 'kind': unknown kind '{}'", kind));
    }
  }

  if (!seen_meta) malformed(line_no, "missing 'meta' record");
  if (!ep.has_category(Category::Internal))
    throw Error(ErrorCode::MissingRequiredStream, "no Internal category stream present");

  const double lo = ep.t_start();
  const double hi = ep.t_end();
  for (const auto& [t, line] : deferred_times)
    if (t < lo || t > hi) malformed(line, fmt::format("field 't'={} outside episode range [{}, {}]", t, lo, hi));

  std::stable_sort(ep.detections.begin(), ep.detections.end(), [](const auto& a, const auto& b) { return a.t < b.t; });
  std::stable_sort(ep.failure_labels.begin(), ep.failure_labels.end(), [](const auto& a, const auto& b) { return a.t < b.t; });
  return ep;
}

EpisodeLog load_episode(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, fmt::format("cannot open episode '{}'", path.string()));
  return parse_episode(in, path.parent_path());
}

void write_episode(const EpisodeLog& episode, std::ostream& out) {
  json meta{{"kind", "meta"}, {"episode_id", episode.episode_id}, {"task_name", episode.task_name}};
  if (!episode.task_description.empty()) meta["task_description"] = episode.task_description;
  if (!episode.subgoals.empty()) meta["subgoals"] = episode.subgoals;
  meta["robot_config"] = episode.robot_config;
  out << meta.dump() << '\n';

  // (t, record rank, ordinal) keeps the output stable for equal timestamps.
  std::vector<std::tuple<double, int, std::size_t, json>> records;
  std::size_t ordinal = 0;
  for (const auto& s : episode.streams) {
    for (const auto& sample : s.samples) {
      json r{{"kind", "sample"}, {"stream", s.name}, {"category", to_string(s.category)}, {"t", sample.t}};
      if (const auto* img = std::get_if<ImageRef>(&sample.value))
        r["value"] = {{"image", img->path}};
      else
        r["value"] = std::get<std::vector<double>>(sample.value);
      records.emplace_back(sample.t, 0, ordinal++, std::move(r));
    }
  }
  for (const auto& p : episode.planner_events)
    records.emplace_back(p.t, 1, ordinal++,
                         json{{"kind", "planner"}, {"t", p.t}, {"from_state", p.from_state}, {"to_state", p.to_state}, {"outcome", p.outcome}});
  for (const auto& d : episode.detections)
    records.emplace_back(d.t, 2, ordinal++, json{{"kind", "detection"}, {"t", d.t}, {"image", d.image}, {"objects", d.objects}});
  for (const auto& f : episode.failure_labels)
    records.emplace_back(f.t, 3, ordinal++,
                         json{{"kind", "failure_label"}, {"t", f.t}, {"reason", f.reason}, {"recovery", f.recovery}});

  std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
    return std::tie(std::get<0>(a), std::get<1>(a), std::get<2>(a)) < std::tie(std::get<0>(b), std::get<1>(b), std::get<2>(b));
  });
  for (const auto& r : records) out << std::get<3>(r).dump() << '\n';
}

void save_episode(const EpisodeLog& episode, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, fmt::format("cannot write episode '{}'", path.string()));
  write_episode(episode, out);
}

// ---------------------------------------------------------------------------
// Alignment

std::size_t nearest_sample(std::span<const Sample> samples, double t) {
  auto it = std::lower_bound(samples.begin(), samples.end(), t, [](const Sample& s, double v) { return s.t < v; });
  if (it == samples.begin()) return 0;
  if (it == samples.end()) return samples.size() - 1;
  const auto i = static_cast<std::size_t>(it - samples.begin());
  const double after = samples[i].t - t;
  const double before = t - samples[i - 1].t;
  return before <= after ? i - 1 : i;
}

double wrap_angle(double a) {
  constexpr double kPi = std::numbers::pi;
  a = std::remainder(a, 2.0 * kPi);  // [-pi, pi]
  if (a <= -kPi) a += 2.0 * kPi;
  return a;
}

namespace {

double joint_or_zero(const MultimodalFrame& f, std::string_view name) {
  auto it = f.joint_values.find(std::string(name));
  return it == f.joint_values.end() ? 0.0 : it->second;
}

}  // namespace

MotionDeltas motion_between(const MultimodalFrame& prev, const MultimodalFrame& curr) {
  MotionDeltas d;
  if (prev.base_pose && curr.base_pose) {
    d.d_pos = std::hypot(curr.base_pose->x - prev.base_pose->x, curr.base_pose->y - prev.base_pose->y);
    d.d_rot = std::abs(wrap_angle(curr.base_pose->yaw - prev.base_pose->yaw));
  }
  const double pan = wrap_angle(joint_or_zero(curr, joints::kCameraPan) - joint_or_zero(prev, joints::kCameraPan));
  const double tilt = wrap_angle(joint_or_zero(curr, joints::kCameraTilt) - joint_or_zero(prev, joints::kCameraTilt));
  d.d_cam = std::hypot(pan, tilt);
  d.d_arm = std::hypot(joint_or_zero(curr, joints::kArmExtension) - joint_or_zero(prev, joints::kArmExtension),
                       joint_or_zero(curr, joints::kLift) - joint_or_zero(prev, joints::kLift));
  return d;
}

std::vector<MultimodalFrame> align(const EpisodeLog& episode, double interval) {
  if (!(interval > 0.0) || !std::isfinite(interval)) throw Error(ErrorCode::InvalidArgument, "interval must be > 0");
  const bool any_samples = std::any_of(episode.streams.begin(), episode.streams.end(),
                                       [](const SensorStream& s) { return !s.samples.empty(); });
  if (!any_samples) throw Error(ErrorCode::EmptyEpisode, fmt::format("episode '{}' has no samples", episode.episode_id));

  const double t0 = episode.t_start();
  const double t1 = episode.t_end();
  const auto count = static_cast<std::size_t>(std::floor((t1 - t0) / interval + 1e-9)) + 1;

  std::vector<MultimodalFrame> frames(count);
  std::size_t planner_cursor = 0;
  for (std::size_t i = 0; i < count; ++i) {
    auto& f = frames[i];
    f.index = i;
    f.timestamp = t0 + static_cast<double>(i) * interval;

    for (const auto& s : episode.streams) {
      if (s.samples.empty()) continue;
      const auto& sample = s.samples[nearest_sample(s.samples, f.timestamp)];
      if (const auto* img = std::get_if<ImageRef>(&sample.value)) {
        if (s.name == streams::kHeadCamera) f.head_image = img->path;
        else if (s.name == streams::kDepthCamera) f.depth_image = img->path;
        continue;
      }
      const auto& v = std::get<std::vector<double>>(sample.value);
      if (s.name == streams::kOdometry) {
        if (v.size() >= 3) f.base_pose = Pose2D{v[0], v[1], v[2]};
      } else if (s.name == streams::kFlowMagnitude) {
        if (!v.empty()) f.flow_magnitude = std::max(0.0, v[0]);
      } else if (s.name.starts_with(streams::kJointPrefix)) {
        if (!v.empty()) f.joint_values[s.name.substr(streams::kJointPrefix.size())] = v[0];
      } else if (!v.empty()) {
        f.aux_values[s.name] = v[0];
      }
    }

    // State in effect at the frame time (zero-order hold over transitions).
    // The slack absorbs i * interval rounding against microsecond timestamps.
    constexpr double kTimeSlack = 1e-9;
    const auto& events = episode.planner_events;
    while (planner_cursor < events.size() && events[planner_cursor].t <= f.timestamp + kTimeSlack) ++planner_cursor;
    if (planner_cursor > 0) f.planner_state = events[planner_cursor - 1].to_state;
    else if (!events.empty()) f.planner_state = events.front().from_state;

    if (i > 0) f.deltas = motion_between(frames[i - 1], f);
  }
  return frames;
}

EpisodeLog frames_as_episode(std::span<const MultimodalFrame> frames, const EpisodeLog& like) {
  EpisodeLog ep;
  ep.episode_id = like.episode_id;
  ep.task_name = like.task_name;
  ep.task_description = like.task_description;
  ep.subgoals = like.subgoals;
  ep.robot_config = like.robot_config;
  ep.base_dir = like.base_dir;

  std::map<std::string, std::size_t> index;
  auto stream_for = [&](const std::string& name, Category c) -> SensorStream& {
    auto [it, inserted] = index.try_emplace(name, ep.streams.size());
    if (inserted) ep.streams.push_back(SensorStream{name, c, {}});
    return ep.streams[it->second];
  };

  for (const auto& f : frames) {
    if (f.head_image) stream_for(std::string(streams::kHeadCamera), Category::Environment).samples.push_back({f.timestamp, ImageRef{*f.head_image}});
    if (f.depth_image) stream_for(std::string(streams::kDepthCamera), Category::Environment).samples.push_back({f.timestamp, ImageRef{*f.depth_image}});
    if (f.base_pose)
      stream_for(std::string(streams::kOdometry), Category::Internal)
          .samples.push_back({f.timestamp, std::vector<double>{f.base_pose->x, f.base_pose->y, f.base_pose->yaw}});
    if (f.flow_magnitude)
      stream_for(std::string(streams::kFlowMagnitude), Category::Environment).samples.push_back({f.timestamp, std::vector<double>{*f.flow_magnitude}});
    for (const auto& [name, v] : f.joint_values)
      stream_for(std::string(streams::kJointPrefix) + name, Category::Internal).samples.push_back({f.timestamp, std::vector<double>{v}});
    for (const auto& [name, v] : f.aux_values) {
      const auto* original = like.stream(name);
      stream_for(name, original ? original->category : Category::Internal).samples.push_back({f.timestamp, std::vector<double>{v}});
    }
  }

  for (std::size_t i = 1; i < frames.size(); ++i)
    if (frames[i].planner_state != frames[i - 1].planner_state)
      ep.planner_events.push_back({frames[i].timestamp, frames[i - 1].planner_state, frames[i].planner_state, "success"});
  if (ep.planner_events.empty() && !frames.empty() && !frames.front().planner_state.empty())
    ep.planner_events.push_back({frames.front().timestamp, frames.front().planner_state, frames.front().planner_state, "started"});
  return ep;
}

void write_frames_jsonl(std::span<const MultimodalFrame> frames, std::ostream& out) {
  for (const auto& f : frames) out << json(f).dump() << '\n';
}

std::vector<MultimodalFrame> read_frames_jsonl(std::istream& in) {
  std::vector<MultimodalFrame> frames;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    frames.push_back(json::parse(line).get<MultimodalFrame>());
  }
  return frames;
}

}  // namespace ronar
