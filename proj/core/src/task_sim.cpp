// SPDX-License-Identifier: Apache-2.0
#include "ronar/task_sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "ronar/error.hpp"
#include "ronar/planner_states.hpp"

namespace ronar {

using nlohmann::json;

std::string_view to_string(StateType t) {
  switch (t) {
    case StateType::Navigation: return "navigation";
    case StateType::Detection: return "detection";
    case StateType::Manipulation: return "manipulation";
  }
  return "manipulation";
}

std::optional<StateType> parse_state_type(std::string_view s) {
  if (s == "navigation") return StateType::Navigation;
  if (s == "detection") return StateType::Detection;
  if (s == "manipulation") return StateType::Manipulation;
  return std::nullopt;
}

StateType state_type_of(std::string_view action) {
  if (action.starts_with("navigate")) return StateType::Navigation;
  if (action.starts_with("look_for")) return StateType::Detection;
  return StateType::Manipulation;
}

// ---------------------------------------------------------------------------
// State machine

std::optional<std::string> StateMachine::next(std::string_view state, std::string_view trigger) const {
  for (const auto& e : edges)
    if (e.from == state && e.trigger == trigger) return e.to;
  return std::nullopt;
}

bool StateMachine::has_state(std::string_view state) const { return std::find(states.begin(), states.end(), state) != states.end(); }

std::vector<std::string> StateMachine::triggers_from(std::string_view state) const {
  std::vector<std::string> out;
  for (const auto& e : edges)
    if (e.from == state) out.push_back(e.trigger);
  return out;
}

StateMachine synthesize_machine(std::span<const std::string> actions) {
  if (actions.empty()) throw Error(ErrorCode::EmptyStateList, "a state machine needs at least one action state");
  std::set<std::string_view> seen;
  for (const auto& a : actions) {
    if (a.empty() || states::is_recovery(a) || states::is_terminal(a) || a == states::kStart)
      throw Error(ErrorCode::InvalidArgument, fmt::format("'{}' cannot be used as an action state name", a));
    if (!seen.insert(a).second) throw Error(ErrorCode::DuplicateStateName, fmt::format("state '{}' appears twice", a));
  }

  StateMachine m;
  m.actions.assign(actions.begin(), actions.end());
  m.states = m.actions;
  for (const auto& a : actions) {
    m.states.push_back(states::query_user(a));
    m.states.push_back(states::teleoperation(a));
  }
  m.states.emplace_back(states::kTaskComplete);
  m.states.emplace_back(states::kAborted);

  for (std::size_t i = 0; i < actions.size(); ++i) {
    const auto& a = actions[i];
    const auto q = states::query_user(a);
    const auto t = states::teleoperation(a);
    const std::string next = i + 1 < actions.size() ? actions[i + 1] : std::string(states::kTaskComplete);
    m.edges.push_back({a, std::string(triggers::kSuccess), next});
    m.edges.push_back({a, std::string(triggers::kFailure), q});
    m.edges.push_back({q, std::string(triggers::kTeleopAck), t});
    m.edges.push_back({q, std::string(triggers::kRetry), a});
    m.edges.push_back({q, std::string(triggers::kAbort), std::string(states::kAborted)});
    m.edges.push_back({t, std::string(triggers::kRetry), a});
    m.edges.push_back({t, std::string(triggers::kAbort), std::string(states::kAborted)});
  }
  return m;
}

void to_json(json& j, const StateMachine& m) {
  json edges = json::array();
  for (const auto& e : m.edges) edges.push_back({{"from", e.from}, {"trigger", e.trigger}, {"to", e.to}});
  j = json{{"initial", m.actions.empty() ? std::string{} : m.initial()},
           {"actions", m.actions},
           {"states", m.states},
           {"terminals", {states::kTaskComplete, states::kAborted}},
           {"edges", edges}};
}

void from_json(const json& j, StateMachine& m) {
  m.actions = j.at("actions").get<std::vector<std::string>>();
  m.states = j.at("states").get<std::vector<std::string>>();
  m.edges.clear();
  for (const auto& e : j.at("edges")) m.edges.push_back({e.at("from"), e.at("trigger"), e.at("to")});
}

std::string_view outcome_for_trigger(std::string_view trigger) {
  if (trigger == triggers::kFailure) return "failure";
  if (trigger == triggers::kAbort) return "aborted";
  return "success";
}

// ---------------------------------------------------------------------------
// Failure specs

namespace {

std::string default_signature(StateType kind) {
  switch (kind) {
    case StateType::Navigation: return "base velocity drops to zero while the goal distance stays positive";
    case StateType::Detection: return "detections stay empty during the look state, then the head recenters quickly";
    case StateType::Manipulation: return "arm extension lurches to its limit and stays pinned there";
  }
  return {};
}

}  // namespace

void to_json(json& j, const FailureSpec& f) {
  j = json{{"target_state", f.target_state},
           {"offset_s", f.offset_s},
           {"kind", to_string(f.kind)},
           {"recoverable", f.recoverable},
           {"signature", f.signature.empty() ? default_signature(f.kind) : f.signature}};
}

void from_json(const json& j, FailureSpec& f) {
  try {
    f.target_state = j.at("target_state").get<std::string>();
    f.offset_s = j.value("offset_s", 2.0);
    const auto kind = j.value("kind", std::string{});
    auto parsed = kind.empty() ? std::optional(state_type_of(f.target_state)) : parse_state_type(kind);
    if (!parsed) throw Error(ErrorCode::InvalidFailureSpec, fmt::format("unknown failure kind '{}'", kind));
    f.kind = *parsed;
    f.recoverable = j.value("recoverable", true);
    f.signature = j.value("signature", std::string{});
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidFailureSpec, e.what());
  }
}

std::vector<FailureSpec> load_failure_specs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, fmt::format("cannot open '{}'", path.string()));
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::InvalidFailureSpec, e.what());
  }
  if (j.is_object() && j.contains("failures")) j = j["failures"];
  if (!j.is_array()) throw Error(ErrorCode::InvalidFailureSpec, "failure file must hold an array of failure specs");
  return j.get<std::vector<FailureSpec>>();
}

std::vector<FailureSpec> validate_failures(const StateMachine& machine, std::span<const FailureSpec> failures) {
  if (failures.size() > kMaxFailures)
    throw Error(ErrorCode::InvalidFailureSpec, fmt::format("{} failures requested, at most {} allowed", failures.size(), kMaxFailures));
  std::vector<std::pair<std::size_t, FailureSpec>> ordered;
  for (const auto& f : failures) {
    auto it = std::find(machine.actions.begin(), machine.actions.end(), f.target_state);
    if (it == machine.actions.end())
      throw Error(ErrorCode::InvalidFailureSpec, fmt::format("target state '{}' is not an action state", f.target_state));
    if (state_type_of(f.target_state) != f.kind)
      throw Error(ErrorCode::InvalidFailureSpec,
                  fmt::format("{} failure cannot target {} state '{}'", to_string(f.kind), to_string(state_type_of(f.target_state)), f.target_state));
    if (!(f.offset_s > 0.0) || f.offset_s > 60.0)
      throw Error(ErrorCode::InvalidFailureSpec, fmt::format("offset {} s must lie in (0, 60]", f.offset_s));
    FailureSpec copy = f;
    if (copy.signature.empty()) copy.signature = default_signature(copy.kind);
    ordered.emplace_back(static_cast<std::size_t>(it - machine.actions.begin()), std::move(copy));
  }
  std::stable_sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<FailureSpec> out;
  for (auto& [_, f] : ordered) out.push_back(std::move(f));
  for (std::size_t i = 0; i + 1 < out.size(); ++i)
    if (!out[i].recoverable)
      throw Error(ErrorCode::InvalidFailureSpec, fmt::format("non-recoverable failure at '{}' must be the last failure", out[i].target_state));
  return out;
}

// ---------------------------------------------------------------------------
// Task library

const std::vector<TaskDefinition>& task_library() {
  static const std::vector<TaskDefinition> tasks = {
      {"put_cup",
       "put the cup from the table into the sink",
       {"navigate_to_table", "look_for_cup", "pick_cup", "navigate_to_sink", "look_for_sink", "place_in_sink"},
       {{"navigate_to_table", {{"cup", "cup", 0.10, 0.75}, {"table", "table", 0.90, 0.70}, {"bowl", "bowl", 0.18, 0.75}}},
        {"navigate_to_sink", {{"sink", "sink", 0.60, 0.85}, {"faucet", "faucet", 0.12, 1.00}}}}},
      {"heat_lunch",
       "put the lunch box into the microwave and close it",
       {"navigate_to_kitchen", "look_for_microwave", "open_microwave", "pick_lunch", "place_in_microwave", "close_microwave"},
       {{"navigate_to_kitchen",
         {{"microwave", "microwave", 0.50, 1.00}, {"lunch_box", "lunch box", 0.22, 0.90}, {"counter", "counter", 1.20, 0.85}}}}},
      {"hang_hat",
       "pick up the hat and hang it on the hanger",
       {"navigate_to_hat", "look_for_hat", "pick_hat", "navigate_to_hanger", "look_for_hanger", "hang_hat"},
       {{"navigate_to_hat", {{"hat", "hat", 0.25, 0.45}, {"chair", "chair", 0.50, 0.45}}},
        {"navigate_to_hanger", {{"hanger", "hanger", 0.30, 1.10}, {"door", "door", 0.90, 1.00}}}}},
      {"collect_clothes",
       "collect the clothes from the bed and put them in the basket",
       {"navigate_to_bedroom", "look_for_clothes", "pick_clothes", "navigate_to_basket", "look_for_basket", "place_in_basket"},
       {{"navigate_to_bedroom", {{"shirt", "shirt", 0.40, 0.55}, {"bed", "bed", 1.40, 0.50}}},
        {"navigate_to_basket", {{"basket", "basket", 0.45, 0.30}, {"dresser", "dresser", 0.80, 0.90}}}}},
  };
  return tasks;
}

const TaskDefinition& find_task(std::string_view name) {
  for (const auto& t : task_library())
    if (t.name == name) return t;
  throw Error(ErrorCode::InvalidArgument, fmt::format("unknown task '{}'", name));
}

RobotConfig simulated_robot_config() {
  return RobotConfig{{
      {"base", "differential-drive mobile base; pose is x, y in meters and yaw in radians", -100.0, 100.0, PartType::Base},
      {"camera_pan", "head camera pan joint, positive turns the camera left", -3.9, 1.5, PartType::Camera},
      {"camera_tilt", "head camera tilt joint, positive looks up", -1.53, 0.79, PartType::Camera},
      {"lift", "vertical lift carrying the arm, height above the floor", 0.0, 1.1, PartType::Prismatic},
      {"arm_extension", "telescoping arm extension, 0 is fully retracted", 0.0, 0.52, PartType::Prismatic},
      {"wrist_yaw", "wrist yaw joint at the end of the arm", -1.75, 4.0, PartType::Revolute},
      {"gripper", "gripper aperture, negative closes the fingers", -0.3, 0.6, PartType::Gripper},
  }};
}

std::string_view to_string(Intervention i) {
  switch (i) {
    case Intervention::Retry: return "retry";
    case Intervention::Abort: return "abort";
    case Intervention::TeleopAck: return "teleop_ack";
  }
  return "retry";
}

Intervention parse_intervention(std::string_view s) {
  if (s == "retry") return Intervention::Retry;
  if (s == "abort") return Intervention::Abort;
  if (s == "teleop_ack") return Intervention::TeleopAck;
  throw Error(ErrorCode::InvalidArgument, fmt::format("unknown intervention '{}'", s));
}

// ---------------------------------------------------------------------------
// Simulator

namespace {

constexpr long kJointEvery = 2;   // 10 Hz
constexpr long kCameraEvery = 4;  // 5 Hz, also the aligned-frame grid
constexpr double kFrameInterval = kSimTick * kCameraEvery;
constexpr double kCameraHeight = 1.2;
constexpr std::string_view kGoalStream = "nav/goal_distance";

double round6(double t) { return std::round(t * 1e6) / 1e6; }

double uniform(std::mt19937_64& rng, double lo, double hi) {
  const double u = static_cast<double>(rng() >> 11) * 0x1p-53;
  return lo + (hi - lo) * u;
}

long ticks_ceil(double seconds, long grid = 1) {
  auto t = static_cast<long>(std::ceil(seconds / kSimTick - 1e-9));
  return (t + grid - 1) / grid * grid;
}

struct RobotState {
  double x = 0.0, y = 0.0, yaw = 0.0;
  double pan = 0.0, tilt = -0.3;
  double arm = 0.05, lift = 0.6, wrist = 0.0, gripper = 0.4;
};

RobotState lerp(const RobotState& a, const RobotState& b, double s) {
  auto m = [s](double u, double v) { return u + (v - u) * s; };
  return {m(a.x, b.x),     m(a.y, b.y),       m(a.yaw, b.yaw),   m(a.pan, b.pan),          m(a.tilt, b.tilt),
          m(a.arm, b.arm), m(a.lift, b.lift), m(a.wrist, b.wrist), m(a.gripper, b.gripper)};
}

struct Keyframe {
  long tick;
  RobotState state;
};

// Piecewise smoothstep between keyframes; holds the last keyframe.
struct MotionPlan {
  std::vector<Keyframe> keys;

  RobotState at(long tick) const {
    if (tick <= keys.front().tick) return keys.front().state;
    for (std::size_t i = 1; i < keys.size(); ++i) {
      if (tick < keys[i].tick) {
        const auto& a = keys[i - 1];
        const auto& b = keys[i];
        const double u = static_cast<double>(tick - a.tick) / static_cast<double>(b.tick - a.tick);
        return lerp(a.state, b.state, u * u * (3.0 - 2.0 * u));
      }
    }
    return keys.back().state;
  }

  void add(long tick, RobotState s) {
    if (tick <= keys.back().tick) tick = keys.back().tick + 1;
    keys.push_back({tick, s});
  }

  // Drops everything after `tick` and pins the state reached there.
  void truncate(long tick) {
    const auto s = at(tick);
    std::erase_if(keys, [tick](const Keyframe& k) { return k.tick >= tick; });
    keys.push_back({tick, s});
  }
};

struct PlacedObject {
  TaskObject object;
  double x = 0.0, y = 0.0;
};

struct Location {
  double x = 0.0, y = 0.0, heading = 0.0;
  std::vector<PlacedObject> objects;
};

struct Pending {
  long tick;
  std::string trigger;
};

}  // namespace

struct Simulator::Impl {
  TaskDefinition task;
  std::string episode_id;
  std::uint64_t seed;
  SimOptions options;
  StateMachine machine;
  RobotConfig config = simulated_robot_config();
  std::vector<FailureSpec> failures;
  std::size_t next_failure = 0;
  std::mt19937_64 rng;
  SceneRenderer renderer;

  // Goal location per navigation action; objects sit around goals.
  std::map<std::string, Location> goals;
  std::vector<PlacedObject> all_objects;
  std::string last_goal;  // navigation action whose location the robot is at

  long tick = 0;
  std::string state;
  MotionPlan plan;
  std::optional<Pending> pending;
  std::deque<Intervention> commands;
  std::optional<long> end_tick;
  bool visit_failing = false;
  std::optional<FailureSpec> active_failure;
  std::vector<std::pair<long, FailureLabel>> scheduled_labels;
  std::vector<long> jolts;
  RobotState previous_state;
  double travel = 0.0;
  double previous_travel = 0.0;
  bool done = false;
  std::optional<MultimodalFrame> previous_frame;

  EpisodeLog log;
  std::vector<std::string> visited;

  Impl(TaskDefinition t, std::string id, std::uint64_t s, std::vector<FailureSpec> f, SimOptions o)
      : task(std::move(t)),
        episode_id(std::move(id)),
        seed(s),
        options(o),
        machine(synthesize_machine(task.actions)),
        rng(s),
        renderer(s ^ 0x9e3779b97f4a7c15ULL, o.image_width, o.image_height) {
    failures = validate_failures(machine, f);
    place_goals();
    log.episode_id = episode_id;
    log.task_name = task.name;
    log.task_description = task.description;
    log.subgoals = task.actions;
    log.robot_config = config;
    for (const auto& name : {std::string(streams::kOdometry)}) log.streams.push_back({name, Category::Internal, {}});
    for (auto j : {joints::kCameraPan, joints::kCameraTilt, joints::kLift, joints::kArmExtension, joints::kWristYaw, joints::kGripper})
      log.streams.push_back({std::string(streams::kJointPrefix) + std::string(j), Category::Internal, {}});
    log.streams.push_back({std::string(kGoalStream), Category::TaskPlanning, {}});
    if (options.render_images) log.streams.push_back({std::string(streams::kHeadCamera), Category::Environment, {}});
  }

  SensorStream& stream(std::string_view name) {
    for (auto& s : log.streams)
      if (s.name == name) return s;
    throw Error(ErrorCode::InvalidArgument, fmt::format("no stream '{}'", name));
  }

  void place_goals() {
    double x = 0.0, y = 0.0, heading = 0.0;
    for (const auto& a : task.actions) {
      if (state_type_of(a) != StateType::Navigation) continue;
      heading = wrap_angle(heading + uniform(rng, -1.2, 1.2));
      const double d = uniform(rng, 2.0, 4.0);
      x += d * std::cos(heading);
      y += d * std::sin(heading);
      Location loc{x, y, heading, {}};
      if (auto it = task.objects.find(a); it != task.objects.end()) {
        for (const auto& o : it->second) {
          const double r = uniform(rng, 0.7, 1.6);
          const double phi = heading + uniform(rng, -0.45, 0.45);
          loc.objects.push_back({o, x + r * std::cos(phi), y + r * std::sin(phi)});
          all_objects.push_back(loc.objects.back());
        }
      }
      goals.emplace(a, std::move(loc));
    }
  }

  double t_of(long k) const { return round6(static_cast<double>(k) * kSimTick); }

  RobotState current() const { return plan.keys.empty() ? RobotState{} : plan.at(tick); }

  const PlacedObject* target_object() const {
    auto it = goals.find(last_goal);
    if (it == goals.end() || it->second.objects.empty()) return nullptr;
    return &it->second.objects.front();
  }

  std::pair<double, double> aim_at(const RobotState& s, const PlacedObject& o) const {
    const double bearing = std::clamp(wrap_angle(std::atan2(o.y - s.y, o.x - s.x) - s.yaw), -1.3, 1.3);
    const double dist = std::hypot(o.x - s.x, o.y - s.y);
    return {bearing, std::atan2(o.object.height_m - kCameraHeight, dist)};
  }

  double dwell(double lo, double hi) { return uniform(rng, lo, hi); }

  // --- visit plans -------------------------------------------------------

  void plan_navigation(const std::string& action, long k0, double duration) {
    const auto& goal = goals.at(action);
    const auto s0 = current();
    const double heading = std::atan2(goal.y - s0.y, goal.x - s0.x);
    auto turn = s0;
    turn.yaw = s0.yaw + wrap_angle(heading - s0.yaw);
    turn.pan = 0.0;
    turn.tilt = -0.25;
    turn.arm = 0.05;
    auto arrive = turn;
    arrive.x = goal.x;
    arrive.y = goal.y;
    const long total = std::max(4L, ticks_ceil(duration));
    plan.keys = {{k0, s0}};
    plan.add(k0 + total * 3 / 10, turn);
    plan.add(k0 + total, arrive);
  }

  void plan_detection(long k0, double duration, bool succeed) {
    const auto s0 = current();
    const long total = std::max(6L, ticks_ceil(duration));
    auto left = s0;
    left.pan = -0.7;
    left.tilt = -0.35;
    auto right = left;
    right.pan = 0.7;
    auto final_pose = right;
    if (const auto* o = target_object(); o && succeed) std::tie(final_pose.pan, final_pose.tilt) = aim_at(s0, *o);
    plan.keys = {{k0, s0}};
    plan.add(k0 + total * 3 / 10, left);
    plan.add(k0 + total * 7 / 10, right);
    plan.add(k0 + total, final_pose);
  }

  void plan_manipulation(const std::string& action, long k0, double duration) {
    const auto s0 = current();
    const long total = std::max(8L, ticks_ceil(duration));
    auto raise = s0;
    raise.lift = uniform(rng, 0.55, 0.95);
    raise.wrist = 0.0;
    auto reach = raise;
    reach.arm = uniform(rng, 0.20, 0.40);
    auto grasp = reach;
    const bool closes = action.starts_with("pick") || action.starts_with("open") || action.starts_with("close");
    grasp.gripper = closes ? -0.2 : 0.5;
    auto retract = grasp;
    retract.arm = 0.05;
    plan.keys = {{k0, s0}};
    plan.add(k0 + total / 4, raise);
    plan.add(k0 + total * 55 / 100, reach);
    plan.add(k0 + total * 7 / 10, grasp);
    plan.add(k0 + total, retract);
  }

  void plan_hold(long k0) { plan.keys = {{k0, current()}}; }

  void plan_teleoperation(long k0, double duration) {
    const auto s0 = current();
    const long total = std::max(4L, ticks_ceil(duration));
    plan.keys = {{k0, s0}};
    const auto kind = active_failure ? active_failure->kind : StateType::Manipulation;
    if (kind == StateType::Navigation) {
      auto back = s0;
      back.x -= 0.3 * std::cos(s0.yaw);
      back.y -= 0.3 * std::sin(s0.yaw);
      auto turn = back;
      turn.yaw += 0.4;
      plan.add(k0 + total / 2, back);
      plan.add(k0 + total, turn);
    } else if (kind == StateType::Detection) {
      auto look = s0;
      if (const auto* o = target_object()) std::tie(look.pan, look.tilt) = aim_at(s0, *o);
      plan.add(k0 + total * 6 / 10, look);
      plan.add(k0 + total, look);
    } else {
      auto retract = s0;
      retract.arm = 0.10;
      auto closer = retract;
      closer.x += 0.15 * std::cos(s0.yaw);
      closer.y += 0.15 * std::sin(s0.yaw);
      plan.add(k0 + total / 2, retract);
      plan.add(k0 + total, closer);
    }
  }

  // --- failures ----------------------------------------------------------

  std::string reason_for(const FailureSpec& f) const {
    const auto* o = target_object();
    const std::string what = o ? o->object.label : std::string("target");
    switch (f.kind) {
      case StateType::Navigation: return fmt::format("base stopped before reaching the goal of {}; the path is blocked", f.target_state);
      case StateType::Detection: return fmt::format("the {} was not detected during {}", what, f.target_state);
      case StateType::Manipulation:
        return fmt::format("arm extension saturated at its {:.2f} m limit during {}; the {} is out of reach",
                           config.find(joints::kArmExtension)->limit_max, f.target_state, what);
    }
    return {};
  }

  std::string recovery_for(const FailureSpec& f) const {
    if (!f.recoverable) return fmt::format("{} cannot be recovered; abort the task", f.target_state);
    switch (f.kind) {
      case StateType::Navigation: return fmt::format("teleoperate the base around the obstacle, then retry {}", f.target_state);
      case StateType::Detection: return fmt::format("point the head camera at the target, then retry {}", f.target_state);
      case StateType::Manipulation: return fmt::format("retract the arm and move the base closer, then retry {}", f.target_state);
    }
    return {};
  }

  // Truncates the visit plan at the incident and returns the failure tick.
  long inject(const FailureSpec& f, long k0) {
    long incident = k0 + ticks_ceil(f.offset_s, kJointEvery);
    long fail_tick = incident;
    switch (f.kind) {
      case StateType::Navigation:
        plan.truncate(incident);  // base stops; the goal stays out of reach
        break;
      case StateType::Detection: {
        plan.truncate(incident);
        auto centered = plan.keys.back().state;
        centered.pan = 0.0;
        plan.add(incident + ticks_ceil(0.4), centered);
        break;
      }
      case StateType::Manipulation: {
        const double limit = config.find(joints::kArmExtension)->limit_max;
        const auto at = plan.at(incident);
        double normal_speed = 0.0;  // m/s of the planned reach
        for (std::size_t i = 1; i < plan.keys.size(); ++i) {
          const double d = std::abs(plan.keys[i].state.arm - plan.keys[i - 1].state.arm);
          const double dt = static_cast<double>(plan.keys[i].tick - plan.keys[i - 1].tick) * kSimTick;
          normal_speed = std::max(normal_speed, d / dt);
        }
        normal_speed = std::max(normal_speed, 0.1);
        fail_tick = incident + std::max(kJointEvery, ticks_ceil((limit - at.arm) / (2.0 * normal_speed), kJointEvery));
        plan.truncate(incident);
        auto pinned = at;
        pinned.arm = limit;
        plan.add(fail_tick, pinned);
        break;
      }
    }
    return fail_tick;
  }

  // --- transitions -------------------------------------------------------

  void enter(const std::string& to, long k, StepOutput& out, const std::string& from, std::string_view outcome) {
    PlannerTransition tr{t_of(k), from, to, std::string(outcome)};
    log.planner_events.push_back(tr);
    out.transitions.push_back(tr);
    state = to;
    visited.push_back(to);
    pending.reset();
    visit_failing = false;
    const auto& d = options.durations;

    if (states::is_terminal(to)) {
      plan_hold(k);
      end_tick = k + ticks_ceil(d.tail);
      return;
    }
    if (states::is_query_user(to)) {
      plan_hold(k);
      if (options.auto_operator) {
        const bool recover = !active_failure || active_failure->recoverable;
        pending = Pending{k + ticks_ceil(dwell(d.query_min, d.query_max)),
                          std::string(recover ? triggers::kTeleopAck : triggers::kAbort)};
      }
      return;
    }
    if (states::is_teleoperation(to)) {
      const double dur = dwell(d.teleoperation_min, d.teleoperation_max);
      plan_teleoperation(k, dur);
      if (options.auto_operator) pending = Pending{plan.keys.back().tick, std::string(triggers::kRetry)};
      return;
    }

    // Action state.
    const auto type = state_type_of(to);
    const bool fails = next_failure < failures.size() && failures[next_failure].target_state == to;
    double dur = 0.0;
    switch (type) {
      case StateType::Navigation: dur = dwell(d.navigation_min, d.navigation_max); break;
      case StateType::Detection: dur = dwell(d.detection_min, d.detection_max); break;
      case StateType::Manipulation: dur = dwell(d.manipulation_min, d.manipulation_max); break;
    }
    if (fails) dur = std::max(dur, failures[next_failure].offset_s + 1.0);
    switch (type) {
      case StateType::Navigation: plan_navigation(to, k, dur); break;
      case StateType::Detection: plan_detection(k, dur, !fails); break;
      case StateType::Manipulation: plan_manipulation(to, k, dur); break;
    }
    if (!fails) {
      pending = Pending{plan.keys.back().tick, std::string(triggers::kSuccess)};
      return;
    }
    const auto f = failures[next_failure++];
    active_failure = f;
    visit_failing = true;
    const long fail_tick = inject(f, k);
    scheduled_labels.emplace_back(fail_tick, FailureLabel{t_of(fail_tick), reason_for(f), recovery_for(f)});
    jolts.push_back(fail_tick);
    double delay = 0.0;
    switch (type) {
      case StateType::Navigation: delay = uniform(rng, 1.5, 3.0); break;
      case StateType::Detection: delay = uniform(rng, 0.5, 1.5); break;
      case StateType::Manipulation: delay = uniform(rng, 0.3, 1.0); break;
    }
    pending = Pending{fail_tick + ticks_ceil(delay), std::string(triggers::kFailure)};
  }

  void fire(const std::string& trigger, long k, StepOutput& out) {
    const auto to = machine.next(state, trigger);
    if (!to) throw Error(ErrorCode::InvalidArgument, fmt::format("'{}' does not apply in state '{}'", trigger, state));
    if (state_type_of(state) == StateType::Navigation && !states::is_recovery(state) && trigger == triggers::kSuccess) last_goal = state;
    const auto from = state;
    enter(*to, k, out, from, outcome_for_trigger(trigger));
  }

  // --- sampling ----------------------------------------------------------

  RobotState sensed(long k) const {
    auto s = plan.at(k);
    for (long j : jolts) {
      const double dt = static_cast<double>(k - j) * kSimTick;
      if (dt < 0.0 || dt > 1.0) continue;
      // A shake small enough that consecutive frames stay inside the flow
      // search radius (about 7 px per axis at the frame stride).
      s.pan += 0.015 * std::sin(2.0 * std::numbers::pi * dt / 0.3);
      s.tilt += 0.014 * std::sin(2.0 * std::numbers::pi * dt / 0.35);
    }
    return s;
  }

  double goal_distance(const RobotState& s) const {
    const auto base = std::string(states::base_action(state));
    auto it = goals.find(base);
    if (it == goals.end() || state_type_of(base) != StateType::Navigation || states::is_terminal(state)) return 0.0;
    return std::hypot(it->second.x - s.x, it->second.y - s.y);
  }

  std::vector<DetectedObject> detect(const RobotState& s) const {
    std::vector<DetectedObject> out;
    if (visit_failing && state_type_of(state) == StateType::Detection && !states::is_recovery(state)) return out;
    const double w = options.image_width;
    const double h = options.image_height;
    const double ppr = SceneRenderer::kPixelsPerRadian;
    for (const auto& o : all_objects) {
      const double dist = std::hypot(o.x - s.x, o.y - s.y);
      if (dist > 6.0 || dist < 0.2) continue;
      const double rel = wrap_angle(std::atan2(o.y - s.y, o.x - s.x) - (s.yaw + s.pan));
      const double elev = std::atan2(o.object.height_m - kCameraHeight, dist);
      const double half = 0.5 * o.object.size_m / dist * ppr;
      const double cx = w / 2 - rel * ppr;
      const double cy = h / 2 - (elev - s.tilt) * ppr;
      BoundingBox box{std::max(0.0, cx - half), std::max(0.0, cy - half), std::min(w, cx + half), std::min(h, cy + half)};
      if (box.x1 - box.x0 < 2.0 || box.y1 - box.y0 < 2.0) continue;
      auto round1 = [](double v) { return std::round(v * 10.0) / 10.0; };
      box = {round1(box.x0), round1(box.y0), round1(box.x1), round1(box.y1)};
      out.push_back({o.object.id, o.object.label, box, std::round(dist * 1000.0) / 1000.0});
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.object_id < b.object_id; });
    return out;
  }

  CameraPose camera_pose(const RobotState& s, double trav) const { return {s.yaw + s.pan, s.tilt, trav, s.lift, s.arm}; }

  StepOutput step() {
    if (done) throw Error(ErrorCode::InvalidArgument, "simulation already finished");
    StepOutput out;
    const long k = tick;
    out.t = t_of(k);

    if (k == 0) {
      plan.keys = {{0, RobotState{}}};
      previous_state = RobotState{};
      enter(machine.initial(), 0, out, std::string(states::kStart), "started");
    } else if (!end_tick) {
      if (!commands.empty()) {
        const auto c = commands.front();
        commands.pop_front();
        std::string trigger(c == Intervention::TeleopAck ? triggers::kTeleopAck : c == Intervention::Retry ? triggers::kRetry : triggers::kAbort);
        fire(trigger, k, out);
      } else if (pending && k >= pending->tick) {
        const auto trigger = pending->trigger;
        fire(trigger, k, out);
      }
    }

    for (auto it = scheduled_labels.begin(); it != scheduled_labels.end();) {
      if (it->first <= k) {
        log.failure_labels.push_back(it->second);
        out.failures.push_back(it->second);
        it = scheduled_labels.erase(it);
      } else {
        ++it;
      }
    }

    const auto s = sensed(k);
    const auto nominal = plan.at(k);
    travel += std::hypot(nominal.x - previous_state.x, nominal.y - previous_state.y);

    auto emit = [&](std::string_view name, std::vector<double> v) {
      Sample sample{out.t, std::move(v)};
      stream(name).samples.push_back(sample);
      out.samples.emplace_back(std::string(name), std::move(sample));
    };
    emit(streams::kOdometry, {s.x, s.y, s.yaw});
    if (k % kJointEvery == 0) {
      const std::pair<std::string_view, double> joint_values[] = {{joints::kCameraPan, s.pan}, {joints::kCameraTilt, s.tilt},
                                                                 {joints::kLift, s.lift},      {joints::kArmExtension, s.arm},
                                                                 {joints::kWristYaw, s.wrist}, {joints::kGripper, s.gripper}};
      for (const auto& [name, v] : joint_values) emit(std::string(streams::kJointPrefix) + std::string(name), {v});
      emit(kGoalStream, {goal_distance(s)});
    }
    if (k % kCameraEvery == 0) {
      MultimodalFrame f;
      f.index = static_cast<std::size_t>(k / kCameraEvery);
      f.timestamp = 0.0 + static_cast<double>(f.index) * kFrameInterval;
      f.base_pose = Pose2D{s.x, s.y, s.yaw};
      f.joint_values = {{std::string(joints::kCameraPan), s.pan}, {std::string(joints::kCameraTilt), s.tilt},
                        {std::string(joints::kLift), s.lift},      {std::string(joints::kArmExtension), s.arm},
                        {std::string(joints::kWristYaw), s.wrist}, {std::string(joints::kGripper), s.gripper}};
      f.aux_values = {{std::string(kGoalStream), goal_distance(s)}};
      f.planner_state = state;
      if (options.render_images) {
        const auto path = fmt::format("images/{}/head_{:05}.png", episode_id, f.index);
        auto objects = detect(s);
        const auto prev = k > 0 ? sensed(k - 1) : s;
        out.images.emplace_back(path, renderer.render(camera_pose(prev, previous_travel), camera_pose(s, travel), objects));
        Sample sample{out.t, ImageRef{path}};
        stream(streams::kHeadCamera).samples.push_back(sample);
        out.samples.emplace_back(std::string(streams::kHeadCamera), sample);
        DetectionRecord rec{out.t, path, std::move(objects)};
        log.detections.push_back(rec);
        out.detections.push_back(std::move(rec));
        f.head_image = path;
      }
      if (previous_frame) f.deltas = motion_between(*previous_frame, f);
      previous_frame = f;
      out.frame = std::move(f);
    }

    previous_state = nominal;
    previous_travel = travel;
    if (end_tick && k >= *end_tick) done = true;
    ++tick;
    return out;
  }
};

Simulator::Simulator(TaskDefinition task, std::string episode_id, std::uint64_t seed, std::vector<FailureSpec> failures, SimOptions options)
    : impl_(std::make_unique<Impl>(std::move(task), std::move(episode_id), seed, std::move(failures), options)) {}
Simulator::~Simulator() = default;
Simulator::Simulator(Simulator&&) noexcept = default;
Simulator& Simulator::operator=(Simulator&&) noexcept = default;

StepOutput Simulator::step() { return impl_->step(); }
bool Simulator::finished() const { return impl_->done; }
double Simulator::time() const { return impl_->t_of(impl_->tick); }
const std::string& Simulator::state() const { return impl_->state; }
const StateMachine& Simulator::machine() const { return impl_->machine; }

bool Simulator::awaiting_operator() const {
  return !impl_->pending && !impl_->done && (states::is_recovery(impl_->state));
}

void Simulator::intervene(Intervention action) {
  std::string_view trigger = action == Intervention::TeleopAck ? triggers::kTeleopAck
                             : action == Intervention::Retry   ? triggers::kRetry
                                                               : triggers::kAbort;
  if (impl_->done || !impl_->machine.next(impl_->state, trigger))
    throw Error(ErrorCode::InvalidArgument, fmt::format("'{}' does not apply in state '{}'", trigger, impl_->state.empty() ? "(not started)" : impl_->state));
  if (!impl_->commands.empty()) throw Error(ErrorCode::InvalidArgument, "an intervention is already queued");
  impl_->commands.push_back(action);
}

EpisodeLog Simulator::episode() const { return impl_->log; }

GeneratedEpisode generate_episode(const TaskDefinition& task, std::string episode_id, std::uint64_t seed, std::span<const FailureSpec> failures,
                                  SimOptions options) {
  options.auto_operator = true;
  Simulator sim(task, episode_id, seed, std::vector<FailureSpec>(failures.begin(), failures.end()), options);
  GeneratedEpisode g;
  g.seed = seed;
  while (!sim.finished()) {
    auto out = sim.step();
    for (auto& img : out.images) g.images.push_back(std::move(img));
  }
  g.episode = sim.episode();
  g.failures = validate_failures(sim.machine(), failures);
  for (const auto& tr : g.episode.planner_events) g.visited_states.push_back(tr.to_state);
  return g;
}

std::filesystem::path write_generated(const GeneratedEpisode& g, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto path = dir / (g.episode.episode_id + ".jsonl");
  save_episode(g.episode, path);
  for (const auto& [rel, img] : g.images) {
    const auto p = dir / rel;
    std::filesystem::create_directories(p.parent_path());
    write_png_gray(p, img);
  }
  json streams = json::object();
  std::size_t samples = 0;
  for (const auto& s : g.episode.streams) {
    streams[s.name] = s.samples.size();
    samples += s.samples.size();
  }
  json manifest{{"episode_id", g.episode.episode_id},
                {"task", g.episode.task_name},
                {"seed", g.seed},
                {"failures", g.failures},
                {"record_counts",
                 {{"meta", 1},
                  {"sample", samples},
                  {"planner", g.episode.planner_events.size()},
                  {"detection", g.episode.detections.size()},
                  {"failure_label", g.episode.failure_labels.size()}}},
                {"stream_counts", streams},
                {"images", g.images.size()}};
  std::ofstream(dir / (g.episode.episode_id + ".manifest.json")) << manifest.dump(2) << '\n';
  return path;
}

const std::vector<SuiteEntry>& fixture_suite() {
  using K = StateType;
  static const std::vector<SuiteEntry> suite = {
      {"synthetic_cup_00", "put_cup", 101, {}},
      {"synthetic_cup_01", "put_cup", 102, {{"pick_cup", 2.0, K::Manipulation, true, {}}}},
      {"synthetic_cup_03", "put_cup", 103,
       {{"navigate_to_table", 2.5, K::Navigation, true, {}}, {"look_for_cup", 2.0, K::Detection, true, {}}, {"pick_cup", 1.8, K::Manipulation, true, {}}}},
      {"synthetic_microwave_00", "heat_lunch", 201, {}},
      {"synthetic_microwave_01", "heat_lunch", 202, {{"open_microwave", 1.6, K::Manipulation, true, {}}}},
      {"synthetic_microwave_03", "heat_lunch", 203,
       {{"navigate_to_kitchen", 2.2, K::Navigation, true, {}}, {"look_for_microwave", 1.8, K::Detection, true, {}},
        {"pick_lunch", 2.0, K::Manipulation, true, {}}}},
      {"synthetic_hat_00", "hang_hat", 301, {}},
      {"synthetic_hat_01", "hang_hat", 302, {{"look_for_hat", 2.0, K::Detection, true, {}}}},
      {"synthetic_hat_03", "hang_hat", 303,
       {{"navigate_to_hat", 2.4, K::Navigation, true, {}}, {"pick_hat", 1.7, K::Manipulation, true, {}},
        {"hang_hat", 2.1, K::Manipulation, false, {}}}},
      {"synthetic_clothes_00", "collect_clothes", 401, {}},
      {"synthetic_clothes_01", "collect_clothes", 402, {{"navigate_to_basket", 2.6, K::Navigation, true, {}}}},
      {"synthetic_clothes_03", "collect_clothes", 403,
       {{"look_for_clothes", 1.9, K::Detection, true, {}}, {"pick_clothes", 2.2, K::Manipulation, true, {}},
        {"place_in_basket", 1.8, K::Manipulation, true, {}}}},
  };
  return suite;
}

}  // namespace ronar
