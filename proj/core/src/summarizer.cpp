// SPDX-License-Identifier: Apache-2.0
#include "ronar/summarizer.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "ronar/error.hpp"
#include "ronar/planner_states.hpp"

namespace ronar {

TaskSpec task_spec_for(const EpisodeLog& episode) {
  TaskSpec spec{episode.task_name, episode.task_description, episode.subgoals};
  if (!spec.subgoals.empty()) return spec;
  std::set<std::string> seen;
  for (const auto& ev : episode.planner_events) {
    for (const auto* s : {&ev.from_state, &ev.to_state}) {
      if (*s == states::kStart || states::is_terminal(*s) || states::is_recovery(*s)) continue;
      if (seen.insert(*s).second) spec.subgoals.push_back(*s);
    }
  }
  return spec;
}

std::string_view to_string(SubgoalOutcome o) {
  switch (o) {
    case SubgoalOutcome::Success: return "success";
    case SubgoalOutcome::Failure: return "failure";
    case SubgoalOutcome::Aborted: return "aborted";
    case SubgoalOutcome::InProgress: return "in-progress";
  }
  return "in-progress";
}

namespace {

SubgoalOutcome outcome_of(std::string_view s) {
  if (s == "failure") return SubgoalOutcome::Failure;
  if (s == "aborted") return SubgoalOutcome::Aborted;
  return SubgoalOutcome::Success;
}

}  // namespace

std::string PlanningDigest::text() const {
  std::string out = fmt::format("Task: {}", task_name);
  if (!task_description.empty()) out += fmt::format(" ({})", task_description);
  out += "\nSub-goal sequence:";
  for (std::size_t i = 0; i < subgoal_sequence.size(); ++i) out += fmt::format(" {}{}) {}", i ? "-> " : "", i + 1, subgoal_sequence[i]);
  out += fmt::format("\nCurrent sub-goal: {}\nHistory:", current_subgoal.empty() ? "(none)" : current_subgoal);
  if (history.empty()) out += " (none)";
  for (std::size_t i = 0; i < history.size(); ++i) {
    const auto& h = history[i];
    out += fmt::format("\n  {}. {}: {} ({:.2f} s to {:.2f} s)", i + 1, h.subgoal, to_string(h.outcome), h.t_start, h.t_end);
  }
  return out;
}

PlanningDigest summarize_planning(std::span<const PlannerTransition> events, double now, const TaskSpec& spec) {
  PlanningDigest d;
  d.task_name = spec.name;
  d.task_description = spec.description;
  d.subgoal_sequence = spec.subgoals;

  const std::set<std::string_view> known(spec.subgoals.begin(), spec.subgoals.end());
  auto check = [&](const std::string& state, bool as_source) {
    if (as_source && state == states::kStart) return;
    if (states::is_terminal(state)) return;
    if (known.count(states::base_action(state))) return;
    throw Error(ErrorCode::UnknownState, fmt::format("state '{}' is not part of task '{}'", state, spec.name));
  };

  std::optional<SubgoalExecution> open;
  for (const auto& ev : events) {
    if (ev.t > now) break;
    check(ev.from_state, true);
    check(ev.to_state, false);
    if (open) {
      open->outcome = outcome_of(ev.outcome);
      open->t_end = ev.t;
      d.history.push_back(*open);
    } else if (ev.from_state != states::kStart && !ev.from_state.empty()) {
      // The state was entered before the log began.
      d.history.push_back({ev.from_state, outcome_of(ev.outcome), ev.t, ev.t});
    }
    open = SubgoalExecution{ev.to_state, SubgoalOutcome::InProgress, ev.t, ev.t};
  }

  if (!open) {
    d.current_subgoal = spec.subgoals.empty() ? std::string{} : spec.subgoals.front();
    return d;
  }
  d.current_subgoal = open->subgoal;
  if (!states::is_terminal(open->subgoal)) {
    open->t_end = std::max(open->t_start, now);
    d.history.push_back(*open);
  }
  return d;
}

bool near_limit(double value, double limit_min, double limit_max, double fraction) {
  const double margin = fraction * (limit_max - limit_min);
  return value >= limit_max - margin || value <= limit_min + margin;
}

std::string_view part_unit(PartType type) {
  switch (type) {
    case PartType::Prismatic:
    case PartType::Base: return "m";
    case PartType::Revolute:
    case PartType::Camera: return "rad";
    case PartType::Gripper:
    case PartType::Other: return "";
  }
  return "";
}

namespace {

std::string with_unit(double v, std::string_view unit, bool sign = false) {
  auto num = sign ? fmt::format("{:+.3f}", v) : fmt::format("{:.3f}", v);
  return unit.empty() ? num : num + " " + std::string(unit);
}

}  // namespace

std::string format_part_line(const PartState& p) {
  const auto unit = part_unit(p.type);
  std::string change;
  if (!p.previous) change = "first event";
  else if (p.unchanged()) change = "unchanged";
  else change = "changed by " + with_unit(p.value - *p.previous, unit, true);
  auto line = fmt::format("{} ({}): {} | limit [{:.3f}, {:.3f}] | {}", p.name, to_string(p.type), with_unit(p.value, unit),
                          p.limit_min, p.limit_max, change);
  if (p.near_limit) line += " | NEAR_LIMIT";
  return line;
}

std::vector<std::string> InternalDigest::lines() const {
  std::vector<std::string> out;
  for (const auto& p : parts) out.push_back(format_part_line(p));
  if (base_pose) {
    auto line = fmt::format("base pose: x {:.3f} m, y {:.3f} m, yaw {:.3f} rad", base_pose->x, base_pose->y, base_pose->yaw);
    if (!previous_base_pose) line += " | first event";
    else if (*previous_base_pose == *base_pose) line += " | unchanged";
    else
      line += fmt::format(" | moved {:.3f} m, turned {:.3f} rad", std::hypot(base_pose->x - previous_base_pose->x, base_pose->y - previous_base_pose->y),
                          std::abs(wrap_angle(base_pose->yaw - previous_base_pose->yaw)));
    out.push_back(std::move(line));
  }
  return out;
}

std::string InternalDigest::text() const {
  const auto ls = lines();
  if (ls.empty()) return "no internal state recorded";
  std::string out;
  for (const auto& l : ls) {
    if (!out.empty()) out += '\n';
    out += l;
  }
  return out;
}

InternalDigest internal_digest(const MultimodalFrame& current, const MultimodalFrame* previous, const RobotConfig& config) {
  InternalDigest d;
  for (const auto& [name, value] : current.joint_values) {
    const auto* part = config.find(name);
    if (!part) throw Error(ErrorCode::UnknownJointName, fmt::format("joint '{}' is not in the robot configuration", name));
    PartState s{name, part->type, value, std::nullopt, part->limit_min, part->limit_max, near_limit(value, part->limit_min, part->limit_max)};
    if (previous) {
      if (auto it = previous->joint_values.find(name); it != previous->joint_values.end()) s.previous = it->second;
    }
    d.parts.push_back(std::move(s));
  }
  d.base_pose = current.base_pose;
  if (previous) d.previous_base_pose = previous->base_pose;
  return d;
}

std::string robot_config_text(const RobotConfig& config) {
  std::string out;
  for (const auto& p : config.parts) {
    if (!out.empty()) out += '\n';
    const auto unit = part_unit(p.type);
    out += fmt::format("{} | {} | [{}, {}]{}{} | {}", p.name, to_string(p.type), p.limit_min, p.limit_max, unit.empty() ? "" : " ", unit,
                       p.description);
  }
  return out.empty() ? "(no parts listed)" : out;
}

std::string ExperienceSummary::text() const {
  auto prose = [](const std::optional<std::string>& p, std::string_view what) {
    return p ? *p : fmt::format("({} summary unavailable)", what);
  };
  return fmt::format(
      "Key event {} at t={:.2f} s ({})\n[Environment]\n{}\nSummary: {}\n[Internal]\n{}\nSummary: {}\n[Planning]\n{}", event_index,
      timestamp, to_string(trigger), environment.digest, prose(environment.prose, "environment"), internal.digest.text(),
      prose(internal.prose, "internal"), planning.text());
}

void to_json(nlohmann::json& j, const PromptProvenance& p) {
  j = nlohmann::json{{"purpose", p.purpose},         {"template", p.template_name}, {"template_version", p.template_version},
                     {"request_id", p.request_id},   {"prompt_hash", p.prompt_hash}, {"provider", p.provider}};
  if (!p.error.empty()) j["error"] = p.error;
}

void to_json(nlohmann::json& j, const ExperienceSummary& s) {
  using nlohmann::json;
  auto opt = [](const std::optional<std::string>& v) { return v ? json(*v) : json(nullptr); };
  json triplets = json::array();
  for (const auto& t : s.environment.graph.triplets)
    triplets.push_back({{"subject", t.subject_id}, {"relation", to_string(t.relation)}, {"object", t.object_id}, {"gap", t.gap}});
  json parts = json::array();
  for (const auto& p : s.internal.digest.parts) {
    json jp{{"name", p.name}, {"type", to_string(p.type)}, {"value", p.value}, {"near_limit", p.near_limit}};
    jp["previous"] = p.previous ? json(*p.previous) : json(nullptr);
    parts.push_back(std::move(jp));
  }
  json history = json::array();
  for (const auto& h : s.planning.history)
    history.push_back({{"subgoal", h.subgoal}, {"outcome", to_string(h.outcome)}, {"t_start", h.t_start}, {"t_end", h.t_end}});
  j = json{{"event_index", s.event_index},
           {"frame_index", s.frame_index},
           {"t", s.timestamp},
           {"trigger", to_string(s.trigger)},
           {"image", opt(s.image)},
           {"degraded", s.degraded()},
           {"environment",
            {{"objects", s.environment.graph.objects}, {"triplets", triplets}, {"digest", s.environment.digest}, {"prose", opt(s.environment.prose)}}},
           {"internal", {{"parts", parts}, {"digest", s.internal.digest.text()}, {"prose", opt(s.internal.prose)}}},
           {"planning",
            {{"task_name", s.planning.task_name},
             {"subgoal_sequence", s.planning.subgoal_sequence},
             {"current_subgoal", s.planning.current_subgoal},
             {"history", history},
             {"digest", s.planning.text()}}},
           {"provenance", json::array({s.environment.provenance, s.internal.provenance})}};
}

// ---------------------------------------------------------------------------

Summarizer::Summarizer(const EpisodeLog& episode, std::span<const MultimodalFrame> frames, Detector& detector, Provider& provider,
                       const PromptLibrary& prompts, SummarizerOptions options)
    : episode_(episode),
      frames_(frames),
      detector_(detector),
      provider_(provider),
      prompts_(prompts),
      options_(options),
      task_(task_spec_for(episode)),
      config_text_(robot_config_text(episode.robot_config)) {}

const MultimodalFrame& Summarizer::frame_of(const KeyEvent& event) const {
  if (event.frame_index >= frames_.size())
    throw Error(ErrorCode::InvalidArgument, fmt::format("key event frame {} is outside the {} aligned frames", event.frame_index, frames_.size()));
  return frames_[event.frame_index];
}

std::string Summarizer::next_request_id(std::string_view purpose) {
  return fmt::format("{}/sum{:05}/{}", episode_.episode_id, request_counter_++, purpose);
}

std::optional<std::string> Summarizer::call(const RenderedPrompt& prompt, PromptProvenance& prov) {
  ProviderRequest request{prompt.system, prompt.user, options_.generation, prov.request_id};
  try {
    auto response = provider_.complete(request);
    prov.provider = response.provider;
    return response.text;
  } catch (const Error& e) {
    if (!is_provider_error(e.code())) throw;
    prov.provider = provider_.name();
    prov.error = e.what();
    return std::nullopt;
  }
}

namespace {

PromptProvenance provenance_for(const RenderedPrompt& prompt, std::string purpose, std::string request_id) {
  PromptProvenance p;
  p.purpose = std::move(purpose);
  p.template_name = prompt.template_name;
  p.template_version = prompt.template_version;
  p.request_id = std::move(request_id);
  p.prompt_hash = stable_hash(prompt.system + '\x1f' + prompt.user);
  return p;
}

}  // namespace

EnvironmentSummary Summarizer::summarize_environment(const KeyEvent& event) {
  const auto& frame = frame_of(event);
  EnvironmentSummary env;
  const auto image = event.sharpest_image ? event.sharpest_image : frame.head_image;
  std::vector<DetectedObject> detected;
  if (image) detected = detector_.detect(*image, frame.depth_image);
  env.graph = relations(filter_objects(detected, options_.distance_cutoff), options_.margins);
  env.digest = environment_digest(env.graph);
  const auto prompt = prompts_.render("environment_summary", {{"task_name", task_.name},
                                                              {"timestamp", fmt::format("{:.2f}", event.timestamp)},
                                                              {"digest", env.digest}});
  env.provenance = provenance_for(prompt, "environment", next_request_id("environment"));
  env.prose = call(prompt, env.provenance);
  return env;
}

InternalSummary Summarizer::summarize_internal(const KeyEvent& event, const KeyEvent* previous) {
  InternalSummary in;
  in.digest = internal_digest(frame_of(event), previous ? &frame_of(*previous) : nullptr, episode_.robot_config);
  const auto prompt = prompts_.render("internal_summary", {{"robot_config", config_text_},
                                                           {"timestamp", fmt::format("{:.2f}", event.timestamp)},
                                                           {"digest", in.digest.text()}});
  in.provenance = provenance_for(prompt, "internal", next_request_id("internal"));
  in.prose = call(prompt, in.provenance);
  return in;
}

PlanningDigest Summarizer::summarize_planning(double now) const { return ronar::summarize_planning(episode_.planner_events, now, task_); }

ExperienceSummary Summarizer::summarize_event(const KeyEvent& event, const KeyEvent* previous, std::size_t event_index) {
  const auto& frame = frame_of(event);
  ExperienceSummary s;
  s.event_index = event_index;
  s.frame_index = event.frame_index;
  s.timestamp = event.timestamp;
  s.trigger = event.trigger;
  s.image = event.sharpest_image ? event.sharpest_image : frame.head_image;

  // Digests and prompts are built synchronously so request ids stay
  // deterministic; only the provider calls overlap.
  const auto detected = s.image ? detector_.detect(*s.image, frame.depth_image) : std::vector<DetectedObject>{};
  s.environment.graph = relations(filter_objects(detected, options_.distance_cutoff), options_.margins);
  s.environment.digest = environment_digest(s.environment.graph);
  s.internal.digest = internal_digest(frame, previous ? &frame_of(*previous) : nullptr, episode_.robot_config);
  s.planning = summarize_planning(event.timestamp);

  const auto env_prompt = prompts_.render("environment_summary", {{"task_name", task_.name},
                                                                  {"timestamp", fmt::format("{:.2f}", event.timestamp)},
                                                                  {"digest", s.environment.digest}});
  const auto int_prompt = prompts_.render("internal_summary", {{"robot_config", config_text_},
                                                               {"timestamp", fmt::format("{:.2f}", event.timestamp)},
                                                               {"digest", s.internal.digest.text()}});
  s.environment.provenance = provenance_for(env_prompt, "environment", next_request_id("environment"));
  s.internal.provenance = provenance_for(int_prompt, "internal", next_request_id("internal"));

  auto env_future = std::async(std::launch::async, [&] { return call(env_prompt, s.environment.provenance); });
  s.internal.prose = call(int_prompt, s.internal.provenance);
  s.environment.prose = env_future.get();
  return s;
}

}  // namespace ronar
