// SPDX-License-Identifier: Apache-2.0
#include "ronar/narrator.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "ronar/error.hpp"

namespace ronar {

using nlohmann::json;

std::string_view to_string(NarrationMode m) {
  switch (m) {
    case NarrationMode::Alert: return "alert";
    case NarrationMode::Info: return "info";
    case NarrationMode::Debug: return "debug";
  }
  return "info";
}

NarrationMode parse_narration_mode(std::string_view s) {
  if (s == "alert") return NarrationMode::Alert;
  if (s == "info") return NarrationMode::Info;
  if (s == "debug") return NarrationMode::Debug;
  throw Error(ErrorCode::InvalidArgument, fmt::format("unknown narration mode '{}'", s));
}

bool NarrationInstance::is_empty_alert() const {
  if (mode != NarrationMode::Alert) return false;
  return text.find(kEmptyAlertMarker) != std::string::npos;
}

void to_json(json& j, const NarrationInstance& n) {
  j = json{{"index", n.index},
           {"event_index", n.event_index},
           {"mode", to_string(n.mode)},
           {"text", n.text},
           {"created_at", n.created_at},
           {"degraded", n.degraded},
           {"provenance", n.provenance}};
}

void from_json(const json& j, NarrationInstance& n) {
  n.index = j.at("index").get<std::size_t>();
  n.event_index = j.at("event_index").get<std::size_t>();
  n.mode = parse_narration_mode(j.at("mode").get<std::string>());
  n.text = j.at("text").get<std::string>();
  n.created_at = j.value("created_at", 0.0);
  n.degraded = j.value("degraded", false);
  if (j.contains("provenance")) {
    const auto& p = j["provenance"];
    n.provenance.purpose = p.value("purpose", std::string{});
    n.provenance.template_name = p.value("template", std::string{});
    n.provenance.template_version = p.value("template_version", 0);
    n.provenance.request_id = p.value("request_id", std::string{});
    n.provenance.prompt_hash = p.value("prompt_hash", std::string{});
    n.provenance.provider = p.value("provider", std::string{});
    n.provenance.error = p.value("error", std::string{});
  }
}

void NarrationHistory::append(NarrationInstance item) {
  if (item.index != items_.size())
    throw Error(ErrorCode::InvalidArgument, fmt::format("narration index {} does not follow {}", item.index, items_.size()));
  items_.push_back(std::move(item));
}

std::string format_history(std::span<const NarrationInstance> items) {
  if (items.empty()) return "(none)";
  std::string out;
  for (const auto& n : items) {
    if (!out.empty()) out += '\n';
    out += fmt::format("- [#{}] ({}) {}", n.index, to_string(n.mode), n.text);
  }
  return out;
}

namespace {

PromptProvenance provenance_of(const RenderedPrompt& prompt, std::string purpose, std::string request_id) {
  PromptProvenance p;
  p.purpose = std::move(purpose);
  p.template_name = prompt.template_name;
  p.template_version = prompt.template_version;
  p.request_id = std::move(request_id);
  p.prompt_hash = stable_hash(prompt.system + '\x1f' + prompt.user);
  return p;
}

std::string summarize_items(std::span<const NarrationInstance> items, Provider& provider, std::string_view episode_id,
                            const PromptLibrary& prompts, GenerationParams params, std::string request_id) {
  const auto prompt = prompts.render("trajectory_summary", {{"episode_id", std::string(episode_id)}, {"history", format_history(items)}});
  return provider.complete({prompt.system, prompt.user, params, std::move(request_id)}).text;
}

}  // namespace

Narrator::Narrator(Provider& provider, const PromptLibrary& prompts, NarratorOptions options)
    : provider_(provider), prompts_(prompts), options_(std::move(options)) {}

std::string Narrator::history_section() {
  const auto& items = history_.items();
  if (options_.history_window == 0 || items.size() <= options_.history_window) return format_history(items);
  const std::size_t older = items.size() - options_.history_window;
  if (pinned_upto_ != older) {
    try {
      pinned_summary_ = summarize_items(std::span(items).first(older), provider_, options_.episode_id, prompts_, options_.generation,
                                        fmt::format("{}/nar{:05}/pinned", options_.episode_id, request_counter_++));
    } catch (const Error& e) {
      if (!is_provider_error(e.code())) throw;
      pinned_summary_ = "(summary of earlier narrations unavailable)";
    }
    pinned_upto_ = older;
  }
  return fmt::format("Earlier narrations, summarized: {}\n{}", pinned_summary_, format_history(std::span(items).subspan(older)));
}

RenderedPrompt Narrator::build_prompt(const ExperienceSummary& summary, NarrationMode mode) {
  const auto& directive = prompts_.get(fmt::format("mode_{}", to_string(mode))).section("directive");
  return prompts_.render("narration", {{"history", history_section()}, {"summary", summary.text()}, {"directive", directive}});
}

const NarrationInstance& Narrator::narrate(const ExperienceSummary& summary, NarrationMode mode) {
  if (!history_.empty() && summary.event_index <= history_.back().event_index)
    throw Error(ErrorCode::OutOfOrderEvent,
                fmt::format("event {} already narrated (last narrated event {})", summary.event_index, history_.back().event_index));
  const auto prompt = build_prompt(summary, mode);
  NarrationInstance n;
  n.index = history_.size();
  n.event_index = summary.event_index;
  n.mode = mode;
  n.created_at = summary.timestamp;
  n.provenance = provenance_of(prompt, "narration", fmt::format("{}/nar{:05}", options_.episode_id, request_counter_++));
  try {
    auto response = provider_.complete({prompt.system, prompt.user, options_.generation, n.provenance.request_id});
    n.text = std::move(response.text);
    n.provenance.provider = response.provider;
  } catch (const Error& e) {
    if (!is_provider_error(e.code())) throw;
    n.degraded = true;
    n.text = fmt::format("(narration unavailable for key event {})", summary.event_index);
    n.provenance.provider = provider_.name();
    n.provenance.error = e.what();
  }
  history_.append(std::move(n));
  return history_.back();
}

std::string trajectory_summary(const NarrationHistory& history, Provider& provider, std::string_view episode_id,
                               const PromptLibrary& prompts, GenerationParams params) {
  if (history.empty()) throw Error(ErrorCode::EmptyHistory, "trajectory summary needs at least one narration");
  return summarize_items(history.items(), provider, episode_id, prompts, params, fmt::format("{}/trajectory", episode_id));
}

std::string system_overview(std::span<const TrajectorySummary> summaries, std::string_view query, Provider& provider,
                            const PromptLibrary& prompts, GenerationParams params) {
  if (summaries.empty()) throw Error(ErrorCode::EmptyInput, "system overview needs at least one trajectory summary");
  std::string body;
  for (std::size_t i = 0; i < summaries.size(); ++i) {
    if (!body.empty()) body += '\n';
    body += fmt::format("- [#{}] [episode:{}] {}", i, summaries[i].episode_id, summaries[i].text);
  }
  const auto q = query.empty() ? std::string(kDefaultOverviewQuery) : std::string(query);
  const auto prompt = prompts.render("system_overview", {{"summaries", body}, {"query", q}});
  return provider.complete({prompt.system, prompt.user, params, fmt::format("overview/{}", stable_hash(prompt.user))}).text;
}

// ---------------------------------------------------------------------------
// Failure analysis

std::string_view to_string(AnalysisTask t) {
  switch (t) {
    case AnalysisTask::Pred: return "pred";
    case AnalysisTask::Loc: return "loc";
    case AnalysisTask::Exp: return "exp";
    case AnalysisTask::Rec: return "rec";
  }
  return "loc";
}

AnalysisTask parse_analysis_task(std::string_view s) {
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "pred") return AnalysisTask::Pred;
  if (lower == "loc") return AnalysisTask::Loc;
  if (lower == "exp") return AnalysisTask::Exp;
  if (lower == "rec") return AnalysisTask::Rec;
  throw Error(ErrorCode::InvalidArgument, fmt::format("unknown analysis task '{}'", s));
}

void to_json(json& j, const FailureAnalysis& a) {
  j = json{{"task", to_string(a.task)},
           {"answer", a.answer},
           {"cited_events", a.cited_events},
           {"confidence_note", a.confidence_note},
           {"provenance", a.provenance}};
  j["failure_time"] = a.failure_time ? json(*a.failure_time) : json(nullptr);
}

std::vector<std::size_t> analysis_window(AnalysisTask task, std::span<const ExperienceSummary> summaries, std::optional<double> query_time) {
  std::vector<std::size_t> out;
  if (task == AnalysisTask::Loc) {
    for (std::size_t i = 0; i < summaries.size(); ++i) out.push_back(i);
    return out;
  }
  if (!query_time) throw Error(ErrorCode::InvalidArgument, fmt::format("{} requires a query time", to_string(task)));
  const double q = *query_time;
  bool took_failure_event = false;
  for (std::size_t i = 0; i < summaries.size(); ++i) {
    const double t = summaries[i].timestamp;
    if (task == AnalysisTask::Pred) {
      if (t < q) out.push_back(i);
    } else if (t <= q) {
      out.push_back(i);
    } else if (!took_failure_event) {
      out.push_back(i);
      took_failure_event = true;
    }
  }
  return out;
}

std::optional<double> parse_failure_time(std::string_view answer) {
  constexpr std::string_view kKey = "FAILURE_TIME:";
  auto pos = answer.find(kKey);
  while (pos != std::string_view::npos) {
    auto rest = answer.substr(pos + kKey.size());
    while (!rest.empty() && (rest.front() == ' ' || rest.front() == '\t')) rest.remove_prefix(1);
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), value);
    if (ec == std::errc{} && std::isfinite(value)) return value;
    pos = answer.find(kKey, pos + kKey.size());
  }
  return std::nullopt;
}

namespace {

std::vector<std::size_t> cited_in(std::string_view answer, const std::set<std::size_t>& allowed) {
  std::vector<std::size_t> out;
  constexpr std::string_view kKey = "EVENT #";
  std::size_t pos = 0;
  while ((pos = answer.find(kKey, pos)) != std::string_view::npos) {
    pos += kKey.size();
    std::size_t value = 0;
    const auto [ptr, ec] = std::from_chars(answer.data() + pos, answer.data() + answer.size(), value);
    if (ec == std::errc{} && allowed.count(value) && std::find(out.begin(), out.end(), value) == out.end()) out.push_back(value);
  }
  return out;
}

std::string indent(std::string_view text) {
  std::string out = "  ";
  for (char c : text) {
    out += c;
    if (c == '\n') out += "  ";
  }
  return out;
}

}  // namespace

FailureAnalysis analyze_failure(AnalysisTask task, const AnalysisInput& input, Provider& provider, const PromptLibrary& prompts,
                                GenerationParams params) {
  const auto window = analysis_window(task, input.summaries, input.query_time);
  if (window.empty()) throw Error(ErrorCode::EmptyEvidence, fmt::format("no key events available for {}", to_string(task)));

  std::set<std::size_t> visible;
  std::string events;
  for (auto i : window) {
    const auto& s = input.summaries[i];
    visible.insert(s.event_index);
    if (!events.empty()) events += '\n';
    events += fmt::format("EVENT #{} (t={:.2f} s)\n{}", s.event_index, s.timestamp, indent(s.text()));
  }
  std::vector<NarrationInstance> narrations;
  if (input.history)
    for (const auto& n : input.history->items())
      if (visible.count(n.event_index)) narrations.push_back(n);

  const auto prompt = prompts.render(fmt::format("failure_{}", to_string(task)),
                                     {{"task_name", input.task_name},
                                      {"query_time", input.query_time ? fmt::format("{:.2f}", *input.query_time) : std::string("n/a")},
                                      {"t_start", fmt::format("{:.2f}", input.t_start)},
                                      {"t_end", fmt::format("{:.2f}", input.t_end)},
                                      {"events", events},
                                      {"narrations", format_history(narrations)}});

  FailureAnalysis a;
  a.task = task;
  a.provenance = provenance_of(prompt, fmt::format("failure_{}", to_string(task)), {});
  a.provenance.request_id = fmt::format("analysis/{}/{}", to_string(task), a.provenance.prompt_hash);
  auto response = provider.complete({prompt.system, prompt.user, params, a.provenance.request_id});
  a.answer = std::move(response.text);
  a.provenance.provider = response.provider;

  if (task == AnalysisTask::Loc) {
    a.failure_time = parse_failure_time(a.answer);
    if (!a.failure_time) throw Error(ErrorCode::MalformedProviderAnswer, "answer has no FAILURE_TIME token");
    constexpr double kSlack = 1e-9;
    if (*a.failure_time < input.t_start - kSlack || *a.failure_time > input.t_end + kSlack)
      throw Error(ErrorCode::MalformedProviderAnswer,
                  fmt::format("failure time {} is outside the episode range [{}, {}]", *a.failure_time, input.t_start, input.t_end));
    std::size_t nearest = window.front();
    for (auto i : window)
      if (std::abs(input.summaries[i].timestamp - *a.failure_time) < std::abs(input.summaries[nearest].timestamp - *a.failure_time))
        nearest = i;
    a.cited_events.push_back(input.summaries[nearest].event_index);
  } else {
    a.cited_events = cited_in(a.answer, visible);
    if (a.cited_events.empty()) a.cited_events.push_back(input.summaries[window.back()].event_index);
  }
  a.confidence_note = fmt::format("{} key event(s) in evidence; answer from '{}' is not graded automatically", window.size(), a.provenance.provider);
  return a;
}

}  // namespace ronar
