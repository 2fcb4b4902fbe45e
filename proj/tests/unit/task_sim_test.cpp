// SPDX-License-Identifier: Apache-2.0
#include <deque>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ronar/key_event.hpp"
#include "ronar/planner_states.hpp"
#include "ronar/task_sim.hpp"
#include "test_support.hpp"

namespace ronar {
namespace {

using test::code_of;

SimOptions no_images() {
  SimOptions o;
  o.render_images = false;
  return o;
}

const SuiteEntry& suite_entry(const std::string& id) {
  for (const auto& e : fixture_suite())
    if (e.episode_id == id) return e;
  throw std::runtime_error("no suite entry " + id);
}

GeneratedEpisode generate(const std::string& id, SimOptions opts = no_images()) {
  const auto& e = suite_entry(id);
  return generate_episode(find_task(e.task), e.episode_id, e.seed, e.failures, opts);
}

std::set<std::string> reachable(const StateMachine& m) {
  std::set<std::string> seen{m.initial()};
  std::deque<std::string> todo{m.initial()};
  while (!todo.empty()) {
    const auto s = todo.front();
    todo.pop_front();
    for (const auto& e : m.edges)
      if (e.from == s && seen.insert(e.to).second) todo.push_back(e.to);
  }
  return seen;
}

double joint_at(const EpisodeLog& ep, const std::string& joint, double t) {
  const auto* s = ep.stream("joint/" + joint);
  const auto i = nearest_sample(s->samples, t);
  return std::get<std::vector<double>>(s->samples[i].value)[0];
}

TEST(Machine, SingleState) {
  const std::vector<std::string> a{"pick"};
  const auto m = synthesize_machine(a);
  EXPECT_EQ(m.states, (std::vector<std::string>{"pick", "pick/query_user", "pick/teleoperation", "task_complete", "aborted"}));
  EXPECT_EQ(m.edges.size(), 7u);
  EXPECT_EQ(m.next("pick", "success"), "task_complete");
  EXPECT_EQ(m.next("pick", "failure"), "pick/query_user");
  EXPECT_EQ(m.next("pick/query_user", "teleop_ack"), "pick/teleoperation");
  EXPECT_EQ(m.next("pick/query_user", "retry"), "pick");
  EXPECT_EQ(m.next("pick/teleoperation", "abort"), "aborted");
  EXPECT_FALSE(m.next("task_complete", "retry"));
  EXPECT_TRUE(m.triggers_from("aborted").empty());
}

TEST(Machine, PutCupEdges) {
  const auto& task = find_task("put_cup");
  const auto m = synthesize_machine(task.actions);
  EXPECT_EQ(m.initial(), "navigate_to_table");
  EXPECT_EQ(m.states.size(), 3 * task.actions.size() + 2);
  for (std::size_t i = 0; i + 1 < task.actions.size(); ++i) EXPECT_EQ(m.next(task.actions[i], "success"), task.actions[i + 1]);
  EXPECT_EQ(m.next("place_in_sink", "success"), "task_complete");
  EXPECT_EQ(m.triggers_from("look_for_cup/query_user"), (std::vector<std::string>{"teleop_ack", "retry", "abort"}));

  nlohmann::json j = m;
  const auto back = j.get<StateMachine>();
  EXPECT_EQ(back.edges, m.edges);
  EXPECT_EQ(back.states, m.states);
}

TEST(Machine, EveryStateReachableForRandomActionLists) {
  test::Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::string> actions;
    for (int i = test::uniform_int(rng, 1, 8); i > 0; --i) actions.push_back("a" + std::to_string(actions.size()));
    const auto m = synthesize_machine(actions);
    const auto r = reachable(m);
    EXPECT_EQ(r, std::set<std::string>(m.states.begin(), m.states.end()));
    EXPECT_EQ(m.edges.size(), 7 * actions.size());
    // Each (state, trigger) pair has at most one edge.
    std::set<std::pair<std::string, std::string>> keys;
    for (const auto& e : m.edges) EXPECT_TRUE(keys.insert({e.from, e.trigger}).second);
  }
}

TEST(Machine, Errors) {
  EXPECT_EQ(code_of([] { synthesize_machine(std::vector<std::string>{}); }), ErrorCode::EmptyStateList);
  EXPECT_EQ(code_of([] { synthesize_machine(std::vector<std::string>{"a", "b", "a"}); }), ErrorCode::DuplicateStateName);
  for (const char* bad : {"task_complete", "aborted", "start", "x/query_user", "x/teleoperation", ""})
    EXPECT_EQ(code_of([&] { synthesize_machine(std::vector<std::string>{bad}); }), ErrorCode::InvalidArgument) << bad;
}

TEST(StateTypes, ByPrefix) {
  EXPECT_EQ(state_type_of("navigate_to_sink"), StateType::Navigation);
  EXPECT_EQ(state_type_of("look_for_hat"), StateType::Detection);
  EXPECT_EQ(state_type_of("pick_cup"), StateType::Manipulation);
  EXPECT_EQ(outcome_for_trigger("failure"), "failure");
  EXPECT_EQ(outcome_for_trigger("abort"), "aborted");
  EXPECT_EQ(outcome_for_trigger("teleop_ack"), "success");
}

TEST(Failures, Validation) {
  const auto m = synthesize_machine(find_task("put_cup").actions);
  using K = StateType;
  const std::vector<FailureSpec> ok{{"pick_cup", 2.0, K::Manipulation, true, ""}, {"navigate_to_table", 1.0, K::Navigation, true, ""}};
  const auto v = validate_failures(m, ok);
  ASSERT_EQ(v.size(), 2u);
  EXPECT_EQ(v[0].target_state, "navigate_to_table");
  EXPECT_FALSE(v[0].signature.empty());
  EXPECT_FALSE(v[1].signature.empty());

  auto bad = [&](std::vector<FailureSpec> f) { return code_of([&] { validate_failures(m, f); }); };
  EXPECT_EQ(bad({{"fly", 1.0, K::Manipulation, true, ""}}), ErrorCode::InvalidFailureSpec);
  EXPECT_EQ(bad({{"pick_cup/query_user", 1.0, K::Manipulation, true, ""}}), ErrorCode::InvalidFailureSpec);
  EXPECT_EQ(bad({{"pick_cup", 1.0, K::Navigation, true, ""}}), ErrorCode::InvalidFailureSpec);
  EXPECT_EQ(bad({{"pick_cup", 0.0, K::Manipulation, true, ""}}), ErrorCode::InvalidFailureSpec);
  EXPECT_EQ(bad({{"pick_cup", 60.5, K::Manipulation, true, ""}}), ErrorCode::InvalidFailureSpec);
  EXPECT_NO_THROW(validate_failures(m, std::vector<FailureSpec>{{"pick_cup", 60.0, K::Manipulation, true, ""}}));
  EXPECT_EQ(bad({{"pick_cup", 1.0, K::Manipulation, false, ""}, {"place_in_sink", 1.0, K::Manipulation, true, ""}}), ErrorCode::InvalidFailureSpec);
  EXPECT_EQ(bad({{"navigate_to_table", 1, K::Navigation, true, ""},
                 {"look_for_cup", 1, K::Detection, true, ""},
                 {"pick_cup", 1, K::Manipulation, true, ""},
                 {"place_in_sink", 1, K::Manipulation, true, ""}}),
            ErrorCode::InvalidFailureSpec);
}

TEST(Failures, LoadFromFile) {
  test::ScratchDir dir("failures");
  const auto p = dir.write("f.json", R"({"failures":[{"target_state":"pick_cup","offset_s":1.5,"kind":"manipulation","recoverable":false}]})");
  const auto f = load_failure_specs(p);
  ASSERT_EQ(f.size(), 1u);
  EXPECT_EQ(f[0].offset_s, 1.5);
  EXPECT_FALSE(f[0].recoverable);
  EXPECT_EQ(code_of([&] { load_failure_specs(dir.write("g.json", R"([{"target_state":"x","kind":"flying"}])")); }), ErrorCode::InvalidFailureSpec);
  EXPECT_EQ(code_of([&] { load_failure_specs(dir.write("h.json", "{}")); }), ErrorCode::InvalidFailureSpec);
}

TEST(Library, TasksAndConfig) {
  EXPECT_EQ(task_library().size(), 4u);
  EXPECT_EQ(code_of([] { find_task("juggle"); }), ErrorCode::InvalidArgument);
  const auto c = simulated_robot_config();
  ASSERT_TRUE(c.find("arm_extension"));
  EXPECT_EQ(c.find("arm_extension")->limit_max, 0.52);
  EXPECT_EQ(c.find("lift")->limit_max, 1.1);
  EXPECT_EQ(fixture_suite().size(), 12u);
}

TEST(Simulate, SuccessOnlyWalksEveryAction) {
  const auto g = generate("synthetic_cup_00");
  const auto& task = find_task("put_cup");
  std::vector<std::string> expected = task.actions;
  expected.push_back("task_complete");
  EXPECT_EQ(g.visited_states, expected);
  EXPECT_TRUE(g.episode.failure_labels.empty());
  EXPECT_EQ(g.episode.planner_events.front().from_state, "start");
  EXPECT_EQ(g.episode.planner_events.front().t, 0.0);
}

TEST(Simulate, Deterministic) {
  SimOptions small;
  small.image_width = 96;
  small.image_height = 72;
  const auto a = generate("synthetic_hat_01", small);
  const auto b = generate("synthetic_hat_01", small);
  std::ostringstream sa, sb;
  write_episode(a.episode, sa);
  write_episode(b.episode, sb);
  EXPECT_EQ(sa.str(), sb.str());
  ASSERT_EQ(a.images.size(), b.images.size());
  for (std::size_t i = 0; i < a.images.size(); ++i) {
    EXPECT_EQ(a.images[i].first, b.images[i].first);
    EXPECT_EQ(a.images[i].second.pixels, b.images[i].second.pixels);
  }
  const auto other = generate_episode(find_task("hang_hat"), "synthetic_hat_01", 999, suite_entry("synthetic_hat_01").failures, no_images());
  std::ostringstream so;
  write_episode(other.episode, so);
  EXPECT_NE(so.str(), sa.str());
}

TEST(Simulate, ManipulationFailurePinsArmAtLabel) {
  const auto g = generate("synthetic_cup_01");
  ASSERT_EQ(g.episode.failure_labels.size(), 1u);
  const double t_fail = g.episode.failure_labels[0].t;
  EXPECT_NEAR(t_fail, 13.3, 1e-9);
  EXPECT_NEAR(joint_at(g.episode, "arm_extension", t_fail), 0.52, 1e-9);
  EXPECT_LT(joint_at(g.episode, "arm_extension", t_fail - 1.0), 0.52);
  // The planner notices afterwards and hands over to the operator.
  const auto& ev = g.episode.planner_events;
  const auto it = std::find_if(ev.begin(), ev.end(), [](const auto& e) { return e.outcome == "failure"; });
  ASSERT_NE(it, ev.end());
  EXPECT_GT(it->t, t_fail);
  EXPECT_EQ(it->to_state, "pick_cup/query_user");
}

TEST(Simulate, ThreeFailuresThreeRecoveries) {
  const auto g = generate("synthetic_cup_03");
  EXPECT_EQ(g.episode.failure_labels.size(), 3u);
  std::vector<std::string> teleop;
  for (const auto& s : g.visited_states)
    if (states::is_teleoperation(s)) teleop.push_back(s);
  EXPECT_EQ(teleop, (std::vector<std::string>{"navigate_to_table/teleoperation", "look_for_cup/teleoperation", "pick_cup/teleoperation"}));
  EXPECT_EQ(g.visited_states.back(), "task_complete");
}

TEST(Simulate, NonRecoverableFailureAborts) {
  const auto g = generate("synthetic_hat_03");
  const auto& v = g.visited_states;
  ASSERT_GE(v.size(), 2u);
  EXPECT_EQ(v.back(), "aborted");
  EXPECT_EQ(v[v.size() - 2], "hang_hat/query_user");
  EXPECT_EQ(std::count(v.begin(), v.end(), "hang_hat/teleoperation"), 0);
}

TEST(Simulate, TransitionsFollowMachineEdges) {
  for (const auto& e : fixture_suite()) {
    const auto g = generate(e.episode_id);
    const auto m = synthesize_machine(find_task(e.task).actions);
    const auto& ev = g.episode.planner_events;
    for (std::size_t i = 1; i < ev.size(); ++i) {
      bool found = false;
      for (const auto& edge : m.edges) found |= edge.from == ev[i].from_state && edge.to == ev[i].to_state && outcome_for_trigger(edge.trigger) == ev[i].outcome;
      EXPECT_TRUE(found) << e.episode_id << " " << ev[i].from_state << " -> " << ev[i].to_state;
      EXPECT_EQ(ev[i].from_state, ev[i - 1].to_state);
    }
  }
}

TEST(Simulate, PlannerOnlyClassifierMatchesTransitions) {
  const auto g = generate("synthetic_cup_00");
  const auto frames = align(g.episode);
  const auto stats = compute_stats(frames);
  std::vector<std::size_t> want;
  for (std::size_t i = 1; i < frames.size(); ++i)
    if (frames[i].planner_state != frames[i - 1].planner_state) want.push_back(i);
  EXPECT_EQ(want.size(), find_task("put_cup").actions.size());
  std::vector<std::size_t> got;
  for (const auto& ev : classify(frames, stats, 80.0, ModalitySet::parse("TP"))) got.push_back(ev.frame_index);
  EXPECT_EQ(got, want);
}

TEST(Live, OperatorDrivesRecovery) {
  const auto& e = suite_entry("synthetic_cup_01");
  SimOptions opts = no_images();
  opts.auto_operator = false;
  Simulator sim(find_task(e.task), e.episode_id, e.seed, e.failures, opts);
  EXPECT_EQ(code_of([&] { sim.intervene(Intervention::Retry); }), ErrorCode::InvalidArgument);
  int guard = 0;
  while (!sim.awaiting_operator() && guard++ < 2000) sim.step();
  ASSERT_TRUE(sim.awaiting_operator());
  EXPECT_EQ(sim.state(), "pick_cup/query_user");
  for (int i = 0; i < 200; ++i) sim.step();
  EXPECT_EQ(sim.state(), "pick_cup/query_user");

  sim.intervene(Intervention::TeleopAck);
  EXPECT_EQ(code_of([&] { sim.intervene(Intervention::Abort); }), ErrorCode::InvalidArgument);
  const auto out = sim.step();
  ASSERT_EQ(out.transitions.size(), 1u);
  EXPECT_EQ(out.transitions[0].to_state, "pick_cup/teleoperation");
  EXPECT_EQ(code_of([&] { sim.intervene(Intervention::TeleopAck); }), ErrorCode::InvalidArgument);
  sim.intervene(Intervention::Retry);
  sim.step();
  EXPECT_EQ(sim.state(), "pick_cup");
  guard = 0;
  while (!sim.finished() && guard++ < 5000) sim.step();
  ASSERT_TRUE(sim.finished());
  EXPECT_EQ(sim.state(), "task_complete");
  EXPECT_EQ(sim.episode().failure_labels.size(), 1u);
}

TEST(Live, StepsEmitGridFrames) {
  const auto& e = suite_entry("synthetic_cup_00");
  Simulator sim(find_task(e.task), e.episode_id, e.seed, e.failures, no_images());
  std::vector<double> frame_times;
  for (int i = 0; i < 40; ++i) {
    const auto out = sim.step();
    EXPECT_NEAR(out.t, i * kSimTick, 1e-12);
    if (out.frame) frame_times.push_back(out.frame->timestamp);
  }
  ASSERT_EQ(frame_times.size(), 10u);
  for (std::size_t i = 0; i < frame_times.size(); ++i) EXPECT_NEAR(frame_times[i], 0.2 * static_cast<double>(i), 1e-12);
}

TEST(Write, GeneratedEpisodeLoadsAndMatchesManifest) {
  SimOptions small;
  small.image_width = 64;
  small.image_height = 48;
  const auto g = generate("synthetic_microwave_01", small);
  test::ScratchDir dir("gen");
  const auto path = write_generated(g, dir.path());
  const auto ep = load_episode(path);
  EXPECT_EQ(ep.planner_events.size(), g.episode.planner_events.size());
  EXPECT_EQ(ep.failure_labels.size(), 1u);
  std::ifstream in(dir.path() / "synthetic_microwave_01.manifest.json");
  const auto manifest = nlohmann::json::parse(in);
  EXPECT_EQ(manifest["seed"], 202);
  EXPECT_EQ(manifest["images"], g.images.size());
  EXPECT_EQ(manifest["record_counts"]["failure_label"], 1);
  for (const auto& s : ep.streams) EXPECT_EQ(manifest["stream_counts"][s.name], s.samples.size()) << s.name;
  for (const auto& [rel, img] : g.images) EXPECT_TRUE(std::filesystem::exists(dir.path() / rel)) << rel;
  EXPECT_EQ(read_png_gray(ep.resolve(g.images.front().first)).pixels, g.images.front().second.pixels);
}

}  // namespace
}  // namespace ronar
