// SPDX-License-Identifier: Apache-2.0
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ronar/pipeline.hpp"
#include "ronar/summarizer.hpp"
#include "test_support.hpp"

namespace ronar {
namespace {

using test::code_of;
using test::Rng;

std::string printf_str(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

// Written against the line layout, not the implementation.
std::string expected_part_line(const PartState& p) {
  const char* unit = "";
  if (p.type == PartType::Prismatic || p.type == PartType::Base) unit = " m";
  if (p.type == PartType::Revolute || p.type == PartType::Camera) unit = " rad";
  std::string s = p.name + " (" + std::string(to_string(p.type)) + "): " + printf_str("%.3f", p.value) + unit + " | limit [" +
                  printf_str("%.3f", p.limit_min) + ", " + printf_str("%.3f", p.limit_max) + "] | ";
  if (!p.previous) s += "first event";
  else if (*p.previous == p.value) s += "unchanged";
  else s += "changed by " + printf_str("%+.3f", p.value - *p.previous) + unit;
  if (p.near_limit) s += " | NEAR_LIMIT";
  return s;
}

// Each summarized event consumes two request ids, environment first.
std::string fmt_request_id(std::size_t event, const std::string& purpose) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05zu", 2 * event + (purpose == "internal" ? 1 : 0));
  return "synthetic_cup_01/sum" + std::string(buf) + "/" + purpose;
}

TaskSpec cup_spec() { return {"fetch_cup", "bring the cup", {"navigate_to_table", "look_for_cup", "pick_cup"}}; }

TEST(NearLimit, ArmExtensionBoundary) {
  EXPECT_FALSE(near_limit(0.49, 0.0, 0.52));
  EXPECT_TRUE(near_limit(0.50, 0.0, 0.52));
  EXPECT_TRUE(near_limit(0.52, 0.0, 0.52));
  EXPECT_TRUE(near_limit(0.02, 0.0, 0.52));
  EXPECT_FALSE(near_limit(0.03, 0.0, 0.52));
  EXPECT_TRUE(near_limit(-3.8, -3.9, 1.5));
  EXPECT_FALSE(near_limit(0.0, -3.9, 1.5));
}

TEST(PartLine, Examples) {
  EXPECT_EQ(format_part_line({"arm_extension", PartType::Prismatic, 0.52, 0.3, 0.0, 0.52, true}),
            "arm_extension (prismatic): 0.520 m | limit [0.000, 0.520] | changed by +0.220 m | NEAR_LIMIT");
  EXPECT_EQ(format_part_line({"gripper", PartType::Gripper, 0.1, 0.1, 0.0, 1.0, false}),
            "gripper (gripper): 0.100 | limit [0.000, 1.000] | unchanged");
  EXPECT_EQ(format_part_line({"camera_pan", PartType::Camera, -1.0, std::nullopt, -3.9, 1.5, false}),
            "camera_pan (camera): -1.000 rad | limit [-3.900, 1.500] | first event");
}

TEST(PartLine, MatchesPrintfOracle) {
  Rng rng(21);
  const PartType types[] = {PartType::Prismatic, PartType::Revolute, PartType::Base, PartType::Camera, PartType::Gripper, PartType::Other};
  for (int i = 0; i < 500; ++i) {
    PartState p;
    p.name = "j" + std::to_string(i);
    p.type = types[test::uniform_int(rng, 0, 5)];
    p.limit_min = test::uniform(rng, -4, 0);
    p.limit_max = p.limit_min + test::uniform(rng, 0.1, 5);
    p.value = test::uniform(rng, p.limit_min, p.limit_max);
    const int prev_kind = test::uniform_int(rng, 0, 2);
    if (prev_kind == 1) p.previous = p.value;
    if (prev_kind == 2) p.previous = test::uniform(rng, p.limit_min, p.limit_max);
    p.near_limit = near_limit(p.value, p.limit_min, p.limit_max);
    EXPECT_EQ(format_part_line(p), expected_part_line(p));
  }
}

TEST(Internal, OneLinePerJointAndUnknownJoint) {
  RobotConfig config;
  config.parts = {{"arm_extension", "", 0, 0.52, PartType::Prismatic}, {"lift", "", 0, 1.1, PartType::Prismatic}};
  MultimodalFrame prev, cur;
  prev.joint_values = {{"arm_extension", 0.2}, {"lift", 0.5}};
  cur.joint_values = {{"arm_extension", 0.5}, {"lift", 0.5}};
  cur.base_pose = Pose2D{1, 2, 0.5};
  const auto d = internal_digest(cur, &prev, config);
  const auto lines = d.lines();
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[0], "arm_extension (prismatic): 0.500 m | limit [0.000, 0.520] | changed by +0.300 m | NEAR_LIMIT");
  EXPECT_EQ(lines[1], "lift (prismatic): 0.500 m | limit [0.000, 1.100] | unchanged");
  EXPECT_EQ(lines[2], "base pose: x 1.000 m, y 2.000 m, yaw 0.500 rad | first event");

  cur.joint_values["elbow"] = 0.0;
  EXPECT_EQ(code_of([&] { internal_digest(cur, nullptr, config); }), ErrorCode::UnknownJointName);
  EXPECT_EQ(internal_digest(MultimodalFrame{}, nullptr, config).text(), "no internal state recorded");
}

TEST(Planning, NavigateDetectNavigateRetry) {
  const std::vector<PlannerTransition> ev{{0.0, "start", "navigate_to_table", "started"},
                                          {5.0, "navigate_to_table", "look_for_cup", "success"},
                                          {8.0, "look_for_cup", "navigate_to_table", "failure"},
                                          {12.0, "navigate_to_table", "look_for_cup", "success"}};
  const auto d = summarize_planning(ev, 13.0, cup_spec());
  EXPECT_EQ(d.current_subgoal, "look_for_cup");
  EXPECT_EQ(d.text(),
            "Task: fetch_cup (bring the cup)\n"
            "Sub-goal sequence: 1) navigate_to_table -> 2) look_for_cup -> 3) pick_cup\n"
            "Current sub-goal: look_for_cup\n"
            "History:\n"
            "  1. navigate_to_table: success (0.00 s to 5.00 s)\n"
            "  2. look_for_cup: failure (5.00 s to 8.00 s)\n"
            "  3. navigate_to_table: success (8.00 s to 12.00 s)\n"
            "  4. look_for_cup: in-progress (12.00 s to 13.00 s)");

  // Transitions after `now` are not visible.
  const auto early = summarize_planning(ev, 6.0, cup_spec());
  EXPECT_EQ(early.history.size(), 2u);
  EXPECT_EQ(early.history.back(), (SubgoalExecution{"look_for_cup", SubgoalOutcome::InProgress, 5.0, 6.0}));

  const auto none = summarize_planning(ev, -1.0, cup_spec());
  EXPECT_EQ(none.current_subgoal, "navigate_to_table");
  EXPECT_TRUE(none.text().ends_with("History: (none)"));
}

TEST(Planning, RecoveryCompanionsAndTerminal) {
  const std::vector<PlannerTransition> ev{{0.0, "start", "pick_cup", "started"},
                                          {2.0, "pick_cup", "pick_cup/query_user", "failure"},
                                          {3.0, "pick_cup/query_user", "pick_cup/teleoperation", "success"},
                                          {5.0, "pick_cup/teleoperation", "pick_cup", "success"},
                                          {7.0, "pick_cup", "task_complete", "success"}};
  const auto d = summarize_planning(ev, 10.0, cup_spec());
  EXPECT_EQ(d.current_subgoal, "task_complete");
  ASSERT_EQ(d.history.size(), 4u);
  EXPECT_EQ(d.history[1].subgoal, "pick_cup/query_user");
  EXPECT_EQ(d.history[3], (SubgoalExecution{"pick_cup", SubgoalOutcome::Success, 5.0, 7.0}));
}

TEST(Planning, UnknownState) {
  const std::vector<PlannerTransition> ev{{0.0, "start", "dance", "started"}};
  EXPECT_EQ(code_of([&] { summarize_planning(ev, 1.0, cup_spec()); }), ErrorCode::UnknownState);
}

TEST(TaskSpec, FallsBackToFirstEntryOrder) {
  EpisodeLog ep;
  ep.task_name = "t";
  ep.planner_events = {{0, "start", "b", "started"}, {1, "b", "b/query_user", "failure"}, {2, "b/query_user", "a", "success"},
                       {3, "a", "task_complete", "success"}};
  EXPECT_EQ(task_spec_for(ep).subgoals, (std::vector<std::string>{"b", "a"}));
  ep.subgoals = {"x"};
  EXPECT_EQ(task_spec_for(ep).subgoals, (std::vector<std::string>{"x"}));
}

class FixtureSummaries : public ::testing::Test {
 protected:
  void SetUp() override {
    episode = load_episode(test::fixture("synthetic_cup_01"));
    PipelineOptions opts;
    opts.modalities = ModalitySet::parse("E,I,TP");
    run = select_key_events(episode, opts);
    ASSERT_FALSE(run.events.empty());
    detector = FixtureDetector(episode.detections);
  }
  EpisodeLog episode;
  KeyEventRun run;
  FixtureDetector detector;
};

TEST_F(FixtureSummaries, EveryJointInExactlyOneLine) {
  MockProvider mock;
  Summarizer s(episode, run.frames, detector, mock);
  for (std::size_t i = 0; i < run.events.size(); ++i) {
    const auto sum = s.summarize_event(run.events[i], i ? &run.events[i - 1] : nullptr, i);
    const auto text = sum.internal.digest.text();
    for (const auto& [name, v] : run.frames[run.events[i].frame_index].joint_values) {
      int hits = 0;
      std::istringstream in(text);
      for (std::string line; std::getline(in, line);)
        if (line.starts_with(name + " (")) ++hits;
      EXPECT_EQ(hits, 1) << name;
    }
    EXPECT_FALSE(sum.degraded());
    EXPECT_EQ(sum.environment.provenance.request_id, fmt_request_id(i, "environment"));
  }
}

TEST_F(FixtureSummaries, DeterministicAcrossRuns) {
  auto dump = [&] {
    MockProvider mock;
    Summarizer s(episode, run.frames, detector, mock);
    nlohmann::json all = nlohmann::json::array();
    for (std::size_t i = 0; i < run.events.size(); ++i) all.push_back(s.summarize_event(run.events[i], i ? &run.events[i - 1] : nullptr, i));
    return all.dump();
  };
  const auto a = dump();
  EXPECT_EQ(dump(), a);
}

TEST_F(FixtureSummaries, ProviderFailureDegradesOnlyProse) {
  MockProvider ok;
  MockProvider failing;
  failing.set_failure_rule([](const ProviderRequest& r) { return r.request_id.ends_with("/environment"); });
  Summarizer good(episode, run.frames, detector, ok);
  Summarizer bad(episode, run.frames, detector, failing);
  const auto& ev = run.events.front();
  const auto a = good.summarize_event(ev, nullptr, 0);
  const auto b = bad.summarize_event(ev, nullptr, 0);
  EXPECT_TRUE(b.degraded());
  EXPECT_FALSE(b.environment.prose);
  EXPECT_TRUE(b.internal.prose);
  EXPECT_FALSE(b.environment.provenance.error.empty());
  EXPECT_EQ(a.environment.digest, b.environment.digest);
  EXPECT_EQ(a.internal.digest.text(), b.internal.digest.text());
  EXPECT_EQ(a.planning.text(), b.planning.text());
  EXPECT_NE(b.text().find("(environment summary unavailable)"), std::string::npos);
}

TEST_F(FixtureSummaries, PinnedArmIsFlaggedAtFailure) {
  // The arm sits at its 0.52 m limit from the failure onwards.
  MockProvider mock;
  Summarizer s(episode, run.frames, detector, mock);
  bool seen = false;
  for (const auto& ev : run.events) {
    if (ev.timestamp < 13.3 || ev.timestamp > 14.8) continue;
    for (const auto& p : s.summarize_internal(ev, nullptr).digest.parts)
      if (p.name == "arm_extension") {
        EXPECT_TRUE(p.near_limit);
        seen = true;
      }
  }
  EXPECT_TRUE(seen);
}

TEST(Golden, PlanningDigestForThreeRetryEpisode) {
  const auto ep = load_episode(test::fixture("synthetic_cup_03"));
  const auto text = summarize_planning(ep.planner_events, ep.t_end(), task_spec_for(ep)).text() + "\n";
  const auto path = test::golden_dir() / "planning_cup_03.txt";
  if (std::getenv("RONAR_UPDATE_GOLDEN")) {
    std::ofstream(path, std::ios::binary) << text;
    GTEST_SKIP() << "golden rewritten";
  }
  std::ifstream in(path, std::ios::binary);
  ASSERT_TRUE(in) << path;
  std::stringstream want;
  want << in.rdbuf();
  EXPECT_EQ(text, want.str());
}

}  // namespace
}  // namespace ronar
