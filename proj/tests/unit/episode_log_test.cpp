// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ronar/episode_log.hpp"
#include "test_support.hpp"

namespace ronar {
namespace {

using test::code_of;
using test::meta_line;
using test::parse_text;

std::string sample_line(const std::string& stream, double t, double v, const std::string& category = "Internal") {
  return nlohmann::json{{"kind", "sample"}, {"stream", stream}, {"category", category}, {"t", t}, {"value", {v}}}.dump();
}

TEST(LoadEpisode, MinimalFile) {
  const auto ep = parse_text(meta_line() + "\n" + sample_line("joint/lift", 0.0, 0.1) + "\n" + sample_line("joint/lift", 1.0, 0.2) +
                             "\n" + R"({"kind":"planner","t":0.5,"from_state":"a","to_state":"b","outcome":"success"})");
  EXPECT_EQ(ep.streams.size(), 1u);
  EXPECT_EQ(ep.streams[0].samples.size(), 2u);
  EXPECT_EQ(ep.planner_events.size(), 1u);
  EXPECT_EQ(ep.robot_config.parts.size(), 3u);
}

TEST(LoadEpisode, DecreasingTimestampsRejected) {
  EXPECT_EQ(code_of([] { parse_text(meta_line() + "\n" + sample_line("joint/lift", 1.0, 0) + "\n" + sample_line("joint/lift", 0.5, 0)); }),
            ErrorCode::NonMonotonicTimestamps);
}

TEST(LoadEpisode, ErrorNamesLineAndField) {
  try {
    parse_text(meta_line() + "\n" + R"({"kind":"sample","stream":"joint/lift","category":"Internal","value":[1]})");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MalformedRecord);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("'t'"), std::string::npos);
  }
}

TEST(LoadEpisode, MalformedRecords) {
  const auto head = meta_line() + "\n" + sample_line("joint/lift", 0.0, 0) + "\n";
  for (const std::string bad : {
           std::string("not json"),
           std::string(R"({"kind":"teleport","t":0})"),
           std::string(R"({"kind":"sample","stream":"x","category":"Other","t":0,"value":[1]})"),
           std::string(R"({"kind":"detection","t":0,"image":"a.png","objects":[{"id":"a","box":[5,0,1,1]}]})"),
           std::string(R"({"kind":"failure_label","t":99,"reason":"r","recovery":"s"})"),
       })
    EXPECT_EQ(code_of([&] { parse_text(head + bad); }), ErrorCode::MalformedRecord) << bad;
  EXPECT_EQ(code_of([&] { parse_text(sample_line("joint/lift", 0, 0)); }), ErrorCode::MalformedRecord);
}

TEST(LoadEpisode, DuplicatePartAndBadLimits) {
  auto meta = [](const std::string& parts) {
    return R"({"kind":"meta","episode_id":"e","task_name":"t","robot_config":{"parts":[)" + parts + "]}}\n";
  };
  const auto s = sample_line("joint/lift", 0, 0);
  EXPECT_EQ(code_of([&] { parse_text(meta(R"({"name":"a","limit":[0,1]},{"name":"a","limit":[0,1]})") + s); }), ErrorCode::MalformedRecord);
  EXPECT_EQ(code_of([&] { parse_text(meta(R"({"name":"a","limit":[1,1]})") + s); }), ErrorCode::MalformedRecord);
}

TEST(LoadEpisode, InternalStreamRequired) {
  EXPECT_EQ(code_of([] { parse_text(meta_line() + "\n" + sample_line("flow_magnitude", 0, 1, "Environment")); }),
            ErrorCode::MissingRequiredStream);
}

TEST(LoadEpisode, FixtureMatchesManifestCounts) {
  // Independent count: scan the JSONL text line by line.
  const auto path = test::fixture("synthetic_cup_01");
  std::ifstream in(path);
  std::map<std::string, std::size_t> kinds;
  std::map<std::string, std::size_t> streams;
  std::string line;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    ++kinds[j["kind"].get<std::string>()];
    if (j["kind"] == "sample") ++streams[j["stream"].get<std::string>()];
  }
  nlohmann::json manifest;
  std::ifstream(test::fixture_dir() / "synthetic_cup_01.manifest.json") >> manifest;
  for (const auto& [k, n] : manifest["record_counts"].items()) EXPECT_EQ(kinds[k], n.get<std::size_t>()) << k;
  for (const auto& [k, n] : manifest["stream_counts"].items()) EXPECT_EQ(streams[k], n.get<std::size_t>()) << k;

  const auto ep = load_episode(path);
  EXPECT_EQ(ep.streams.size(), streams.size());
  for (const auto& s : ep.streams) EXPECT_EQ(s.samples.size(), streams[s.name]) << s.name;
  EXPECT_EQ(ep.planner_events.size(), kinds["planner"]);
  EXPECT_EQ(ep.detections.size(), kinds["detection"]);
  EXPECT_EQ(ep.failure_labels.size(), kinds["failure_label"]);
}

TEST(LoadEpisode, WriteParseRoundTrip) {
  const auto ep = load_episode(test::fixture("synthetic_cup_03"));
  std::ostringstream a;
  write_episode(ep, a);
  const auto again = parse_text(a.str(), ep.base_dir);
  std::ostringstream b;
  write_episode(again, b);
  EXPECT_EQ(a.str(), b.str());
}

TEST(Align, DefaultIntervalIsTwoTenthsOfASecond) { EXPECT_DOUBLE_EQ(kDefaultInterval, 0.2); }

TEST(Align, IdentityWhenSampledOnTheGrid) {
  std::string text = meta_line();
  for (int i = 0; i <= 10; ++i) text += "\n" + sample_line("joint/lift", i * 0.2, 0.01 * i * i);
  const auto frames = align(parse_text(text), 0.2);
  ASSERT_EQ(frames.size(), 11u);
  for (int i = 0; i <= 10; ++i) EXPECT_EQ(frames[i].joint_values.at("lift"), 0.01 * i * i);
  EXPECT_EQ(frames[0].deltas, MotionDeltas{});
}

TEST(Align, NearestSampleMatchesBruteForce) {
  test::Rng rng(11);
  std::string text = meta_line();
  std::vector<double> times;
  double t = 0.0;
  for (int i = 0; i < 200; ++i) {
    t += 0.1 + test::uniform(rng, -0.02, 0.02);  // ~10 Hz with jitter
    times.push_back(t);
    text += "\n" + sample_line("joint/arm_extension", t, static_cast<double>(i));
  }
  const auto ep = parse_text(text);
  const auto frames = align(ep, 0.2);
  for (const auto& f : frames) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < times.size(); ++i)
      if (std::abs(times[i] - f.timestamp) < std::abs(times[best] - f.timestamp)) best = i;
    EXPECT_EQ(f.joint_values.at("arm_extension"), static_cast<double>(best)) << f.timestamp;
    EXPECT_LE(std::abs(times[best] - f.timestamp), 0.07);
  }
}

TEST(Align, FrameCountFormula) {
  test::Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const double t0 = test::uniform(rng, 0, 5);
    const double t1 = t0 + test::uniform(rng, 0, 20);
    const double interval = test::uniform(rng, 0.05, 1.0);
    const auto ep = parse_text(meta_line() + "\n" + sample_line("joint/lift", t0, 0) + "\n" + sample_line("joint/lift", t1, 1));
    const auto frames = align(ep, interval);
    EXPECT_EQ(frames.size(), static_cast<std::size_t>(std::floor((t1 - t0) / interval + 1e-9)) + 1);
    for (std::size_t i = 0; i < frames.size(); ++i) EXPECT_DOUBLE_EQ(frames[i].timestamp, t0 + static_cast<double>(i) * interval);
  }
}

TEST(Align, TieGoesToEarlierSample) {
  const std::vector<Sample> s{{0.0, std::vector<double>{0}}, {0.2, std::vector<double>{1}}};
  EXPECT_EQ(nearest_sample(s, 0.1), 0u);
  EXPECT_EQ(nearest_sample(s, 0.1000001), 1u);
  EXPECT_EQ(nearest_sample(s, -5), 0u);
  EXPECT_EQ(nearest_sample(s, 5), 1u);
}

TEST(Align, PlannerStateHeldBetweenTransitions) {
  const auto ep = parse_text(meta_line() + "\n" + sample_line("joint/lift", 0, 0) + "\n" + sample_line("joint/lift", 1.0, 0) + "\n" +
                             R"({"kind":"planner","t":0.0,"from_state":"start","to_state":"a","outcome":"started"})" + "\n" +
                             R"({"kind":"planner","t":0.4,"from_state":"a","to_state":"b","outcome":"success"})");
  const auto frames = align(ep, 0.2);
  std::vector<std::string> states;
  for (const auto& f : frames) states.push_back(f.planner_state);
  EXPECT_EQ(states, (std::vector<std::string>{"a", "a", "b", "b", "b", "b"}));
}

TEST(Align, EmptyEpisodeAndBadInterval) {
  EpisodeLog ep;
  EXPECT_EQ(code_of([&] { align(ep); }), ErrorCode::EmptyEpisode);
  const auto one = parse_text(meta_line() + "\n" + sample_line("joint/lift", 0, 0));
  EXPECT_EQ(code_of([&] { align(one, 0.0); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(align(one).size(), 1u);
}

TEST(Align, WrapAngle) {
  constexpr double pi = std::numbers::pi;
  EXPECT_DOUBLE_EQ(wrap_angle(pi), pi);
  EXPECT_DOUBLE_EQ(wrap_angle(-pi), pi);
  EXPECT_NEAR(wrap_angle(2 * pi + 0.5), 0.5, 1e-12);
  EXPECT_NEAR(wrap_angle(-0.5 - 4 * pi), -0.5, 1e-12);
  test::Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double a = test::uniform(rng, -50, 50);
    const double w = wrap_angle(a);
    EXPECT_GT(w, -pi);
    EXPECT_LE(w, pi);
    EXPECT_NEAR(std::remainder(a - w, 2 * pi), 0.0, 1e-9);
  }
}

TEST(Align, HeadingAcrossBranchCutIsSmall) {
  MultimodalFrame a;
  MultimodalFrame b;
  a.base_pose = Pose2D{0, 0, std::numbers::pi - 0.01};
  b.base_pose = Pose2D{0, 0, -std::numbers::pi + 0.01};
  EXPECT_NEAR(motion_between(a, b).d_rot, 0.02, 1e-12);
}

class FixtureAlignment : public ::testing::TestWithParam<const char*> {};

TEST_P(FixtureAlignment, IdempotentThroughReserialization) {
  const auto ep = load_episode(test::fixture(GetParam()));
  const auto frames = align(ep);
  const auto again = align(frames_as_episode(frames, ep));
  ASSERT_EQ(again.size(), frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) ASSERT_EQ(again[i], frames[i]) << "frame " << i;
}

TEST_P(FixtureAlignment, DeltasNonNegativeAndTriangleInequality) {
  const auto frames = align(load_episode(test::fixture(GetParam())));
  double path = 0.0;
  for (const auto& f : frames) {
    EXPECT_GE(f.deltas.d_pos, 0.0);
    EXPECT_GE(f.deltas.d_rot, 0.0);
    EXPECT_GE(f.deltas.d_cam, 0.0);
    EXPECT_GE(f.deltas.d_arm, 0.0);
    path += f.deltas.d_pos;
  }
  const auto& a = *frames.front().base_pose;
  const auto& b = *frames.back().base_pose;
  EXPECT_GE(path + 1e-9, std::hypot(b.x - a.x, b.y - a.y));
}

TEST_P(FixtureAlignment, FramesJsonlRoundTrip) {
  const auto frames = align(load_episode(test::fixture(GetParam())));
  std::stringstream io;
  write_frames_jsonl(frames, io);
  const auto back = read_frames_jsonl(io);
  ASSERT_EQ(back.size(), frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) EXPECT_EQ(back[i], frames[i]);
}

INSTANTIATE_TEST_SUITE_P(Fixtures, FixtureAlignment,
                         ::testing::Values("synthetic_cup_00", "synthetic_cup_01", "synthetic_cup_03", "synthetic_microwave_03",
                                           "synthetic_hat_03", "synthetic_clothes_01"));

}  // namespace
}  // namespace ronar
