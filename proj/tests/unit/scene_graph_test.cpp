// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <set>
#include <tuple>

#include <nlohmann/json.hpp>

#include "ronar/scene_graph.hpp"
#include "test_support.hpp"

namespace ronar {
namespace {

using test::code_of;
using test::Rng;

DetectedObject obj(std::string id, double cx, double cy, std::optional<double> d = std::nullopt) {
  return {id, "thing", {cx - 5, cy - 5, cx + 5, cy + 5}, d};
}

std::vector<DetectedObject> random_objects(Rng& rng, int n) {
  std::vector<DetectedObject> out;
  for (int i = 0; i < n; ++i) {
    const double x0 = test::uniform(rng, 0, 300);
    const double y0 = test::uniform(rng, 0, 220);
    std::optional<double> d;
    if (test::coin(rng, 0.8)) d = std::round(test::uniform(rng, 0, 4) * 20) / 20;  // coarse grid provokes equal depths
    out.push_back({"o" + std::to_string(i), "label" + std::to_string(i % 3),
                   {x0, y0, x0 + test::uniform(rng, 1, 60), y0 + test::uniform(rng, 1, 60)}, d});
  }
  return out;
}

using Key = std::tuple<std::string, std::string, std::string>;

// Every ordered pair evaluated independently, no symmetry shortcut.
std::set<Key> pairwise_oracle(const std::vector<DetectedObject>& objs, const RelationMargins& m) {
  std::set<Key> out;
  for (const auto& a : objs)
    for (const auto& b : objs) {
      if (a.object_id == b.object_id) continue;
      const double ax = (a.box.x0 + a.box.x1) / 2, bx = (b.box.x0 + b.box.x1) / 2;
      const double ay = (a.box.y0 + a.box.y1) / 2, by = (b.box.y0 + b.box.y1) / 2;
      if (bx - ax > m.horizontal_px) out.insert({a.object_id, "left to", b.object_id});
      if (ax - bx > m.horizontal_px) out.insert({a.object_id, "right to", b.object_id});
      if (by - ay > m.vertical_px) out.insert({a.object_id, "above", b.object_id});
      if (ay - by > m.vertical_px) out.insert({a.object_id, "below", b.object_id});
      if (a.distance && b.distance) {
        if (*b.distance - *a.distance > m.depth_m) out.insert({a.object_id, "in front of", b.object_id});
        if (*a.distance - *b.distance > m.depth_m) out.insert({a.object_id, "behind", b.object_id});
      }
    }
  return out;
}

std::set<std::string> ids(const std::vector<DetectedObject>& objs) {
  std::set<std::string> out;
  for (const auto& o : objs) out.insert(o.object_id);
  return out;
}

TEST(Filter, Examples) {
  EXPECT_TRUE(filter_objects({}).empty());
  const std::vector<DetectedObject> d{obj("1", 0, 0, 0.5), obj("2", 0, 0, 2.1), obj("3", 0, 0, 1.9), obj("4", 0, 0, 2.0), obj("5", 0, 0)};
  EXPECT_EQ(ids(filter_objects(d, 2.0)), (std::set<std::string>{"1", "3", "5"}));
  EXPECT_EQ(code_of([&] { filter_objects(d, 0.0); }), ErrorCode::InvalidArgument);
}

TEST(Filter, MatchesPredicateOracle) {
  Rng rng(3);
  const auto d = random_objects(rng, 100);
  for (double c : {0.5, 1.0, 2.0, 3.3}) {
    std::vector<std::string> want;
    for (const auto& o : d)
      if (!o.distance || *o.distance < c) want.push_back(o.object_id);
    std::vector<std::string> got;
    for (const auto& o : filter_objects(d, c)) got.push_back(o.object_id);
    EXPECT_EQ(got, want);
  }
}

TEST(Filter, IdempotentAndMonotone) {
  Rng rng(5);
  for (int i = 0; i < 500; ++i) {
    const auto d = random_objects(rng, test::uniform_int(rng, 0, 15));
    const double c = test::uniform(rng, 0.05, 4.0);
    const double c2 = c + test::uniform(rng, 0, 2.0);
    const auto once = filter_objects(d, c);
    EXPECT_EQ(ids(filter_objects(once, c)), ids(once));
    EXPECT_EQ(filter_objects(once, c).size(), once.size());
    const auto wider = ids(filter_objects(d, c2));
    for (const auto& id : ids(once)) EXPECT_TRUE(wider.count(id)) << id;
  }
}

TEST(Relations, SingleObjectHasNone) { EXPECT_TRUE(relations(std::vector{obj("a", 10, 10, 1.0)}).triplets.empty()); }

TEST(Relations, HorizontalOnly) {
  const auto g = relations(std::vector{obj("A", 10, 50), obj("B", 100, 50)}, {5, 5, 0.1});
  ASSERT_EQ(g.triplets.size(), 2u);
  EXPECT_EQ(g.triplets[0], (Triplet{"A", Relation::LeftTo, "B", 90}));
  EXPECT_EQ(g.triplets[1], (Triplet{"B", Relation::RightTo, "A", 90}));
}

TEST(Relations, ImageYGrowsDownward) {
  const auto g = relations(std::vector{obj("top", 50, 10), obj("bottom", 50, 100)});
  ASSERT_EQ(g.triplets.size(), 2u);
  EXPECT_EQ(g.triplets[0], (Triplet{"bottom", Relation::Below, "top", 90}));
  EXPECT_EQ(g.triplets[1], (Triplet{"top", Relation::Above, "bottom", 90}));
}

TEST(Relations, DuplicateIds) {
  EXPECT_EQ(code_of([] { relations(std::vector{obj("a", 0, 0), obj("a", 50, 0)}); }), ErrorCode::DuplicateObjectId);
}

TEST(Relations, MatchesPairwiseOracle) {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const auto objs = random_objects(rng, test::uniform_int(rng, 0, 10));
    const RelationMargins m{test::uniform(rng, 0, 40), test::uniform(rng, 0, 40), test::uniform(rng, 0, 0.5)};
    const auto g = relations(objs, m);
    std::set<Key> got;
    for (const auto& t : g.triplets) {
      EXPECT_NE(t.subject_id, t.object_id);
      EXPECT_TRUE(got.insert({t.subject_id, std::string(to_string(t.relation)), t.object_id}).second);
      // Symmetric partner always present with the same gap.
      EXPECT_NE(std::find(g.triplets.begin(), g.triplets.end(), Triplet{t.object_id, inverse(t.relation), t.subject_id, t.gap}), g.triplets.end());
      EXPECT_GT(t.gap, 0.0);
    }
    ASSERT_EQ(got, pairwise_oracle(objs, m)) << trial;
    EXPECT_TRUE(std::is_sorted(g.triplets.begin(), g.triplets.end()));
  }
}

TEST(Digest, Empty) { EXPECT_EQ(environment_digest(SceneGraph{}), "no objects within range"); }

TEST(Digest, TwoObjectOrdering) {
  const auto g = relations(std::vector{obj("b", 100, 50, 0.5), obj("a", 10, 50, 1.25)});
  EXPECT_EQ(environment_digest(g),
            "object b (thing) at 0.50 m, box [95, 45, 105, 55]\n"
            "object a (thing) at 1.25 m, box [5, 45, 15, 55]\n"
            "a behind b (gap 0.75 m)\n"
            "a left to b (gap 90.00 px)\n"
            "b in front of a (gap 0.75 m)\n"
            "b right to a (gap 90.00 px)");
}

TEST(Digest, PermutationInvariant) {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    auto objs = random_objects(rng, test::uniform_int(rng, 1, 9));
    const auto ref = environment_digest(relations(objs));
    EXPECT_EQ(environment_digest(relations(objs)), ref);
    std::shuffle(objs.begin(), objs.end(), rng);
    EXPECT_EQ(environment_digest(relations(objs)), ref);
  }
}

TEST(Detector, FixtureLookupAndParse) {
  const std::vector<DetectionRecord> records{{0.0, "img/a.png", {obj("cup", 10, 10, 0.8)}}};
  FixtureDetector det(records);
  EXPECT_EQ(det.detect("img/a.png", std::nullopt).size(), 1u);
  EXPECT_TRUE(det.detect("img/b.png", std::nullopt).empty());

  const auto parsed = parse_detections(R"([{"id":"x","label":"cup","box":[1,2,3,4],"distance_m":0.5},{"id":"y","box":[0,0,1,1],"distance_m":null}])");
  ASSERT_EQ(parsed.size(), 2u);
  EXPECT_EQ(parsed[0].distance, 0.5);
  EXPECT_FALSE(parsed[1].distance);
  EXPECT_EQ(code_of([] { parse_detections("{}"); }), ErrorCode::MalformedRecord);
  EXPECT_EQ(code_of([] { parse_detections("[{\"id\":1}]"); }), ErrorCode::MalformedRecord);

  test::ScratchDir dir("det");
  const auto p = dir.write("d.json", R"({"a.png":[{"id":"x","label":"cup","box":[1,2,3,4],"distance_m":0.5}]})");
  EXPECT_EQ(FixtureDetector::from_json_file(p).detect("a.png", std::nullopt)[0].object_id, "x");
}

}  // namespace
}  // namespace ronar
