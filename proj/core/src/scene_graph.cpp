// SPDX-License-Identifier: Apache-2.0
#include "ronar/scene_graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <tuple>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "ronar/error.hpp"

namespace ronar {

std::string_view to_string(Relation r) {
  switch (r) {
    case Relation::LeftTo: return "left to";
    case Relation::RightTo: return "right to";
    case Relation::Above: return "above";
    case Relation::Below: return "below";
    case Relation::InFrontOf: return "in front of";
    case Relation::Behind: return "behind";
  }
  return "left to";
}

Relation inverse(Relation r) {
  switch (r) {
    case Relation::LeftTo: return Relation::RightTo;
    case Relation::RightTo: return Relation::LeftTo;
    case Relation::Above: return Relation::Below;
    case Relation::Below: return Relation::Above;
    case Relation::InFrontOf: return Relation::Behind;
    case Relation::Behind: return Relation::InFrontOf;
  }
  return r;
}

bool operator<(const Triplet& a, const Triplet& b) {
  return std::make_tuple(std::string_view(a.subject_id), to_string(a.relation), std::string_view(a.object_id)) <
         std::make_tuple(std::string_view(b.subject_id), to_string(b.relation), std::string_view(b.object_id));
}

std::vector<DetectedObject> filter_objects(std::span<const DetectedObject> detections, double cutoff) {
  if (!(cutoff > 0.0)) throw Error(ErrorCode::InvalidArgument, "distance cutoff must be > 0");
  std::vector<DetectedObject> kept;
  std::copy_if(detections.begin(), detections.end(), std::back_inserter(kept),
               [&](const DetectedObject& o) { return !o.distance || *o.distance < cutoff; });
  return kept;
}

SceneGraph relations(std::span<const DetectedObject> objects, const RelationMargins& margins) {
  std::set<std::string> ids;
  for (const auto& o : objects)
    if (!ids.insert(o.object_id).second) throw Error(ErrorCode::DuplicateObjectId, o.object_id);

  SceneGraph graph;
  graph.objects.assign(objects.begin(), objects.end());
  auto emit = [&](const DetectedObject& s, Relation r, const DetectedObject& o, double gap) {
    graph.triplets.push_back({s.object_id, r, o.object_id, gap});
    graph.triplets.push_back({o.object_id, inverse(r), s.object_id, gap});
  };

  for (std::size_t i = 0; i < objects.size(); ++i) {
    for (std::size_t j = i + 1; j < objects.size(); ++j) {
      const auto& a = objects[i];
      const auto& b = objects[j];
      const double dx = b.box.center_x() - a.box.center_x();
      if (std::abs(dx) > margins.horizontal_px) {
        if (dx > 0) emit(a, Relation::LeftTo, b, std::abs(dx));
        else emit(b, Relation::LeftTo, a, std::abs(dx));
      }
      const double dy = b.box.center_y() - a.box.center_y();
      if (std::abs(dy) > margins.vertical_px) {
        if (dy > 0) emit(a, Relation::Above, b, std::abs(dy));
        else emit(b, Relation::Above, a, std::abs(dy));
      }
      if (a.distance && b.distance) {
        const double dd = *b.distance - *a.distance;
        if (std::abs(dd) > margins.depth_m) {
          if (dd > 0) emit(a, Relation::InFrontOf, b, std::abs(dd));
          else emit(b, Relation::InFrontOf, a, std::abs(dd));
        }
      }
    }
  }
  std::sort(graph.triplets.begin(), graph.triplets.end());
  return graph;
}

std::string environment_digest(const SceneGraph& graph) {
  if (graph.objects.empty()) return "no objects within range";
  std::vector<const DetectedObject*> order;
  for (const auto& o : graph.objects) order.push_back(&o);
  std::sort(order.begin(), order.end(), [](const DetectedObject* a, const DetectedObject* b) {
    const double da = a->distance.value_or(std::numeric_limits<double>::infinity());
    const double db = b->distance.value_or(std::numeric_limits<double>::infinity());
    if (da != db) return da < db;
    return a->object_id < b->object_id;
  });

  std::string out;
  for (const auto* o : order) {
    const auto distance = o->distance ? fmt::format("{:.2f} m", *o->distance) : std::string("unknown distance");
    out += fmt::format("object {} ({}) at {}, box [{:.0f}, {:.0f}, {:.0f}, {:.0f}]\n", o->object_id, o->label, distance,
                       o->box.x0, o->box.y0, o->box.x1, o->box.y1);
  }
  std::vector<Triplet> triplets = graph.triplets;
  std::sort(triplets.begin(), triplets.end());
  for (const auto& t : triplets) {
    const bool depth = t.relation == Relation::InFrontOf || t.relation == Relation::Behind;
    out += fmt::format("{} {} {} (gap {:.2f} {})\n", t.subject_id, to_string(t.relation), t.object_id, t.gap, depth ? "m" : "px");
  }
  if (!out.empty()) out.pop_back();
  return out;
}

FixtureDetector::FixtureDetector(std::span<const DetectionRecord> records) {
  for (const auto& r : records) add(r.image, r.objects);
}

FixtureDetector FixtureDetector::from_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, fmt::format("cannot open detector fixture '{}'", path.string()));
  FixtureDetector detector;
  const auto j = nlohmann::json::parse(in);
  for (const auto& [image, objects] : j.items()) detector.add(image, objects.get<std::vector<DetectedObject>>());
  return detector;
}

void FixtureDetector::add(const std::string& image, std::vector<DetectedObject> objects) {
  by_image_[image] = std::move(objects);
}

std::vector<DetectedObject> FixtureDetector::detect(const std::string& image, const std::optional<std::string>&) {
  auto it = by_image_.find(image);
  return it == by_image_.end() ? std::vector<DetectedObject>{} : it->second;
}

std::vector<DetectedObject> parse_detections(std::string_view json_text) {
  try {
    const auto j = nlohmann::json::parse(json_text);
    if (!j.is_array()) throw Error(ErrorCode::MalformedRecord, "detector output must be a JSON array");
    return j.get<std::vector<DetectedObject>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedRecord, fmt::format("detector output: {}", e.what()));
  }
}

}  // namespace ronar
