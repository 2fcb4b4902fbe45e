// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ronar/episode_log.hpp"

namespace ronar {

enum class Relation { LeftTo, RightTo, Above, Below, InFrontOf, Behind };

std::string_view to_string(Relation r);
Relation inverse(Relation r);

struct Triplet {
  std::string subject_id;
  Relation relation = Relation::LeftTo;
  std::string object_id;
  double gap = 0.0;  // pixels for image-plane relations, meters for depth relations

  friend bool operator==(const Triplet&, const Triplet&) = default;
};

bool operator<(const Triplet& a, const Triplet& b);

struct SceneGraph {
  std::vector<DetectedObject> objects;
  std::vector<Triplet> triplets;  // sorted
};

struct RelationMargins {
  double horizontal_px = 20.0;
  double vertical_px = 20.0;
  double depth_m = 0.15;
};

inline constexpr double kDefaultDistanceCutoff = 2.0;

/// Keeps objects closer than `cutoff` meters. Objects without a distance are kept.
std::vector<DetectedObject> filter_objects(std::span<const DetectedObject> detections, double cutoff = kDefaultDistanceCutoff);

/// Pairwise spatial relations in image coordinates (y grows downward) plus
/// depth ordering. Every relation is emitted with its inverse.
SceneGraph relations(std::span<const DetectedObject> objects, const RelationMargins& margins = {});

/// Deterministic text: objects by distance then id, then sorted triplets.
std::string environment_digest(const SceneGraph& graph);

/// Returns detected objects for an image (plug-in contract for live use).
class Detector {
 public:
  virtual ~Detector() = default;
  virtual std::vector<DetectedObject> detect(const std::string& image, const std::optional<std::string>& depth_image) = 0;
};

/// Serves the detection records already present in an episode log, keyed by
/// image path. Unknown images yield no detections.
class FixtureDetector final : public Detector {
 public:
  FixtureDetector() = default;
  explicit FixtureDetector(std::span<const DetectionRecord> records);
  /// Loads a JSON object mapping image path -> array of DetectedObject records.
  static FixtureDetector from_json_file(const std::filesystem::path& path);

  void add(const std::string& image, std::vector<DetectedObject> objects);
  std::vector<DetectedObject> detect(const std::string& image, const std::optional<std::string>& depth_image) override;

 private:
  std::map<std::string, std::vector<DetectedObject>> by_image_;
};

/// Parses a detector plug-in's output: a JSON array of DetectedObject records.
std::vector<DetectedObject> parse_detections(std::string_view json_text);

}  // namespace ronar
