// SPDX-License-Identifier: Apache-2.0
//
// Pixel-level heuristics: block-matching optical flow, variance-of-Laplacian
// clarity and sharpest-adjacent-image selection.
#pragma once

#include <cstddef>
#include <filesystem>
#include <list>
#include <mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ronar/episode_log.hpp"
#include "ronar/image.hpp"

namespace ronar {

struct FlowVector {
  int dx = 0;
  int dy = 0;

  friend bool operator==(const FlowVector&, const FlowVector&) = default;
};

/// Block-resolution motion field; width/height are in blocks.
struct FlowField {
  int width = 0;
  int height = 0;
  std::vector<FlowVector> vectors;  // row-major, width * height

  const FlowVector& at(int bx, int by) const { return vectors[static_cast<std::size_t>(by) * width + bx]; }
};

struct FlowParams {
  int block_size = 16;
  int search_radius = 8;
};

/// Exhaustive SAD block matching from `prev` to `curr`. Each vector is the
/// displacement of the block's content; ties prefer the smallest magnitude,
/// then row-major order of (dy, dx). Candidates leaving the image are skipped.
FlowField dense_flow(const GrayImage& prev, const GrayImage& curr, int block_size, int search_radius);

/// Mean Euclidean length of the vectors. Throws EmptyFlow on an empty field.
double mean_flow_magnitude(const FlowField& flow);

struct ClarityScore {
  double value = 0.0;

  friend auto operator<=>(const ClarityScore&, const ClarityScore&) = default;
};

/// Population variance of the 4-neighbour Laplacian over interior pixels.
ClarityScore clarity_score(const GrayImage& image);

/// Loads episode images by relative path.
class ImageSource {
 public:
  virtual ~ImageSource() = default;
  virtual GrayImage load(const std::string& relative_path) = 0;
};

/// Reads PNGs under a base directory with a small LRU cache. Thread-safe.
class FileImageSource final : public ImageSource {
 public:
  explicit FileImageSource(std::filesystem::path base_dir, std::size_t capacity = 16);
  GrayImage load(const std::string& relative_path) override;

 private:
  std::filesystem::path base_dir_;
  std::size_t capacity_;
  std::mutex mutex_;
  std::list<std::pair<std::string, GrayImage>> lru_;
  std::unordered_map<std::string, std::list<std::pair<std::string, GrayImage>>::iterator> index_;
};

inline constexpr double kDefaultSharpestWindow = 1.0;

/// Index (into `frames`) of the frame with a head image inside
/// [center - window, center + window] whose clarity is highest. Equal scores
/// resolve to the earliest frame. Throws NoImageInWindow.
std::size_t select_sharpest(std::span<const MultimodalFrame> frames, double center, double window, ImageSource& images);

/// Fills flow_magnitude for frames lacking a precomputed value, using the
/// head image of the frame and its predecessor. Frame 0 stays absent.
void annotate_flow(std::span<MultimodalFrame> frames, ImageSource& images, const FlowParams& params = {});

}  // namespace ronar
