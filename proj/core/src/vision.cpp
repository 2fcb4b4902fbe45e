// SPDX-License-Identifier: Apache-2.0
#include "ronar/vision.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <map>
#include <optional>

#include <fmt/format.h>

#include "ronar/error.hpp"

namespace ronar {

namespace {

std::vector<FlowVector> candidate_order(int radius) {
  std::vector<FlowVector> order;
  order.reserve(static_cast<std::size_t>(2 * radius + 1) * (2 * radius + 1));
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx) order.push_back({dx, dy});
  std::stable_sort(order.begin(), order.end(), [](const FlowVector& a, const FlowVector& b) {
    return a.dx * a.dx + a.dy * a.dy < b.dx * b.dx + b.dy * b.dy;
  });
  return order;
}

}  // namespace

FlowField dense_flow(const GrayImage& prev, const GrayImage& curr, int block_size, int search_radius) {
  if (block_size < 1 || search_radius < 0) throw Error(ErrorCode::InvalidArgument, "block_size must be >= 1 and search_radius >= 0");
  if (prev.width != curr.width || prev.height != curr.height)
    throw Error(ErrorCode::DimensionMismatch, fmt::format("{}x{} vs {}x{}", prev.width, prev.height, curr.width, curr.height));
  if (prev.width < block_size || prev.height < block_size)
    throw Error(ErrorCode::ImageTooSmall, fmt::format("{}x{} smaller than block {}", prev.width, prev.height, block_size));

  FlowField flow;
  flow.width = prev.width / block_size;
  flow.height = prev.height / block_size;
  flow.vectors.resize(static_cast<std::size_t>(flow.width) * flow.height);

  // Sorted by magnitude then (dy, dx); the first strict minimum is the answer.
  const auto order = candidate_order(search_radius);

  for (int by = 0; by < flow.height; ++by) {
    for (int bx = 0; bx < flow.width; ++bx) {
      const int x0 = bx * block_size;
      const int y0 = by * block_size;
      std::uint32_t best = std::numeric_limits<std::uint32_t>::max();
      FlowVector best_v{};
      for (const auto& v : order) {
        const int cx = x0 + v.dx;
        const int cy = y0 + v.dy;
        if (cx < 0 || cy < 0 || cx + block_size > curr.width || cy + block_size > curr.height) continue;
        std::uint32_t sad = 0;
        for (int r = 0; r < block_size && sad < best; ++r) {
          const std::uint8_t* a = prev.row(y0 + r) + x0;
          const std::uint8_t* b = curr.row(cy + r) + cx;
          std::uint32_t row_sad = 0;
          for (int c = 0; c < block_size; ++c) row_sad += static_cast<std::uint32_t>(std::abs(int(a[c]) - int(b[c])));
          sad += row_sad;
        }
        if (sad < best) {
          best = sad;
          best_v = v;
          if (best == 0) break;  // later candidates cannot be strictly smaller
        }
      }
      flow.vectors[static_cast<std::size_t>(by) * flow.width + bx] = best_v;
    }
  }
  return flow;
}

double mean_flow_magnitude(const FlowField& flow) {
  if (flow.vectors.empty()) throw Error(ErrorCode::EmptyFlow, "flow field has no vectors");
  double sum = 0.0;
  for (const auto& v : flow.vectors) sum += std::hypot(double(v.dx), double(v.dy));
  return sum / static_cast<double>(flow.vectors.size());
}

ClarityScore clarity_score(const GrayImage& image) {
  if (image.width < 3 || image.height < 3)
    throw Error(ErrorCode::ImageTooSmall, fmt::format("{}x{} is below 3x3", image.width, image.height));
  // Responses are integers, so the sums are exact in 64 bits.
  std::int64_t sum = 0;
  std::int64_t sum_sq = 0;
  for (int y = 1; y < image.height - 1; ++y) {
    const std::uint8_t* up = image.row(y - 1);
    const std::uint8_t* mid = image.row(y);
    const std::uint8_t* down = image.row(y + 1);
    for (int x = 1; x < image.width - 1; ++x) {
      const std::int64_t lap = int(mid[x + 1]) + int(mid[x - 1]) + int(up[x]) + int(down[x]) - 4 * int(mid[x]);
      sum += lap;
      sum_sq += lap * lap;
    }
  }
  const auto n = static_cast<std::int64_t>(image.width - 2) * (image.height - 2);
  const auto numerator = static_cast<__int128>(n) * sum_sq - static_cast<__int128>(sum) * sum;
  return {static_cast<double>(numerator) / (static_cast<double>(n) * static_cast<double>(n))};
}

FileImageSource::FileImageSource(std::filesystem::path base_dir, std::size_t capacity)
    : base_dir_(std::move(base_dir)), capacity_(std::max<std::size_t>(capacity, 1)) {}

GrayImage FileImageSource::load(const std::string& relative_path) {
  {
    std::lock_guard lock(mutex_);
    if (auto it = index_.find(relative_path); it != index_.end()) {
      lru_.splice(lru_.begin(), lru_, it->second);
      return it->second->second;
    }
  }
  GrayImage image = read_png_gray(base_dir_ / relative_path);
  std::lock_guard lock(mutex_);
  if (index_.count(relative_path) == 0) {
    lru_.emplace_front(relative_path, image);
    index_[relative_path] = lru_.begin();
    if (lru_.size() > capacity_) {
      index_.erase(lru_.back().first);
      lru_.pop_back();
    }
  }
  return image;
}

std::size_t select_sharpest(std::span<const MultimodalFrame> frames, double center, double window, ImageSource& images) {
  constexpr double kSlack = 1e-9;
  std::optional<std::size_t> best;
  double best_score = -1.0;
  std::map<std::string, double> scored;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto& f = frames[i];
    if (!f.head_image || std::abs(f.timestamp - center) > window + kSlack) continue;
    auto it = scored.find(*f.head_image);
    if (it == scored.end()) it = scored.emplace(*f.head_image, clarity_score(images.load(*f.head_image)).value).first;
    const double score = it->second;
    const bool earlier = best && f.timestamp < frames[*best].timestamp;
    if (!best || score > best_score || (score == best_score && earlier)) {
      best = i;
      best_score = score;
    }
  }
  if (!best) throw Error(ErrorCode::NoImageInWindow, fmt::format("no head image within {} s of t={}", window, center));
  return *best;
}

void annotate_flow(std::span<MultimodalFrame> frames, ImageSource& images, const FlowParams& params) {
  std::optional<std::pair<std::string, GrayImage>> previous;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    auto& f = frames[i];
    if (!f.head_image) {
      previous.reset();
      continue;
    }
    if (i > 0 && !f.flow_magnitude && frames[i - 1].head_image) {
      if (*frames[i - 1].head_image == *f.head_image) {
        f.flow_magnitude = 0.0;
      } else {
        if (!previous || previous->first != *frames[i - 1].head_image)
          previous.emplace(*frames[i - 1].head_image, images.load(*frames[i - 1].head_image));
        GrayImage current = images.load(*f.head_image);
        f.flow_magnitude = mean_flow_magnitude(dense_flow(previous->second, current, params.block_size, params.search_radius));
        previous.emplace(*f.head_image, std::move(current));
        continue;
      }
    }
    if (!previous || previous->first != *f.head_image) previous.reset();
  }
}

}  // namespace ronar
