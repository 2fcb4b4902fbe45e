// SPDX-License-Identifier: Apache-2.0
//
// Procedural head-camera imagery: a cylindrical value-noise panorama viewed
// through a window that follows heading, tilt and base travel, with the arm
// drawn as a textured bar and detected objects as checkered boxes.
#include <algorithm>
#include <cmath>
#include <random>

#include "ronar/error.hpp"
#include "ronar/task_sim.hpp"

namespace ronar {

namespace {

constexpr int kWorldWidth = 1600;
constexpr int kWorldHeight = 800;
constexpr double kTravelPixelsPerMeter = 120.0;
// Arm drawn as a textured bar entering from the right edge. The scale keeps
// per-frame arm motion inside the default flow search radius.
constexpr double kArmPixelsPerMeter = 70.0;
constexpr int kArmTextureW = 160;
constexpr int kArmTextureH = 36;

struct Octave {
  int cell;
  float amplitude;
};

constexpr Octave kOctaves[] = {{100, 0.45f}, {40, 0.30f}, {10, 0.25f}};

float smooth(float t) { return t * t * (3.0f - 2.0f * t); }

}  // namespace

SceneRenderer::SceneRenderer(std::uint64_t seed, int width, int height)
    : width_(width), height_(height), world_w_(kWorldWidth), world_h_(kWorldHeight), world_(static_cast<std::size_t>(kWorldWidth) * kWorldHeight, 0.0f) {
  if (width < 16 || height < 16 || width > kWorldWidth || height > kWorldHeight)
    throw Error(ErrorCode::InvalidArgument, "unsupported render size");
  std::mt19937_64 rng(seed);
  auto uniform01 = [&] { return static_cast<float>(static_cast<double>(rng() >> 11) * 0x1p-53); };
  arm_texture_.resize(static_cast<std::size_t>(kArmTextureW) * kArmTextureH);
  for (int y = 0; y < kArmTextureH; y += 3)
    for (int x = 0; x < kArmTextureW; x += 3) {
      const float v = 0.1f + 0.35f * uniform01();
      for (int yy = y; yy < std::min(y + 3, kArmTextureH); ++yy)
        for (int xx = x; xx < std::min(x + 3, kArmTextureW); ++xx) arm_texture_[static_cast<std::size_t>(yy) * kArmTextureW + xx] = v;
    }
  for (const auto& o : kOctaves) {
    const int cols = world_w_ / o.cell;
    const int rows = world_h_ / o.cell + 1;
    std::vector<float> lattice(static_cast<std::size_t>(cols) * rows);
    for (auto& v : lattice) v = uniform01();
    for (int y = 0; y < world_h_; ++y) {
      const int gy = y / o.cell;
      const float fy = smooth(static_cast<float>(y % o.cell) / static_cast<float>(o.cell));
      for (int x = 0; x < world_w_; ++x) {
        const int gx = x / o.cell;
        const int gx1 = (gx + 1) % cols;  // wraps around the full turn
        const float fx = smooth(static_cast<float>(x % o.cell) / static_cast<float>(o.cell));
        auto at = [&](int cx, int cy) { return lattice[static_cast<std::size_t>(std::min(cy, rows - 1)) * cols + cx]; };
        const float top = at(gx, gy) + (at(gx1, gy) - at(gx, gy)) * fx;
        const float bottom = at(gx, gy + 1) + (at(gx1, gy + 1) - at(gx, gy + 1)) * fx;
        world_[static_cast<std::size_t>(y) * world_w_ + x] += o.amplitude * (top + (bottom - top) * fy);
      }
    }
  }
}

double SceneRenderer::sample_world(double x, double y) const {
  y = std::clamp(y, 0.0, static_cast<double>(world_h_ - 1));
  x = std::fmod(x, static_cast<double>(world_w_));
  if (x < 0) x += world_w_;
  const int x0 = static_cast<int>(x);
  const int y0 = static_cast<int>(y);
  const int x1 = (x0 + 1) % world_w_;
  const int y1 = std::min(y0 + 1, world_h_ - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  auto w = [&](int cx, int cy) { return static_cast<double>(world_[static_cast<std::size_t>(cy) * world_w_ + cx]); };
  const double top = w(x0, y0) + (w(x1, y0) - w(x0, y0)) * fx;
  const double bottom = w(x0, y1) + (w(x1, y1) - w(x0, y1)) * fx;
  return top + (bottom - top) * fy;
}

GrayImage SceneRenderer::render(const CameraPose& from, const CameraPose& to, std::span<const DetectedObject> objects) const {
  auto origin = [&](const CameraPose& p) {
    const double ox = p.heading * kPixelsPerRadian + p.travel * kTravelPixelsPerMeter - width_ / 2.0;
    const double oy = std::clamp(world_h_ / 2.0 - p.tilt * kPixelsPerRadian - height_ / 2.0, 0.0, static_cast<double>(world_h_ - height_));
    return std::pair{ox, oy};
  };
  const auto [ax, ay] = origin(from);
  const auto [bx, by] = origin(to);
  const double shift = std::max({std::abs(bx - ax), std::abs(by - ay), std::abs(to.arm - from.arm) * kArmPixelsPerMeter});
  const int n = std::clamp(static_cast<int>(std::ceil(shift / 2.0)), 1, 6);

  // Objects occlude the world; the arm is nearest to the camera and occludes both.
  std::vector<double> object_layer(static_cast<std::size_t>(width_) * height_, -1.0);
  for (const auto& o : objects) {
    std::uint32_t h = 2166136261u;
    for (unsigned char c : o.object_id) h = (h ^ c) * 16777619u;
    const double light = (170.0 + h % 70 - 30.0) / 195.0;
    const double dark = (20.0 + (h >> 8) % 60 - 30.0) / 195.0;
    const int x0 = std::clamp(static_cast<int>(o.box.x0), 0, width_);
    const int x1 = std::clamp(static_cast<int>(o.box.x1), 0, width_);
    const int y0 = std::clamp(static_cast<int>(o.box.y0), 0, height_);
    const int y1 = std::clamp(static_cast<int>(o.box.y1), 0, height_);
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) object_layer[static_cast<std::size_t>(y) * width_ + x] = ((x - x0) / 5 + (y - y0) / 5) % 2 ? light : dark;
  }

  std::vector<double> acc(static_cast<std::size_t>(width_) * height_, 0.0);
  for (int s = 0; s < n; ++s) {
    const double a = n == 1 ? 1.0 : static_cast<double>(s) / (n - 1);
    const double ox = ax + (bx - ax) * a;
    const double oy = ay + (by - ay) * a;
    const double arm = from.arm + (to.arm - from.arm) * a;
    const double lift = from.lift + (to.lift - from.lift) * a;
    const int arm_x0 = width_ - static_cast<int>(std::lround(60.0 + arm * kArmPixelsPerMeter));
    const int arm_y0 = height_ - kArmTextureH - 20 - static_cast<int>(std::lround(lift * 20.0));
    for (int y = 0; y < height_; ++y) {
      for (int x = 0; x < width_; ++x) {
        const auto i = static_cast<std::size_t>(y) * width_ + x;
        double v;
        if (x >= arm_x0 && y >= arm_y0 && y < arm_y0 + kArmTextureH && x - arm_x0 < kArmTextureW) {
          v = arm_texture_[static_cast<std::size_t>(y - arm_y0) * kArmTextureW + (x - arm_x0)];
        } else if (object_layer[i] >= 0.0) {
          v = object_layer[i];
        } else {
          v = sample_world(ox + x, oy + y);
        }
        acc[i] += v;
      }
    }
  }

  GrayImage img;
  img.width = width_;
  img.height = height_;
  img.pixels.resize(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) {
    const double v = acc[i] / n;
    img.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(30.0 + v * 195.0), 0L, 255L));
  }
  return img;
}

}  // namespace ronar
