// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <limits>
#include <map>

#include <fmt/format.h>

#include "ronar/vision.hpp"
#include "test_support.hpp"

namespace ronar {
namespace {

using test::code_of;
using test::random_image;
using test::Rng;

class MapImages final : public ImageSource {
 public:
  std::map<std::string, GrayImage> images;
  std::size_t loads = 0;
  GrayImage load(const std::string& path) override {
    ++loads;
    return images.at(path);
  }
};

// Plain double-loop Laplacian and two-pass population variance.
double naive_clarity(const GrayImage& img) {
  std::vector<double> r;
  for (int y = 1; y + 1 < img.height; ++y)
    for (int x = 1; x + 1 < img.width; ++x) {
      double acc = 0;
      const int k[3][3] = {{0, 1, 0}, {1, -4, 1}, {0, 1, 0}};
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) acc += k[dy + 1][dx + 1] * static_cast<double>(img.at(x + dx, y + dy));
      r.push_back(acc);
    }
  double mean = 0;
  for (double v : r) mean += v;
  mean /= static_cast<double>(r.size());
  double var = 0;
  for (double v : r) var += (v - mean) * (v - mean);
  return var / static_cast<double>(r.size());
}

// Direct statement of the matching rule: least SAD, then least squared
// magnitude, then smallest (dy, dx) in row-major order.
FlowField naive_flow(const GrayImage& a, const GrayImage& b, int block, int radius) {
  FlowField f;
  f.width = a.width / block;
  f.height = a.height / block;
  for (int by = 0; by < f.height; ++by)
    for (int bx = 0; bx < f.width; ++bx) {
      long best_sad = std::numeric_limits<long>::max();
      int best_mag = 0;
      FlowVector best{};
      for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
          const int x0 = bx * block + dx;
          const int y0 = by * block + dy;
          if (x0 < 0 || y0 < 0 || x0 + block > b.width || y0 + block > b.height) continue;
          long sad = 0;
          for (int y = 0; y < block; ++y)
            for (int x = 0; x < block; ++x) sad += std::abs(int(a.at(bx * block + x, by * block + y)) - int(b.at(x0 + x, y0 + y)));
          const int mag = dx * dx + dy * dy;
          if (sad < best_sad || (sad == best_sad && mag < best_mag)) {
            best_sad = sad;
            best_mag = mag;
            best = {dx, dy};
          }
        }
      f.vectors.push_back(best);
    }
  return f;
}

GrayImage shifted(const GrayImage& src, int sx, int sy) {
  GrayImage out(src.width, src.height);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      out.at(x, y) = src.at(((x - sx) % src.width + src.width) % src.width, ((y - sy) % src.height + src.height) % src.height);
  return out;
}

GrayImage box_blur(const GrayImage& src, int r) {
  if (r == 0) return src;
  GrayImage out(src.width, src.height);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x) {
      int sum = 0;
      int n = 0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          const int xx = std::clamp(x + dx, 0, src.width - 1);
          const int yy = std::clamp(y + dy, 0, src.height - 1);
          sum += src.at(xx, yy);
          ++n;
        }
      out.at(x, y) = static_cast<std::uint8_t>((sum + n / 2) / n);
    }
  return out;
}

TEST(Flow, IdenticalImagesGiveZero) {
  Rng rng(1);
  for (int i = 0; i < 10; ++i) {
    const auto img = random_image(rng, 48, 40);
    const auto f = dense_flow(img, img, 8, 4);
    EXPECT_EQ(f.width, 6);
    EXPECT_EQ(f.height, 5);
    for (const auto& v : f.vectors) EXPECT_EQ(v, (FlowVector{0, 0}));
    EXPECT_EQ(mean_flow_magnitude(f), 0.0);
  }
}

TEST(Flow, FlatPairPrefersZeroVector) {
  const GrayImage flat(32, 32, 90);
  for (const auto& v : dense_flow(flat, flat, 8, 4).vectors) EXPECT_EQ(v, (FlowVector{0, 0}));
}

TEST(Flow, RecoversThreePixelShift) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto a = random_image(rng, 64, 64);
    const auto b = shifted(a, 3, 0);
    const auto f = dense_flow(a, b, 8, 4);
    for (int by = 0; by < f.height; ++by)
      for (int bx = 0; bx + 1 < f.width; ++bx) EXPECT_EQ(f.at(bx, by), (FlowVector{3, 0})) << seed << " " << bx << "," << by;
  }
}

TEST(Flow, MatchesNaiveSearchIncludingTies) {
  Rng rng(9);
  for (int trial = 0; trial < 40; ++trial) {
    GrayImage a(20, 16);
    GrayImage b(20, 16);
    const int levels = test::uniform_int(rng, 1, 3);  // few levels provoke ties
    for (auto& p : a.pixels) p = static_cast<std::uint8_t>(test::uniform_int(rng, 0, levels));
    for (auto& p : b.pixels) p = static_cast<std::uint8_t>(test::uniform_int(rng, 0, levels));
    const int block = test::uniform_int(rng, 2, 5);
    const int radius = test::uniform_int(rng, 0, 3);
    const auto got = dense_flow(a, b, block, radius);
    const auto want = naive_flow(a, b, block, radius);
    ASSERT_EQ(got.vectors, want.vectors) << "trial " << trial;
  }
}

TEST(Flow, Errors) {
  EXPECT_EQ(code_of([] { dense_flow(GrayImage(16, 16), GrayImage(16, 17), 8, 4); }), ErrorCode::DimensionMismatch);
  EXPECT_EQ(code_of([] { dense_flow(GrayImage(7, 16), GrayImage(7, 16), 8, 4); }), ErrorCode::ImageTooSmall);
  EXPECT_EQ(code_of([] { mean_flow_magnitude(FlowField{}); }), ErrorCode::EmptyFlow);
}

TEST(Flow, MeanMagnitude) {
  FlowField f{2, 1, {{3, 4}, {0, 0}}};
  EXPECT_DOUBLE_EQ(mean_flow_magnitude(f), 2.5);
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    FlowField r{7, 3, {}};
    double sum = 0;
    bool any = false;
    for (int i = 0; i < 21; ++i) {
      FlowVector v{test::uniform_int(rng, -8, 8), test::uniform_int(rng, -8, 8)};
      r.vectors.push_back(v);
      sum += std::sqrt(double(v.dx * v.dx + v.dy * v.dy));
      any = any || v.dx || v.dy;
    }
    const double m = mean_flow_magnitude(r);
    EXPECT_NEAR(m, sum / 21.0, 1e-12);
    EXPECT_EQ(m > 0.0, any);
  }
}

TEST(Clarity, ConstantImageIsZero) { EXPECT_EQ(clarity_score(GrayImage(10, 10, 77)).value, 0.0); }

TEST(Clarity, MatchesNaiveOracle) {
  Rng rng(21);
  for (int i = 0; i < 100; ++i) {
    const auto img = random_image(rng, 32, 32);
    EXPECT_NEAR(clarity_score(img).value, naive_clarity(img), 1e-9);
  }
}

TEST(Clarity, OffsetInvariantAndGainQuadratic) {
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    GrayImage img(24, 20);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(test::uniform_int(rng, 0, 60));
    auto brighter = img;
    for (auto& p : brighter.pixels) p = static_cast<std::uint8_t>(p + 100);
    EXPECT_EQ(clarity_score(brighter).value, clarity_score(img).value);
    for (int g : {2, 3, 4}) {
      auto scaled = img;
      for (auto& p : scaled.pixels) p = static_cast<std::uint8_t>(p * g);
      const double base = clarity_score(img).value;
      EXPECT_NEAR(clarity_score(scaled).value, g * g * base, 1e-9 * g * g * base);
    }
  }
}

TEST(Clarity, TooSmall) { EXPECT_EQ(code_of([] { clarity_score(GrayImage(2, 5)); }), ErrorCode::ImageTooSmall); }

std::vector<MultimodalFrame> frames_with_images(std::size_t n, double dt) {
  std::vector<MultimodalFrame> frames(n);
  for (std::size_t i = 0; i < n; ++i) {
    frames[i].index = i;
    frames[i].timestamp = static_cast<double>(i) * dt;
    frames[i].head_image = fmt::format("img{}.png", i);
  }
  return frames;
}

TEST(Sharpest, SingleCandidate) {
  MapImages src;
  Rng rng(1);
  auto frames = frames_with_images(3, 2.0);
  for (const auto& f : frames) src.images[*f.head_image] = random_image(rng, 16, 16);
  EXPECT_EQ(select_sharpest(frames, 2.1, 1.0, src), 1u);
}

TEST(Sharpest, TexturedBeatsConstant) {
  MapImages src;
  Rng rng(1);
  auto frames = frames_with_images(2, 0.2);
  src.images["img0.png"] = GrayImage(16, 16, 50);
  src.images["img1.png"] = random_image(rng, 16, 16);
  EXPECT_EQ(select_sharpest(frames, 0.0, 1.0, src), 1u);
}

TEST(Sharpest, BlurRampMatchesRescoringOracle) {
  Rng rng(8);
  const auto base = random_image(rng, 40, 30);
  for (int sharp = 0; sharp < 11; ++sharp) {
    MapImages src;
    auto frames = frames_with_images(11, 0.2);
    for (int i = 0; i < 11; ++i) src.images[*frames[i].head_image] = box_blur(base, std::abs(i - sharp));
    std::size_t want = 0;
    for (std::size_t i = 1; i < 11; ++i)
      if (naive_clarity(src.images[*frames[i].head_image]) > naive_clarity(src.images[*frames[want].head_image])) want = i;
    EXPECT_EQ(want, static_cast<std::size_t>(sharp));
    EXPECT_EQ(select_sharpest(frames, 1.0, 1.0, src), want);
  }
}

TEST(Sharpest, EarliestWinsTie) {
  MapImages src;
  Rng rng(3);
  auto frames = frames_with_images(4, 0.2);
  const auto img = random_image(rng, 16, 16);
  src.images["img0.png"] = GrayImage(16, 16, 0);
  src.images["img1.png"] = img;
  src.images["img2.png"] = img;
  src.images["img3.png"] = GrayImage(16, 16, 0);
  EXPECT_EQ(select_sharpest(frames, 0.3, 1.0, src), 1u);
}

TEST(Sharpest, WindowEdgesAndEmptyWindow) {
  MapImages src;
  Rng rng(3);
  auto frames = frames_with_images(3, 1.0);
  src.images["img0.png"] = GrayImage(16, 16, 0);
  src.images["img1.png"] = GrayImage(16, 16, 0);
  src.images["img2.png"] = random_image(rng, 16, 16);
  EXPECT_EQ(select_sharpest(frames, 1.0, 1.0, src), 2u);  // t=2 lies exactly on the edge
  EXPECT_EQ(code_of([&] { select_sharpest(frames, 10.0, 1.0, src); }), ErrorCode::NoImageInWindow);
  frames[1].head_image.reset();
  EXPECT_EQ(code_of([&] { select_sharpest(frames, 1.0, 0.5, src); }), ErrorCode::NoImageInWindow);
}

TEST(AnnotateFlow, FirstFrameAbsentAndRepeatedImageZero) {
  MapImages src;
  Rng rng(6);
  auto frames = frames_with_images(4, 0.2);
  const auto a = random_image(rng, 32, 32);
  src.images["img0.png"] = a;
  src.images["img1.png"] = shifted(a, 2, 0);
  frames[2].head_image = "img1.png";
  src.images["img3.png"] = random_image(rng, 32, 32);
  frames[3].flow_magnitude = 7.5;  // precomputed values are kept
  annotate_flow(frames, src, {8, 4});
  EXPECT_FALSE(frames[0].flow_magnitude);
  ASSERT_TRUE(frames[1].flow_magnitude);
  EXPECT_GT(*frames[1].flow_magnitude, 1.0);
  EXPECT_EQ(frames[2].flow_magnitude, 0.0);
  EXPECT_EQ(frames[3].flow_magnitude, 7.5);
}

TEST(Image, LumaAndRgb) {
  EXPECT_EQ(luma(255, 255, 255), 255);
  EXPECT_EQ(luma(0, 0, 0), 0);
  EXPECT_EQ(luma(255, 0, 0), 76);   // 76.245
  EXPECT_EQ(luma(0, 255, 0), 150);  // 149.685
  EXPECT_EQ(luma(0, 0, 255), 29);   // 29.07
  const std::vector<std::uint8_t> rgb{255, 0, 0, 0, 255, 0};
  const auto g = rgb_to_gray(2, 1, rgb);
  EXPECT_EQ(g.pixels, (std::vector<std::uint8_t>{76, 150}));
}

TEST(Image, PngRoundTrip) {
  test::ScratchDir dir("png");
  Rng rng(12);
  const auto img = random_image(rng, 37, 23);
  write_png_gray(dir.path() / "a.png", img);
  EXPECT_EQ(read_png_gray(dir.path() / "a.png"), img);
  FileImageSource src(dir.path(), 1);
  EXPECT_EQ(src.load("a.png"), img);
  EXPECT_EQ(src.load("a.png"), img);
  EXPECT_THROW(read_png_gray(dir.path() / "missing.png"), Error);
}

}  // namespace
}  // namespace ronar
