// SPDX-License-Identifier: Apache-2.0
#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "ronar/key_event.hpp"
#include "ronar/narrator.hpp"
#include "ronar/task_sim.hpp"
#include "ronar/vision.hpp"

namespace {

using namespace ronar;

GrayImage noise(std::uint64_t seed, int w, int h) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> px(0, 255);
  GrayImage img(w, h);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(px(rng));
  return img;
}

void BM_DenseFlow(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const auto a = noise(1, side, side);
  const auto b = noise(2, side, side);
  for (auto _ : state) benchmark::DoNotOptimize(dense_flow(a, b, 8, 4));
  state.SetItemsProcessed(state.iterations() * side * side);
}
BENCHMARK(BM_DenseFlow)->Arg(64)->Arg(160);

void BM_Clarity(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const auto img = noise(3, side, side);
  for (auto _ : state) benchmark::DoNotOptimize(clarity_score(img));
  state.SetItemsProcessed(state.iterations() * side * side);
}
BENCHMARK(BM_Clarity)->Arg(64)->Arg(320);

// A simulated episode without images, aligned once per setup.
const EpisodeLog& sample_episode() {
  static const EpisodeLog ep = [] {
    SimOptions opts;
    opts.render_images = false;
    const auto& entry = fixture_suite().at(1);
    return generate_episode(find_task(entry.task), entry.episode_id, entry.seed, entry.failures, opts).episode;
  }();
  return ep;
}

void BM_Align(benchmark::State& state) {
  const auto& ep = sample_episode();
  for (auto _ : state) benchmark::DoNotOptimize(align(ep));
}
BENCHMARK(BM_Align);

void BM_Classify(benchmark::State& state) {
  const auto frames = align(sample_episode());
  const auto stats = compute_stats(frames);
  for (auto _ : state) benchmark::DoNotOptimize(classify(frames, stats, 80.0, ModalitySet::all()));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(frames.size()));
}
BENCHMARK(BM_Classify);

void BM_RenderView(benchmark::State& state) {
  const SceneRenderer renderer(7, 160, 120);
  const std::vector<DetectedObject> objects{{"cup", "cup", {60, 50, 80, 75}, 1.2}};
  CameraPose from;
  CameraPose to;
  to.heading = 0.05;
  for (auto _ : state) benchmark::DoNotOptimize(renderer.render(from, to, objects));
}
BENCHMARK(BM_RenderView);

void BM_MockNarration(benchmark::State& state) {
  for (auto _ : state) {
    MockProvider mock;
    Narrator narrator(mock);
    for (std::size_t i = 0; i < 20; ++i) {
      ExperienceSummary s;
      s.event_index = i;
      s.timestamp = static_cast<double>(i);
      s.planning.task_name = "put_cup";
      narrator.narrate(s, NarrationMode::Info);
    }
    benchmark::DoNotOptimize(narrator.history().size());
  }
}
BENCHMARK(BM_MockNarration);

}  // namespace

BENCHMARK_MAIN();
