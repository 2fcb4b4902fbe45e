// SPDX-License-Identifier: Apache-2.0
#include "ronar/eval_harness.hpp"

#include <algorithm>
#include <atomic>
#include <map>
#include <ostream>
#include <thread>

#include <fmt/format.h>

#include "ronar/error.hpp"

namespace ronar {

std::vector<ModalitySet> default_modality_sets() { return parse_modality_sets("E;I;TP;E,I;E,TP;I,TP;E,I,TP"); }

PreparedEpisode prepare_episode(const EpisodeLog& episode, double interval, const FlowParams& flow) {
  PreparedEpisode p;
  p.episode_id = episode.episode_id;
  p.task_name = episode.task_name;
  p.frames = align(episode, interval);
  FileImageSource images(episode.base_dir);
  annotate_flow(p.frames, images, flow);
  for (const auto& f : episode.failure_labels) p.failure_times.push_back(f.t);
  return p;
}

SweepResult sweep(std::span<const PreparedEpisode> episodes, std::vector<double> thresholds, std::vector<ModalitySet> modality_sets,
                  double tolerance) {
  if (thresholds.empty()) throw Error(ErrorCode::InvalidArgument, "no thresholds given");
  if (modality_sets.empty()) throw Error(ErrorCode::InvalidArgument, "no modality sets given");
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  // Normalization statistics are computed once per task.
  std::map<std::string, std::vector<std::size_t>> by_task;
  for (std::size_t i = 0; i < episodes.size(); ++i) by_task[episodes[i].task_name].push_back(i);
  std::map<std::string, NormalizationStats> stats;
  std::map<std::string, std::string> stats_errors;
  for (const auto& [task, members] : by_task) {
    std::vector<std::vector<MultimodalFrame>> frames;
    for (auto i : members) frames.push_back(episodes[i].frames);
    try {
      stats[task] = compute_stats(std::span<const std::vector<MultimodalFrame>>(frames));
    } catch (const Error& e) {
      stats_errors[task] = e.what();
    }
  }

  SweepResult result;
  result.thresholds = thresholds;
  result.modality_sets = modality_sets;
  result.tolerance = tolerance;
  result.cells.resize(modality_sets.size() * thresholds.size());

  auto run_cell = [&](std::size_t c) {
    auto& cell = result.cells[c];
    cell.modalities = modality_sets[c / thresholds.size()];
    cell.threshold = thresholds[c % thresholds.size()];
    try {
      double frames_sum = 0.0;
      double rate_sum = 0.0;
      for (const auto& ep : episodes) {
        if (auto it = stats_errors.find(ep.task_name); it != stats_errors.end())
          throw Error(ErrorCode::TooFewFrames, fmt::format("task '{}': {}", ep.task_name, it->second));
        const auto events = classify(ep.frames, stats.at(ep.task_name), cell.threshold, cell.modalities);
        std::vector<double> times;
        for (const auto& e : events) times.push_back(e.timestamp);
        const double rate = capture_rate(times, ep.failure_times, tolerance);
        cell.per_episode.push_back({ep.episode_id, events.size(), rate});
        frames_sum += static_cast<double>(events.size());
        rate_sum += rate;
      }
      cell.n_episodes = episodes.size();
      if (!episodes.empty()) {
        cell.avg_frames = frames_sum / static_cast<double>(episodes.size());
        cell.capture_rate = rate_sum / static_cast<double>(episodes.size());
      }
    } catch (const Error& e) {
      cell.per_episode.clear();
      cell.error = e.what();
    }
  };

  const std::size_t workers = std::max(1u, std::min<unsigned>(std::thread::hardware_concurrency(), 8u));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t c; (c = next++) < result.cells.size();) run_cell(c);
  };
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  return result;
}

void write_sweep_csv(const SweepResult& r, std::ostream& out) {
  out << "modalities,threshold,avg_frames,capture_rate,n_episodes\n";
  for (const auto& c : r.cells) {
    if (c.error) {
      out << fmt::format("\"{}\",{},,,0\n", c.modalities.to_string(), c.threshold);
      continue;
    }
    out << fmt::format("\"{}\",{},{:.4f},{:.4f},{}\n", c.modalities.to_string(), c.threshold, c.avg_frames, c.capture_rate, c.n_episodes);
  }
}

std::string format_sweep_table(const SweepResult& r) {
  std::string out = fmt::format("{:<10}", "modality");
  for (double t : r.thresholds) out += fmt::format(" | {:>15}", fmt::format("t={}", t));
  out += '\n';
  out += std::string(10 + r.thresholds.size() * 18, '-');
  out += '\n';
  for (std::size_t m = 0; m < r.modality_sets.size(); ++m) {
    out += fmt::format("{:<10}", r.modality_sets[m].to_string());
    for (std::size_t t = 0; t < r.thresholds.size(); ++t) {
      const auto& c = r.cell(m, t);
      out += c.error ? fmt::format(" | {:>15}", "error") : fmt::format(" | {:>15}", fmt::format("{:.2f} / {:.2f}", c.avg_frames, c.capture_rate));
    }
    out += '\n';
  }
  out += fmt::format("cells show average key-event count / capture rate (tolerance {} s)\n", r.tolerance);
  return out;
}

std::vector<EpisodeLog> load_episode_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw Error(ErrorCode::Io, fmt::format("'{}' is not a directory", dir.string()));
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".jsonl") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::vector<EpisodeLog> out;
  for (const auto& f : files) out.push_back(load_episode(f));
  return out;
}

}  // namespace ronar
