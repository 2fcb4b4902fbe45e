// SPDX-License-Identifier: Apache-2.0
//
// Threshold x modality sweep: average key-event counts and failure capture
// rates per cell over a set of episodes, with statistics computed per task.
#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ronar/episode_log.hpp"
#include "ronar/key_event.hpp"
#include "ronar/vision.hpp"

namespace ronar {

inline const std::vector<double>& default_thresholds() {
  static const std::vector<double> t{0, 5, 10, 20, 40, 80, 160};
  return t;
}

/// E; I; TP; E,I; E,TP; I,TP; E,I,TP
std::vector<ModalitySet> default_modality_sets();

/// An episode prepared for classification: aligned frames with flow.
struct PreparedEpisode {
  std::string episode_id;
  std::string task_name;
  std::vector<MultimodalFrame> frames;
  std::vector<double> failure_times;
};

/// Aligns and annotates flow using images under the episode's directory.
PreparedEpisode prepare_episode(const EpisodeLog& episode, double interval = kDefaultInterval, const FlowParams& flow = {});

struct EpisodeCell {
  std::string episode_id;
  std::size_t frames = 0;  // key events selected
  double capture_rate = 1.0;
};

struct SweepCell {
  ModalitySet modalities;
  double threshold = 0.0;
  double avg_frames = 0.0;
  double capture_rate = 0.0;
  std::size_t n_episodes = 0;
  std::vector<EpisodeCell> per_episode;
  std::optional<std::string> error;
};

struct SweepResult {
  std::vector<double> thresholds;  // ascending
  std::vector<ModalitySet> modality_sets;
  std::vector<SweepCell> cells;  // row-major: modality set, then threshold
  double tolerance = kDefaultTolerance;

  const SweepCell& cell(std::size_t modality_row, std::size_t threshold_col) const {
    return cells[modality_row * thresholds.size() + threshold_col];
  }
};

/// Runs compute_stats (per task), classify and capture_rate for every cell.
/// A cell whose classification throws records the error and the sweep
/// continues. Thresholds are sorted ascending.
SweepResult sweep(std::span<const PreparedEpisode> episodes, std::vector<double> thresholds, std::vector<ModalitySet> modality_sets,
                  double tolerance = kDefaultTolerance);

/// Header: modalities,threshold,avg_frames,capture_rate,n_episodes
void write_sweep_csv(const SweepResult& result, std::ostream& out);
/// Table with one row per modality set and "frames / rate" per threshold.
std::string format_sweep_table(const SweepResult& result);

/// Loads every *.jsonl episode in a directory, sorted by file name.
std::vector<EpisodeLog> load_episode_dir(const std::filesystem::path& dir);

}  // namespace ronar
