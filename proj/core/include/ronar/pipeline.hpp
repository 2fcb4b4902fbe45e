// SPDX-License-Identifier: Apache-2.0
//
// End-to-end composition used by the CLI and the service: align, flow,
// key events, sharpest images, summaries and narrations for one episode.
#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "ronar/episode_log.hpp"
#include "ronar/key_event.hpp"
#include "ronar/narrator.hpp"
#include "ronar/summarizer.hpp"
#include "ronar/vision.hpp"

namespace ronar {

struct PipelineOptions {
  double interval = kDefaultInterval;
  double threshold = kDefaultThreshold;
  ModalitySet modalities = ModalitySet::all();
  double sharpest_window = kDefaultSharpestWindow;
  FlowParams flow;
  SummarizerOptions summarizer;
  NarratorOptions narrator;
  NarrationMode mode = NarrationMode::Info;
};

struct KeyEventRun {
  std::vector<MultimodalFrame> frames;
  NormalizationStats stats;
  std::vector<KeyEvent> events;
};

/// Aligns, annotates flow and classifies. Statistics come from `stats` when
/// given, otherwise from the episode itself.
KeyEventRun select_key_events(const EpisodeLog& episode, const PipelineOptions& options,
                              const std::optional<NormalizationStats>& stats = std::nullopt);

struct NarrationRun {
  KeyEventRun key_events;
  std::vector<ExperienceSummary> summaries;
  NarrationHistory history;
};

struct NarrationHooks {
  /// Mode for the next narration; defaults to options.mode.
  std::function<NarrationMode()> mode;
  std::function<void(const KeyEvent&, std::size_t)> on_key_event;
  std::function<void(const ExperienceSummary&)> on_summary;
  std::function<void(const NarrationInstance&)> on_narration;
};

/// Summarizes and narrates every key event in order.
NarrationRun narrate_episode(const EpisodeLog& episode, Provider& provider, const PipelineOptions& options,
                             const PromptLibrary& prompts = PromptLibrary::builtin(), const NarrationHooks& hooks = {},
                             const std::optional<NormalizationStats>& stats = std::nullopt);

}  // namespace ronar
