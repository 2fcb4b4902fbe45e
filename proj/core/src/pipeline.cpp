// SPDX-License-Identifier: Apache-2.0
#include "ronar/pipeline.hpp"

namespace ronar {

KeyEventRun select_key_events(const EpisodeLog& episode, const PipelineOptions& options, const std::optional<NormalizationStats>& stats) {
  KeyEventRun run;
  run.frames = align(episode, options.interval);
  FileImageSource images(episode.base_dir);
  annotate_flow(run.frames, images, options.flow);
  run.stats = stats ? *stats : compute_stats(std::span<const MultimodalFrame>(run.frames));
  run.events = classify(run.frames, run.stats, options.threshold, options.modalities);
  attach_sharpest(run.events, run.frames, images, options.sharpest_window);
  return run;
}

NarrationRun narrate_episode(const EpisodeLog& episode, Provider& provider, const PipelineOptions& options, const PromptLibrary& prompts,
                             const NarrationHooks& hooks, const std::optional<NormalizationStats>& stats) {
  NarrationRun run;
  run.key_events = select_key_events(episode, options, stats);
  FixtureDetector detector(episode.detections);
  Summarizer summarizer(episode, run.key_events.frames, detector, provider, prompts, options.summarizer);
  auto narrator_options = options.narrator;
  if (narrator_options.episode_id.empty()) narrator_options.episode_id = episode.episode_id;
  Narrator narrator(provider, prompts, narrator_options);

  const auto& events = run.key_events.events;
  for (std::size_t i = 0; i < events.size(); ++i) {
    if (hooks.on_key_event) hooks.on_key_event(events[i], i);
    auto summary = summarizer.summarize_event(events[i], i > 0 ? &events[i - 1] : nullptr, i);
    if (hooks.on_summary) hooks.on_summary(summary);
    const auto mode = hooks.mode ? hooks.mode() : options.mode;
    const auto& n = narrator.narrate(summary, mode);
    if (hooks.on_narration) hooks.on_narration(n);
    run.summaries.push_back(std::move(summary));
  }
  run.history = narrator.history();
  return run;
}

}  // namespace ronar
