// SPDX-License-Identifier: Apache-2.0
//
// ronar: command-line front end for the narration pipeline.
#include <csignal>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <nlohmann/json.hpp>

#include "ronar/episode_log.hpp"
#include "ronar/error.hpp"
#include "ronar/eval_harness.hpp"
#include "ronar/image.hpp"
#include "ronar/key_event.hpp"
#include "ronar/narrator.hpp"
#include "ronar/pipeline.hpp"
#include "ronar/provider.hpp"
#include "ronar/scene_graph.hpp"
#include "ronar/service.hpp"
#include "ronar/summarizer.hpp"
#include "ronar/task_sim.hpp"
#include "ronar/vision.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ronar;

namespace {

// "mock" or a provider config file.
std::shared_ptr<Provider> open_provider(const std::string& spec, const std::string& mock_reply = {}) {
  if (spec == "mock") {
    auto mock = std::make_shared<MockProvider>();
    if (!mock_reply.empty()) mock->set_reply_suffix(mock_reply);
    return mock;
  }
  return make_provider(load_provider_config(spec));
}

PromptLibrary open_prompts(const std::string& dir) { return dir.empty() ? PromptLibrary::builtin() : PromptLibrary::with_overrides(dir); }

// Writes to `path`, or stdout when empty.
class Output {
 public:
  explicit Output(const std::string& path) {
    if (path.empty()) return;
    if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
    file_.open(path);
    if (!file_) throw Error(ErrorCode::Io, fmt::format("cannot write '{}'", path));
  }
  std::ostream& stream() { return file_.is_open() ? file_ : std::cout; }

 private:
  std::ofstream file_;
};

struct PipelineArgs {
  double interval = kDefaultInterval;
  double threshold = kDefaultThreshold;
  std::string modalities = "E,I,TP";
  double window = kDefaultSharpestWindow;
  int block = 16;
  int radius = 8;

  void add_to(CLI::App* app) {
    app->add_option("--interval", interval, "Alignment interval, seconds")->capture_default_str();
    app->add_option("--threshold", threshold, "Key-event threshold")->capture_default_str();
    app->add_option("--modalities", modalities, "Enabled data categories, e.g. E,I,TP")->capture_default_str();
    app->add_option("--window", window, "Sharpest-image window, seconds")->capture_default_str();
    app->add_option("--block", block, "Flow block size, pixels")->capture_default_str();
    app->add_option("--radius", radius, "Flow search radius, pixels")->capture_default_str();
  }

  PipelineOptions options() const {
    PipelineOptions o;
    o.interval = interval;
    o.threshold = threshold;
    o.modalities = ModalitySet::parse(modalities);
    o.sharpest_window = window;
    o.flow = {block, radius};
    return o;
  }
};

const KeyEvent& event_at(const KeyEventRun& run, std::size_t index) {
  if (index >= run.events.size())
    throw Error(ErrorCode::InvalidArgument, fmt::format("event {} out of range ({} key events)", index, run.events.size()));
  return run.events[index];
}

std::vector<double> parse_thresholds(const std::string& text) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto comma = text.find(',', pos);
    if (comma == std::string::npos) comma = text.size();
    const auto token = text.substr(pos, comma - pos);
    try {
      std::size_t used = 0;
      out.push_back(std::stod(token, &used));
      if (used != token.size()) throw std::invalid_argument(token);
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::InvalidArgument, fmt::format("bad threshold '{}'", token));
    }
    pos = comma + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grounds robot episode logs into key events, summaries and narrations."};
  app.require_subcommand(1);
  app.set_version_flag("--version", "ronar 0.1.0");

  // validate
  std::string episode_path;
  auto* validate = app.add_subcommand("validate", "Check an episode file against the schema");
  validate->add_option("file", episode_path, "Episode JSONL")->required();

  // align
  double interval = kDefaultInterval;
  std::string out_path;
  bool with_flow = false;
  auto* align_cmd = app.add_subcommand("align", "Align streams onto a fixed-interval frame sequence");
  align_cmd->add_option("file", episode_path, "Episode JSONL")->required();
  align_cmd->add_option("--interval", interval, "Seconds between frames")->capture_default_str();
  align_cmd->add_option("--out", out_path, "Output JSONL (stdout if omitted)");
  align_cmd->add_flag("--flow", with_flow, "Fill flow magnitudes from the head-camera images");

  // clarity / flow
  std::string image_a, image_b;
  int block = 16, radius = 8;
  auto* clarity_cmd = app.add_subcommand("clarity", "Variance-of-Laplacian clarity of a PNG");
  clarity_cmd->add_option("image", image_a, "PNG image")->required()->check(CLI::ExistingFile);
  auto* flow_cmd = app.add_subcommand("flow", "Mean block-matching flow magnitude between two PNGs");
  flow_cmd->add_option("image_a", image_a, "Earlier image")->required()->check(CLI::ExistingFile);
  flow_cmd->add_option("image_b", image_b, "Later image")->required()->check(CLI::ExistingFile);
  flow_cmd->add_option("--block", block, "Block size, pixels")->capture_default_str();
  flow_cmd->add_option("--radius", radius, "Search radius, pixels")->capture_default_str();

  // keyframes
  PipelineArgs pipe;
  auto* keyframes = app.add_subcommand("keyframes", "Select key events");
  keyframes->add_option("episode", episode_path, "Episode JSONL")->required();
  keyframes->add_option("--out", out_path, "Output JSONL (stdout if omitted)");
  pipe.add_to(keyframes);

  // scene / summarize
  std::size_t event_index = 0;
  std::string provider_spec = "mock";
  std::string prompts_dir;
  bool as_json = false;
  auto* scene = app.add_subcommand("scene", "Environment digest of one key event");
  scene->add_option("episode", episode_path, "Episode JSONL")->required();
  scene->add_option("--event", event_index, "Key event index")->required();
  double cutoff = kDefaultDistanceCutoff;
  scene->add_option("--cutoff", cutoff, "Object distance cutoff, meters")->capture_default_str();
  pipe.add_to(scene);

  auto* summarize = app.add_subcommand("summarize", "Experience summary of one key event");
  summarize->add_option("episode", episode_path, "Episode JSONL")->required();
  summarize->add_option("--event", event_index, "Key event index")->required();
  summarize->add_option("--provider", provider_spec, "'mock' or a provider config file")->capture_default_str();
  summarize->add_option("--prompts", prompts_dir, "Directory overriding prompt templates");
  summarize->add_flag("--json", as_json, "Print the summary as JSON");
  pipe.add_to(summarize);

  // narrate
  std::string mode = "info";
  std::size_t history_window = 0;
  auto* narrate = app.add_subcommand("narrate", "Progressively narrate every key event");
  narrate->add_option("episode", episode_path, "Episode JSONL")->required();
  narrate->add_option("--mode", mode, "alert | info | debug")->capture_default_str();
  narrate->add_option("--provider", provider_spec, "'mock' or a provider config file")->capture_default_str();
  narrate->add_option("--prompts", prompts_dir, "Directory overriding prompt templates");
  narrate->add_option("--history-window", history_window, "Narrations listed verbatim (0 = all)")->capture_default_str();
  narrate->add_option("--out", out_path, "Output JSONL (stdout if omitted)");
  pipe.add_to(narrate);

  // analyze
  std::string task = "loc";
  std::optional<double> query_time;
  std::string mock_reply;
  auto* analyze = app.add_subcommand("analyze", "Failure prediction, localization, explanation or recovery");
  analyze->add_option("episode", episode_path, "Episode JSONL")->required();
  analyze->add_option("--task", task, "pred | loc | exp | rec")->capture_default_str();
  analyze->add_option("--query-time", query_time, "Query point, seconds (defaults to the first failure label)");
  analyze->add_option("--provider", provider_spec, "'mock' or a provider config file")->capture_default_str();
  analyze->add_option("--prompts", prompts_dir, "Directory overriding prompt templates");
  analyze->add_option("--mock-reply", mock_reply, "Text the mock provider appends to every reply");
  analyze->add_option("--mode", mode, "Narration mode used for the history")->capture_default_str();
  analyze->add_option("--out", out_path, "Output JSONL (stdout if omitted)");
  pipe.add_to(analyze);

  // trajectory / overview
  auto* trajectory = app.add_subcommand("trajectory", "Episode-level summary of the narration history");
  trajectory->add_option("episode", episode_path, "Episode JSONL")->required();
  trajectory->add_option("--mode", mode, "Narration mode")->capture_default_str();
  trajectory->add_option("--provider", provider_spec, "'mock' or a provider config file")->capture_default_str();
  pipe.add_to(trajectory);

  std::string episodes_dir;
  std::string query;
  auto* overview = app.add_subcommand("overview", "System overview across a directory of episodes");
  overview->add_option("dir", episodes_dir, "Episode directory")->required()->check(CLI::ExistingDirectory);
  overview->add_option("--query", query, "Question to answer (default: failures, recoveries, recommendations)");
  overview->add_option("--mode", mode, "Narration mode")->capture_default_str();
  overview->add_option("--provider", provider_spec, "'mock' or a provider config file")->capture_default_str();
  pipe.add_to(overview);

  // machine / simulate
  std::string task_name;
  std::vector<std::string> states;
  auto* machine = app.add_subcommand("machine", "Print the state machine for a task or state list");
  auto* machine_task = machine->add_option("--task", task_name, "Built-in task");
  machine->add_option("--states", states, "Linear action states")->delimiter(',')->excludes(machine_task);

  std::uint64_t seed = 7;
  std::string failures_path;
  std::string episode_id;
  bool suite = false;
  bool no_images = false;
  auto* simulate = app.add_subcommand("simulate", "Generate synthetic episodes");
  auto* suite_flag = simulate->add_flag("--suite", suite, "Generate the twelve fixture episodes");
  simulate->add_option("--task", task_name, "put_cup | heat_lunch | hang_hat | collect_clothes")->excludes(suite_flag);
  simulate->add_option("--seed", seed, "Random seed")->capture_default_str();
  simulate->add_option("--failures", failures_path, "JSON array of failure specs")->check(CLI::ExistingFile);
  simulate->add_option("--id", episode_id, "Episode id (default <task>_s<seed>)");
  simulate->add_option("--out", out_path, "Output directory")->required();
  simulate->add_flag("--no-images", no_images, "Skip rendering head-camera images");

  // sweep
  std::string thresholds = "0,5,10,20,40,80,160";
  std::string modality_sets = "E;I;TP;E,I;E,TP;I,TP;E,I,TP";
  double tolerance = kDefaultTolerance;
  auto* sweep_cmd = app.add_subcommand("sweep", "Threshold x modality sweep over an episode directory");
  sweep_cmd->add_option("dir", episodes_dir, "Episode directory")->required()->check(CLI::ExistingDirectory);
  sweep_cmd->add_option("--thresholds", thresholds, "Comma-separated thresholds")->capture_default_str();
  sweep_cmd->add_option("--modalities", modality_sets, "Semicolon-separated modality sets")->capture_default_str();
  sweep_cmd->add_option("--tolerance", tolerance, "Capture tolerance, seconds")->capture_default_str();
  sweep_cmd->add_option("--interval", interval, "Alignment interval, seconds")->capture_default_str();
  sweep_cmd->add_option("--out", out_path, "CSV output (table only if omitted)");

  // serve
  std::string config_path;
  std::optional<std::uint16_t> port;
  std::optional<std::string> host, ui_dir, provider_config;
  std::optional<double> speed;
  std::optional<std::string> serve_episodes;
  auto* serve = app.add_subcommand("serve", "Run the HTTP + WebSocket service");
  serve->add_option("--config", config_path, "Service config JSON")->check(CLI::ExistingFile);
  serve->add_option("--port", port, "Listen port (0 = any free port)");
  serve->add_option("--host", host, "Listen address");
  serve->add_option("--episodes", serve_episodes, "Episode directory");
  serve->add_option("--provider-config", provider_config, "Provider config file (mock when omitted)");
  serve->add_option("--ui", ui_dir, "Static console build served under /ui");
  serve->add_option("--speed", speed, "Replay speed multiplier (0 = unpaced)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*validate) {
      const auto ep = load_episode(episode_path);
      std::size_t samples = 0;
      for (const auto& s : ep.streams) samples += s.samples.size();
      fmt::print("ok {} task={} streams={} samples={} planner={} detections={} failures={} t=[{:.3f}, {:.3f}]\n", ep.episode_id,
                 ep.task_name, ep.streams.size(), samples, ep.planner_events.size(), ep.detections.size(), ep.failure_labels.size(),
                 ep.t_start(), ep.t_end());
    } else if (*align_cmd) {
      const auto ep = load_episode(episode_path);
      auto frames = align(ep, interval);
      if (with_flow) {
        FileImageSource images(ep.base_dir);
        annotate_flow(frames, images);
      }
      Output out(out_path);
      write_frames_jsonl(frames, out.stream());
      if (!out_path.empty()) fmt::print(stderr, "{} frames -> {}\n", frames.size(), out_path);
    } else if (*clarity_cmd) {
      fmt::print("{}\n", clarity_score(read_png_gray(image_a)).value);
    } else if (*flow_cmd) {
      fmt::print("{}\n", mean_flow_magnitude(dense_flow(read_png_gray(image_a), read_png_gray(image_b), block, radius)));
    } else if (*keyframes) {
      const auto ep = load_episode(episode_path);
      const auto run = select_key_events(ep, pipe.options());
      Output out(out_path);
      for (const auto& e : run.events) out.stream() << json(e).dump() << '\n';
      if (!out_path.empty()) fmt::print(stderr, "{} key events from {} frames -> {}\n", run.events.size(), run.frames.size(), out_path);
    } else if (*scene) {
      const auto ep = load_episode(episode_path);
      const auto run = select_key_events(ep, pipe.options());
      const auto& e = event_at(run, event_index);
      const auto& frame = run.frames[e.frame_index];
      const auto image = e.sharpest_image ? e.sharpest_image : frame.head_image;
      FixtureDetector detector(ep.detections);
      std::vector<DetectedObject> detected;
      if (image) detected = detector.detect(*image, frame.depth_image);
      fmt::print("{}\n", environment_digest(relations(filter_objects(detected, cutoff))));
    } else if (*summarize) {
      const auto ep = load_episode(episode_path);
      const auto run = select_key_events(ep, pipe.options());
      const auto& e = event_at(run, event_index);
      auto provider = open_provider(provider_spec);
      const auto prompts = open_prompts(prompts_dir);
      FixtureDetector detector(ep.detections);
      Summarizer summarizer(ep, run.frames, detector, *provider, prompts);
      const auto summary = summarizer.summarize_event(e, event_index ? &run.events[event_index - 1] : nullptr, event_index);
      if (as_json) fmt::print("{}\n", json(summary).dump(2));
      else fmt::print("{}\n", summary.text());
    } else if (*narrate) {
      const auto ep = load_episode(episode_path);
      auto provider = open_provider(provider_spec);
      const auto prompts = open_prompts(prompts_dir);
      auto options = pipe.options();
      options.mode = parse_narration_mode(mode);
      options.narrator.history_window = history_window;
      Output out(out_path);
      NarrationHooks hooks;
      hooks.on_narration = [&](const NarrationInstance& n) { out.stream() << json(n).dump() << '\n' << std::flush; };
      const auto run = narrate_episode(ep, *provider, options, prompts, hooks);
      if (!out_path.empty()) fmt::print(stderr, "{} narrations -> {}\n", run.history.size(), out_path);
    } else if (*analyze) {
      const auto ep = load_episode(episode_path);
      const auto analysis_task = parse_analysis_task(task);
      if (!query_time && !ep.failure_labels.empty()) query_time = ep.failure_labels.front().t;
      // The history is built with a plain mock so the planted reply only reaches the analysis prompt.
      auto provider = open_provider(provider_spec);
      auto analyst = mock_reply.empty() ? provider : open_provider(provider_spec, mock_reply);
      const auto prompts = open_prompts(prompts_dir);
      auto options = pipe.options();
      options.mode = parse_narration_mode(mode);
      const auto run = narrate_episode(ep, *provider, options, prompts);
      AnalysisInput input{run.summaries, &run.history, query_time, ep.t_start(), ep.t_end(), ep.task_name};
      const auto result = analyze_failure(analysis_task, input, *analyst, prompts);
      Output out(out_path);
      out.stream() << json(result).dump() << '\n';
    } else if (*trajectory) {
      const auto ep = load_episode(episode_path);
      auto provider = open_provider(provider_spec);
      auto options = pipe.options();
      options.mode = parse_narration_mode(mode);
      const auto run = narrate_episode(ep, *provider, options);
      fmt::print("{}\n", trajectory_summary(run.history, *provider, ep.episode_id));
    } else if (*overview) {
      auto provider = open_provider(provider_spec);
      auto options = pipe.options();
      options.mode = parse_narration_mode(mode);
      std::vector<TrajectorySummary> summaries;
      for (const auto& ep : load_episode_dir(episodes_dir)) {
        const auto run = narrate_episode(ep, *provider, options);
        if (run.history.empty()) continue;
        summaries.push_back({ep.episode_id, trajectory_summary(run.history, *provider, ep.episode_id)});
      }
      fmt::print("{}\n", system_overview(summaries, query, *provider));
    } else if (*machine) {
      std::vector<std::string> actions = states;
      if (!task_name.empty()) actions = find_task(task_name).actions;
      if (actions.empty()) throw Error(ErrorCode::InvalidArgument, "give --task or --states");
      fmt::print("{}\n", json(synthesize_machine(actions)).dump(2));
    } else if (*simulate) {
      SimOptions options;
      options.render_images = !no_images;
      auto emit = [&](const GeneratedEpisode& g) {
        const auto path = write_generated(g, out_path);
        fmt::print("{} failures={} states={} -> {}\n", g.episode.episode_id, g.failures.size(), g.visited_states.size(), path.string());
      };
      if (suite) {
        for (const auto& entry : fixture_suite()) emit(generate_episode(find_task(entry.task), entry.episode_id, entry.seed, entry.failures, options));
      } else {
        if (task_name.empty()) throw Error(ErrorCode::InvalidArgument, "simulate needs --task or --suite");
        std::vector<FailureSpec> failures;
        if (!failures_path.empty()) failures = load_failure_specs(failures_path);
        if (episode_id.empty()) episode_id = fmt::format("{}_s{}", task_name, seed);
        emit(generate_episode(find_task(task_name), episode_id, seed, failures, options));
      }
    } else if (*sweep_cmd) {
      std::vector<PreparedEpisode> prepared;
      for (const auto& ep : load_episode_dir(episodes_dir)) prepared.push_back(prepare_episode(ep, interval));
      if (prepared.empty()) throw Error(ErrorCode::InvalidArgument, fmt::format("no episodes in '{}'", episodes_dir));
      const auto result = sweep(prepared, parse_thresholds(thresholds), parse_modality_sets(modality_sets), tolerance);
      fmt::print("{}", format_sweep_table(result));
      if (!out_path.empty()) {
        Output out(out_path);
        write_sweep_csv(result, out.stream());
      }
    } else if (*serve) {
      ServiceConfig config = config_path.empty() ? ServiceConfig{} : load_service_config(config_path);
      apply_env_overrides(config);
      if (port) config.port = *port;
      if (host) config.host = *host;
      if (serve_episodes) config.episodes_dir = *serve_episodes;
      if (provider_config) config.provider_config = *provider_config;
      if (ui_dir) config.ui_dir = *ui_dir;
      if (speed) config.replay_speed = *speed;

      sigset_t signals;
      sigemptyset(&signals);
      sigaddset(&signals, SIGINT);
      sigaddset(&signals, SIGTERM);
      pthread_sigmask(SIG_BLOCK, &signals, nullptr);

      Service service(config);
      service.start();
      fmt::print("listening on http://{}:{} (episodes: {})\n", config.host, service.port(), config.episodes_dir.string());
      std::fflush(stdout);
      std::thread waiter([&] {
        int sig = 0;
        sigwait(&signals, &sig);
        service.stop();
      });
      service.wait();
      waiter.join();
    }
  } catch (const Error& e) {
    fmt::print(stderr, "error [{}]: {}\n", to_string(e.code()), e.what());
    return 2;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  }
  return 0;
}
