// SPDX-License-Identifier: Apache-2.0
#include "ronar/service.hpp"

#include <sys/socket.h>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <deque>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <fmt/format.h>

#include "ronar/error.hpp"
#include "ronar/eval_harness.hpp"
#include "ronar/planner_states.hpp"
#include "ronar/task_sim.hpp"

namespace ronar {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace asio = boost::asio;
using tcp = asio::ip::tcp;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

ServiceConfig parse_service_config(const json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw Error(ErrorCode::BadConfig, "service config must be a JSON object");
  ServiceConfig c;
  auto path_of = [&](const std::string& v) {
    std::filesystem::path p(v);
    return p.is_relative() && !base_dir.empty() ? base_dir / p : p;
  };
  try {
    c.host = j.value("host", c.host);
    const int port = j.value("port", static_cast<int>(c.port));
    if (port < 0 || port > 65535) throw Error(ErrorCode::BadConfig, fmt::format("port {} out of range", port));
    c.port = static_cast<std::uint16_t>(port);
    if (j.contains("episodes")) c.episodes_dir = path_of(j["episodes"].get<std::string>());
    if (j.contains("provider_config")) c.provider_config = path_of(j["provider_config"].get<std::string>());
    if (j.contains("prompts_dir")) c.prompts_dir = path_of(j["prompts_dir"].get<std::string>());
    if (j.contains("ui_dir")) c.ui_dir = path_of(j["ui_dir"].get<std::string>());
    c.replay_speed = j.value("replay_speed", c.replay_speed);
    c.client_buffer = j.value("client_buffer", c.client_buffer);
    c.client_socket_buffer = j.value("client_socket_buffer", c.client_socket_buffer);
    c.heartbeat_s = j.value("heartbeat_s", c.heartbeat_s);
    c.pipeline.threshold = j.value("threshold", c.pipeline.threshold);
    if (j.contains("modalities")) c.pipeline.modalities = ModalitySet::parse(j["modalities"].get<std::string>());
    if (j.contains("mode")) c.pipeline.mode = parse_narration_mode(j["mode"].get<std::string>());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadConfig, e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::BadConfig) throw;
    throw Error(ErrorCode::BadConfig, e.what());
  }
  if (!(c.replay_speed >= 0.0)) throw Error(ErrorCode::BadConfig, "replay_speed must be >= 0");
  if (!(c.heartbeat_s > 0.0)) throw Error(ErrorCode::BadConfig, "heartbeat_s must be > 0");
  if (c.client_buffer == 0) throw Error(ErrorCode::BadConfig, "client_buffer must be > 0");
  if (c.client_socket_buffer < 0) throw Error(ErrorCode::BadConfig, "client_socket_buffer must be >= 0");
  return c;
}

ServiceConfig load_service_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::BadConfig, fmt::format("cannot open service config '{}'", path.string()));
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::BadConfig, e.what());
  }
  return parse_service_config(j, path.parent_path());
}

void apply_env_overrides(ServiceConfig& c) {
  auto env = [](const char* name) -> std::optional<std::string> {
    const char* v = std::getenv(name);
    if (!v || !*v) return std::nullopt;
    return std::string(v);
  };
  try {
    if (auto v = env("RONAR_HOST")) c.host = *v;
    if (auto v = env("RONAR_PORT")) {
      const int port = std::stoi(*v);
      if (port < 0 || port > 65535) throw Error(ErrorCode::BadConfig, "RONAR_PORT out of range");
      c.port = static_cast<std::uint16_t>(port);
    }
    if (auto v = env("RONAR_EPISODES")) c.episodes_dir = *v;
    if (auto v = env("RONAR_PROVIDER_CONFIG")) c.provider_config = *v;
    if (auto v = env("RONAR_REPLAY_SPEED")) c.replay_speed = std::stod(*v);
  } catch (const std::logic_error& e) {
    throw Error(ErrorCode::BadConfig, fmt::format("bad environment override: {}", e.what()));
  }
}

// ---------------------------------------------------------------------------
// Sessions

namespace {

struct ClientQueue {
  explicit ClientQueue(std::size_t cap, int socket_fd) : capacity(cap), fd(socket_fd) {}

  // Returns false once the client is gone. Overflow disconnects the client.
  bool push(const std::string& message) {
    std::lock_guard lock(mutex);
    if (closed) return false;
    if (queue.size() >= capacity) {
      closed = true;
      overflowed = true;
      ::shutdown(fd, SHUT_RDWR);
      cv.notify_all();
      return false;
    }
    queue.push_back(message);
    cv.notify_all();
    return true;
  }

  void close() {
    std::lock_guard lock(mutex);
    closed = true;
    cv.notify_all();
  }

  std::mutex mutex;
  std::condition_variable cv;
  std::deque<std::string> queue;
  std::size_t capacity;
  int fd;
  bool closed = false;
  bool overflowed = false;
};

class MemoryImages final : public ImageSource {
 public:
  explicit MemoryImages(std::size_t capacity) : capacity_(capacity) {}
  void put(const std::string& path, GrayImage image) {
    std::lock_guard lock(mutex_);
    images_.emplace_back(path, std::move(image));
    while (images_.size() > capacity_) images_.pop_front();
  }
  GrayImage load(const std::string& path) override {
    std::lock_guard lock(mutex_);
    for (const auto& [p, img] : images_)
      if (p == path) return img;
    throw Error(ErrorCode::Io, fmt::format("image '{}' is no longer buffered", path));
  }
  bool has(const std::string& path) {
    std::lock_guard lock(mutex_);
    for (const auto& [p, _] : images_)
      if (p == path) return true;
    return false;
  }

 private:
  std::size_t capacity_;
  std::mutex mutex_;
  std::deque<std::pair<std::string, GrayImage>> images_;
};

struct Session {
  std::string id;
  std::string kind;    // replay | live
  std::string source;  // episode id or task name
  double speed = 10.0;

  mutable std::mutex mutex;
  std::condition_variable stop_cv;
  bool stop = false;
  NarrationMode mode = NarrationMode::Info;
  std::vector<std::string> log;
  std::atomic<std::uint64_t> last_seq{0};
  double last_t = 0.0;
  std::vector<std::shared_ptr<ClientQueue>> clients;
  std::unique_ptr<Simulator> sim;
  bool finished = false;
  std::string error;
  std::thread worker;

  // Caller holds `mutex`.
  std::uint64_t publish_locked(std::string_view kind_name, double t, json payload) {
    const auto seq = last_seq.load() + 1;
    json msg{{"seq", seq}, {"kind", kind_name}, {"t", t}, {"payload", std::move(payload)}};
    auto text = msg.dump();
    log.push_back(text);
    last_seq = seq;
    last_t = t;
    std::erase_if(clients, [&](const std::shared_ptr<ClientQueue>& c) { return !c->push(text); });
    return seq;
  }

  std::uint64_t publish(std::string_view kind_name, double t, json payload) {
    std::lock_guard lock(mutex);
    return publish_locked(kind_name, t, std::move(payload));
  }

  // Sleeps until `deadline` or stop; returns false when stopping.
  bool wait_until(std::chrono::steady_clock::time_point deadline) {
    std::unique_lock lock(mutex);
    return !stop_cv.wait_until(lock, deadline, [&] { return stop; });
  }

  bool stopping() const {
    std::lock_guard lock(mutex);
    return stop;
  }

  NarrationMode current_mode() const {
    std::lock_guard lock(mutex);
    return mode;
  }

  json descriptor() const {
    std::lock_guard lock(mutex);
    json d{{"session_id", id},
           {"kind", kind},
           {"source", source},
           {"mode", to_string(mode)},
           {"messages", log.size()},
           {"last_seq", last_seq.load()},
           {"clients", clients.size()},
           {"finished", finished},
           {"stream", fmt::format("/sessions/{}/stream", id)}};
    if (!error.empty()) d["error"] = error;
    if (sim) {
      d["state"] = sim->state();
      d["awaiting_operator"] = sim->awaiting_operator();
    }
    return d;
  }
};

json transition_payload(const PlannerTransition& tr) {
  return json{{"from", tr.from_state}, {"to", tr.to_state}, {"outcome", tr.outcome}};
}

json failure_payload(const FailureLabel& f) { return json{{"reason", f.reason}, {"recovery", f.recovery}}; }

json key_event_payload(const KeyEvent& e, std::size_t index) {
  json j = e;
  j["event_index"] = index;
  return j;
}

struct HttpError {
  http::status status;
  std::string message;
};

http::status status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::SessionNotFound: return http::status::not_found;
    case ErrorCode::InvalidArgument:
    case ErrorCode::BadConfig:
    case ErrorCode::InvalidFailureSpec: return http::status::bad_request;
    default: return http::status::internal_server_error;
  }
}

std::map<std::string, std::string> parse_query(std::string_view q) {
  std::map<std::string, std::string> out;
  while (!q.empty()) {
    auto amp = q.find('&');
    auto part = q.substr(0, amp);
    auto eq = part.find('=');
    if (eq == std::string_view::npos) out.emplace(std::string(part), "");
    else out.emplace(std::string(part.substr(0, eq)), std::string(part.substr(eq + 1)));
    if (amp == std::string_view::npos) break;
    q.remove_prefix(amp + 1);
  }
  return out;
}

std::vector<std::string> split_path(std::string_view path) {
  std::vector<std::string> out;
  while (!path.empty()) {
    if (path.front() == '/') {
      path.remove_prefix(1);
      continue;
    }
    auto slash = path.find('/');
    out.emplace_back(path.substr(0, slash));
    if (slash == std::string_view::npos) break;
    path.remove_prefix(slash);
  }
  return out;
}

std::string content_type_for(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".html") return "text/html; charset=utf-8";
  if (ext == ".js") return "text/javascript";
  if (ext == ".css") return "text/css";
  if (ext == ".json") return "application/json";
  if (ext == ".png") return "image/png";
  if (ext == ".svg") return "image/svg+xml";
  return "application/octet-stream";
}

}  // namespace

// ---------------------------------------------------------------------------

struct Service::Impl {
  ServiceConfig config;
  std::shared_ptr<Provider> provider;
  PromptLibrary prompts;

  asio::io_context ioc;
  std::optional<tcp::acceptor> acceptor;
  std::uint16_t bound_port = 0;
  std::thread accept_thread;
  std::atomic<bool> stopping{false};
  std::mutex stop_mutex;
  std::condition_variable stop_cv;
  bool stopped = false;

  std::mutex connections_mutex;
  std::condition_variable connections_cv;
  std::set<int> connection_fds;
  std::size_t active_connections = 0;

  struct EpisodeEntry {
    std::filesystem::path path;
    std::filesystem::file_time_type mtime;
    std::shared_ptr<const EpisodeLog> episode;
    std::string error;
  };
  std::mutex episodes_mutex;
  std::map<std::string, EpisodeEntry> episodes;
  std::mutex compute_mutex;
  std::map<std::string, std::shared_ptr<const KeyEventRun>> key_event_cache;
  std::map<std::string, json> narration_cache;

  std::mutex sessions_mutex;
  std::map<std::string, std::shared_ptr<Session>> sessions;
  std::uint64_t session_counter = 0;

  Impl(ServiceConfig c, std::shared_ptr<Provider> p) : config(std::move(c)), provider(std::move(p)) {
    if (!provider) provider = make_provider(config.provider_config ? load_provider_config(*config.provider_config) : ProviderConfig{});
    prompts = config.prompts_dir ? PromptLibrary::with_overrides(*config.prompts_dir) : PromptLibrary::builtin();
  }

  // --- episodes ----------------------------------------------------------

  void refresh_episodes() {
    std::error_code ec;
    if (!std::filesystem::is_directory(config.episodes_dir, ec)) return;
    std::lock_guard lock(episodes_mutex);
    std::set<std::string> present;
    for (const auto& entry : std::filesystem::directory_iterator(config.episodes_dir, ec)) {
      if (!entry.is_regular_file() || entry.path().extension() != ".jsonl") continue;
      const auto id = entry.path().stem().string();
      present.insert(id);
      const auto mtime = entry.last_write_time();
      auto it = episodes.find(id);
      if (it != episodes.end() && it->second.mtime == mtime) continue;
      EpisodeEntry e{entry.path(), mtime, nullptr, {}};
      try {
        e.episode = std::make_shared<const EpisodeLog>(load_episode(entry.path()));
      } catch (const Error& err) {
        e.error = err.what();
      }
      episodes.insert_or_assign(id, std::move(e));
    }
    std::erase_if(episodes, [&](const auto& kv) { return !present.count(kv.first); });
  }

  std::shared_ptr<const EpisodeLog> episode(const std::string& id) {
    refresh_episodes();
    std::lock_guard lock(episodes_mutex);
    auto it = episodes.find(id);
    if (it == episodes.end()) throw HttpError{http::status::not_found, fmt::format("episode '{}' not found", id)};
    if (!it->second.episode) throw HttpError{http::status::unprocessable_entity, it->second.error};
    return it->second.episode;
  }

  json episode_list() {
    refresh_episodes();
    std::lock_guard lock(episodes_mutex);
    json out = json::array();
    for (const auto& [id, e] : episodes) {
      json d{{"episode_id", id}, {"file", e.path.filename().string()}};
      if (e.episode) {
        d["task_name"] = e.episode->task_name;
        d["task_description"] = e.episode->task_description;
        d["t_start"] = e.episode->t_start();
        d["t_end"] = e.episode->t_end();
        d["n_failures"] = e.episode->failure_labels.size();
        d["n_planner_events"] = e.episode->planner_events.size();
      } else {
        d["error"] = e.error;
      }
      out.push_back(std::move(d));
    }
    return out;
  }

  std::shared_ptr<const KeyEventRun> key_events(const std::string& id) {
    auto ep = episode(id);
    std::lock_guard lock(compute_mutex);
    if (auto it = key_event_cache.find(id); it != key_event_cache.end()) return it->second;
    auto run = std::make_shared<const KeyEventRun>(select_key_events(*ep, config.pipeline));
    key_event_cache.emplace(id, run);
    return run;
  }

  json narrations(const std::string& id, NarrationMode mode) {
    auto ep = episode(id);
    auto run = key_events(id);
    const auto key = fmt::format("{}\x1f{}", id, to_string(mode));
    {
      std::lock_guard lock(compute_mutex);
      if (auto it = narration_cache.find(key); it != narration_cache.end()) return it->second;
    }
    FixtureDetector detector(ep->detections);
    Summarizer summarizer(*ep, run->frames, detector, *provider, prompts, config.pipeline.summarizer);
    auto nopts = config.pipeline.narrator;
    nopts.episode_id = id;
    Narrator narrator(*provider, prompts, nopts);
    for (std::size_t i = 0; i < run->events.size(); ++i)
      narrator.narrate(summarizer.summarize_event(run->events[i], i ? &run->events[i - 1] : nullptr, i), mode);
    json out = narrator.history().items();
    std::lock_guard lock(compute_mutex);
    narration_cache.insert_or_assign(key, out);
    return out;
  }

  // --- sessions ----------------------------------------------------------

  std::shared_ptr<Session> session(const std::string& id) {
    std::lock_guard lock(sessions_mutex);
    auto it = sessions.find(id);
    if (it == sessions.end()) throw Error(ErrorCode::SessionNotFound, fmt::format("session '{}' not found", id));
    return it->second;
  }

  static std::chrono::steady_clock::time_point deadline(std::chrono::steady_clock::time_point start, double episode_dt, double speed) {
    if (speed <= 0.0) return start;
    return start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(std::chrono::duration<double>(episode_dt / speed));
  }

  void run_replay(const std::shared_ptr<Session>& s) {
    std::shared_ptr<const EpisodeLog> ep;
    std::shared_ptr<const KeyEventRun> run;
    try {
      ep = episode(s->source);
      run = key_events(s->source);
    } catch (const HttpError& e) {
      std::lock_guard lock(s->mutex);
      s->error = e.message;
      s->finished = true;
      return;
    } catch (const Error& e) {
      std::lock_guard lock(s->mutex);
      s->error = e.what();
      s->finished = true;
      return;
    }

    struct Item {
      double t;
      int rank;
      std::size_t index;
    };
    std::vector<Item> items;
    for (std::size_t i = 0; i < ep->planner_events.size(); ++i) items.push_back({ep->planner_events[i].t, 0, i});
    for (std::size_t i = 0; i < ep->failure_labels.size(); ++i) items.push_back({ep->failure_labels[i].t, 1, i});
    for (std::size_t i = 0; i < run->events.size(); ++i) items.push_back({run->events[i].timestamp, 2, i});
    std::stable_sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.t != b.t ? a.t < b.t : a.rank < b.rank; });

    FixtureDetector detector(ep->detections);
    Summarizer summarizer(*ep, run->frames, detector, *provider, prompts, config.pipeline.summarizer);
    auto nopts = config.pipeline.narrator;
    nopts.episode_id = ep->episode_id;
    Narrator narrator(*provider, prompts, nopts);

    const double t0 = ep->t_start();
    const auto wall0 = std::chrono::steady_clock::now();
    for (const auto& item : items) {
      if (!s->wait_until(deadline(wall0, item.t - t0, s->speed))) return;
      try {
        if (item.rank == 0) {
          s->publish("state_transition", item.t, transition_payload(ep->planner_events[item.index]));
        } else if (item.rank == 1) {
          s->publish("failure_label", item.t, failure_payload(ep->failure_labels[item.index]));
        } else {
          const auto& e = run->events[item.index];
          s->publish("key_event", item.t, key_event_payload(e, item.index));
          auto summary = summarizer.summarize_event(e, item.index ? &run->events[item.index - 1] : nullptr, item.index);
          s->publish("summary_ready", item.t, summary);
          const auto& n = narrator.narrate(summary, s->current_mode());
          s->publish("narration", item.t, n);
        }
      } catch (const Error& e) {
        std::lock_guard lock(s->mutex);
        s->error = e.what();
        s->finished = true;
        return;
      }
    }
    std::lock_guard lock(s->mutex);
    s->publish_locked("session_complete", ep->t_end(), {{"key_events", run->events.size()}, {"narrations", narrator.history().size()}});
    s->finished = true;
  }

  void run_live(const std::shared_ptr<Session>& s) {
    const auto& opts = config.pipeline;
    StreamingClassifier classifier(opts.threshold, opts.modalities);
    MemoryImages images(16);
    std::vector<MultimodalFrame> frames;
    std::optional<KeyEvent> previous;
    std::size_t event_count = 0;
    auto nopts = opts.narrator;
    nopts.episode_id = s->id;
    Narrator narrator(*provider, prompts, nopts);
    const auto wall0 = std::chrono::steady_clock::now();
    long ticks = 0;

    try {
      for (;;) {
        StepOutput out;
        {
          std::lock_guard lock(s->mutex);
          if (s->stop || s->sim->finished()) break;
          out = s->sim->step();
        }
        ++ticks;
        for (const auto& tr : out.transitions) s->publish("state_transition", tr.t, transition_payload(tr));
        for (const auto& f : out.failures) s->publish("failure_label", f.t, failure_payload(f));
        for (auto& [path, img] : out.images) images.put(path, std::move(img));

        if (out.frame) {
          auto f = std::move(*out.frame);
          if (!frames.empty() && f.head_image && frames.back().head_image && images.has(*frames.back().head_image)) {
            const auto a = images.load(*frames.back().head_image);
            const auto b = images.load(*f.head_image);
            f.flow_magnitude = mean_flow_magnitude(dense_flow(a, b, opts.flow.block_size, opts.flow.search_radius));
          }
          frames.push_back(std::move(f));
          if (auto ev = classifier.push(frames.back())) {
            std::size_t first = frames.size();
            while (first > 0 && frames[first - 1].timestamp >= ev->timestamp - opts.sharpest_window - 1e-9) --first;
            try {
              const auto idx = select_sharpest(std::span(frames).subspan(first), ev->timestamp, opts.sharpest_window, images);
              ev->sharpest_frame = first + idx;
              ev->sharpest_image = frames[first + idx].head_image;
            } catch (const Error& e) {
              if (e.code() != ErrorCode::NoImageInWindow && e.code() != ErrorCode::Io) throw;
            }
            s->publish("key_event", ev->timestamp, key_event_payload(*ev, event_count));
            EpisodeLog snapshot;
            {
              std::lock_guard lock(s->mutex);
              snapshot = s->sim->episode();
            }
            FixtureDetector detector(snapshot.detections);
            Summarizer summarizer(snapshot, frames, detector, *provider, prompts, opts.summarizer);
            auto summary = summarizer.summarize_event(*ev, previous ? &*previous : nullptr, event_count);
            s->publish("summary_ready", ev->timestamp, summary);
            const auto& n = narrator.narrate(summary, s->current_mode());
            s->publish("narration", ev->timestamp, n);
            previous = ev;
            ++event_count;
          }
        }
        if (!s->wait_until(deadline(wall0, static_cast<double>(ticks) * kSimTick, s->speed))) return;
      }
    } catch (const Error& e) {
      std::lock_guard lock(s->mutex);
      s->error = e.what();
      s->finished = true;
      return;
    }
    std::lock_guard lock(s->mutex);
    if (s->stop) return;
    s->publish_locked("session_complete", s->sim->time(), {{"key_events", event_count}, {"narrations", narrator.history().size()}, {"final_state", s->sim->state()}});
    s->finished = true;
  }

  json create_session(const json& body) {
    auto s = std::make_shared<Session>();
    s->speed = body.value("speed", config.replay_speed);
    if (!(s->speed >= 0.0)) throw Error(ErrorCode::InvalidArgument, "speed must be >= 0");
    s->mode = body.contains("mode") ? parse_narration_mode(body["mode"].get<std::string>()) : config.pipeline.mode;
    if (body.contains("episode_id")) {
      s->kind = "replay";
      s->source = body["episode_id"].get<std::string>();
      episode(s->source);  // 404 before the session exists
    } else if (body.contains("live_task")) {
      s->kind = "live";
      s->source = body["live_task"].get<std::string>();
      const auto& task = find_task(s->source);
      std::vector<FailureSpec> failures;
      if (body.contains("failures")) {
        failures = body["failures"].get<std::vector<FailureSpec>>();
      } else {
        for (const auto& a : task.actions)
          if (state_type_of(a) == StateType::Manipulation) {
            failures.push_back({a, 2.0, StateType::Manipulation, true, {}});
            break;
          }
      }
      SimOptions so;
      so.auto_operator = false;
      const auto seed = body.value("seed", std::uint64_t{7});
      std::lock_guard lock(sessions_mutex);
      s->sim = std::make_unique<Simulator>(task, fmt::format("live_{}", session_counter + 1), seed, failures, so);
    } else {
      throw Error(ErrorCode::InvalidArgument, "body needs episode_id or live_task");
    }
    {
      std::lock_guard lock(sessions_mutex);
      s->id = fmt::format("s{}", ++session_counter);
      sessions.emplace(s->id, s);
    }
    s->worker = std::thread([this, s] {
      if (s->kind == "replay") run_replay(s);
      else run_live(s);
    });
    return s->descriptor();
  }

  // --- HTTP --------------------------------------------------------------

  using Request = http::request<http::string_body>;
  using Response = http::response<http::string_body>;

  static Response json_response(const Request& req, http::status status, const json& body) {
    Response res{status, req.version()};
    res.set(http::field::content_type, "application/json");
    res.set(http::field::access_control_allow_origin, "*");
    res.keep_alive(req.keep_alive());
    res.body() = body.dump();
    res.prepare_payload();
    return res;
  }

  static json body_json(const Request& req) {
    if (req.body().empty()) return json::object();
    try {
      auto j = json::parse(req.body());
      if (!j.is_object()) throw HttpError{http::status::bad_request, "request body must be a JSON object"};
      return j;
    } catch (const json::parse_error& e) {
      throw HttpError{http::status::bad_request, fmt::format("invalid JSON body: {}", e.what())};
    }
  }

  Response serve_ui(const Request& req, const std::vector<std::string>& parts) {
    if (!config.ui_dir) throw HttpError{http::status::not_found, "no console build configured"};
    std::filesystem::path rel;
    for (std::size_t i = 1; i < parts.size(); ++i) {
      if (parts[i] == ".." || parts[i] == ".") throw HttpError{http::status::bad_request, "bad path"};
      rel /= parts[i];
    }
    if (rel.empty()) rel = "index.html";
    const auto file = *config.ui_dir / rel;
    std::ifstream in(file, std::ios::binary);
    if (!in) throw HttpError{http::status::not_found, fmt::format("'{}' not found", rel.string())};
    std::stringstream ss;
    ss << in.rdbuf();
    Response res{http::status::ok, req.version()};
    res.set(http::field::content_type, content_type_for(file));
    res.keep_alive(req.keep_alive());
    res.body() = ss.str();
    res.prepare_payload();
    return res;
  }

  Response route(const Request& req) {
    const std::string_view target(req.target().data(), req.target().size());
    const auto qpos = target.find('?');
    const auto parts = split_path(target.substr(0, qpos));
    const auto query = parse_query(qpos == std::string_view::npos ? std::string_view{} : target.substr(qpos + 1));
    const auto method = req.method();

    try {
      if (method == http::verb::options) {
        Response res{http::status::no_content, req.version()};
        res.set(http::field::access_control_allow_origin, "*");
        res.set(http::field::access_control_allow_methods, "GET, POST, OPTIONS");
        res.set(http::field::access_control_allow_headers, "Content-Type");
        res.keep_alive(req.keep_alive());
        res.prepare_payload();
        return res;
      }
      if (method == http::verb::get && parts.size() == 1 && parts[0] == "healthz")
        return json_response(req, http::status::ok, {{"status", "ok"}, {"sessions", sessions.size()}});
      if (method == http::verb::get && !parts.empty() && parts[0] == "ui") return serve_ui(req, parts);
      if (method == http::verb::get && parts.size() == 1 && parts[0] == "episodes") return json_response(req, http::status::ok, episode_list());
      if (method == http::verb::get && parts.size() == 3 && parts[0] == "episodes" && parts[2] == "events") {
        const auto run = key_events(parts[1]);
        json events = json::array();
        for (std::size_t i = 0; i < run->events.size(); ++i) events.push_back(key_event_payload(run->events[i], i));
        return json_response(req, http::status::ok, events);
      }
      if (method == http::verb::get && parts.size() == 3 && parts[0] == "episodes" && parts[2] == "narrations") {
        auto it = query.find("mode");
        const auto mode = it == query.end() ? config.pipeline.mode : parse_narration_mode(it->second);
        return json_response(req, http::status::ok, narrations(parts[1], mode));
      }
      if (parts.size() >= 1 && parts[0] == "sessions") {
        if (method == http::verb::get && parts.size() == 1) {
          json list = json::array();
          std::vector<std::shared_ptr<Session>> all;
          {
            std::lock_guard lock(sessions_mutex);
            for (const auto& [_, s] : sessions) all.push_back(s);
          }
          for (const auto& s : all) list.push_back(s->descriptor());
          return json_response(req, http::status::ok, list);
        }
        if (method == http::verb::post && parts.size() == 1) return json_response(req, http::status::created, create_session(body_json(req)));
        if (parts.size() >= 2) {
          auto s = session(parts[1]);
          if (method == http::verb::get && parts.size() == 2) return json_response(req, http::status::ok, s->descriptor());
          if (method == http::verb::get && parts.size() == 3 && parts[2] == "messages") {
            std::lock_guard lock(s->mutex);
            json out = json::array();
            for (const auto& m : s->log) out.push_back(json::parse(m));
            return json_response(req, http::status::ok, out);
          }
          if (method == http::verb::post && parts.size() == 3 && parts[2] == "mode") {
            const auto body = body_json(req);
            if (!body.contains("mode")) throw HttpError{http::status::bad_request, "body needs mode"};
            const auto mode = parse_narration_mode(body["mode"].get<std::string>());
            std::lock_guard lock(s->mutex);
            s->mode = mode;
            const auto seq = s->publish_locked("mode_changed", s->last_t, {{"mode", to_string(mode)}});
            return json_response(req, http::status::ok, {{"session_id", s->id}, {"mode", to_string(mode)}, {"seq", seq}});
          }
          if (method == http::verb::post && parts.size() == 3 && parts[2] == "intervene") {
            const auto body = body_json(req);
            if (!body.contains("action")) throw HttpError{http::status::bad_request, "body needs action"};
            const auto action = parse_intervention(body["action"].get<std::string>());
            std::lock_guard lock(s->mutex);
            if (!s->sim) throw HttpError{http::status::conflict, "interventions apply to live sessions only"};
            try {
              s->sim->intervene(action);
            } catch (const Error& e) {
              throw HttpError{http::status::conflict, e.what()};
            }
            const auto state = s->sim->state();
            const auto seq = s->publish_locked("intervention_ack", s->sim->time(), {{"action", to_string(action)}, {"state", state}});
            return json_response(req, http::status::ok, {{"acknowledged", true}, {"action", to_string(action)}, {"state", state}, {"seq", seq}});
          }
        }
      }
      throw HttpError{http::status::not_found, fmt::format("no route for {} {}", std::string(req.method_string()), std::string(target))};
    } catch (const HttpError& e) {
      return json_response(req, e.status, {{"error", e.message}});
    } catch (const Error& e) {
      return json_response(req, status_for(e.code()), {{"error", e.what()}, {"code", to_string(e.code())}});
    } catch (const json::exception& e) {
      return json_response(req, http::status::bad_request, {{"error", e.what()}});
    }
  }

  // --- connections -------------------------------------------------------

  void stream(tcp::socket socket, const Request& req, const std::shared_ptr<Session>& s) {
    websocket::stream<tcp::socket> ws(std::move(socket));
    beast::error_code ec;
    if (config.client_socket_buffer > 0) ws.next_layer().set_option(asio::socket_base::send_buffer_size(config.client_socket_buffer), ec);
    ws.set_option(websocket::stream_base::decorator([](websocket::response_type& res) { res.set(http::field::server, "ronar"); }));
    ws.accept(req, ec);
    if (ec) return;
    ws.text(true);

    auto queue = std::make_shared<ClientQueue>(config.client_buffer, ws.next_layer().native_handle());
    std::vector<std::string> snapshot;
    {
      std::lock_guard lock(s->mutex);
      snapshot = s->log;
      s->clients.push_back(queue);
    }
    for (const auto& m : snapshot) {
      ws.write(asio::buffer(m), ec);
      if (ec) return queue->close();
    }
    const auto heartbeat = std::chrono::duration_cast<std::chrono::steady_clock::duration>(std::chrono::duration<double>(config.heartbeat_s));
    while (!stopping) {
      std::string next;
      {
        std::unique_lock lock(queue->mutex);
        queue->cv.wait_for(lock, heartbeat, [&] { return !queue->queue.empty() || queue->closed; });
        if (queue->closed && (queue->overflowed || queue->queue.empty())) break;
        if (!queue->queue.empty()) {
          next = std::move(queue->queue.front());
          queue->queue.pop_front();
        }
      }
      if (next.empty()) {
        double t = 0.0;
        {
          std::lock_guard lock(s->mutex);
          t = s->last_t;
        }
        next = json{{"seq", s->last_seq.load()}, {"kind", "heartbeat"}, {"t", t}, {"payload", json::object()}}.dump();
      }
      ws.write(asio::buffer(next), ec);
      if (ec) break;
    }
    queue->close();
    if (!queue->overflowed && !stopping) ws.close(websocket::close_code::normal, ec);
  }

  void handle_connection(tcp::socket socket) {
    beast::flat_buffer buffer;
    beast::error_code ec;
    for (;;) {
      Request req;
      http::read(socket, buffer, req, ec);
      if (ec) break;
      if (websocket::is_upgrade(req)) {
        const std::string_view target(req.target().data(), req.target().size());
        const auto parts = split_path(target.substr(0, target.find('?')));
        std::shared_ptr<Session> s;
        if (parts.size() == 3 && parts[0] == "sessions" && parts[2] == "stream") {
          try {
            s = session(parts[1]);
          } catch (const Error&) {
          }
        }
        if (!s) {
          auto res = json_response(req, http::status::not_found, {{"error", "session not found"}, {"code", "SessionNotFound"}});
          res.keep_alive(false);
          http::write(socket, res, ec);
          break;
        }
        stream(std::move(socket), req, s);
        return;
      }
      auto res = route(req);
      http::write(socket, res, ec);
      if (ec || !res.keep_alive()) break;
    }
    socket.shutdown(tcp::socket::shutdown_both, ec);
  }

  void accept_loop() {
    while (!stopping) {
      beast::error_code ec;
      tcp::socket socket(ioc);
      acceptor->accept(socket, ec);
      if (ec) {
        if (stopping) break;
        continue;
      }
      const int fd = socket.native_handle();
      {
        std::lock_guard lock(connections_mutex);
        connection_fds.insert(fd);
        ++active_connections;
      }
      std::thread([this, fd, sock = std::move(socket)]() mutable {
        try {
          handle_connection(std::move(sock));
        } catch (const std::exception&) {
        }
        std::lock_guard lock(connections_mutex);
        connection_fds.erase(fd);
        --active_connections;
        connections_cv.notify_all();
      }).detach();
    }
  }

  void start() {
    beast::error_code ec;
    const auto address = asio::ip::make_address(config.host, ec);
    if (ec) throw Error(ErrorCode::BadConfig, fmt::format("bad host '{}'", config.host));
    tcp::endpoint endpoint(address, config.port);
    acceptor.emplace(ioc);
    acceptor->open(endpoint.protocol(), ec);
    if (ec) throw Error(ErrorCode::BadConfig, ec.message());
    acceptor->set_option(asio::socket_base::reuse_address(true), ec);
    acceptor->bind(endpoint, ec);
    if (ec == asio::error::address_in_use) throw Error(ErrorCode::PortInUse, fmt::format("port {} is already in use", config.port));
    if (ec) throw Error(ErrorCode::BadConfig, fmt::format("cannot bind {}:{}: {}", config.host, config.port, ec.message()));
    acceptor->listen(asio::socket_base::max_listen_connections, ec);
    if (ec) throw Error(ErrorCode::BadConfig, ec.message());
    bound_port = acceptor->local_endpoint().port();
    accept_thread = std::thread([this] { accept_loop(); });
  }

  void stop() {
    if (stopping.exchange(true)) return;
    if (acceptor) ::shutdown(acceptor->native_handle(), SHUT_RDWR);
    if (accept_thread.joinable()) accept_thread.join();

    std::vector<std::shared_ptr<Session>> all;
    {
      std::lock_guard lock(sessions_mutex);
      for (const auto& [_, s] : sessions) all.push_back(s);
    }
    for (const auto& s : all) {
      {
        std::lock_guard lock(s->mutex);
        s->stop = true;
        for (const auto& c : s->clients) c->close();
      }
      s->stop_cv.notify_all();
    }
    for (const auto& s : all)
      if (s->worker.joinable()) s->worker.join();

    std::unique_lock lock(connections_mutex);
    for (int fd : connection_fds) ::shutdown(fd, SHUT_RDWR);
    connections_cv.wait(lock, [&] { return active_connections == 0; });
    lock.unlock();
    {
      std::lock_guard stop_lock(stop_mutex);
      stopped = true;
    }
    stop_cv.notify_all();
  }
};

Service::Service(ServiceConfig config, std::shared_ptr<Provider> provider)
    : impl_(std::make_unique<Impl>(std::move(config), std::move(provider))) {}

Service::~Service() { stop(); }

void Service::start() { impl_->start(); }
void Service::stop() { impl_->stop(); }

void Service::wait() {
  std::unique_lock lock(impl_->stop_mutex);
  impl_->stop_cv.wait(lock, [&] { return impl_->stopped; });
}

std::uint16_t Service::port() const { return impl_->bound_port; }

std::vector<std::string> Service::session_log(const std::string& session_id) const {
  auto s = impl_->session(session_id);
  std::lock_guard lock(s->mutex);
  return s->log;
}

}  // namespace ronar
