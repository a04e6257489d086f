#include "prime/service.hpp"

#include <atomic>
#include <list>
#include <map>
#include <mutex>
#include <random>
#include <set>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>

#include "prime/error.hpp"

namespace prime {

using ojson = nlohmann::ordered_json;
using Clock = std::chrono::system_clock;

namespace {

enum class State { created, scored, pruned, trained };

std::string_view state_name(State s) {
  switch (s) {
    case State::created: return "created";
    case State::scored: return "scored";
    case State::pruned: return "pruned";
    case State::trained: return "trained";
  }
  return "created";
}

struct Job {
  std::string id;
  ojson request;
  std::atomic<bool> done{false};
  std::mutex m;
  std::optional<Bundle> bundle;
  std::string error;
  int error_status = 500;
};

struct Session {
  std::string id;
  Clock::time_point expires;
  std::atomic<bool> busy{false};  // one mutating step at a time

  std::mutex m;  // guards everything below
  State state = State::created;
  std::shared_ptr<const ScoreStage> scores;
  std::optional<PruneParams> prune;
  std::shared_ptr<const AlignedDataset> pruned;
  std::map<std::string, std::string> layers;
  std::vector<std::string> missing_geometry;
  std::shared_ptr<Job> job;
  int jobs_started = 0;
};

void send_json(httplib::Response& res, int status, const ojson& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message, const std::string& field = {}) {
  ojson body{{"error", message}};
  if (!field.empty()) body["fields"] = {{field, message}};
  send_json(res, status, body);
}

std::string content_type(const std::string& path) {
  if (path.ends_with(".json")) return "application/json";
  if (path.ends_with(".geojson")) return "application/geo+json";
  if (path.ends_with(".csv")) return "text/csv";
  if (path.ends_with(".dot")) return "text/vnd.graphviz";
  return "text/plain";
}

std::string iso_time(Clock::time_point t) {
  const std::time_t tt = Clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Clears the busy flag on scope exit unless released.
class BusyGuard {
 public:
  explicit BusyGuard(Session& s) : s_(&s) {}
  ~BusyGuard() {
    if (s_) s_->busy.store(false);
  }
  void release() { s_ = nullptr; }

 private:
  Session* s_;
};

}  // namespace

struct Service::Impl {
  std::shared_ptr<const Datasets> data;
  ServiceOptions options;
  httplib::Server server;
  std::thread listener;

  std::mutex sessions_m;
  std::map<std::string, std::shared_ptr<Session>> sessions;
  std::set<std::string> expired;
  std::random_device entropy;
  std::mt19937_64 id_source{(static_cast<std::uint64_t>(entropy()) << 32) ^ entropy()};

  std::mutex workers_m;
  std::list<std::thread> workers;

  Impl(std::shared_ptr<const Datasets> d, ServiceOptions o) : data(std::move(d)), options(std::move(o)) {
    if (!options.clock) options.clock = [] { return Clock::now(); };
    routes();
  }

  ~Impl() {
    server.stop();
    if (listener.joinable()) listener.join();
    std::lock_guard lock(workers_m);
    for (auto& w : workers) w.join();
  }

  std::string new_id() {
    return fmt::format("{:016x}{:016x}", id_source(), id_source());
  }

  /// nullptr after sending 404 or 410.
  std::shared_ptr<Session> find(const std::string& id, httplib::Response& res) {
    std::lock_guard lock(sessions_m);
    auto it = sessions.find(id);
    if (it == sessions.end()) {
      if (expired.contains(id)) {
        send_error(res, 410, "session expired");
      } else {
        send_error(res, 404, "unknown session");
      }
      return nullptr;
    }
    if (options.clock() >= it->second->expires) {
      expired.insert(id);
      sessions.erase(it);
      send_error(res, 410, "session expired");
      return nullptr;
    }
    return it->second;
  }

  void sweep() {
    const auto now = options.clock();
    for (auto it = sessions.begin(); it != sessions.end();) {
      if (now >= it->second->expires && !it->second->busy.load()) {
        expired.insert(it->first);
        it = sessions.erase(it);
      } else {
        ++it;
      }
    }
  }

  static std::optional<nlohmann::json> parse_body(const httplib::Request& req, httplib::Response& res) {
    if (req.body.empty()) return nlohmann::json::object();
    try {
      auto j = nlohmann::json::parse(req.body);
      if (!j.is_object()) {
        send_error(res, 400, "request body must be a JSON object");
        return std::nullopt;
      }
      return j;
    } catch (const nlohmann::json::exception&) {
      send_error(res, 400, "malformed JSON body");
      return std::nullopt;
    }
  }

  template <typename Fn>
  void guarded(httplib::Response& res, Fn&& fn) {
    try {
      fn();
    } catch (const ValidationError& e) {
      send_error(res, 422, e.what(), e.field().empty() ? "request" : e.field());
    } catch (const DataError& e) {
      send_error(res, 422, e.what(), "data");
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
    }
  }

  void routes() {
    server.Get("/health", [](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, ojson{{"status", "ok"}, {"version", std::string(kVersion)}});
    });

    server.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      if (!parse_body(req, res)) return;
      auto s = std::make_shared<Session>();
      {
        std::lock_guard lock(sessions_m);
        sweep();
        s->id = new_id();
        s->expires = options.clock() + options.session_ttl;
        sessions[s->id] = s;
      }
      send_json(res, 201, ojson{{"session_id", s->id}, {"state", "created"}, {"expires_at", iso_time(s->expires)}});
    });

    server.Get(R"(/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      auto s = find(req.matches[1], res);
      if (!s) return;
      std::lock_guard lock(s->m);
      send_json(res, 200, ojson{{"session_id", s->id},
                                {"state", std::string(state_name(s->state))},
                                {"busy", s->busy.load()},
                                {"expires_at", iso_time(s->expires)}});
    });

    server.Post(R"(/sessions/([^/]+)/filter)", [this](const httplib::Request& req, httplib::Response& res) {
      auto s = find(req.matches[1], res);
      if (!s) return;
      auto body = parse_body(req, res);
      if (!body) return;
      if (s->busy.exchange(true)) return send_error(res, 409, "step in progress");
      BusyGuard guard(*s);
      guarded(res, [&] {
        const auto params = filter_from_json(*body);
        auto stage = std::make_shared<const ScoreStage>(run_score_stage(*data, params));
        const auto files = score_files(*stage, *data);
        std::map<std::string, std::string> layers;
        std::vector<std::string> missing;
        for (const auto& [path, content] : files) {
          if (path.starts_with("layers/") && path.ends_with(".geojson")) {
            layers[path.substr(7, path.size() - 7 - 8)] = content;
          }
        }
        if (auto it = files.find("layers/missing_geometry.json"); it != files.end()) {
          missing = nlohmann::json::parse(it->second).at("missing").get<std::vector<std::string>>();
        }
        ojson urls = ojson::object();
        for (const auto& [kind, _] : layers) urls[kind] = fmt::format("/sessions/{}/layers/{}", s->id, kind);
        ojson out{{"session_id", s->id},
                  {"state", "scored"},
                  {"summary", score_summary(*stage)},
                  {"layers", std::move(urls)},
                  {"missing_geometry", missing},
                  {"scores_url", fmt::format("/sessions/{}/scores", s->id)}};
        {
          std::lock_guard lock(s->m);
          s->scores = std::move(stage);
          s->layers = std::move(layers);
          s->missing_geometry = std::move(missing);
          s->prune.reset();
          s->pruned.reset();
          s->job.reset();
          s->state = State::scored;
        }
        send_json(res, 200, out);
      });
    });

    server.Get(R"(/sessions/([^/]+)/layers/([a-z_]+))", [this](const httplib::Request& req, httplib::Response& res) {
      auto s = find(req.matches[1], res);
      if (!s) return;
      std::lock_guard lock(s->m);
      if (!s->scores) return send_error(res, 409, "filter step has not run");
      auto it = s->layers.find(req.matches[2]);
      if (it == s->layers.end()) return send_error(res, 404, "no such layer");
      res.status = 200;
      res.set_content(it->second, "application/geo+json");
    });

    server.Get(R"(/sessions/([^/]+)/scores)", [this](const httplib::Request& req, httplib::Response& res) {
      auto s = find(req.matches[1], res);
      if (!s) return;
      std::shared_ptr<const ScoreStage> stage;
      {
        std::lock_guard lock(s->m);
        stage = s->scores;
      }
      if (!stage) return send_error(res, 409, "filter step has not run");
      res.status = 200;
      res.set_content(scores_csv(stage->run.scores, stage->classes), "text/csv");
    });

    server.Get(R"(/sessions/([^/]+)/correlation)", [this](const httplib::Request& req, httplib::Response& res) {
      auto s = find(req.matches[1], res);
      if (!s) return;
      std::shared_ptr<const ScoreStage> stage;
      std::shared_ptr<const AlignedDataset> pruned;
      {
        std::lock_guard lock(s->m);
        stage = s->scores;
        pruned = s->pruned;
      }
      if (!stage) return send_error(res, 409, "filter step has not run");
      guarded(res, [&] {
        ojson out = correlation_json(correlation_matrix(stage->dataset));
        const auto& current = pruned ? *pruned : stage->dataset;
        const auto report = pruning_json(current);
        out["retained"] = report.at("retained");
        out["removed"] = report.at("removed");
        send_json(res, 200, out);
      });
    });

    server.Post(R"(/sessions/([^/]+)/prune)", [this](const httplib::Request& req, httplib::Response& res) {
      auto s = find(req.matches[1], res);
      if (!s) return;
      auto body = parse_body(req, res);
      if (!body) return;
      if (s->busy.exchange(true)) return send_error(res, 409, "step in progress");
      BusyGuard guard(*s);
      std::shared_ptr<const ScoreStage> stage;
      {
        std::lock_guard lock(s->m);
        stage = s->scores;
      }
      if (!stage) return send_error(res, 409, "filter step has not run");
      guarded(res, [&] {
        const auto params = prune_from_json(*body);
        auto pruned = std::make_shared<const AlignedDataset>(run_prune_stage(*stage, params));
        ojson out = pruning_json(*pruned);
        out["parameters"] = to_json(params);
        {
          std::lock_guard lock(s->m);
          s->prune = params;
          s->pruned = std::move(pruned);
          s->job.reset();
          s->state = State::pruned;
        }
        send_json(res, 200, out);
      });
    });

    server.Post(R"(/sessions/([^/]+)/train)", [this](const httplib::Request& req, httplib::Response& res) {
      auto s = find(req.matches[1], res);
      if (!s) return;
      auto body = parse_body(req, res);
      if (!body) return;
      guarded(res, [&] { submit_training(s, *body, res); });
    });

    server.Get(R"(/sessions/([^/]+)/results)", [this](const httplib::Request& req, httplib::Response& res) {
      auto s = find(req.matches[1], res);
      if (!s) return;
      std::shared_ptr<Job> job;
      {
        std::lock_guard lock(s->m);
        job = s->job;
      }
      if (!job) return send_error(res, 409, "training has not been submitted");
      if (!job->done.load()) {
        return send_json(res, 202, ojson{{"job_id", job->id}, {"status", "running"}});
      }
      std::lock_guard lock(job->m);
      if (!job->bundle) {
        return send_json(res, job->error_status, ojson{{"job_id", job->id}, {"status", "failed"}, {"error", job->error}});
      }
      const auto& b = *job->bundle;
      ojson files = ojson::array();
      for (const auto& [path, _] : b) files.push_back(path);
      ojson out{{"job_id", job->id}, {"status", "complete"}, {"files", std::move(files)}};
      for (const char* name : {"metrics", "causal", "pruning", "manifest"}) {
        if (auto it = b.find(std::string(name) + ".json"); it != b.end()) out[name] = ojson::parse(it->second);
      }
      if (auto it = b.find("metrics.txt"); it != b.end()) out["metrics_text"] = it->second;
      send_json(res, 200, out);
    });

    server.Get(R"(/sessions/([^/]+)/results/files/(.+))", [this](const httplib::Request& req, httplib::Response& res) {
      auto s = find(req.matches[1], res);
      if (!s) return;
      std::shared_ptr<Job> job;
      {
        std::lock_guard lock(s->m);
        job = s->job;
      }
      if (!job) return send_error(res, 409, "training has not been submitted");
      if (!job->done.load()) return send_json(res, 202, ojson{{"job_id", job->id}, {"status", "running"}});
      std::lock_guard lock(job->m);
      if (!job->bundle) return send_error(res, job->error_status, job->error);
      const std::string path = req.matches[2];
      auto it = job->bundle->find(path);
      if (it == job->bundle->end()) return send_error(res, 404, "no such result file");
      res.status = 200;
      res.set_content(it->second, content_type(path));
    });

    if (options.static_dir) server.set_mount_point("/", options.static_dir->string());
  }

  void submit_training(const std::shared_ptr<Session>& s, const nlohmann::json& body, httplib::Response& res) {
    const auto params = train_from_json(body);
    const ojson request = to_json(params);
    auto handle = [&](const std::shared_ptr<Job>& job, int status) {
      send_json(res, status,
                ojson{{"job_id", job->id},
                      {"status", job->done.load() ? "complete" : "running"},
                      {"results_url", fmt::format("/sessions/{}/results", s->id)}});
    };
    {
      std::lock_guard lock(s->m);
      if (s->job && s->job->request == request) return handle(s->job, 202);
    }
    if (s->busy.exchange(true)) return send_error(res, 409, "step in progress");
    BusyGuard guard(*s);

    std::shared_ptr<const ScoreStage> stage;
    std::shared_ptr<const AlignedDataset> model_data;
    std::optional<PruneParams> prune;
    auto job = std::make_shared<Job>();
    {
      std::lock_guard lock(s->m);
      if (!s->scores) return send_error(res, 409, "filter step has not run");
      stage = s->scores;
      prune = s->prune;
      model_data = s->pruned ? s->pruned : std::shared_ptr<const AlignedDataset>(stage, &stage->dataset);
      job->id = fmt::format("{}-{}", s->id, ++s->jobs_started);
      job->request = request;
      s->job = job;
      if (s->state == State::trained) s->state = s->pruned ? State::pruned : State::scored;
    }

    auto train_params = params;
    if (train_params.threads == 0) train_params.threads = options.threads;
    guard.release();
    std::lock_guard wl(workers_m);
    workers.emplace_back([this, s, job, stage, model_data, prune, train_params] {
      std::optional<Bundle> bundle;
      std::string error;
      int status = 500;
      try {
        const auto trained = run_train_stage(*model_data, train_params);
        bundle = build_bundle(*data, *stage, prune, *model_data, &train_params, &trained, utc_timestamp());
      } catch (const ValidationError& e) {
        error = e.what();
        status = 422;
      } catch (const DataError& e) {
        error = e.what();
        status = 422;
      } catch (const std::exception& e) {
        error = e.what();
      }
      {
        std::lock_guard lock(job->m);
        job->bundle = std::move(bundle);
        job->error = std::move(error);
        job->error_status = status;
      }
      {
        std::lock_guard lock(s->m);
        if (s->job == job && job->bundle) s->state = State::trained;
      }
      job->done.store(true);
      s->busy.store(false);
    });
    handle(job, 202);
  }
};

Service::Service(std::shared_ptr<const Datasets> data, ServiceOptions options)
    : impl_(std::make_unique<Impl>(std::move(data), std::move(options))) {}

Service::~Service() = default;

int Service::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw std::runtime_error(fmt::format("cannot bind {}:{}", host, port));
  impl_->listener = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

bool Service::serve(const std::string& host, int port) { return impl_->server.listen(host, port); }

void Service::stop() { impl_->server.stop(); }

}  // namespace prime
