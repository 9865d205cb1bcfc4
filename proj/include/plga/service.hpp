#pragma once

// Elicitation sessions over HTTP. A session is one pipeline run; an active run
// whose hypothesis entropy reaches epsilon is checkpointed at the human port
// and resumed when an answer is posted. Every mutation is appended to a
// JSON-lines journal; replaying the journal restores the index.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "plga/experiment.hpp"
#include "plga/serialize.hpp"

namespace plga {

enum class SessionState { awaiting_delta, awaiting_human, resolved, training, done, failed };

inline const char* to_string(SessionState s) {
  switch (s) {
    case SessionState::awaiting_delta: return "awaiting_delta";
    case SessionState::awaiting_human: return "awaiting_human";
    case SessionState::resolved: return "resolved";
    case SessionState::training: return "training";
    case SessionState::done: return "done";
    case SessionState::failed: return "failed";
  }
  return "?";
}

inline SessionState session_state_from_string(const std::string& s) {
  for (auto st : {SessionState::awaiting_delta, SessionState::awaiting_human, SessionState::resolved,
                  SessionState::training, SessionState::done, SessionState::failed})
    if (s == to_string(st)) return st;
  throw Error(ErrorCode::data, "unknown session state: " + s);
}

// Forward along the listed order only; failed from anything not terminal.
inline bool legal_transition(SessionState from, SessionState to) {
  if (from == SessionState::done || from == SessionState::failed) return false;
  if (to == SessionState::failed) return true;
  return static_cast<int>(to) > static_cast<int>(from);
}

struct PendingQuery {
  nlohmann::json first_scene;   // {caption, grid}
  nlohmann::json second_scene;
  PreferenceDistribution distribution;
  double epsilon = 1.0;
};

struct Session {
  std::string id;
  std::string spec_id;
  Method method = Method::gcbc;
  std::uint64_t seed = 0;
  SessionState state = SessionState::awaiting_delta;
  std::optional<PendingQuery> pending;
  std::optional<PreferenceResolution> resolution;
  std::optional<nlohmann::json> report;
  std::optional<std::string> answer_key;
  std::optional<nlohmann::json> error;  // {code, message}
  std::string created_at;
  std::string updated_at;
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

inline nlohmann::json to_json(const PendingQuery& p) {
  return {{"scenes", {p.first_scene, p.second_scene}},
          {"hypotheses", to_json(p.distribution)["hypotheses"]},
          {"entropy", p.distribution.entropy},
          {"epsilon", p.epsilon},
          {"distribution", to_json(p.distribution)}};
}

inline PendingQuery pending_from_json(const nlohmann::json& j) {
  PendingQuery p;
  p.first_scene = j.at("scenes").at(0);
  p.second_scene = j.at("scenes").at(1);
  p.distribution = distribution_from_json(j.at("distribution"));
  p.epsilon = j.at("epsilon").get<double>();
  return p;
}

// Full record, as journaled.
inline nlohmann::json to_json(const Session& s) {
  auto opt = [](const auto& o, auto f) { return o ? f(*o) : nlohmann::json(nullptr); };
  return {{"id", s.id},
          {"spec_id", s.spec_id},
          {"method", to_string(s.method)},
          {"seed", s.seed},
          {"state", to_string(s.state)},
          {"pending", opt(s.pending, [](const PendingQuery& p) { return to_json(p); })},
          {"resolution", opt(s.resolution, [](const PreferenceResolution& r) { return to_json(r); })},
          {"report", opt(s.report, [](const nlohmann::json& r) { return r; })},
          {"answer_key", opt(s.answer_key, [](const std::string& k) { return nlohmann::json(k); })},
          {"error", opt(s.error, [](const nlohmann::json& e) { return e; })},
          {"created_at", s.created_at},
          {"updated_at", s.updated_at}};
}

inline Session session_from_json(const nlohmann::json& j) {
  Session s;
  s.id = j.at("id").get<std::string>();
  s.spec_id = j.at("spec_id").get<std::string>();
  s.method = method_from_string(j.at("method").get<std::string>());
  s.seed = j.at("seed").get<std::uint64_t>();
  s.state = session_state_from_string(j.at("state").get<std::string>());
  auto present = [&](const char* k) { return j.contains(k) && !j[k].is_null(); };
  if (present("pending")) s.pending = pending_from_json(j["pending"]);
  if (present("resolution")) s.resolution = resolution_from_json(j["resolution"]);
  if (present("report")) s.report = j["report"];
  if (present("answer_key")) s.answer_key = j["answer_key"].get<std::string>();
  if (present("error")) s.error = j["error"];
  s.created_at = j.value("created_at", std::string());
  s.updated_at = j.value("updated_at", std::string());
  return s;
}

// What GET /sessions/{id} returns: the record minus the report body.
inline nlohmann::json session_view(const Session& s) {
  auto j = to_json(s);
  j.erase("report");
  j.erase("answer_key");
  j["report_available"] = s.report.has_value();
  j["theta_hat"] = s.resolution ? nlohmann::json(s.resolution->theta_hat) : nlohmann::json(nullptr);
  return j;
}

// Append-only journal plus in-memory index. Last record per id wins.
class SessionStore {
 public:
  explicit SessionStore(std::string path = {}) : path_(std::move(path)) {
    if (path_.empty() || !std::filesystem::exists(path_)) return;
    std::ifstream in(path_);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (trim(line).empty()) continue;
      auto j = nlohmann::json::parse(line, nullptr, false);
      // A torn final line from a crash is dropped; anything earlier is corruption.
      if (j.is_discarded()) {
        if (in.peek() == EOF) break;
        throw Error(ErrorCode::data, path_ + ":" + std::to_string(lineno) + ": malformed journal line");
      }
      auto s = session_from_json(j.at("session"));
      index_[s.id] = std::move(s);
    }
  }

  const std::string& path() const { return path_; }

  void put(const Session& s) {
    std::unique_lock lock(mu_);
    if (!path_.empty()) {
      std::ofstream out(path_, std::ios::app);
      if (!out) throw Error(ErrorCode::config, "cannot append to session journal: " + path_);
      out << nlohmann::json{{"session", to_json(s)}}.dump() << '\n';
    }
    index_[s.id] = s;
  }

  std::optional<Session> get(const std::string& id) const {
    std::shared_lock lock(mu_);
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::vector<Session> all() const {
    std::shared_lock lock(mu_);
    std::vector<Session> out;
    for (const auto& [_, s] : index_) out.push_back(s);
    return out;
  }

 private:
  std::string path_;
  mutable std::shared_mutex mu_;
  std::map<std::string, Session> index_;
};

struct ServiceConfig {
  std::string specs_dir = "fixtures/specs";
  std::string store_path;  // empty: in-memory only
  std::string ui_dir;      // empty or missing: /ui not mounted
  TrainConfig train;
};

inline ServiceConfig service_config_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j, {"specs_dir", "store_path", "ui_dir", "train"}, "service config");
  ServiceConfig c;
  c.specs_dir = j.value("specs_dir", c.specs_dir);
  c.store_path = j.value("store_path", c.store_path);
  c.ui_dir = j.value("ui_dir", c.ui_dir);
  if (j.contains("train")) c.train = train_config_from_json(j["train"]);
  return c;
}

// Stands in for the human inside a session: asking always checkpoints.
class CheckpointPort : public HumanQueryPort {
 public:
  std::string ask(const PreferenceDistribution& dist, const std::string&) override {
    throw NeedsHuman(dist, "waiting for a session answer");
  }
};

inline int http_status(ErrorCode c) {
  switch (c) {
    case ErrorCode::not_found: return 404;
    case ErrorCode::conflict: return 409;
    case ErrorCode::validation: return 422;
    case ErrorCode::config:
    case ErrorCode::data: return 400;
    default: return 500;
  }
}

inline nlohmann::json error_body(ErrorCode c, const std::string& message) {
  return {{"code", to_string(c)}, {"message", message}};
}

class Service {
 public:
  // engine may be null; only gcbc sessions can run then.
  Service(ServiceConfig cfg, std::shared_ptr<AbstractionEngine> engine, const Catalog& cat = default_catalog())
      : cfg_(std::move(cfg)), engine_(std::move(engine)), cat_(cat), store_(cfg_.store_path) {
    load_specs();
    resume_interrupted();
  }

  ~Service() {
    stop();
    wait_idle();
  }

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  const std::map<std::string, ExperimentSpec>& specs() const { return specs_; }
  SessionStore& store() { return store_; }

  Session create_session(const std::string& spec_id, Method method, std::uint64_t seed) {
    if (!specs_.count(spec_id)) throw Error(ErrorCode::not_found, "unknown spec: " + spec_id);
    if (method != Method::gcbc && !engine_)
      throw Error(ErrorCode::config, "method " + std::string(to_string(method)) + " needs a language-model backend");
    Session s;
    s.id = new_id();
    s.spec_id = spec_id;
    s.method = method;
    s.seed = seed;
    s.created_at = s.updated_at = utc_timestamp();
    store_.put(s);
    launch(s.id);
    return s;
  }

  Session get_session(const std::string& id) const {
    auto s = store_.get(id);
    if (!s) throw Error(ErrorCode::not_found, "unknown session: " + id);
    return *s;
  }

  // A repeated key that already took effect returns the current record
  // without applying the answer again.
  Session post_answer(const std::string& id, const std::string& text, const std::optional<std::string>& key = {}) {
    std::lock_guard lock(answer_mu_);
    auto s = get_session(id);
    if (key && s.answer_key && *s.answer_key == *key) return s;
    if (s.state != SessionState::awaiting_human)
      throw Error(ErrorCode::conflict, "session " + id + " is " + to_string(s.state) + ", not awaiting_human");
    if (trim(text).empty()) throw Error(ErrorCode::validation, "preference answer is empty");
    PreferenceResolution r;
    r.theta_hat = text;
    r.mode = ResolutionMode::active;
    r.distribution = s.pending->distribution;
    r.human_answer_raw = text;
    s.resolution = r;
    s.answer_key = key;
    move_to(s, SessionState::resolved);
    launch(id);
    return s;
  }

  std::optional<nlohmann::json> report(const std::string& id) const {
    auto s = get_session(id);
    return s.report;
  }

  // Joins every background run started so far.
  void wait_idle() {
    for (;;) {
      std::list<std::future<void>> batch;
      {
        std::lock_guard lock(workers_mu_);
        batch.swap(workers_);
      }
      if (batch.empty()) return;
      for (auto& f : batch) f.wait();
    }
  }

  // ---- HTTP ----------------------------------------------------------------

  void register_routes(httplib::Server& srv) {
    auto guarded = [](auto fn) {
      return [fn](const httplib::Request& req, httplib::Response& res) {
        try {
          fn(req, res);
        } catch (const Error& e) {
          reply(res, http_status(e.code()), error_body(e.code(), e.what()));
        } catch (const nlohmann::json::exception& e) {
          reply(res, 400, error_body(ErrorCode::data, std::string("malformed request body: ") + e.what()));
        } catch (const std::exception& e) {
          reply(res, 500, {{"code", "internal"}, {"message", e.what()}});
        }
      };
    };

    srv.Get("/healthz", guarded([](const httplib::Request&, httplib::Response& res) {
              reply(res, 200, {{"status", "ok"}});
            }));

    srv.Get("/specs", guarded([this](const httplib::Request&, httplib::Response& res) {
              nlohmann::json list = nlohmann::json::array();
              for (const auto& [id, sp] : specs_)
                list.push_back({{"id", id},
                                {"family", to_string(sp.task.family)},
                                {"utterance", sp.task.utterance},
                                {"ambiguity", sp.ambiguity}});
              reply(res, 200, {{"specs", list}});
            }));

    srv.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
               const auto body = parse_body(req);
               detail::reject_unknown(body, {"spec_id", "method", "seed"}, "session request");
               if (!body.contains("spec_id") || !body["spec_id"].is_string())
                 throw Error(ErrorCode::validation, "spec_id is required");
               const auto method = method_from_string(body.value("method", std::string("plga_active")));
               const auto seed = body.value("seed", std::uint64_t{0});
               auto s = create_session(body["spec_id"].get<std::string>(), method, seed);
               reply(res, 201, session_view(s));
             }));

    srv.Get(R"(/sessions/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
              reply(res, 200, session_view(get_session(req.matches[1])));
            }));

    srv.Post(R"(/sessions/([^/]+)/answer)", guarded([this](const httplib::Request& req, httplib::Response& res) {
               const auto body = parse_body(req);
               detail::reject_unknown(body, {"answer", "idempotency_key"}, "answer request");
               if (!body.contains("answer") || !body["answer"].is_string())
                 throw Error(ErrorCode::validation, "answer must be a string");
               std::optional<std::string> key;
               if (body.contains("idempotency_key") && !body["idempotency_key"].is_null())
                 key = body["idempotency_key"].get<std::string>();
               reply(res, 200, session_view(post_answer(req.matches[1], body["answer"].get<std::string>(), key)));
             }));

    srv.Get(R"(/reports/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
              auto r = report(req.matches[1]);
              if (!r) throw Error(ErrorCode::not_found, "report not available yet for session " + req.matches[1].str());
              reply(res, 200, *r);
            }));

    if (!cfg_.ui_dir.empty() && std::filesystem::is_directory(cfg_.ui_dir)) srv.set_mount_point("/ui", cfg_.ui_dir);
  }

  // Blocks until stop().
  bool listen(const std::string& host, int port) {
    {
      std::lock_guard lock(server_mu_);
      server_ = std::make_unique<httplib::Server>();
      register_routes(*server_);
    }
    return server_->listen(host, port);
  }

  // Binds first so the caller learns a bad port synchronously.
  bool bind(const std::string& host, int port) {
    std::lock_guard lock(server_mu_);
    server_ = std::make_unique<httplib::Server>();
    register_routes(*server_);
    return server_->bind_to_port(host, port);
  }

  // Ephemeral port; -1 on failure.
  int bind_any(const std::string& host) {
    std::lock_guard lock(server_mu_);
    server_ = std::make_unique<httplib::Server>();
    register_routes(*server_);
    return server_->bind_to_any_port(host);
  }

  bool listen_after_bind() { return server_ && server_->listen_after_bind(); }

  void stop() {
    std::lock_guard lock(server_mu_);
    if (server_) server_->stop();
  }

 private:
  static void reply(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static nlohmann::json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return nlohmann::json::object();
    auto j = nlohmann::json::parse(req.body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::validation, "request body must be a JSON object");
    return j;
  }

  void load_specs() {
    if (!std::filesystem::is_directory(cfg_.specs_dir))
      throw Error(ErrorCode::config, "specs directory not found: " + cfg_.specs_dir);
    for (const auto& e : std::filesystem::directory_iterator(cfg_.specs_dir)) {
      if (e.path().extension() != ".json") continue;
      auto sp = load_spec(e.path().string(), cat_);
      specs_.emplace(sp.id, std::move(sp));
    }
  }

  void resume_interrupted() {
    for (const auto& s : store_.all())
      if (s.state == SessionState::awaiting_delta || s.state == SessionState::resolved ||
          s.state == SessionState::training)
        launch(s.id);
  }

  std::string new_id() {
    static thread_local std::mt19937_64 gen{std::random_device{}()};
    return "s-" + hex64(gen() ^ (counter_.fetch_add(1) * 0x9E3779B97F4A7C15ULL));
  }

  void move_to(Session& s, SessionState to) {
    if (!legal_transition(s.state, to))
      throw Error(ErrorCode::contract,
                  std::string("illegal session transition ") + to_string(s.state) + " -> " + to_string(to));
    s.state = to;
    s.updated_at = utc_timestamp();
    store_.put(s);
  }

  void launch(const std::string& id) {
    std::lock_guard lock(workers_mu_);
    workers_.remove_if([](std::future<void>& f) {
      return f.wait_for(std::chrono::seconds(0)) == std::future_status::ready;
    });
    workers_.push_back(std::async(std::launch::async, [this, id] { advance(id); }));
  }

  nlohmann::json scene_view(const Scene& scene) const {
    return {{"caption", caption(scene, cat_).object_captions}, {"grid", scene_grid_json(scene, cat_)}};
  }

  // Runs a session from its current state until it finishes or checkpoints.
  void advance(const std::string& id) {
    auto s = get_session(id);
    try {
      const auto& spec = specs_.at(s.spec_id);
      const auto data = generate_dataset(spec, s.seed, cat_);
      CheckpointPort port;
      RunOptions opt;
      opt.train = cfg_.train;
      if (s.resolution) opt.preset_resolution = s.resolution;
      opt.on_resolved = [&](const PreferenceResolution& r) {
        if (s.state == SessionState::awaiting_delta) {
          s.resolution = r;
          move_to(s, SessionState::resolved);
        }
        if (s.state != SessionState::training) move_to(s, SessionState::training);
      };
      if (!is_plga(s.method) && s.state != SessionState::training) move_to(s, SessionState::training);
      RunRecord rec;
      try {
        rec = run_and_evaluate(spec, data, s.method, engine_.get(), &port, opt);
      } catch (const NeedsHuman& nh) {
        const auto& dist = nh.distribution();
        PendingQuery p;
        p.distribution = dist;
        p.epsilon = spec.epsilon;
        if (dist.source_pair) {
          p.first_scene = scene_view(data.demos.at(dist.source_pair->pair.tau).trajectory.initial);
          p.second_scene = scene_view(data.demos.at(dist.source_pair->pair.tau_prime).trajectory.initial);
        }
        s.pending = std::move(p);
        move_to(s, SessionState::awaiting_human);
        return;
      }
      EvalReport report{spec.id, {std::move(rec)}, {}};
      finalize_summary(report);
      s.report = to_json(report);
      s.report->operator[]("session_id") = s.id;
      move_to(s, SessionState::done);
    } catch (const Error& e) {
      fail(s, error_body(e.code(), e.what()));
    } catch (const std::exception& e) {
      fail(s, {{"code", "internal"}, {"message", e.what()}});
    }
  }

  void fail(Session& s, nlohmann::json err) {
    s.error = std::move(err);
    if (legal_transition(s.state, SessionState::failed)) move_to(s, SessionState::failed);
  }

  ServiceConfig cfg_;
  std::shared_ptr<AbstractionEngine> engine_;
  const Catalog& cat_;
  SessionStore store_;
  std::map<std::string, ExperimentSpec> specs_;
  std::atomic<std::uint64_t> counter_{0};
  std::mutex answer_mu_;
  std::mutex workers_mu_;
  std::list<std::future<void>> workers_;
  std::mutex server_mu_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace plga
