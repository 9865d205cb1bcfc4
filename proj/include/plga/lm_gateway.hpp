#pragma once

// Language-model access behind one call: complete(system, user) -> reply.
// Three backends: a live chat-completions endpoint, a scripted rule oracle
// for offline runs, and replay from recorded cassettes.

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "plga/core.hpp"
#include "plga/prompts.hpp"

namespace plga {

enum class BackendMode { live, scripted, replay };

inline const char* to_string(BackendMode m) {
  switch (m) {
    case BackendMode::live: return "live";
    case BackendMode::scripted: return "scripted";
    case BackendMode::replay: return "replay";
  }
  return "?";
}

inline BackendMode backend_mode_from_string(const std::string& s) {
  if (s == "live") return BackendMode::live;
  if (s == "scripted") return BackendMode::scripted;
  if (s == "replay") return BackendMode::replay;
  throw Error(ErrorCode::config, "unknown backend mode: " + s);
}

struct LmBackendConfig {
  BackendMode mode = BackendMode::scripted;
  std::string base_url;
  std::string model_name = "gpt-4";
  std::string api_key_env = "OPENAI_API_KEY";
  double temperature = 0.0;
  int max_retries = 3;
  std::string cassette_path;  // replay source; in live mode, exchanges are appended here
  std::string rules_path;
  int inflight_cap = 4;
  int backoff_ms = 250;
  int timeout_s = 60;
};

inline LmBackendConfig lm_config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{"mode",        "base_url",      "model_name", "api_key_env",
                                           "temperature", "max_retries",   "cassette_path", "rules_path",
                                           "inflight_cap", "backoff_ms",   "timeout_s"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw Error(ErrorCode::config, "unknown backend key: " + it.key());
  LmBackendConfig c;
  if (j.contains("mode")) c.mode = backend_mode_from_string(j["mode"].get<std::string>());
  c.base_url = j.value("base_url", c.base_url);
  c.model_name = j.value("model_name", c.model_name);
  c.api_key_env = j.value("api_key_env", c.api_key_env);
  c.temperature = j.value("temperature", c.temperature);
  c.max_retries = j.value("max_retries", c.max_retries);
  c.cassette_path = j.value("cassette_path", c.cassette_path);
  c.rules_path = j.value("rules_path", c.rules_path);
  c.inflight_cap = j.value("inflight_cap", c.inflight_cap);
  c.backoff_ms = j.value("backoff_ms", c.backoff_ms);
  c.timeout_s = j.value("timeout_s", c.timeout_s);
  return c;
}

inline nlohmann::json lm_config_to_json(const LmBackendConfig& c) {
  return {{"mode", to_string(c.mode)},       {"base_url", c.base_url},         {"model_name", c.model_name},
          {"api_key_env", c.api_key_env},    {"temperature", c.temperature},   {"max_retries", c.max_retries},
          {"cassette_path", c.cassette_path}, {"rules_path", c.rules_path},    {"inflight_cap", c.inflight_cap},
          {"backoff_ms", c.backoff_ms},      {"timeout_s", c.timeout_s}};
}

struct ChatExchange {
  std::string system_prompt;
  std::string user_prompt;
  std::string reply;
  BackendMode backend_tag = BackendMode::scripted;
  long latency_ms = 0;
};

inline nlohmann::json to_json(const ChatExchange& e) {
  return {{"system", e.system_prompt},
          {"user", e.user_prompt},
          {"reply", e.reply},
          {"backend", to_string(e.backend_tag)},
          {"latency_ms", e.latency_ms}};
}

inline std::string prompt_hash(const std::string& system, const std::string& user) {
  return hex64(fnv1a64(user, fnv1a64(std::string(1, '\x1f'), fnv1a64(system))));
}

// ---- scripted rules -------------------------------------------------------

// Matches a string field: absent = any, "*" = any, string = exact, list = any of.
struct StringMatcher {
  bool any = true;
  std::set<std::string> values;

  static StringMatcher from_json(const nlohmann::json* j) {
    StringMatcher m;
    if (!j || (j->is_string() && j->get<std::string>() == "*")) return m;
    m.any = false;
    if (j->is_string()) m.values.insert(j->get<std::string>());
    else m.values = j->get<std::set<std::string>>();
    return m;
  }
  bool matches(const std::string& v) const { return any || values.count(v) > 0; }
};

struct AbstractionRule {
  std::string id;
  StringMatcher utterance;
  // nullopt -> only queries without a preference; "*" -> any; else exact set.
  std::optional<StringMatcher> preference;
  StringMatcher group;
  StringMatcher candidates;
  std::set<std::string> except;
  bool answer = false;

  bool matches(const DecodedAbstractionQuery& q) const {
    if (!utterance.matches(q.utterance)) return false;
    if (!preference) {
      if (q.preference) return false;
    } else if (!preference->any) {
      if (!q.preference || !preference->matches(*q.preference)) return false;
    }
    if (!group.matches(to_string(q.group))) return false;
    if (!candidates.matches(q.candidate) || except.count(q.candidate)) return false;
    return true;
  }
};

struct PreferenceRule {
  std::string id;
  StringMatcher utterance;
  std::set<std::string> kinds_any;     // some caption in either scene ends with one of these kinds
  std::set<std::string> captions_any;  // some caption in either scene equals one of these
  std::vector<ScoredAnswer> hypotheses;

  bool matches(const DecodedPreferenceQuery& q) const {
    if (!utterance.matches(q.utterance)) return false;
    std::set<std::string> all = q.intersection;
    all.insert(q.first_only.begin(), q.first_only.end());
    all.insert(q.second_only.begin(), q.second_only.end());
    auto has_kind = [&](const std::string& kind) {
      for (const auto& c : all)
        if (c == kind || (c.size() > kind.size() && c.compare(c.size() - kind.size(), kind.size(), kind) == 0 &&
                          c[c.size() - kind.size() - 1] == ' '))
          return true;
      return false;
    };
    if (!kinds_any.empty() && std::none_of(kinds_any.begin(), kinds_any.end(), has_kind)) return false;
    if (!captions_any.empty() &&
        std::none_of(captions_any.begin(), captions_any.end(), [&](const auto& c) { return all.count(c) > 0; }))
      return false;
    return true;
  }
};

class ScriptedRules {
 public:
  static ScriptedRules from_json(const nlohmann::json& j) {
    ScriptedRules r;
    int n = 0;
    for (const auto& e : j.value("abstraction_rules", nlohmann::json::array())) {
      AbstractionRule a;
      a.id = e.value("id", "abstraction#" + std::to_string(n++));
      a.utterance = StringMatcher::from_json(e.contains("utterance") ? &e["utterance"] : nullptr);
      if (e.contains("preference") && !e["preference"].is_null())
        a.preference = StringMatcher::from_json(&e["preference"]);
      a.group = StringMatcher::from_json(e.contains("group") ? &e["group"] : nullptr);
      a.candidates = StringMatcher::from_json(e.contains("candidates") ? &e["candidates"] : nullptr);
      a.except = e.value("except", std::set<std::string>{});
      const auto ans = e.at("answer").get<std::string>();
      if (ans != "yes" && ans != "no") throw Error(ErrorCode::config, "rule " + a.id + ": answer must be yes or no");
      a.answer = ans == "yes";
      r.abstraction_.push_back(std::move(a));
    }
    n = 0;
    for (const auto& e : j.value("preference_rules", nlohmann::json::array())) {
      PreferenceRule p;
      p.id = e.value("id", "preference#" + std::to_string(n++));
      p.utterance = StringMatcher::from_json(e.contains("utterance") ? &e["utterance"] : nullptr);
      p.kinds_any = e.value("kinds_any", std::set<std::string>{});
      p.captions_any = e.value("captions_any", std::set<std::string>{});
      for (const auto& h : e.at("hypotheses")) p.hypotheses.push_back({h.at(0).get<std::string>(), h.at(1).get<double>()});
      if (p.hypotheses.empty()) throw Error(ErrorCode::config, "rule " + p.id + " has no hypotheses");
      r.preference_.push_back(std::move(p));
    }
    return r;
  }

  static ScriptedRules load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::config, "cannot open rules file: " + path);
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::config, "malformed rules file " + path + ": " + e.what());
    }
  }

  // Exactly one rule must match; zero or several is an error.
  std::string reply(const std::string& system, const std::string& user) const {
    if (auto q = decode_abstraction_query(user)) {
      const AbstractionRule* hit = nullptr;
      for (const auto& r : abstraction_)
        if (r.matches(*q)) {
          if (hit) throw Error(ErrorCode::scripted_miss, "ambiguous scripted rules " + hit->id + " and " + r.id);
          hit = &r;
        }
      if (!hit)
        throw Error(ErrorCode::scripted_miss, "no scripted rule for '" + q->utterance + "' / " + to_string(q->group) +
                                                  " '" + q->candidate + "'" +
                                                  (q->preference ? " with preference '" + *q->preference + "'" : ""));
      return "Considering the command \"" + abstraction_rule(q->utterance, q->preference) + "\", a target object with " +
             to_string(q->group) + " \"" + q->candidate + "\" is " + (hit->answer ? "" : "not ") +
             "consistent with it.\nFinal answer: " + (hit->answer ? "yes" : "no");
    }
    if (auto q = decode_preference_query(system, user)) {
      const PreferenceRule* hit = nullptr;
      for (const auto& r : preference_)
        if (r.matches(*q)) {
          if (hit) throw Error(ErrorCode::scripted_miss, "ambiguous scripted rules " + hit->id + " and " + r.id);
          hit = &r;
        }
      if (!hit) throw Error(ErrorCode::scripted_miss, "no scripted preference rule for '" + q->utterance + "'");
      nlohmann::json list = nlohmann::json::array();
      for (const auto& h : hit->hypotheses) list.push_back({h.text, h.score});
      return "Comparing the two scenes, the likely preferences are:\n" + list.dump() + "\n";
    }
    throw Error(ErrorCode::scripted_miss, "scripted backend cannot interpret prompt");
  }

  const std::vector<AbstractionRule>& abstraction_rules() const { return abstraction_; }
  const std::vector<PreferenceRule>& preference_rules() const { return preference_; }

 private:
  std::vector<AbstractionRule> abstraction_;
  std::vector<PreferenceRule> preference_;
};

// ---- cassettes ------------------------------------------------------------

struct CassetteEntry {
  std::string prompt_hash;
  std::string system;
  std::string user;
  std::string reply;
};

class Cassette {
 public:
  Cassette() = default;

  static Cassette load(const std::string& path) {
    Cassette c;
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::config, "cannot open cassette: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (trim(line).empty()) continue;
      auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded()) throw Error(ErrorCode::data, path + ":" + std::to_string(lineno) + ": malformed cassette line");
      CassetteEntry e{j.value("prompt_hash", std::string()), j.at("system").get<std::string>(),
                      j.at("user").get<std::string>(), j.at("reply").get<std::string>()};
      if (e.prompt_hash.empty()) e.prompt_hash = prompt_hash(e.system, e.user);
      c.entries_[e.prompt_hash] = std::move(e);
    }
    return c;
  }

  const CassetteEntry* find(const std::string& system, const std::string& user) const {
    auto it = entries_.find(prompt_hash(system, user));
    return it == entries_.end() ? nullptr : &it->second;
  }

  std::size_t size() const { return entries_.size(); }

  static void append(const std::string& path, const std::string& system, const std::string& user,
                     const std::string& reply) {
    std::ofstream out(path, std::ios::app);
    if (!out) throw Error(ErrorCode::config, "cannot append to cassette: " + path);
    nlohmann::json j{{"prompt_hash", prompt_hash(system, user)}, {"system", system}, {"user", user}, {"reply", reply}};
    out << j.dump() << '\n';
  }

 private:
  std::map<std::string, CassetteEntry> entries_;
};

// ---- gateway --------------------------------------------------------------

struct ParsedUrl {
  std::string scheme_host_port;
  std::string path_prefix;
};

inline ParsedUrl parse_base_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorCode::config, "base_url needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  ParsedUrl p;
  p.scheme_host_port = url.substr(0, path_start);
  p.path_prefix = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!p.path_prefix.empty() && p.path_prefix.back() == '/') p.path_prefix.pop_back();
  return p;
}

class LmGateway {
 public:
  explicit LmGateway(LmBackendConfig cfg) : cfg_(std::move(cfg)), slots_(std::max(1, cfg_.inflight_cap)) {
    switch (cfg_.mode) {
      case BackendMode::scripted:
        if (cfg_.rules_path.empty()) throw Error(ErrorCode::config, "scripted backend requires rules_path");
        rules_ = ScriptedRules::load(cfg_.rules_path);
        break;
      case BackendMode::replay:
        if (cfg_.cassette_path.empty()) throw Error(ErrorCode::config, "replay backend requires cassette_path");
        cassette_ = Cassette::load(cfg_.cassette_path);
        break;
      case BackendMode::live:
        if (cfg_.base_url.empty()) throw Error(ErrorCode::config, "live backend requires base_url");
        if (!std::getenv(cfg_.api_key_env.c_str()))
          throw Error(ErrorCode::config, "live backend requires the " + cfg_.api_key_env + " environment variable");
        url_ = parse_base_url(cfg_.base_url);
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
        if (url_.scheme_host_port.rfind("https://", 0) == 0)
          throw Error(ErrorCode::config, "https base_url needs a build with OpenSSL");
#endif
        break;
    }
  }

  // Scripted gateway over in-memory rules.
  LmGateway(LmBackendConfig cfg, ScriptedRules rules) : cfg_(std::move(cfg)), slots_(std::max(1, cfg_.inflight_cap)) {
    cfg_.mode = BackendMode::scripted;
    rules_ = std::move(rules);
  }

  const LmBackendConfig& config() const { return cfg_; }

  ChatExchange complete(const std::string& system, const std::string& user) {
    if (system.empty() || user.empty()) throw Error(ErrorCode::contract, "prompts must be non-empty");
    const auto t0 = std::chrono::steady_clock::now();
    slots_.acquire();
    struct Release {
      std::counting_semaphore<1024>& s;
      ~Release() { s.release(); }
    } release{slots_};
    ChatExchange ex{system, user, {}, cfg_.mode, 0};
    switch (cfg_.mode) {
      case BackendMode::scripted: ex.reply = rules_->reply(system, user); break;
      case BackendMode::replay: {
        const auto* e = cassette_->find(system, user);
        if (!e) throw Error(ErrorCode::replay_miss, "no cassette entry for prompt hash " + prompt_hash(system, user));
        ex.reply = e->reply;
        break;
      }
      case BackendMode::live:
        ex.reply = live_call(system, user);
        if (!cfg_.cassette_path.empty()) {
          std::lock_guard lock(record_mu_);
          Cassette::append(cfg_.cassette_path, system, user, ex.reply);
        }
        break;
    }
    ex.latency_ms =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
    return ex;
  }

  // Count of HTTP requests issued by every gateway in the process.
  static std::atomic<long>& network_requests() {
    static std::atomic<long> n{0};
    return n;
  }

 private:
  std::string live_call(const std::string& system, const std::string& user) {
    nlohmann::json body{{"model", cfg_.model_name},
                        {"temperature", cfg_.temperature},
                        {"messages", {{{"role", "system"}, {"content", system}}, {{"role", "user"}, {"content", user}}}}};
    const std::string key = std::getenv(cfg_.api_key_env.c_str()) ? std::getenv(cfg_.api_key_env.c_str()) : "";
    httplib::Client cli(url_.scheme_host_port);
    cli.set_connection_timeout(cfg_.timeout_s, 0);
    cli.set_read_timeout(cfg_.timeout_s, 0);
    httplib::Headers headers{{"Authorization", "Bearer " + key}};
    std::string last_error;
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
      if (attempt > 0) std::this_thread::sleep_for(std::chrono::milliseconds(cfg_.backoff_ms << (attempt - 1)));
      ++network_requests();
      auto res = cli.Post(url_.path_prefix + "/chat/completions", headers, body.dump(), "application/json");
      if (!res) {
        last_error = "connection error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status == 429 || res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200)
        throw Error(ErrorCode::transport, "HTTP " + std::to_string(res->status) + ": " + res->body);
      auto j = nlohmann::json::parse(res->body, nullptr, false);
      if (j.is_discarded()) throw Error(ErrorCode::transport, "malformed completion response");
      try {
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
      } catch (const nlohmann::json::exception&) {
        throw Error(ErrorCode::transport, "completion response without choices[0].message.content");
      }
    }
    throw Error(ErrorCode::transport,
                "gave up after " + std::to_string(cfg_.max_retries + 1) + " attempts: " + last_error);
  }

  LmBackendConfig cfg_;
  std::counting_semaphore<1024> slots_;
  std::optional<ScriptedRules> rules_;
  std::optional<Cassette> cassette_;
  ParsedUrl url_;
  std::mutex record_mu_;
};

inline ChatExchange complete(const LmBackendConfig& cfg, const std::string& system, const std::string& user) {
  LmGateway gw(cfg);
  return gw.complete(system, user);
}

}  // namespace plga
