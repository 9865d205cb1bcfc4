#pragma once

// Language-guided abstraction: one yes/no LM query per feature present in the
// scene caption, with and without a preference clause. Answers are cached per
// (utterance, preference, group, candidate).

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "plga/captioner.hpp"
#include "plga/lm_gateway.hpp"
#include "plga/prompts.hpp"

namespace plga {

struct AbstractionResult {
  std::string utterance;
  std::optional<std::string> preference;
  FeatureSet kept;
  AbstractState state;
  std::vector<ChatExchange> exchanges;
  int cache_hits = 0;
};

// Carries the exchanges completed before the failure.
class AbstractionError : public Error {
 public:
  AbstractionError(ErrorCode code, const std::string& what, std::vector<ChatExchange> partial)
      : Error(code, what), partial_(std::move(partial)) {}
  const std::vector<ChatExchange>& partial_transcript() const { return partial_; }

 private:
  std::vector<ChatExchange> partial_;
};

inline bool feature_sets_equal(const FeatureSet& a, const FeatureSet& b) {
  return a.kinds == b.kinds && a.textures == b.textures;
}

class AbstractionEngine {
 public:
  explicit AbstractionEngine(std::shared_ptr<LmGateway> gateway, const Catalog& cat = default_catalog(),
                             std::string cache_path = {})
      : gateway_(std::move(gateway)), cat_(cat), cache_path_(std::move(cache_path)) {
    if (!gateway_) throw Error(ErrorCode::contract, "abstraction engine needs a gateway");
    if (!cache_path_.empty() && std::filesystem::exists(cache_path_)) load_cache();
  }

  LmGateway& gateway() { return *gateway_; }
  std::shared_ptr<LmGateway> gateway_ptr() const { return gateway_; }
  const Catalog& catalog() const { return cat_; }

  AbstractionResult abstract(const Scene& scene, const std::string& utterance,
                             const std::optional<std::string>& preference) {
    if (utterance.empty()) throw Error(ErrorCode::contract, "utterance must be non-empty");
    AbstractionResult r{utterance, preference, {}, {}, {}, 0};
    const FeatureSet caption_fs = caption(scene, cat_);
    auto ask = [&](FeatureGroup group, const std::string& candidate) {
      const std::string key = cache_key(utterance, preference, group, candidate);
      {
        std::lock_guard lock(mu_);
        if (auto it = cache_.find(key); it != cache_.end()) {
          ++r.cache_hits;
          return it->second;
        }
      }
      bool answer = false;
      try {
        const auto p = render_abstraction_prompt(utterance, preference, group, candidate, cat_);
        auto ex = gateway_->complete(p.system, p.user);
        r.exchanges.push_back(ex);
        answer = parse_yes_no(ex.reply);
      } catch (const Error& e) {
        throw AbstractionError(e.code(), std::string("abstraction query failed: ") + e.what(), r.exchanges);
      }
      std::lock_guard lock(mu_);
      cache_.emplace(key, answer);
      ++new_exchanges_;
      return answer;
    };
    for (const auto& k : caption_fs.kinds)
      if (ask(FeatureGroup::object_type, k)) r.kept.kinds.insert(k);
    bool every_texture = !caption_fs.textures.names.empty();
    for (const auto& t : caption_fs.textures.names) {
      if (ask(FeatureGroup::object_color, t)) r.kept.textures.names.insert(t);
      else every_texture = false;
    }
    // Accepting every texture in view is recorded as ALL so that feature sets
    // compare equal across scenes with different texture inventories.
    if (every_texture) r.kept.textures = TextureSelection{true, {}};
    r.state = instantiate(scene, r.kept, cat_);
    for (const auto& o : scene.objects)
      if (r.state.kept_uids.count(o.uid)) r.kept.object_captions.push_back(object_caption(o, cat_));
    return r;
  }

  long new_exchanges() const {
    std::lock_guard lock(mu_);
    return new_exchanges_;
  }

  std::size_t cache_size() const {
    std::lock_guard lock(mu_);
    return cache_.size();
  }

  void clear_cache() {
    std::lock_guard lock(mu_);
    cache_.clear();
  }

  void save_cache() const {
    if (cache_path_.empty()) return;
    nlohmann::json j = nlohmann::json::array();
    {
      std::lock_guard lock(mu_);
      for (const auto& [k, v] : cache_) j.push_back({{"key", k}, {"answer", v}});
    }
    std::ofstream out(cache_path_);
    if (!out) throw Error(ErrorCode::config, "cannot write abstraction cache: " + cache_path_);
    out << j.dump(1) << '\n';
  }

 private:
  static std::string cache_key(const std::string& utterance, const std::optional<std::string>& preference,
                               FeatureGroup group, const std::string& candidate) {
    return utterance + '\x1f' + (preference ? "p:" + *preference : std::string("-")) + '\x1f' + to_string(group) +
           '\x1f' + candidate;
  }

  void load_cache() {
    std::ifstream in(cache_path_);
    auto j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_array()) throw Error(ErrorCode::config, "malformed abstraction cache: " + cache_path_);
    for (const auto& e : j) cache_[e.at("key").get<std::string>()] = e.at("answer").get<bool>();
  }

  std::shared_ptr<LmGateway> gateway_;
  const Catalog& cat_;
  std::string cache_path_;
  mutable std::mutex mu_;
  std::map<std::string, bool> cache_;
  long new_exchanges_ = 0;
};

inline AbstractionResult lga_abstract(const Scene& scene, const std::string& utterance, AbstractionEngine& engine) {
  return engine.abstract(scene, utterance, std::nullopt);
}

inline AbstractionResult plga_abstract(const Scene& scene, const std::string& utterance, const std::string& preference,
                                       AbstractionEngine& engine) {
  if (trim(preference).empty()) throw Error(ErrorCode::contract, "preference-conditioned abstraction needs a preference");
  return engine.abstract(scene, utterance, preference);
}

inline nlohmann::json transcript_json(const AbstractionResult& r) {
  nlohmann::json ex = nlohmann::json::array();
  for (const auto& e : r.exchanges) ex.push_back(to_json(e));
  nlohmann::json textures = r.kept.textures.all ? nlohmann::json("ALL") : nlohmann::json(r.kept.textures.names);
  return {{"utterance", r.utterance},
          {"preference", r.preference ? nlohmann::json(*r.preference) : nlohmann::json(nullptr)},
          {"kept_kinds", r.kept.kinds},
          {"kept_textures", textures},
          {"kept_uids", r.state.kept_uids},
          {"source_scene_id", r.state.source_scene_id},
          {"cache_hits", r.cache_hits},
          {"exchanges", ex}};
}

}  // namespace plga
