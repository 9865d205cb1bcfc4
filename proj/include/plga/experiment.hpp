#pragma once

// Experiment harness: spec fixtures, demonstration datasets, the four
// training pipelines (gcbc, lga, plga_passive, plga_active), success-rate
// evaluation on held-out scenes, reports, and the entropy probe.

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "plga/abstraction.hpp"
#include "plga/catalog.hpp"
#include "plga/policy.hpp"
#include "plga/preference.hpp"
#include "plga/serialize.hpp"
#include "plga/world.hpp"

namespace plga {

// ---- spec -----------------------------------------------------------------

struct ExperimentSpec {
  std::string id;
  TaskSpec task;
  PreferenceProfile profile;       // full (test) distribution
  PreferenceProfile train_subset;  // seen during training
  int n_present = 10;
  int n_absent = 10;
  int n_test = 5;
  double kappa = 0.2;
  double epsilon = 1.0;
  double alpha = 0.1;
  std::size_t n_pair_samples = 190;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::string ambiguity = "generic";  // generic | ambiguous
  std::string true_preference;        // answer given by a scripted human
  NameSet true_objects = NameSet::everything();
  NameSet true_textures = NameSet::everything();
  nlohmann::json true_distribution;   // as written in the fixture
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorCode::config, where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw Error(ErrorCode::config, "unknown key '" + it.key() + "' in " + where);
}

inline void check_names(const NameSet& s, const std::vector<std::string>& universe, const std::string& where) {
  for (const auto& n : s.referenced())
    if (std::find(universe.begin(), universe.end(), n) == universe.end())
      throw Error(ErrorCode::config, "unknown name '" + n + "' in " + where);
}

inline std::vector<std::string> expand_ordered(const NameSet& s, const std::vector<std::string>& universe) {
  std::vector<std::string> out;
  for (const auto& n : universe)
    if (s.contains(n)) out.push_back(n);
  return out;
}

inline FeaturePool pool_from_json(const nlohmann::json& j, const Catalog& cat, const std::string& where) {
  reject_unknown(j, {"kinds", "textures", "scoped"}, where);
  const auto kinds = name_set_from_json(j.at("kinds"));
  const auto textures = name_set_from_json(j.at("textures"));
  check_names(kinds, cat.kind_names(), where);
  check_names(textures, cat.texture_names(), where);
  return {expand_ordered(kinds, cat.kind_names()), expand_ordered(textures, cat.texture_names()),
          j.value("scoped", false)};
}

inline nlohmann::json pool_to_json(const FeaturePool& p) {
  return {{"kinds", p.kinds}, {"textures", p.textures}, {"scoped", p.scoped}};
}

inline PreferenceProfile profile_from_json(const nlohmann::json& j, const Catalog& cat, const std::string& where) {
  reject_unknown(j, {"name", "allowed_kinds", "allowed_textures", "avoid_kinds", "avoid_textures"}, where);
  PreferenceProfile p;
  p.name = j.value("name", std::string());
  p.allowed_kinds = name_set_from_json(j.at("allowed_kinds"));
  if (j.contains("allowed_textures")) p.allowed_textures = name_set_from_json(j["allowed_textures"]);
  p.avoid_kinds = j.value("avoid_kinds", std::set<std::string>{});
  if (j.contains("avoid_textures")) p.avoid_textures = name_set_from_json(j["avoid_textures"]);
  check_names(p.allowed_kinds, cat.kind_names(), where + ".allowed_kinds");
  check_names(p.allowed_textures, cat.texture_names(), where + ".allowed_textures");
  check_names(NameSet::of(p.avoid_kinds), cat.kind_names(), where + ".avoid_kinds");
  check_names(p.avoid_textures, cat.texture_names(), where + ".avoid_textures");
  if (p.allowed_kinds.empty_for(cat.kind_names())) throw Error(ErrorCode::config, where + " allows no object kind");
  return p;
}

inline nlohmann::json profile_to_json(const PreferenceProfile& p) {
  return {{"name", p.name},
          {"allowed_kinds", name_set_to_json(p.allowed_kinds)},
          {"allowed_textures", name_set_to_json(p.allowed_textures)},
          {"avoid_kinds", p.avoid_kinds},
          {"avoid_textures", name_set_to_json(p.avoid_textures)}};
}

}  // namespace detail

inline ExperimentSpec spec_from_json(const nlohmann::json& j, const Catalog& cat = default_catalog()) {
  try {
    detail::reject_unknown(j,
                           {"id", "family", "utterance", "scene", "profile", "train_subset", "n_present", "n_absent",
                            "n_test", "kappa", "epsilon", "alpha", "n_pair_samples", "seeds", "ambiguity",
                            "true_preference", "true_distribution", "notes"},
                           "spec");
    ExperimentSpec s;
    s.id = j.at("id").get<std::string>();
    s.task.family = task_family_from_string(j.at("family").get<std::string>());
    s.task.utterance = j.at("utterance").get<std::string>();
    if (trim(s.task.utterance).empty()) throw Error(ErrorCode::config, "spec utterance is empty");
    const auto& sc = j.at("scene");
    detail::reject_unknown(sc,
                           {"subject", "target", "contrast", "benign", "target_companion", "contrast_companion",
                            "distractor"},
                           "scene");
    auto pool = [&](const char* name) {
      return sc.contains(name) ? detail::pool_from_json(sc[name], cat, std::string("scene.") + name) : FeaturePool{};
    };
    s.task.scene = {pool("subject"),           pool("target"),             pool("contrast"), pool("benign"),
                    pool("target_companion"), pool("contrast_companion"), pool("distractor")};
    s.profile = detail::profile_from_json(j.at("profile"), cat, "profile");
    s.train_subset = j.contains("train_subset") ? detail::profile_from_json(j["train_subset"], cat, "train_subset")
                                                : s.profile;
    const auto kinds = cat.kind_names(), textures = cat.texture_names();
    if (!s.train_subset.allowed_kinds.subset_of(s.profile.allowed_kinds, kinds) ||
        !s.train_subset.allowed_textures.subset_of(s.profile.allowed_textures, textures))
      throw Error(ErrorCode::config, "train_subset is not contained in the profile");
    s.n_present = j.value("n_present", s.n_present);
    s.n_absent = j.value("n_absent", s.n_absent);
    s.n_test = j.value("n_test", s.n_test);
    s.kappa = j.value("kappa", s.kappa);
    s.epsilon = j.value("epsilon", s.epsilon);
    s.alpha = j.value("alpha", s.alpha);
    s.n_pair_samples = j.value("n_pair_samples", s.n_pair_samples);
    s.seeds = j.value("seeds", s.seeds);
    s.ambiguity = j.value("ambiguity", s.ambiguity);
    s.true_preference = j.value("true_preference", std::string());
    if (s.ambiguity != "generic" && s.ambiguity != "ambiguous")
      throw Error(ErrorCode::config, "ambiguity must be generic or ambiguous");
    if (!(s.kappa > 0.0) || !(s.epsilon > 0.0) || !(s.alpha > 0.0))
      throw Error(ErrorCode::config, "kappa, epsilon and alpha must be positive");
    if (s.n_present < 0 || s.n_absent < 0 || s.n_present + s.n_absent < 2 || s.n_test < 1)
      throw Error(ErrorCode::config, "spec needs at least two demonstrations and one test scene");
    if (s.seeds.empty()) throw Error(ErrorCode::config, "spec lists no seeds");
    if (j.contains("true_distribution")) {
      s.true_distribution = j["true_distribution"];
      detail::reject_unknown(s.true_distribution, {"objects", "textures"}, "true_distribution");
      s.true_objects = name_set_from_json(s.true_distribution.at("objects"));
      s.true_textures = name_set_from_json(s.true_distribution.at("textures"));
      detail::check_names(s.true_objects, kinds, "true_distribution.objects");
      detail::check_names(s.true_textures, textures, "true_distribution.textures");
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::config, std::string("malformed spec: ") + e.what());
  }
}

inline ExperimentSpec load_spec(const std::string& path, const Catalog& cat = default_catalog()) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::config, "cannot open spec file: " + path);
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::config, "spec file is not valid JSON: " + path);
  return spec_from_json(j, cat);
}

// ---- datasets ---------------------------------------------------------------

struct Demo {
  Trajectory trajectory;
  bool feature_present = false;
  std::string utterance;
};

struct DemoDataset {
  std::string spec_id;
  std::uint64_t seed = 0;
  std::vector<Demo> demos;

  std::vector<Trajectory> trajectories() const {
    std::vector<Trajectory> out;
    for (const auto& d : demos) out.push_back(d.trajectory);
    return out;
  }
};

inline constexpr int kDemoRetries = 20;

namespace detail {

inline Demo draw_demo(const ExperimentSpec& spec, const PreferenceProfile& profile, bool present, std::uint64_t seed,
                      const std::string& label, int index, const Catalog& cat, const WorldParams& params) {
  std::string last;
  for (int attempt = 0; attempt < kDemoRetries; ++attempt) {
    const auto s = derive_seed(seed, label, static_cast<std::uint64_t>(index) * 1000 + attempt);
    try {
      auto scene = sample_scene(spec.task, profile, present, s, cat, params);
      auto traj = oracle_demo(scene, spec.task, profile, cat, params);
      return {std::move(traj), present, spec.task.utterance};
    } catch (const Error& e) {
      if (e.code() != ErrorCode::demo_unavailable && e.code() != ErrorCode::generation) throw;
      last = e.what();
    }
  }
  throw Error(ErrorCode::generation, "spec " + spec.id + ": no demonstration after retries (" + last + ")");
}

}  // namespace detail

// n_present feature-present then n_absent feature-absent demos under the
// training subset.
inline DemoDataset generate_dataset(const ExperimentSpec& spec, std::uint64_t seed,
                                    const Catalog& cat = default_catalog(), const WorldParams& params = {}) {
  DemoDataset d{spec.id, seed, {}};
  for (int i = 0; i < spec.n_present; ++i)
    d.demos.push_back(detail::draw_demo(spec, spec.train_subset, true, seed, "train-present", i, cat, params));
  for (int i = 0; i < spec.n_absent; ++i)
    d.demos.push_back(detail::draw_demo(spec, spec.train_subset, false, seed, "train-absent", i, cat, params));
  return d;
}

// Held-out scenes from the full profile; presence alternates starting with present.
inline std::vector<Demo> generate_test_set(const ExperimentSpec& spec, std::uint64_t seed,
                                           const Catalog& cat = default_catalog(), const WorldParams& params = {}) {
  std::vector<Demo> out;
  for (int i = 0; i < spec.n_test; ++i)
    out.push_back(detail::draw_demo(spec, spec.profile, i % 2 == 0, seed, "test", i, cat, params));
  return out;
}

inline std::string dataset_to_jsonl(const DemoDataset& d, const Catalog& cat = default_catalog()) {
  std::string out;
  for (std::size_t i = 0; i < d.demos.size(); ++i) {
    nlohmann::json j{{"spec_id", d.spec_id},
                     {"seed", d.seed},
                     {"index", i},
                     {"feature_present", d.demos[i].feature_present},
                     {"utterance", d.demos[i].utterance},
                     {"trajectory", trajectory_to_json(d.demos[i].trajectory, cat)}};
    out += j.dump() + '\n';
  }
  return out;
}

inline DemoDataset dataset_from_jsonl(std::istream& in, const Catalog& cat = default_catalog()) {
  DemoDataset d;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw Error(ErrorCode::data, "dataset line " + std::to_string(lineno) + " is not JSON");
    try {
      d.spec_id = j.at("spec_id").get<std::string>();
      d.seed = j.at("seed").get<std::uint64_t>();
      d.demos.push_back({trajectory_from_json(j.at("trajectory"), cat), j.at("feature_present").get<bool>(),
                         j.at("utterance").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::data, "dataset line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (d.demos.size() < 2) throw Error(ErrorCode::data, "dataset has fewer than two demonstrations");
  return d;
}

inline std::string dataset_hash(const DemoDataset& d) { return hex64(fnv1a64(dataset_to_jsonl(d))); }

// ---- pipelines --------------------------------------------------------------

enum class Method { gcbc, lga, plga_passive, plga_active };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::gcbc: return "gcbc";
    case Method::lga: return "lga";
    case Method::plga_passive: return "plga_passive";
    case Method::plga_active: return "plga_active";
  }
  return "?";
}

inline Method method_from_string(const std::string& s) {
  if (s == "gcbc") return Method::gcbc;
  if (s == "lga") return Method::lga;
  if (s == "plga_passive") return Method::plga_passive;
  if (s == "plga_active") return Method::plga_active;
  throw Error(ErrorCode::config, "unknown method: " + s);
}

inline const std::vector<Method>& all_methods() {
  static const std::vector<Method> m{Method::gcbc, Method::lga, Method::plga_passive, Method::plga_active};
  return m;
}

inline PolicyVariant variant_of(Method m) {
  if (m == Method::gcbc) return PolicyVariant::gcbc;
  if (m == Method::lga) return PolicyVariant::lga;
  return PolicyVariant::plga;
}

inline bool is_plga(Method m) { return m == Method::plga_passive || m == Method::plga_active; }

struct RunOptions {
  TrainConfig train;
  std::optional<PreferenceResolution> preset_resolution;  // skips delta search and the human
  // Called with the delta pairs and distribution right before the gate.
  std::function<void(const std::vector<DeltaCheckResult>&, const PreferenceDistribution&)> on_distribution;
  // Called once theta-hat is fixed, before training.
  std::function<void(const PreferenceResolution&)> on_resolved;
};

struct TrainedPolicy {
  Method method = Method::gcbc;
  std::string utterance;
  std::optional<std::string> theta_hat;
  PolicyModel model;
};

struct RunResult {
  TrainedPolicy policy;
  std::optional<PreferenceResolution> resolution;
  std::vector<DeltaCheckResult> delta_pairs;
  long abstraction_queries = 0;  // exchanges + cache hits
  long preference_queries = 0;
  std::vector<double> loss_curve;
  std::vector<nlohmann::json> log;  // one JSON object per line
};

// Input features for one scene under a trained policy.
inline std::vector<double> policy_input(const TrainedPolicy& p, const Scene& scene, AbstractionEngine* engine,
                                        long* queries = nullptr, nlohmann::json* transcript = nullptr) {
  const auto variant = variant_of(p.method);
  if (variant == PolicyVariant::gcbc) return encode_gcbc(scene, p.utterance, engine ? engine->catalog() : default_catalog());
  if (!engine) throw Error(ErrorCode::contract, "masked policies need an abstraction engine");
  auto abs = variant == PolicyVariant::lga ? lga_abstract(scene, p.utterance, *engine)
                                           : plga_abstract(scene, p.utterance, *p.theta_hat, *engine);
  if (queries) *queries += static_cast<long>(abs.exchanges.size()) + abs.cache_hits;
  if (transcript) *transcript = transcript_json(abs);
  return encode_abstract(abs.state);
}

inline RunResult run_pipeline(const ExperimentSpec& spec, const DemoDataset& data, Method method,
                              AbstractionEngine* engine, HumanQueryPort* human, const RunOptions& opt = {}) {
  if (data.demos.size() < 2) throw Error(ErrorCode::contract, "pipeline needs at least two demonstrations");
  if (method != Method::gcbc && !engine) throw Error(ErrorCode::contract, "method needs a language-model backend");
  RunResult r;
  r.policy.method = method;
  r.policy.utterance = spec.task.utterance;
  const auto& utterance = spec.task.utterance;

  if (is_plga(method)) {
    if (opt.preset_resolution) {
      r.resolution = opt.preset_resolution;
      r.log.push_back({{"event", "preset_resolution"}, {"resolution", to_json(*r.resolution)}});
    } else {
      const auto trajs = data.trajectories();
      r.delta_pairs = find_delta_pairs(trajs, utterance, spec.kappa, spec.n_pair_samples, *engine, data.seed);
      std::size_t hits = 0;
      const DeltaCheckResult* first = nullptr;
      for (const auto& d : r.delta_pairs)
        if (d.delta) {
          ++hits;
          if (!first) first = &d;
        }
      r.log.push_back({{"event", "delta_search"}, {"pairs", r.delta_pairs.size()}, {"delta_pairs", hits}});
      if (!first)
        throw Error(ErrorCode::no_delta, "spec " + spec.id + " seed " + std::to_string(data.seed) +
                                             ": no demonstration pair differs beyond the command");
      auto dist = query_preferences(*first, trajs[first->pair.tau].initial, trajs[first->pair.tau_prime].initial,
                                    utterance, engine->gateway(), engine->catalog());
      ++r.preference_queries;
      for (const auto& ex : dist.exchanges) r.log.push_back({{"event", "lm_exchange"}, {"exchange", to_json(ex)}});
      if (opt.on_distribution) opt.on_distribution(r.delta_pairs, dist);
      r.resolution = method == Method::plga_passive ? resolve_passive(dist) : resolve(dist, spec.epsilon, human);
      r.log.push_back({{"event", "resolution"}, {"resolution", to_json(*r.resolution)}});
    }
    r.policy.theta_hat = r.resolution->theta_hat;
    if (opt.on_resolved) opt.on_resolved(*r.resolution);
  }

  std::vector<EncodedExample> examples;
  for (const auto& d : data.demos) {
    nlohmann::json transcript;
    auto x = policy_input(r.policy, d.trajectory.initial, engine, &r.abstraction_queries,
                          method == Method::gcbc ? nullptr : &transcript);
    if (!transcript.is_null()) r.log.push_back({{"event", "abstraction"}, {"transcript", transcript}});
    examples.push_back({std::move(x), action_vector(d.trajectory), variant_of(method)});
  }
  TrainConfig tc = opt.train;
  tc.seed = derive_seed(opt.train.seed ^ data.seed, "train", static_cast<std::uint64_t>(method));
  r.policy.model = train(examples, tc, &r.loss_curve);
  r.log.push_back({{"event", "trained"}, {"final_loss", r.policy.model.final_loss}, {"train", to_json(tc)}});
  return r;
}

// ---- evaluation -------------------------------------------------------------

struct SceneOutcome {
  bool feature_present = false;
  std::vector<double> predicted;
  std::vector<double> oracle;
  bool success = false;
};

struct EvalOutcome {
  double success_rate = 0.0;
  std::vector<SceneOutcome> scenes;
  long abstraction_queries = 0;
};

// Success iff every predicted action point lies within alpha of the
// oracle's corresponding point.
inline bool pointwise_success(const std::vector<double>& predicted, const std::vector<double>& oracle, double alpha) {
  if (predicted.size() != oracle.size() || predicted.size() % 2) return false;
  for (std::size_t i = 0; i < oracle.size(); i += 2)
    if (distance({predicted[i], predicted[i + 1]}, {oracle[i], oracle[i + 1]}) > alpha) return false;
  return true;
}

inline EvalOutcome evaluate_with(const ExperimentSpec& spec, std::uint64_t seed,
                                 const std::function<std::vector<double>(const Scene&)>& policy,
                                 const Catalog& cat = default_catalog(), const WorldParams& params = {}) {
  EvalOutcome out;
  int wins = 0;
  for (const auto& t : generate_test_set(spec, seed, cat, params)) {
    SceneOutcome so;
    so.feature_present = t.feature_present;
    so.oracle = action_vector(t.trajectory);
    so.predicted = clamp_action(policy(t.trajectory.initial));
    so.success = pointwise_success(so.predicted, so.oracle, spec.alpha);
    wins += so.success;
    out.scenes.push_back(std::move(so));
  }
  out.success_rate = static_cast<double>(wins) / static_cast<double>(out.scenes.size());
  return out;
}

inline EvalOutcome evaluate(const TrainedPolicy& p, const ExperimentSpec& spec, std::uint64_t seed,
                            AbstractionEngine* engine, const Catalog& cat = default_catalog(),
                            const WorldParams& params = {}) {
  long queries = 0;
  auto out = evaluate_with(
      spec, seed, [&](const Scene& s) { return predict(p.model, policy_input(p, s, engine, &queries)); }, cat, params);
  out.abstraction_queries = queries;
  return out;
}

// ---- reports ----------------------------------------------------------------

struct RunRecord {
  std::uint64_t seed = 0;
  Method method = Method::gcbc;
  double success = 0.0;
  std::optional<PreferenceResolution> resolution;
  std::size_t pairs_checked = 0;
  std::vector<DeltaCheckResult> delta_hits;
  long abstraction_queries = 0;
  long preference_queries = 0;
  double final_loss = 0.0;
  std::vector<SceneOutcome> scenes;
};

struct MethodSummary {
  Method method = Method::gcbc;
  double mean = 0.0;
  double standard_error = 0.0;
  std::size_t n = 0;
};

struct EvalReport {
  std::string spec_id;
  std::vector<RunRecord> runs;
  std::vector<MethodSummary> summary;
};

inline MethodSummary summarize(Method m, const std::vector<double>& xs) {
  MethodSummary s{m, 0.0, 0.0, xs.size()};
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.standard_error = std::sqrt(ss / static_cast<double>(xs.size() - 1)) / std::sqrt(static_cast<double>(xs.size()));
  }
  return s;
}

inline void finalize_summary(EvalReport& r) {
  r.summary.clear();
  for (auto m : all_methods()) {
    std::vector<double> xs;
    for (const auto& run : r.runs)
      if (run.method == m) xs.push_back(run.success);
    if (!xs.empty()) r.summary.push_back(summarize(m, xs));
  }
}

inline const MethodSummary* find_summary(const EvalReport& r, Method m) {
  for (const auto& s : r.summary)
    if (s.method == m) return &s;
  return nullptr;
}

inline nlohmann::json to_json(const RunRecord& r) {
  nlohmann::json hits = nlohmann::json::array(), scenes = nlohmann::json::array();
  for (const auto& d : r.delta_hits) hits.push_back(to_json(d));
  for (const auto& s : r.scenes)
    scenes.push_back(
        {{"feature_present", s.feature_present}, {"predicted", s.predicted}, {"oracle", s.oracle}, {"success", s.success}});
  return {{"seed", r.seed},
          {"method", to_string(r.method)},
          {"success", r.success},
          {"resolution", r.resolution ? to_json(*r.resolution) : nlohmann::json(nullptr)},
          {"pairs_checked", r.pairs_checked},
          {"delta_pairs", hits},
          {"abstraction_queries", r.abstraction_queries},
          {"preference_queries", r.preference_queries},
          {"final_loss", r.final_loss},
          {"test_scenes", scenes}};
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json runs = nlohmann::json::array(), summary = nlohmann::json::array();
  for (const auto& x : r.runs) runs.push_back(to_json(x));
  for (const auto& s : r.summary)
    summary.push_back({{"method", to_string(s.method)}, {"mean", s.mean}, {"standard_error", s.standard_error}, {"n", s.n}});
  return {{"spec_id", r.spec_id}, {"summary", summary}, {"runs", runs}};
}

// spec_id,method,mean,standard_error,n
inline std::string summary_csv(const std::vector<EvalReport>& reports, bool header = true) {
  std::ostringstream os;
  if (header) os << "spec_id,method,mean,standard_error,n\n";
  os << std::setprecision(6);
  for (const auto& r : reports)
    for (const auto& s : r.summary)
      os << r.spec_id << ',' << to_string(s.method) << ',' << s.mean << ',' << s.standard_error << ',' << s.n << '\n';
  return os.str();
}

// Builds the human port for an active run; null means "no human available".
using HumanFactory = std::function<HumanQueryPort*(const ExperimentSpec&, std::uint64_t seed)>;

inline RunRecord run_and_evaluate(const ExperimentSpec& spec, const DemoDataset& data, Method method,
                                  AbstractionEngine* engine, HumanQueryPort* human, const RunOptions& opt,
                                  std::vector<nlohmann::json>* log = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  auto rr = run_pipeline(spec, data, method, engine, human, opt);
  auto ev = evaluate(rr.policy, spec, data.seed, engine);
  RunRecord rec;
  rec.seed = data.seed;
  rec.method = method;
  rec.success = ev.success_rate;
  rec.resolution = rr.resolution;
  rec.pairs_checked = rr.delta_pairs.size();
  for (const auto& d : rr.delta_pairs)
    if (d.delta) rec.delta_hits.push_back(d);
  rec.abstraction_queries = rr.abstraction_queries + ev.abstraction_queries;
  rec.preference_queries = rr.preference_queries;
  rec.final_loss = rr.policy.model.final_loss;
  rec.scenes = std::move(ev.scenes);
  if (log) {
    const auto ms =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
    for (auto& l : rr.log) {
      l["spec_id"] = spec.id;
      l["seed"] = data.seed;
      l["method"] = to_string(method);
      log->push_back(std::move(l));
    }
    log->push_back({{"event", "evaluated"},
                    {"spec_id", spec.id},
                    {"seed", data.seed},
                    {"method", to_string(method)},
                    {"success", rec.success},
                    {"elapsed_ms", ms}});
  }
  return rec;
}

// Runs every (seed, method) in order and aggregates. Timing goes to the log
// only, so reports are byte-identical across repeated runs.
inline EvalReport run_experiment(const ExperimentSpec& spec, const std::vector<Method>& methods,
                                 AbstractionEngine* engine, const HumanFactory& humans, const RunOptions& opt = {},
                                 std::vector<nlohmann::json>* log = nullptr) {
  EvalReport report{spec.id, {}, {}};
  for (auto seed : spec.seeds) {
    const auto data = generate_dataset(spec, seed);
    for (auto m : methods) {
      HumanQueryPort* human = m == Method::plga_active && humans ? humans(spec, seed) : nullptr;
      report.runs.push_back(run_and_evaluate(spec, data, m, engine, human, opt, log));
    }
  }
  finalize_summary(report);
  return report;
}

// ---- entropy probe ----------------------------------------------------------

struct ProbeRow {
  std::string spec_id;
  std::string ambiguity;
  double entropy = 0.0;
  std::size_t hypotheses = 0;
};

inline std::vector<ProbeRow> entropy_probe(const std::vector<ExperimentSpec>& specs, AbstractionEngine& engine,
                                           std::optional<std::uint64_t> seed = std::nullopt) {
  std::vector<ProbeRow> rows;
  for (const auto& spec : specs) {
    const auto s = seed.value_or(spec.seeds.front());
    const auto data = generate_dataset(spec, s);
    const auto trajs = data.trajectories();
    const auto pairs = find_delta_pairs(trajs, spec.task.utterance, spec.kappa, spec.n_pair_samples, engine, s);
    auto it = std::find_if(pairs.begin(), pairs.end(), [](const auto& d) { return d.delta; });
    if (it == pairs.end()) throw Error(ErrorCode::no_delta, "spec " + spec.id + ": no delta pair for the probe");
    const auto dist = query_preferences(*it, trajs[it->pair.tau].initial, trajs[it->pair.tau_prime].initial,
                                        spec.task.utterance, engine.gateway(), engine.catalog());
    rows.push_back({spec.id, spec.ambiguity, dist.entropy, dist.hypotheses.size()});
  }
  return rows;
}

inline std::string probe_csv(const std::vector<ProbeRow>& rows) {
  std::ostringstream os;
  os << "spec_id,entropy\n" << std::setprecision(6);
  for (const auto& r : rows) os << r.spec_id << ',' << r.entropy << '\n';
  return os.str();
}

inline std::string probe_table(const std::vector<ProbeRow>& rows) {
  std::ostringstream os;
  std::size_t w = 7;
  for (const auto& r : rows) w = std::max(w, r.spec_id.size());
  os << std::left << std::setw(static_cast<int>(w)) << "spec_id" << "  entropy\n";
  for (const auto& r : rows)
    os << std::left << std::setw(static_cast<int>(w)) << r.spec_id << "  " << std::fixed << std::setprecision(4)
       << r.entropy << '\n';
  return os.str();
}

}  // namespace plga
