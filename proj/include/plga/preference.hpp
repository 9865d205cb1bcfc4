#pragma once

// Preference inference: trajectory-pair sampling, the delta flag, the LM
// hypothesis distribution, the entropy gate, and human query ports.

#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "plga/abstraction.hpp"
#include "plga/lm_gateway.hpp"
#include "plga/prompts.hpp"
#include "plga/world.hpp"

namespace plga {

struct TrajectoryPair {
  std::size_t tau = 0;        // index into the demo set
  std::size_t tau_prime = 0;
  double distance = 0.0;
  bool lga_equal = false;
};

struct DeltaCheckResult {
  TrajectoryPair pair;
  bool delta = false;
};

struct PreferenceHypothesis {
  std::string text;
  double probability = 0.0;
};

struct PreferenceDistribution {
  std::vector<PreferenceHypothesis> hypotheses;
  double entropy = 0.0;
  std::optional<DeltaCheckResult> source_pair;
  std::vector<ChatExchange> exchanges;
};

enum class ResolutionMode { passive, active };

inline const char* to_string(ResolutionMode m) { return m == ResolutionMode::passive ? "passive" : "active"; }

struct PreferenceResolution {
  std::string theta_hat;
  ResolutionMode mode = ResolutionMode::passive;
  PreferenceDistribution distribution;
  std::optional<std::string> human_answer_raw;
};

// Shannon entropy in nats; 0 ln 0 = 0.
inline double entropy(const std::vector<double>& probs) {
  double total = 0.0;
  for (double p : probs) {
    if (!std::isfinite(p) || p < 0.0) throw Error(ErrorCode::contract, "entropy of a negative or non-finite mass");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-6) throw Error(ErrorCode::contract, "entropy of a non-normalized distribution");
  double h = 0.0;
  for (double p : probs)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

inline std::vector<double> probabilities(const PreferenceDistribution& d) {
  std::vector<double> out;
  for (const auto& h : d.hypotheses) out.push_back(h.probability);
  return out;
}

// Delta = distance above kappa while both initial scenes map to the same
// language-only abstract state, i.e. identical masks over the same grid.
inline bool lga_abstractions_equal(const AbstractionResult& a, const AbstractionResult& b) {
  return a.state.width == b.state.width && a.state.height == b.state.height && a.state.mask == b.state.mask;
}

inline DeltaCheckResult check_delta(const Trajectory& a, const Trajectory& b, const AbstractionResult& abs_a,
                                    const AbstractionResult& abs_b, double kappa, std::size_t ia = 0,
                                    std::size_t ib = 1) {
  DeltaCheckResult r;
  r.pair = {ia, ib, trajectory_distance(a, b), lga_abstractions_equal(abs_a, abs_b)};
  r.delta = r.pair.distance > kappa && r.pair.lga_equal;
  return r;
}

// Samples unordered pairs without replacement (all pairs when n_samples
// covers them) and flags each. Order of the result is the sampling order.
inline std::vector<DeltaCheckResult> find_delta_pairs(const std::vector<Trajectory>& demos,
                                                      const std::string& utterance, double kappa,
                                                      std::size_t n_samples, AbstractionEngine& engine,
                                                      std::uint64_t seed) {
  if (demos.size() < 2) throw Error(ErrorCode::contract, "delta search needs at least two demonstrations");
  if (!(kappa > 0.0)) throw Error(ErrorCode::contract, "kappa must be positive");
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < demos.size(); ++i)
    for (std::size_t j = i + 1; j < demos.size(); ++j) pairs.emplace_back(i, j);
  Rng rng(derive_seed(seed, "delta-pairs"));
  rng.shuffle(pairs);
  if (n_samples < pairs.size()) pairs.resize(n_samples);
  std::vector<std::optional<AbstractionResult>> abs(demos.size());
  auto abstraction = [&](std::size_t i) -> const AbstractionResult& {
    if (!abs[i]) abs[i] = lga_abstract(demos[i].initial, utterance, engine);
    return *abs[i];
  };
  std::vector<DeltaCheckResult> out;
  out.reserve(pairs.size());
  for (auto [i, j] : pairs) out.push_back(check_delta(demos[i], demos[j], abstraction(i), abstraction(j), kappa, i, j));
  return out;
}

inline PreferenceDistribution query_preferences(const DeltaCheckResult& pair, const Scene& first, const Scene& second,
                                                const std::string& utterance, LmGateway& gateway,
                                                const Catalog& cat = default_catalog()) {
  if (!pair.delta) throw Error(ErrorCode::contract, "preference query on a pair without a behavior change");
  const auto prompt = render_preference_prompt(caption(first, cat), caption(second, cat), utterance);
  auto ex = gateway.complete(prompt.system, prompt.user);
  PreferenceDistribution d;
  for (auto& a : parse_preference_reply(ex.reply)) d.hypotheses.push_back({std::move(a.text), a.score});
  d.entropy = entropy(probabilities(d));
  d.source_pair = pair;
  d.exchanges.push_back(std::move(ex));
  return d;
}

// First hypothesis with the highest probability.
inline const PreferenceHypothesis& argmax_hypothesis(const PreferenceDistribution& d) {
  if (d.hypotheses.empty()) throw Error(ErrorCode::contract, "empty preference distribution");
  std::size_t best = 0;
  for (std::size_t i = 1; i < d.hypotheses.size(); ++i)
    if (d.hypotheses[i].probability > d.hypotheses[best].probability) best = i;
  return d.hypotheses[best];
}

// ---- human query ports ----------------------------------------------------

class NeedsHuman : public Error {
 public:
  explicit NeedsHuman(PreferenceDistribution d, const std::string& what = "preference needs a human answer")
      : Error(ErrorCode::needs_human, what), dist_(std::move(d)) {}
  const PreferenceDistribution& distribution() const { return dist_; }

 private:
  PreferenceDistribution dist_;
};

class HumanQueryPort {
 public:
  virtual ~HumanQueryPort() = default;
  // Blocks until the human answers. Throws NeedsHuman when no answer can be had.
  virtual std::string ask(const PreferenceDistribution& dist, const std::string& context) = 0;
};

class FixedAnswerPort : public HumanQueryPort {
 public:
  explicit FixedAnswerPort(std::string answer) : answer_(std::move(answer)) {}
  std::string ask(const PreferenceDistribution&, const std::string&) override {
    ++calls_;
    return answer_;
  }
  int calls() const { return calls_; }

 private:
  std::string answer_;
  int calls_ = 0;
};

// First non-empty line of a file.
class AnswerFilePort : public HumanQueryPort {
 public:
  explicit AnswerFilePort(std::string path) : path_(std::move(path)) {}
  std::string ask(const PreferenceDistribution& dist, const std::string&) override {
    std::ifstream in(path_);
    if (!in) throw Error(ErrorCode::config, "cannot open answer file: " + path_);
    std::string line;
    while (std::getline(in, line))
      if (!trim(line).empty()) return line;
    throw NeedsHuman(dist, "answer file is empty: " + path_);
  }

 private:
  std::string path_;
};

// Prints hypotheses and entropy, reads one line.
class TerminalPort : public HumanQueryPort {
 public:
  TerminalPort(std::istream& in, std::ostream& out) : in_(in), out_(out) {}
  std::string ask(const PreferenceDistribution& dist, const std::string& context) override {
    out_ << context << "\n";
    for (std::size_t i = 0; i < dist.hypotheses.size(); ++i)
      out_ << "  " << (i + 1) << ". " << dist.hypotheses[i].text << "  (p=" << dist.hypotheses[i].probability << ")\n";
    out_ << "entropy " << dist.entropy << " nats\nDescribe your preference: " << std::flush;
    std::string line;
    if (!std::getline(in_, line) || trim(line).empty()) throw NeedsHuman(dist, "no answer on standard input");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  }

 private:
  std::istream& in_;
  std::ostream& out_;
};

// Applies the entropy gate: below epsilon take the LM's best hypothesis,
// otherwise ask the human.
inline PreferenceResolution resolve(const PreferenceDistribution& dist, double epsilon, HumanQueryPort* human,
                                    const std::string& context = "The demonstrations differ in a way the command "
                                                                 "does not explain.") {
  PreferenceResolution r;
  r.distribution = dist;
  if (dist.entropy < epsilon) {
    r.mode = ResolutionMode::passive;
    r.theta_hat = argmax_hypothesis(dist).text;
    return r;
  }
  r.mode = ResolutionMode::active;
  if (!human) throw NeedsHuman(dist);
  std::string answer = human->ask(dist, context);
  if (trim(answer).empty()) throw Error(ErrorCode::validation, "human preference answer is empty");
  r.human_answer_raw = answer;
  r.theta_hat = std::move(answer);
  return r;
}

inline PreferenceResolution resolve_passive(const PreferenceDistribution& dist) {
  PreferenceResolution r;
  r.distribution = dist;
  r.mode = ResolutionMode::passive;
  r.theta_hat = argmax_hypothesis(dist).text;
  return r;
}

// ---- serialization --------------------------------------------------------

inline nlohmann::json to_json(const DeltaCheckResult& d) {
  return {{"tau", d.pair.tau},
          {"tau_prime", d.pair.tau_prime},
          {"distance", d.pair.distance},
          {"lga_equal", d.pair.lga_equal},
          {"delta", d.delta}};
}

inline DeltaCheckResult delta_from_json(const nlohmann::json& j) {
  DeltaCheckResult d;
  d.pair = {j.at("tau").get<std::size_t>(), j.at("tau_prime").get<std::size_t>(), j.at("distance").get<double>(),
            j.at("lga_equal").get<bool>()};
  d.delta = j.at("delta").get<bool>();
  return d;
}

inline nlohmann::json to_json(const PreferenceDistribution& d) {
  nlohmann::json hs = nlohmann::json::array();
  for (const auto& h : d.hypotheses) hs.push_back({{"text", h.text}, {"probability", h.probability}});
  nlohmann::json j{{"hypotheses", hs}, {"entropy", d.entropy}};
  j["source_pair"] = d.source_pair ? to_json(*d.source_pair) : nlohmann::json(nullptr);
  return j;
}

inline PreferenceDistribution distribution_from_json(const nlohmann::json& j) {
  PreferenceDistribution d;
  for (const auto& h : j.at("hypotheses")) d.hypotheses.push_back({h.at("text"), h.at("probability")});
  d.entropy = j.at("entropy").get<double>();
  if (j.contains("source_pair") && !j["source_pair"].is_null()) d.source_pair = delta_from_json(j["source_pair"]);
  return d;
}

inline nlohmann::json to_json(const PreferenceResolution& r) {
  return {{"theta_hat", r.theta_hat},
          {"mode", to_string(r.mode)},
          {"distribution", to_json(r.distribution)},
          {"human_answer_raw", r.human_answer_raw ? nlohmann::json(*r.human_answer_raw) : nlohmann::json(nullptr)}};
}

inline PreferenceResolution resolution_from_json(const nlohmann::json& j) {
  PreferenceResolution r;
  r.theta_hat = j.at("theta_hat").get<std::string>();
  r.mode = j.at("mode").get<std::string>() == "active" ? ResolutionMode::active : ResolutionMode::passive;
  r.distribution = distribution_from_json(j.at("distribution"));
  if (j.contains("human_answer_raw") && !j["human_answer_raw"].is_null())
    r.human_answer_raw = j["human_answer_raw"].get<std::string>();
  return r;
}

}  // namespace plga
