#include <gtest/gtest.h>

#include <cmath>

#include "helpers.hpp"
#include "plga/preference.hpp"

using namespace plga;
using nlohmann::json;

namespace {

PreferenceDistribution dist(std::vector<std::pair<std::string, double>> hs) {
  PreferenceDistribution d;
  std::vector<double> ps;
  for (auto& [t, p] : hs) {
    d.hypotheses.push_back({t, p});
    ps.push_back(p);
  }
  d.entropy = entropy(ps);
  return d;
}

std::vector<double> random_simplex(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  double s = 0.0;
  for (auto& x : v) s += (x = -std::log(1.0 - rng.uniform()));
  for (auto& x : v) x /= s;
  return v;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::contract;
}

Trajectory pick_at(const Scene& s, Point p) { return Trajectory::make(s, {Pick{p}}); }

}  // namespace

TEST(Entropy, KnownValues) {
  EXPECT_NEAR(entropy({1.0}), 0.0, 1e-15);
  EXPECT_NEAR(entropy({0.5, 0.5}), std::log(2.0), 1e-12);
  EXPECT_NEAR(entropy({0.2, 0.2, 0.2, 0.2, 0.2}), std::log(5.0), 1e-9);
  EXPECT_NEAR(entropy({0.7, 0.3}), -(0.7 * std::log(0.7) + 0.3 * std::log(0.3)), 1e-12);
  EXPECT_NEAR(entropy({0.7, 0.3}), 0.6109, 1e-4);
  EXPECT_NEAR(entropy({0.7, 0.15, 0.15}), 0.8188, 1e-3);
  EXPECT_NEAR(entropy({1.0, 0.0, 0.0}), 0.0, 1e-15);
}

TEST(Entropy, RejectsBadMass) {
  EXPECT_EQ(code_of([] { entropy({0.5, 0.6}); }), ErrorCode::contract);
  EXPECT_EQ(code_of([] { entropy({1.2, -0.2}); }), ErrorCode::contract);
  EXPECT_EQ(code_of([] { entropy({NAN, 1.0}); }), ErrorCode::contract);
}

TEST(Entropy, PermutationInvariantAndBoundedByUniform) {
  Rng rng(3);
  for (int trial = 0; trial < 300; ++trial) {
    const auto n = 1 + rng.index(8);
    auto p = random_simplex(rng, n);
    const double h = entropy(p);
    EXPECT_GE(h, -1e-12);
    EXPECT_LE(h, std::log(static_cast<double>(n)) + 1e-12);
    auto q = p;
    rng.shuffle(q);
    EXPECT_NEAR(entropy(q), h, 1e-12);
  }
}

TEST(Entropy, ParsedScoresAreScaleInvariant) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    auto p = random_simplex(rng, 1 + rng.index(6));
    json a = json::array(), b = json::array();
    for (std::size_t i = 0; i < p.size(); ++i) {
      a.push_back(json::array({"h" + std::to_string(i), p[i]}));
      b.push_back(json::array({"h" + std::to_string(i), p[i] * 37.5}));
    }
    auto pa = parse_preference_reply(a.dump()), pb = parse_preference_reply(b.dump());
    std::vector<double> xa, xb;
    for (auto& h : pa) xa.push_back(h.score);
    for (auto& h : pb) xb.push_back(h.score);
    EXPECT_NEAR(entropy(xa), entropy(xb), 1e-9);
  }
}

TEST(Delta, SymmetricAndZeroOnIdentical) {
  auto engine = testing_util::fixture_engine();
  const auto sp = testing_util::spec("sweep_hot");
  auto data = generate_dataset(sp, 0);
  const auto& demos = data.demos;
  for (std::size_t i = 0; i < demos.size(); i += 3)
    for (std::size_t j = 0; j < demos.size(); j += 4) {
      const auto& a = demos[i].trajectory;
      const auto& b = demos[j].trajectory;
      auto aa = lga_abstract(a.initial, sp.task.utterance, *engine);
      auto ab = lga_abstract(b.initial, sp.task.utterance, *engine);
      EXPECT_EQ(check_delta(a, b, aa, ab, sp.kappa).delta, check_delta(b, a, ab, aa, sp.kappa).delta);
      EXPECT_FALSE(check_delta(a, a, aa, aa, sp.kappa).delta);
    }
}

TEST(Delta, NeedsDistanceAboveKappaAndEqualMasks) {
  auto engine = testing_util::fixture_engine();
  const std::string u = "Bring me a tomato.";
  auto s1 = testing_util::make_scene({{"tomato", "red", 2, 2}, {"tomato", "green", 9, 9}});
  auto s2 = testing_util::make_scene({{"tomato", "red", 2, 2}, {"tomato", "green", 9, 9}});
  auto s3 = testing_util::make_scene({{"tomato", "red", 2, 2}, {"tomato", "green", 9, 8}});
  auto a1 = lga_abstract(s1, u, *engine), a2 = lga_abstract(s2, u, *engine), a3 = lga_abstract(s3, u, *engine);
  auto near = pick_at(s1, s1.objects[0].center);
  auto far = pick_at(s2, s2.objects[1].center);
  auto r = check_delta(near, far, a1, a2, 0.2);
  EXPECT_GT(r.pair.distance, 0.2);
  EXPECT_TRUE(r.pair.lga_equal);
  EXPECT_TRUE(r.delta);
  // Different scenes: the command explains the difference.
  EXPECT_FALSE(check_delta(near, pick_at(s3, s3.objects[1].center), a1, a3, 0.2).delta);
  // Same target: no behavior change.
  EXPECT_FALSE(check_delta(near, pick_at(s2, s2.objects[0].center), a1, a2, 0.2).delta);
}

TEST(Delta, SamplingCountAndDeterminism) {
  auto engine = testing_util::fixture_engine();
  const auto sp = testing_util::spec("sweep_hot");
  auto trajs = generate_dataset(sp, 0).trajectories();
  std::vector<Trajectory> few(trajs.begin(), trajs.begin() + 6);
  EXPECT_EQ(find_delta_pairs(few, sp.task.utterance, 0.2, 1000, *engine, 1).size(), 15u);
  auto a = find_delta_pairs(trajs, sp.task.utterance, 0.2, 40, *engine, 9);
  auto b = find_delta_pairs(trajs, sp.task.utterance, 0.2, 40, *engine, 9);
  ASSERT_EQ(a.size(), 40u);
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].pair.tau, b[i].pair.tau);
    EXPECT_EQ(a[i].pair.tau_prime, b[i].pair.tau_prime);
    EXPECT_TRUE(seen.insert({a[i].pair.tau, a[i].pair.tau_prime}).second);
  }
  EXPECT_EQ(code_of([&] { find_delta_pairs({trajs[0]}, "u", 0.2, 10, *engine, 0); }), ErrorCode::contract);
  EXPECT_EQ(code_of([&] { find_delta_pairs(trajs, "u", 0.0, 10, *engine, 0); }), ErrorCode::contract);
}

TEST(Query, StovePairGivesScriptedDistribution) {
  auto engine = testing_util::fixture_engine();
  const auto sp = testing_util::spec("sweep_hot");
  auto data = generate_dataset(sp, 0);
  auto trajs = data.trajectories();
  auto pairs = find_delta_pairs(trajs, sp.task.utterance, sp.kappa, sp.n_pair_samples, *engine, 0);
  auto hit = std::find_if(pairs.begin(), pairs.end(), [](const auto& p) { return p.delta; });
  ASSERT_NE(hit, pairs.end());
  auto d = query_preferences(*hit, trajs[hit->pair.tau].initial, trajs[hit->pair.tau_prime].initial,
                             sp.task.utterance, engine->gateway());
  ASSERT_EQ(d.hypotheses.size(), 2u);
  EXPECT_EQ(d.hypotheses[0].text, "The user avoids hot objects.");
  EXPECT_NEAR(d.hypotheses[0].probability, 0.7, 1e-12);
  EXPECT_NEAR(d.entropy, 0.6109, 1e-4);
  EXPECT_EQ(d.exchanges.size(), 1u);
  ASSERT_TRUE(d.source_pair);
  auto none = *hit;
  none.delta = false;
  EXPECT_EQ(code_of([&] {
              query_preferences(none, trajs[0].initial, trajs[1].initial, sp.task.utterance, engine->gateway());
            }),
            ErrorCode::contract);
}

TEST(Resolve, PassiveBelowEpsilon) {
  auto d = dist({{"hot", 0.7}, {"red", 0.3}});
  FixedAnswerPort port("never asked");
  auto r = resolve(d, 1.0, &port);
  EXPECT_EQ(r.mode, ResolutionMode::passive);
  EXPECT_EQ(r.theta_hat, "hot");
  EXPECT_EQ(port.calls(), 0);
  EXPECT_FALSE(r.human_answer_raw);
}

TEST(Resolve, ActiveAtOrAboveEpsilon) {
  auto d = dist({{"a", 0.2}, {"b", 0.2}, {"c", 0.2}, {"d", 0.2}, {"e", 0.2}});
  FixedAnswerPort port("The user likes apples.");
  auto r = resolve(d, 1.0, &port);
  EXPECT_EQ(r.mode, ResolutionMode::active);
  EXPECT_EQ(r.theta_hat, "The user likes apples.");
  EXPECT_EQ(r.human_answer_raw, std::optional<std::string>("The user likes apples."));
  EXPECT_EQ(port.calls(), 1);
  // Exactly at the threshold asks.
  auto r2 = resolve(d, d.entropy, &port);
  EXPECT_EQ(r2.mode, ResolutionMode::active);
}

TEST(Resolve, TiesBreakByListOrder) {
  auto d = dist({{"first", 0.4}, {"second", 0.4}, {"third", 0.2}});
  EXPECT_EQ(resolve(d, 5.0, nullptr).theta_hat, "first");
  EXPECT_EQ(resolve_passive(d).theta_hat, "first");
}

TEST(Resolve, NoPortRaisesNeedsHumanWithDistribution) {
  auto d = dist({{"a", 0.5}, {"b", 0.5}});
  try {
    resolve(d, 0.5, nullptr);
    FAIL();
  } catch (const NeedsHuman& e) {
    EXPECT_EQ(e.code(), ErrorCode::needs_human);
    EXPECT_EQ(e.distribution().hypotheses.size(), 2u);
  }
  FixedAnswerPort blank("   ");
  EXPECT_EQ(code_of([&] { resolve(d, 0.5, &blank); }), ErrorCode::validation);
}

TEST(Ports, TerminalPrintsAndReads) {
  auto d = dist({{"hot", 0.5}, {"red", 0.5}});
  std::istringstream in("The user avoids hot things.\r\n");
  std::ostringstream out;
  TerminalPort port(in, out);
  EXPECT_EQ(port.ask(d, "ctx"), "The user avoids hot things.");
  EXPECT_NE(out.str().find("1. hot"), std::string::npos);
  EXPECT_NE(out.str().find("entropy"), std::string::npos);
  std::istringstream eof("");
  TerminalPort empty(eof, out);
  EXPECT_EQ(code_of([&] { empty.ask(d, "ctx"); }), ErrorCode::needs_human);
}

TEST(Ports, AnswerFileFirstNonEmptyLine) {
  testing_util::TempDir dir;
  std::ofstream(dir.file("a.txt")) << "\n   \nprefers ripe\nsecond\n";
  std::ofstream(dir.file("empty.txt")) << "\n\n";
  auto d = dist({{"a", 1.0}});
  AnswerFilePort p(dir.file("a.txt"));
  EXPECT_EQ(p.ask(d, ""), "prefers ripe");
  AnswerFilePort e(dir.file("empty.txt"));
  EXPECT_EQ(code_of([&] { e.ask(d, ""); }), ErrorCode::needs_human);
  AnswerFilePort missing(dir.file("nope.txt"));
  EXPECT_EQ(code_of([&] { missing.ask(d, ""); }), ErrorCode::config);
}

TEST(Serialize, ResolutionRoundTrip) {
  auto d = dist({{"hot", 0.7}, {"red", 0.3}});
  d.source_pair = DeltaCheckResult{{3, 14, 0.41, true}, true};
  FixedAnswerPort port("typed");
  auto r = resolve(d, 0.1, &port);
  auto back = resolution_from_json(to_json(r));
  EXPECT_EQ(back.theta_hat, "typed");
  EXPECT_EQ(back.mode, ResolutionMode::active);
  EXPECT_EQ(back.human_answer_raw, r.human_answer_raw);
  EXPECT_EQ(back.distribution.hypotheses.size(), 2u);
  EXPECT_DOUBLE_EQ(back.distribution.entropy, d.entropy);
  ASSERT_TRUE(back.distribution.source_pair);
  EXPECT_EQ(back.distribution.source_pair->pair.tau_prime, 14u);
  EXPECT_EQ(to_json(back), to_json(r));
}
