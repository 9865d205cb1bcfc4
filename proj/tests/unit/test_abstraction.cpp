#include <gtest/gtest.h>

#include "helpers.hpp"
#include "plga/abstraction.hpp"

using namespace plga;
using nlohmann::json;
using testing_util::make_scene;

namespace {

json rule(const std::string& utt, const json& pref, const std::string& group, const json& candidates,
          const std::string& answer, const json& except = json::array()) {
  json r{{"utterance", utt}, {"group", group}, {"candidates", candidates}, {"answer", answer}, {"except", except}};
  if (!pref.is_null()) r["preference"] = pref;
  return r;
}

// "Bring me a tomato": tomato kind only, any colour; under "ripe" only red shades.
json tomato_rules() {
  const std::string u = "Bring me a tomato.";
  const std::string ripe = "only ripe tomatoes";
  return {{"abstraction_rules",
           {rule(u, nullptr, "object type", {"tomato"}, "yes"), rule(u, nullptr, "object type", "*", "no", {"tomato"}),
            rule(u, nullptr, "object color", "*", "yes"), rule(u, ripe, "object type", {"tomato"}, "yes"),
            rule(u, ripe, "object type", "*", "no", {"tomato"}),
            rule(u, ripe, "object color", {"red", "dark red"}, "yes"),
            rule(u, ripe, "object color", "*", "no", {"red", "dark red"}),
            // A preference that changes nothing.
            rule(u, "no preference at all", "object type", {"tomato"}, "yes"),
            rule(u, "no preference at all", "object type", "*", "no", {"tomato"}),
            rule(u, "no preference at all", "object color", "*", "yes")}}};
}

json all_yes_rules(const std::string& u) {
  // A "*" preference also matches queries without one.
  return {{"abstraction_rules", {rule(u, "*", "object type", "*", "yes"), rule(u, "*", "object color", "*", "yes")}}};
}

Scene tomato_laptop() { return make_scene({{"tomato", "red", 2, 3}, {"laptop", "silver", 5, 5}}); }

std::vector<std::uint8_t> only(const Scene& s, std::set<int> uids) {
  std::vector<std::uint8_t> m(static_cast<std::size_t>(s.width * s.height), 0);
  for (const auto& o : s.objects)
    if (uids.count(o.uid)) m[static_cast<std::size_t>(o.cell.row * s.width + o.cell.col)] = 1;
  return m;
}

}  // namespace

TEST(Abstract, TomatoKeepsOnlyTomato) {
  auto engine = testing_util::engine_from_rules(tomato_rules());
  const auto s = tomato_laptop();
  auto r = lga_abstract(s, "Bring me a tomato.", *engine);
  EXPECT_EQ(r.kept.kinds, (std::set<std::string>{"tomato"}));
  EXPECT_TRUE(r.kept.textures.all);
  EXPECT_EQ(r.state.mask, only(s, {0}));
  EXPECT_EQ(r.kept.object_captions, (std::vector<std::string>{"red tomato"}));
}

TEST(Abstract, AllRelevantEqualsOccupancy) {
  const std::string u = "Clean everything.";
  auto engine = testing_util::engine_from_rules(all_yes_rules(u));
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto sp = testing_util::spec("pick_container");
    const auto s = sample_scene(sp.task, sp.profile, true, seed);
    EXPECT_EQ(lga_abstract(s, u, *engine).state.mask, occupancy(s));
  }
}

TEST(Abstract, SingleIrrelevantObjectGivesEmptyMask) {
  auto engine = testing_util::engine_from_rules(tomato_rules());
  const auto s = make_scene({{"laptop", "silver", 5, 5}});
  auto r = lga_abstract(s, "Bring me a tomato.", *engine);
  EXPECT_TRUE(r.kept.kinds.empty());
  EXPECT_EQ(std::count(r.state.mask.begin(), r.state.mask.end(), 1), 0);
}

TEST(Abstract, RipePreferenceKeepsRedShades) {
  auto engine = testing_util::engine_from_rules(tomato_rules());
  const auto s = make_scene({{"tomato", "red", 1, 1}, {"tomato", "dark red", 1, 8}, {"tomato", "green", 8, 4}});
  auto lga = lga_abstract(s, "Bring me a tomato.", *engine);
  auto plga = plga_abstract(s, "Bring me a tomato.", "only ripe tomatoes", *engine);
  EXPECT_EQ(lga.state.mask, occupancy(s));
  EXPECT_EQ(plga.kept.textures.names, (std::set<std::string>{"red", "dark red"}));
  EXPECT_FALSE(plga.kept.textures.all);
  EXPECT_EQ(plga.state.mask, only(s, {0, 1}));
}

TEST(Abstract, ElectronicsObstacleDroppedUnderPreference) {
  auto engine = testing_util::fixture_engine();
  const auto s = make_scene({{"mug", "white", 11, 0}, {"laptop", "silver", 6, 2}, {"plate", "white", 6, 6}}, 0);
  auto lga = lga_abstract(s, "Put down my mug.", *engine);
  auto plga = plga_abstract(s, "Put down my mug.", "The user avoids putting things on electronics.", *engine);
  EXPECT_EQ(lga.state.mask, occupancy(s));
  EXPECT_EQ(plga.state.mask, only(s, {0, 2}));
}

TEST(Abstract, EmptyPreferenceIsContractError) {
  auto engine = testing_util::engine_from_rules(tomato_rules());
  try {
    plga_abstract(tomato_laptop(), "Bring me a tomato.", "  ", *engine);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::contract);
  }
  EXPECT_THROW(engine->abstract(tomato_laptop(), "", std::nullopt), Error);
}

TEST(Abstract, QueriesExactlyTheCaptionFeatures) {
  auto engine = testing_util::engine_from_rules(tomato_rules());
  const auto s = make_scene({{"tomato", "red", 1, 1}, {"tomato", "green", 2, 2}, {"laptop", "silver", 5, 5}});
  auto r = lga_abstract(s, "Bring me a tomato.", *engine);
  std::set<std::string> asked;
  for (const auto& ex : r.exchanges) {
    auto q = decode_abstraction_query(ex.user_prompt);
    ASSERT_TRUE(q);
    asked.insert(std::string(to_string(q->group)) + ":" + q->candidate);
  }
  EXPECT_EQ(asked, (std::set<std::string>{"object type:tomato", "object type:laptop", "object color:red",
                                          "object color:green", "object color:silver"}));
  EXPECT_EQ(r.exchanges.size(), 5u);
}

TEST(Abstract, WarmCacheIssuesNoExchanges) {
  auto engine = testing_util::engine_from_rules(tomato_rules());
  const auto s = tomato_laptop();
  auto first = lga_abstract(s, "Bring me a tomato.", *engine);
  const long before = engine->new_exchanges();
  auto second = lga_abstract(s, "Bring me a tomato.", *engine);
  EXPECT_EQ(engine->new_exchanges(), before);
  EXPECT_TRUE(second.exchanges.empty());
  EXPECT_EQ(second.cache_hits, 4);
  EXPECT_EQ(second.state.mask, first.state.mask);
  // The preference is part of the key.
  plga_abstract(s, "Bring me a tomato.", "only ripe tomatoes", *engine);
  EXPECT_EQ(engine->new_exchanges(), before + 4);
}

TEST(Abstract, VacuousPreferenceMatchesLanguageOnly) {
  auto engine = testing_util::engine_from_rules(tomato_rules());
  const auto sp = testing_util::spec("pick_ripe");
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = sample_scene(sp.task, sp.profile, seed % 2 == 0, seed);
    auto a = lga_abstract(s, "Bring me a tomato.", *engine);
    auto b = plga_abstract(s, "Bring me a tomato.", "no preference at all", *engine);
    EXPECT_TRUE(feature_sets_equal(a.kept, b.kept));
    EXPECT_EQ(a.state.mask, b.state.mask);
  }
}

TEST(FeatureSetsEqual, Cases) {
  FeatureSet a, b;
  a.kinds = {"tomato"};
  b.kinds = {"tomato"};
  a.textures = {true, {}};
  b.textures = {true, {}};
  EXPECT_TRUE(feature_sets_equal(a, b));
  b.object_captions = {"red tomato"};
  EXPECT_TRUE(feature_sets_equal(a, b));  // captions are not part of the set
  b.textures = {false, {"red"}};
  EXPECT_FALSE(feature_sets_equal(a, b));
  b = a;
  b.kinds.insert("bowl");
  EXPECT_FALSE(feature_sets_equal(a, b));
}

TEST(Cache, SaveAndReload) {
  testing_util::TempDir dir;
  const auto path = dir.file("cache.json");
  const auto s = tomato_laptop();
  AbstractionResult first;
  {
    AbstractionEngine e(std::make_shared<LmGateway>(LmBackendConfig{}, ScriptedRules::from_json(tomato_rules())),
                        default_catalog(), path);
    first = lga_abstract(s, "Bring me a tomato.", e);
    e.save_cache();
  }
  // No rules: every lookup must come from the saved cache.
  AbstractionEngine e(std::make_shared<LmGateway>(LmBackendConfig{}, ScriptedRules::from_json(json::object())),
                      default_catalog(), path);
  EXPECT_EQ(e.cache_size(), 4u);
  auto again = lga_abstract(s, "Bring me a tomato.", e);
  EXPECT_EQ(again.state.mask, first.state.mask);
  EXPECT_EQ(e.new_exchanges(), 0);
}

TEST(Cache, MalformedFileRejected) {
  testing_util::TempDir dir;
  std::ofstream(dir.file("c.json")) << "{\"not\": \"a list\"}";
  EXPECT_THROW(AbstractionEngine(testing_util::fixture_gateway(), default_catalog(), dir.file("c.json")), Error);
}

TEST(Abstract, FailureKeepsPartialTranscript) {
  // Only the type question for tomato is scripted; the laptop question misses.
  const std::string u = "Bring me a tomato.";
  auto engine =
      testing_util::engine_from_rules({{"abstraction_rules", {rule(u, nullptr, "object type", {"tomato"}, "yes")}}});
  try {
    lga_abstract(make_scene({{"laptop", "silver", 5, 5}, {"tomato", "red", 2, 3}}), u, *engine);
    FAIL();
  } catch (const AbstractionError& e) {
    EXPECT_EQ(e.code(), ErrorCode::scripted_miss);
    ASSERT_EQ(e.partial_transcript().size(), 0u);  // kinds are asked in sorted order: laptop first
  }
  try {
    lga_abstract(make_scene({{"tomato", "red", 2, 3}}), u, *engine);
    FAIL();
  } catch (const AbstractionError& e) {
    ASSERT_EQ(e.partial_transcript().size(), 1u);
    EXPECT_TRUE(parse_yes_no(e.partial_transcript()[0].reply));
  }
}

TEST(Abstract, TranscriptJson) {
  auto engine = testing_util::engine_from_rules(tomato_rules());
  auto r = lga_abstract(tomato_laptop(), "Bring me a tomato.", *engine);
  auto j = transcript_json(r);
  EXPECT_EQ(j["kept_textures"], "ALL");
  EXPECT_EQ(j["exchanges"].size(), 4u);
  EXPECT_TRUE(j["preference"].is_null());
}

TEST(FixtureRules, TotalOverEverySpec) {
  auto engine = testing_util::fixture_engine();
  for (const auto& id : testing_util::spec_ids()) {
    const auto sp = testing_util::spec(id);
    auto data = generate_dataset(sp, 0);
    auto test = generate_test_set(sp, 0);
    for (auto& d : test) data.demos.push_back(d);
    for (const auto& d : data.demos) {
      EXPECT_NO_THROW(lga_abstract(d.trajectory.initial, sp.task.utterance, *engine)) << id;
      EXPECT_NO_THROW(plga_abstract(d.trajectory.initial, sp.task.utterance, sp.true_preference, *engine)) << id;
    }
  }
}
