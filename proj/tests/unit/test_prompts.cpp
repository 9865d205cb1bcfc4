#include <gtest/gtest.h>

#include <random>

#include "helpers.hpp"
#include "plga/prompts.hpp"

using namespace plga;
using testing_util::make_scene;
using testing_util::read_file;
using testing_util::source_path;

namespace {

std::string golden(const std::string& name) { return read_file(source_path("tests/golden/prompts/" + name)); }

// Splits a template into literal chunks around {slot} markers and checks that
// `text` is those chunks with the given slot values between them.
void expect_template_fill(const std::string& tmpl, const std::string& text,
                          const std::map<std::string, std::string>& values) {
  std::string expected;
  std::size_t pos = 0;
  while (true) {
    const auto open = tmpl.find('{', pos);
    if (open == std::string::npos) break;
    const auto close = tmpl.find('}', open);
    const auto name = tmpl.substr(open + 1, close - open - 1);
    expected += tmpl.substr(pos, open - pos);
    ASSERT_TRUE(values.count(name)) << "no value for slot " << name;
    expected += values.at(name);
    pos = close + 1;
  }
  expected += tmpl.substr(pos);
  EXPECT_EQ(text, expected);
}

std::string joined(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + v[i];
  return s;
}

FeatureSet captions_of(std::vector<std::string> caps) {
  FeatureSet fs;
  fs.object_captions = std::move(caps);
  return fs;
}

}  // namespace

TEST(PreferencePrompt, StoveFixtureMatchesGolden) {
  auto hot = make_scene({{"food", "red", 1, 2}, {"sink", "red", 1, 9}, {"stove", "red", 1, 5}, {"flower", "yellow", 7, 3}});
  auto cold = make_scene({{"food", "red", 1, 2}, {"sink", "red", 1, 9}, {"stove", "silver", 1, 5}, {"flower", "pink", 8, 8}});
  auto p = render_preference_prompt(caption(hot), caption(cold), "Sweep the food into the sink.");
  EXPECT_EQ(p.system, golden("preference_stove_system.txt"));
  EXPECT_EQ(p.user, golden("preference_stove_user.txt"));
  expect_template_fill(golden("preference_system.template.txt"), p.system,
                       {{"scene_intersection", "[\"red food\", \"red sink\"]"},
                        {"scene1_difference", "[\"red stove\", \"yellow flower\"]"},
                        {"scene2_difference", "[\"pink flower\", \"silver stove\"]"}});
}

TEST(PreferencePrompt, IdenticalCaptionsHaveEmptyDifferences) {
  auto s = make_scene({{"food", "red", 1, 2}, {"sink", "red", 1, 9}});
  auto p = render_preference_prompt(caption(s), caption(s), "x");
  expect_template_fill(golden("preference_system.template.txt"), p.system,
                       {{"scene_intersection", "[\"red food\", \"red sink\"]"},
                        {"scene1_difference", "[]"},
                        {"scene2_difference", "[]"}});
}

TEST(PreferencePrompt, TwoObjectDiffMatchesSetDifference) {
  std::mt19937 gen(5);
  const auto& cat = default_catalog();
  for (int trial = 0; trial < 50; ++trial) {
    std::set<std::string> base;
    while (base.size() < 4) base.insert(cat.texture_names()[gen() % 17] + " " + cat.kind_names()[gen() % 48]);
    std::vector<std::string> a(base.begin(), base.end()), b = a;
    const std::string extra_a = "glass vase", extra_b = "wooden block";
    if (base.count(extra_a) || base.count(extra_b)) continue;
    a.push_back(extra_a);
    b.push_back(extra_b);
    auto p = render_preference_prompt(captions_of(a), captions_of(b), "u");
    std::vector<std::string> quoted;
    for (const auto& x : base) quoted.push_back("\"" + x + "\"");
    expect_template_fill(golden("preference_system.template.txt"), p.system,
                         {{"scene_intersection", "[" + joined(quoted) + "]"},
                          {"scene1_difference", "[\"glass vase\"]"},
                          {"scene2_difference", "[\"wooden block\"]"}});
  }
}

TEST(AbstractionPrompt, SystemListsFullCatalog) {
  auto p = render_abstraction_prompt("Bring me a tomato", std::nullopt, FeatureGroup::object_type, "tomato");
  const auto& cat = default_catalog();
  expect_template_fill(golden("abstraction_system.template.txt"), p.system,
                       {{"object_list", joined(cat.kind_names())}, {"object_colors", joined(cat.texture_names())}});
}

TEST(AbstractionPrompt, UserGoldenWithoutPreference) {
  auto p = render_abstraction_prompt("Bring me a tomato", std::nullopt, FeatureGroup::object_type, "tomato");
  EXPECT_EQ(p.user, golden("abstraction_user_tomato_type.txt"));
  expect_template_fill(golden("abstraction_user.template.txt"), p.user,
                       {{"rule", "Bring me a tomato"}, {"group", "object type"}, {"candidate", "tomato"}});
}

TEST(AbstractionPrompt, UserGoldenWithPreference) {
  auto p = render_abstraction_prompt("Bring me a tomato", std::string("only ripe tomatoes"), FeatureGroup::object_color,
                                     "dark red");
  EXPECT_EQ(p.user, golden("abstraction_user_tomato_ripe_color.txt"));
}

TEST(AbstractionPrompt, UnknownCandidateRejected) {
  EXPECT_THROW(render_abstraction_prompt("Bring me a tomato", std::nullopt, FeatureGroup::object_type, "unicorn"),
               Error);
  EXPECT_THROW(render_abstraction_prompt("Bring me a tomato", std::nullopt, FeatureGroup::object_color, "tomato"),
               Error);
}

TEST(AbstractionPrompt, DecodesBack) {
  auto p = render_abstraction_prompt("Put down my mug.", std::string("avoid electronics"), FeatureGroup::object_type,
                                     "drying rack");
  auto q = decode_abstraction_query(p.user);
  ASSERT_TRUE(q);
  EXPECT_EQ(q->utterance, "Put down my mug.");
  EXPECT_EQ(q->preference, std::optional<std::string>("avoid electronics"));
  EXPECT_EQ(q->group, FeatureGroup::object_type);
  EXPECT_EQ(q->candidate, "drying rack");
}

TEST(ParseYesNo, GoldenReplies) {
  auto cases = nlohmann::json::parse(read_file(source_path("tests/golden/replies/yes_no.json")));
  for (const auto& c : cases) {
    const auto reply = c["reply"].get<std::string>();
    if (c["expected"].is_null()) {
      try {
        parse_yes_no(reply);
        ADD_FAILURE() << "accepted: " << reply;
      } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::parse);
      }
    } else {
      EXPECT_EQ(parse_yes_no(reply), c["expected"].get<bool>()) << reply;
    }
  }
}

TEST(ParsePreferenceReply, GoldenReplies) {
  auto cases = nlohmann::json::parse(read_file(source_path("tests/golden/replies/preference.json")));
  for (const auto& c : cases) {
    const auto reply = c["reply"].get<std::string>();
    if (c["expected"].is_null()) {
      try {
        parse_preference_reply(reply);
        ADD_FAILURE() << "accepted: " << reply;
      } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::parse);
        EXPECT_NE(std::string(e.what()).find(reply), std::string::npos);
      }
      continue;
    }
    auto got = parse_preference_reply(reply);
    ASSERT_EQ(got.size(), c["expected"].size()) << reply;
    double sum = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_EQ(got[i].text, c["expected"][i][0].get<std::string>());
      EXPECT_NEAR(got[i].score, c["expected"][i][1].get<double>(), 1e-12);
      sum += got[i].score;
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST(ParsePreferenceReply, ProseWrappersDoNotChangeTheParse) {
  const std::string list = R"([["avoid hot objects", 0.55], ["prefers red", 0.25], ["likes flowers", 0.2]])";
  const auto direct = parse_preference_reply(list);
  const std::vector<std::string> prefixes{"", "Sure! ", "Here is my answer:\n", "Scores (see below) [1]: ",
                                          "[not a list] then "};
  const std::vector<std::string> suffixes{"", "\nHope this helps.", " [x]", "\n\n[[\"later\", 1]]"};
  for (const auto& pre : prefixes)
    for (const auto& suf : suffixes) {
      auto got = parse_preference_reply(pre + list + suf);
      ASSERT_EQ(got.size(), direct.size()) << pre << "|" << suf;
      for (std::size_t i = 0; i < got.size(); ++i) {
        EXPECT_EQ(got[i].text, direct[i].text);
        EXPECT_EQ(got[i].score, direct[i].score);
      }
    }
}

TEST(ParsePreferenceReply, ScaleInvariant) {
  auto a = parse_preference_reply(R"([["a", 0.7], ["b", 0.2], ["c", 0.1]])");
  auto b = parse_preference_reply(R"([["a", 7], ["b", 2], ["c", 1]])");
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i].score, b[i].score, 1e-15);
}
