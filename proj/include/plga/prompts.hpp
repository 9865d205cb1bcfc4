#pragma once

// Prompt templates for the preference and abstraction queries, and parsers for
// the two reply formats ("[[answer, score], ...]" lists and "Final answer:"
// yes/no).

#include <algorithm>
#include <cmath>
#include <iterator>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "plga/captioner.hpp"
#include "plga/catalog.hpp"
#include "plga/core.hpp"

namespace plga {

struct Prompt {
  std::string system;
  std::string user;
};

namespace templates {

inline constexpr std::string_view kPreferenceSystem =
    "There are two scenes. The user takes a different trajectory in the first scene vs. the second.\n"
    "\n"
    "The first and second scene both have the following features:\n"
    "{scene_intersection}\n"
    "The first and second scene differ on the following:\n"
    "First scene-\n"
    "{scene1_difference}\n"
    "Second scene-\n"
    "{scene2_difference}\n"
    "\n"
    "What are the most likely high-level preferences to have caused the difference in the user's behavior and "
    "why? The user took different trajectories in the two scenes. Please give a list of brief preferences (with "
    "only one reason) and assign a confidence score to each answer, in the format [[\"answer\", score], "
    "[\"answer\", score], ...]. Please ensure all scores sum up to 1.";

inline constexpr std::string_view kPreferenceUser = "The command is \"{rule}\".";

inline constexpr std::string_view kAbstractionSystem =
    "You are interfacing with a robotics environment that has a robotic arm learning to manipulate objects based "
    "on some linguistic command (e.g. \"pick up the red bowl\"). At each interaction, the researcher will specify "
    "the command that you need to teach the robot. In order to teach the robot, you will need to help design the "
    "training distribution by specifying what properties task-relevant objects can have based on the given "
    "command. Objects in this environment have two properties: object type, object color.  Any object type can be "
    "paired with any color, but an object can only take on exactly one object type and exactly one color.\n"
    "Object types:\n"
    "{object_list}\n"
    "Object colors:\n"
    "{object_colors}";

inline constexpr std::string_view kAbstractionUser =
    "The command is \"{rule}\". In an instantiation of the environment that contains only some subset of the "
    "object types and colors, could the target object have {group} \"{candidate}\"? Think step-by-step and then "
    "finish with a new line that says \"Final answer:\" followed by \"yes\" or \"no\".";

inline constexpr std::string_view kPreferenceClause = "; preference: ";

}  // namespace templates

inline std::string fill_slot(std::string text, std::string_view slot, std::string_view value) {
  const std::string key = "{" + std::string(slot) + "}";
  for (auto pos = text.find(key); pos != std::string::npos; pos = text.find(key, pos + value.size()))
    text.replace(pos, key.size(), value);
  return text;
}

// ["a", "b"] with the entries JSON-escaped; [] when empty.
inline std::string render_list(const std::set<std::string>& items) {
  std::string out = "[";
  bool first = true;
  for (const auto& it : items) {
    if (!first) out += ", ";
    first = false;
    out += nlohmann::json(it).dump();
  }
  return out + "]";
}

inline std::string render_plain_list(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ", ";
    out += items[i];
  }
  return out;
}

inline Prompt render_preference_prompt(const FeatureSet& first, const FeatureSet& second, const std::string& utterance) {
  const auto a = caption_set(first), b = caption_set(second);
  std::set<std::string> both, only_a, only_b;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::inserter(both, both.end()));
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::inserter(only_a, only_a.end()));
  std::set_difference(b.begin(), b.end(), a.begin(), a.end(), std::inserter(only_b, only_b.end()));
  std::string sys(templates::kPreferenceSystem);
  sys = fill_slot(sys, "scene_intersection", render_list(both));
  sys = fill_slot(sys, "scene1_difference", render_list(only_a));
  sys = fill_slot(sys, "scene2_difference", render_list(only_b));
  return {sys, fill_slot(std::string(templates::kPreferenceUser), "rule", utterance)};
}

enum class FeatureGroup { object_type, object_color };

inline const char* to_string(FeatureGroup g) { return g == FeatureGroup::object_type ? "object type" : "object color"; }

inline std::optional<FeatureGroup> feature_group_from_string(std::string_view s) {
  if (s == "object type") return FeatureGroup::object_type;
  if (s == "object color") return FeatureGroup::object_color;
  return std::nullopt;
}

inline std::string abstraction_rule(const std::string& utterance, const std::optional<std::string>& preference) {
  if (!preference) return utterance;
  return utterance + std::string(templates::kPreferenceClause) + *preference;
}

inline Prompt render_abstraction_prompt(const std::string& utterance, const std::optional<std::string>& preference,
                                        FeatureGroup group, const std::string& candidate,
                                        const Catalog& cat = default_catalog()) {
  const bool known = group == FeatureGroup::object_type ? cat.find_kind(candidate).has_value()
                                                        : cat.find_texture(candidate).has_value();
  if (!known) throw Error(ErrorCode::data, std::string("unknown ") + to_string(group) + " candidate: " + candidate);
  std::string sys(templates::kAbstractionSystem);
  sys = fill_slot(sys, "object_list", render_plain_list(cat.kind_names()));
  sys = fill_slot(sys, "object_colors", render_plain_list(cat.texture_names()));
  std::string user(templates::kAbstractionUser);
  user = fill_slot(user, "rule", abstraction_rule(utterance, preference));
  user = fill_slot(user, "group", to_string(group));
  user = fill_slot(user, "candidate", candidate);
  return {sys, user};
}

// ---- reply parsing --------------------------------------------------------

struct ScoredAnswer {
  std::string text;
  double score = 0.0;
};

namespace detail {

// Index one past the bracket matching s[open], honoring string literals.
inline std::optional<std::size_t> match_bracket(std::string_view s, std::size_t open) {
  int depth = 0;
  bool in_str = false;
  for (std::size_t i = open; i < s.size(); ++i) {
    const char c = s[i];
    if (in_str) {
      if (c == '\\') ++i;
      else if (c == '"') in_str = false;
      continue;
    }
    if (c == '"') in_str = true;
    else if (c == '[') ++depth;
    else if (c == ']' && --depth == 0) return i + 1;
  }
  return std::nullopt;
}

inline std::optional<std::vector<ScoredAnswer>> as_scored_list(const nlohmann::json& j) {
  if (!j.is_array() || j.empty()) return std::nullopt;
  std::vector<ScoredAnswer> out;
  for (const auto& e : j) {
    if (!e.is_array() || e.size() != 2 || !e[0].is_string() || !e[1].is_number()) return std::nullopt;
    out.push_back({e[0].get<std::string>(), e[1].get<double>()});
  }
  return out;
}

}  // namespace detail

// Finds the first well-formed [["text", score], ...] literal and rescales the
// scores to sum to one. Order is preserved.
inline std::vector<ScoredAnswer> parse_preference_reply(std::string_view reply) {
  for (std::size_t pos = reply.find('['); pos != std::string_view::npos; pos = reply.find('[', pos + 1)) {
    auto end = detail::match_bracket(reply, pos);
    if (!end) continue;
    auto parsed = nlohmann::json::parse(reply.substr(pos, *end - pos), nullptr, false);
    if (parsed.is_discarded()) continue;
    auto list = detail::as_scored_list(parsed);
    if (!list) continue;
    double total = 0.0;
    bool valid = true;
    for (const auto& a : *list) {
      if (!std::isfinite(a.score) || a.score < 0.0) valid = false;
      total += a.score;
    }
    if (!valid || !(total > 0.0)) continue;
    for (auto& a : *list) a.score /= total;
    return *list;
  }
  throw Error(ErrorCode::parse, "no preference list found in reply: " + std::string(reply));
}

// Reads the token after the last "Final answer:" (case-insensitive).
inline bool parse_yes_no(std::string_view reply) {
  const std::string lower = to_lower(std::string(reply));
  const std::string marker = "final answer:";
  const auto pos = lower.rfind(marker);
  if (pos == std::string::npos) throw Error(ErrorCode::parse, "missing 'Final answer:' marker in reply: " + std::string(reply));
  std::size_t i = pos + marker.size();
  while (i < lower.size() && !std::isalpha(static_cast<unsigned char>(lower[i])) && lower[i] != '\n') ++i;
  std::size_t j = i;
  while (j < lower.size() && std::isalpha(static_cast<unsigned char>(lower[j]))) ++j;
  const std::string token = lower.substr(i, j - i);
  if (token == "yes") return true;
  if (token == "no") return false;
  throw Error(ErrorCode::parse, "final answer is neither yes nor no: '" + token + "'");
}

// ---- prompt decoding (used by the scripted backend) -----------------------

struct DecodedAbstractionQuery {
  std::string utterance;
  std::optional<std::string> preference;
  FeatureGroup group = FeatureGroup::object_type;
  std::string candidate;
};

struct DecodedPreferenceQuery {
  std::string utterance;
  std::set<std::string> intersection;
  std::set<std::string> first_only;
  std::set<std::string> second_only;
};

namespace detail {
inline std::optional<std::string> between(std::string_view s, std::string_view pre, std::string_view post,
                                          std::size_t* cursor = nullptr) {
  const auto a = s.find(pre, cursor ? *cursor : 0);
  if (a == std::string_view::npos) return std::nullopt;
  const auto b = s.find(post, a + pre.size());
  if (b == std::string_view::npos) return std::nullopt;
  if (cursor) *cursor = b + post.size();
  return std::string(s.substr(a + pre.size(), b - a - pre.size()));
}
}  // namespace detail

inline std::optional<DecodedAbstractionQuery> decode_abstraction_query(std::string_view user) {
  const std::string_view head = "The command is \"";
  const std::string_view mid = "\". In an instantiation of the environment";
  if (user.substr(0, head.size()) != head) return std::nullopt;
  auto rule = detail::between(user, head, mid);
  auto group = detail::between(user, "could the target object have ", " \"");
  if (!rule || !group) return std::nullopt;
  const auto gpos = user.find("could the target object have ");
  const auto qstart = user.find('"', gpos);
  const auto qend = user.find("\"? Think step-by-step", qstart + 1);
  if (qstart == std::string_view::npos || qend == std::string_view::npos) return std::nullopt;
  DecodedAbstractionQuery q;
  auto g = feature_group_from_string(*group);
  if (!g) return std::nullopt;
  q.group = *g;
  q.candidate = std::string(user.substr(qstart + 1, qend - qstart - 1));
  const auto clause = rule->find(templates::kPreferenceClause);
  if (clause == std::string::npos) {
    q.utterance = *rule;
  } else {
    q.utterance = rule->substr(0, clause);
    q.preference = rule->substr(clause + templates::kPreferenceClause.size());
  }
  return q;
}

inline std::optional<DecodedPreferenceQuery> decode_preference_query(std::string_view system, std::string_view user) {
  if (system.substr(0, 21) != "There are two scenes.") return std::nullopt;
  auto rule = detail::between(user, "The command is \"", "\".");
  if (!rule) return std::nullopt;
  auto line_after = [&](std::string_view label) -> std::optional<std::set<std::string>> {
    const auto p = system.find(label);
    if (p == std::string_view::npos) return std::nullopt;
    const auto start = p + label.size();
    const auto end = system.find('\n', start);
    auto parsed = nlohmann::json::parse(system.substr(start, end - start), nullptr, false);
    if (parsed.is_discarded() || !parsed.is_array()) return std::nullopt;
    return parsed.get<std::set<std::string>>();
  };
  auto both = line_after("have the following features:\n");
  auto a = line_after("First scene-\n");
  auto b = line_after("Second scene-\n");
  if (!both || !a || !b) return std::nullopt;
  return DecodedPreferenceQuery{*rule, *both, *a, *b};
}

}  // namespace plga
