#pragma once

// Object-kind and texture catalogs, plus name sets used by preference
// profiles ("ALL", "ALL \ iPad, laptop, phone", explicit lists).

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "plga/core.hpp"

namespace plga {

struct ObjectKind {
  int id = 0;
  std::string name;
};

struct TextureKind {
  int id = 0;
  std::string name;
  std::array<std::uint8_t, 3> display_color{0, 0, 0};
};

inline constexpr std::size_t kMaxKinds = 48;
inline constexpr std::size_t kMaxTextures = 17;

class Catalog {
 public:
  Catalog() = default;

  Catalog(std::vector<std::string> kind_names, std::vector<std::pair<std::string, std::array<std::uint8_t, 3>>> textures) {
    if (kind_names.size() > kMaxKinds) throw Error(ErrorCode::config, "catalog has more than 48 object kinds");
    if (textures.size() > kMaxTextures) throw Error(ErrorCode::config, "catalog has more than 17 textures");
    for (auto& n : kind_names) {
      if (kind_index_.count(n)) throw Error(ErrorCode::config, "duplicate object kind: " + n);
      const int id = static_cast<int>(kinds_.size());
      kind_index_[n] = id;
      kinds_.push_back({id, std::move(n)});
    }
    for (auto& [n, rgb] : textures) {
      if (texture_index_.count(n)) throw Error(ErrorCode::config, "duplicate texture: " + n);
      const int id = static_cast<int>(textures_.size());
      texture_index_[n] = id;
      textures_.push_back({id, n, rgb});
    }
  }

  const std::vector<ObjectKind>& kinds() const { return kinds_; }
  const std::vector<TextureKind>& textures() const { return textures_; }

  std::optional<int> find_kind(const std::string& name) const {
    auto it = kind_index_.find(name);
    if (it == kind_index_.end()) return std::nullopt;
    return it->second;
  }
  std::optional<int> find_texture(const std::string& name) const {
    auto it = texture_index_.find(name);
    if (it == texture_index_.end()) return std::nullopt;
    return it->second;
  }

  int kind_id(const std::string& name) const {
    if (auto id = find_kind(name)) return *id;
    throw Error(ErrorCode::data, "unknown object kind: " + name);
  }
  int texture_id(const std::string& name) const {
    if (auto id = find_texture(name)) return *id;
    throw Error(ErrorCode::data, "unknown texture: " + name);
  }

  const std::string& kind_name(int id) const { return kinds_.at(static_cast<std::size_t>(id)).name; }
  const std::string& texture_name(int id) const { return textures_.at(static_cast<std::size_t>(id)).name; }

  std::vector<std::string> kind_names() const {
    std::vector<std::string> out;
    for (const auto& k : kinds_) out.push_back(k.name);
    return out;
  }
  std::vector<std::string> texture_names() const {
    std::vector<std::string> out;
    for (const auto& t : textures_) out.push_back(t.name);
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["kinds"] = kind_names();
    j["textures"] = nlohmann::json::array();
    for (const auto& t : textures_)
      j["textures"].push_back({{"name", t.name}, {"rgb", {t.display_color[0], t.display_color[1], t.display_color[2]}}});
    return j;
  }

  static Catalog from_json(const nlohmann::json& j) {
    std::vector<std::pair<std::string, std::array<std::uint8_t, 3>>> tex;
    for (const auto& t : j.at("textures")) {
      auto rgb = t.at("rgb");
      tex.push_back({t.at("name").get<std::string>(),
                     {rgb.at(0).get<std::uint8_t>(), rgb.at(1).get<std::uint8_t>(), rgb.at(2).get<std::uint8_t>()}});
    }
    return Catalog(j.at("kinds").get<std::vector<std::string>>(), std::move(tex));
  }

 private:
  std::vector<ObjectKind> kinds_;
  std::vector<TextureKind> textures_;
  std::map<std::string, int> kind_index_;
  std::map<std::string, int> texture_index_;
};

inline const Catalog& default_catalog() {
  static const Catalog catalog(
      {"tomato",      "bowl",       "container",   "box",      "drying rack", "drying towel", "drying cloth",
       "iPad",        "laptop",     "phone",       "pan",      "coaster",     "pallet",       "pepper",
       "peach",       "apple",      "food",        "sink",     "stove",       "bin",          "floor",
       "knife",       "sharp block", "mug",        "plate",    "flower",      "can",          "dust",
       "rug",         "banana",     "spoon",       "book",     "drill",       "sponge",       "cup",
       "tray",        "pot",        "kettle",      "toaster",  "fork",        "scissors",     "basket",
       "vase",        "pencil",     "block",       "carrot",   "bread",       "candle"},
      {{"red", {200, 30, 30}},
       {"dark red", {120, 10, 15}},
       {"green", {40, 160, 60}},
       {"yellow", {235, 210, 40}},
       {"blue", {40, 80, 200}},
       {"orange", {240, 140, 30}},
       {"purple", {130, 60, 170}},
       {"pink", {240, 150, 190}},
       {"white", {245, 245, 245}},
       {"black", {20, 20, 20}},
       {"silver", {190, 190, 200}},
       {"brown", {120, 80, 40}},
       {"glass", {180, 220, 230}},
       {"wooden", {160, 110, 60}},
       {"granite", {110, 110, 115}},
       {"plastic", {90, 200, 200}},
       {"marble", {225, 220, 210}}});
  return catalog;
}

inline Catalog load_catalog(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::config, "cannot open catalog file: " + path);
  try {
    return Catalog::from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::config, "malformed catalog " + path + ": " + e.what());
  }
}

// A set of catalog names: explicit list, ALL, or ALL minus exclusions.
struct NameSet {
  bool all = false;
  std::set<std::string> names;     // members when !all
  std::set<std::string> excluded;  // removed from ALL when all

  static NameSet everything() { return NameSet{true, {}, {}}; }
  static NameSet of(std::set<std::string> n) { return NameSet{false, std::move(n), {}}; }
  static NameSet all_except(std::set<std::string> ex) { return NameSet{true, {}, std::move(ex)}; }

  bool contains(const std::string& name) const { return all ? excluded.count(name) == 0 : names.count(name) > 0; }

  bool empty_for(const std::vector<std::string>& universe) const {
    return std::none_of(universe.begin(), universe.end(), [&](const auto& n) { return contains(n); });
  }

  std::set<std::string> expand(const std::vector<std::string>& universe) const {
    std::set<std::string> out;
    for (const auto& n : universe)
      if (contains(n)) out.insert(n);
    return out;
  }

  // Membership-wise subset over a finite universe.
  bool subset_of(const NameSet& other, const std::vector<std::string>& universe) const {
    return std::all_of(universe.begin(), universe.end(), [&](const auto& n) { return !contains(n) || other.contains(n); });
  }

  // Names referenced explicitly (for catalog resolution checks).
  std::set<std::string> referenced() const {
    std::set<std::string> out = names;
    out.insert(excluded.begin(), excluded.end());
    return out;
  }

  friend bool operator==(const NameSet&, const NameSet&) = default;
};

// Accepts ["a", "b"], "a, b", "ALL", "All", "ALL \\ a, b" or
// {"all": true, "except": [...]}.
inline NameSet name_set_from_json(const nlohmann::json& j) {
  if (j.is_array()) return NameSet::of(j.get<std::set<std::string>>());
  if (j.is_string()) {
    std::string s = trim(j.get<std::string>());
    if (to_lower(s) == "all") return NameSet::everything();
    auto split = [](std::string_view rest) {
      std::set<std::string> out;
      std::size_t pos = 0;
      while (pos <= rest.size()) {
        auto comma = rest.find(',', pos);
        if (comma == std::string_view::npos) comma = rest.size();
        auto name = trim(rest.substr(pos, comma - pos));
        if (!name.empty()) out.insert(name);
        pos = comma + 1;
      }
      return out;
    };
    auto slash = s.find('\\');
    if (slash != std::string::npos && to_lower(trim(s.substr(0, slash))) == "all")
      return NameSet::all_except(split(std::string_view(s).substr(slash + 1)));
    if (slash != std::string::npos) throw Error(ErrorCode::config, "unrecognized name set: " + s);
    auto names = split(s);
    if (names.empty()) throw Error(ErrorCode::config, "empty name set: " + s);
    return NameSet::of(std::move(names));
  }
  if (j.is_object()) {
    if (j.value("all", false)) return NameSet::all_except(j.value("except", std::set<std::string>{}));
    return NameSet::of(j.at("names").get<std::set<std::string>>());
  }
  throw Error(ErrorCode::config, "name set must be a list or string");
}

inline nlohmann::json name_set_to_json(const NameSet& s) {
  if (!s.all) return nlohmann::json(s.names);
  if (s.excluded.empty()) return "ALL";
  return nlohmann::json{{"all", true}, {"except", s.excluded}};
}

}  // namespace plga
