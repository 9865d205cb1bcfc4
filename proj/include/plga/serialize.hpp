#pragma once

// JSON forms of scenes, actions and trajectories. Objects are written with
// catalog names so files stay readable and catalog-order independent.

#include <string>
#include <vector>

#include <json.hpp>

#include "plga/captioner.hpp"
#include "plga/catalog.hpp"
#include "plga/world.hpp"

namespace plga {

inline nlohmann::json point_json(Point p) { return nlohmann::json::array({p.x, p.y}); }

inline Point point_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 2) throw Error(ErrorCode::data, "point must be [x, y]");
  return {j[0].get<double>(), j[1].get<double>()};
}

inline nlohmann::json scene_to_json(const Scene& s, const Catalog& cat = default_catalog()) {
  nlohmann::json objs = nlohmann::json::array();
  for (const auto& o : s.objects)
    objs.push_back({{"uid", o.uid},
                    {"kind", cat.kind_name(o.kind)},
                    {"texture", cat.texture_name(o.texture)},
                    {"center", point_json(o.center)},
                    {"cell", {o.cell.row, o.cell.col}}});
  return {{"width", s.width},
          {"height", s.height},
          {"held_object", s.held_object ? nlohmann::json(*s.held_object) : nlohmann::json(nullptr)},
          {"objects", objs}};
}

inline Scene scene_from_json(const nlohmann::json& j, const Catalog& cat = default_catalog()) {
  try {
    Scene s;
    s.width = j.value("width", kGridWidth);
    s.height = j.value("height", kGridHeight);
    if (j.contains("held_object") && !j["held_object"].is_null()) s.held_object = j["held_object"].get<int>();
    for (const auto& o : j.at("objects")) {
      SceneObject so;
      so.uid = o.at("uid").get<int>();
      so.kind = cat.kind_id(o.at("kind").get<std::string>());
      so.texture = cat.texture_id(o.at("texture").get<std::string>());
      const auto& cell = o.at("cell");
      so.cell = {cell.at(0).get<int>(), cell.at(1).get<int>()};
      so.center = o.contains("center") ? point_from_json(o["center"]) : cell_center(so.cell, s.width, s.height);
      s.objects.push_back(so);
    }
    validate_scene(s);
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::data, std::string("malformed scene: ") + e.what());
  }
}

inline nlohmann::json action_to_json(const Action& a) {
  if (const auto* p = std::get_if<Pick>(&a)) return {{"type", "pick"}, {"target", point_json(p->target)}};
  if (const auto* p = std::get_if<Place>(&a)) return {{"type", "place"}, {"target", point_json(p->target)}};
  const auto& s = std::get<Sweep>(a);
  return {{"type", "sweep"}, {"start", point_json(s.start)}, {"via", point_json(s.via)}, {"end", point_json(s.end)}};
}

inline Action action_from_json(const nlohmann::json& j) {
  const auto type = j.at("type").get<std::string>();
  if (type == "pick") return Pick{point_from_json(j.at("target"))};
  if (type == "place") return Place{point_from_json(j.at("target"))};
  if (type == "sweep")
    return Sweep{point_from_json(j.at("start")), point_from_json(j.at("end")), point_from_json(j.at("via"))};
  throw Error(ErrorCode::data, "unknown action type: " + type);
}

inline nlohmann::json trajectory_to_json(const Trajectory& t, const Catalog& cat = default_catalog()) {
  nlohmann::json acts = nlohmann::json::array(), wps = nlohmann::json::array();
  for (const auto& a : t.actions) acts.push_back(action_to_json(a));
  for (auto p : t.waypoints) wps.push_back(point_json(p));
  return {{"initial", scene_to_json(t.initial, cat)}, {"actions", acts}, {"waypoints", wps}};
}

// Waypoints are recomputed from the actions; a stored copy must agree.
inline Trajectory trajectory_from_json(const nlohmann::json& j, const Catalog& cat = default_catalog()) {
  try {
    std::vector<Action> acts;
    for (const auto& a : j.at("actions")) acts.push_back(action_from_json(a));
    auto t = Trajectory::make(scene_from_json(j.at("initial"), cat), std::move(acts));
    if (j.contains("waypoints")) {
      const auto& w = j["waypoints"];
      if (w.size() != kWaypoints) throw Error(ErrorCode::data, "trajectory must carry 8 waypoints");
      for (std::size_t i = 0; i < kWaypoints; ++i)
        if (distance(point_from_json(w[i]), t.waypoints[i]) > 1e-9)
          throw Error(ErrorCode::data, "stored waypoints disagree with the actions");
    }
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::data, std::string("malformed trajectory: ") + e.what());
  }
}

// Cell-grid view for renderers: one entry per object.
inline nlohmann::json scene_grid_json(const Scene& s, const Catalog& cat = default_catalog(),
                                      const AbstractState* mask = nullptr) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& o : s.objects) {
    const auto& rgb = cat.textures().at(static_cast<std::size_t>(o.texture)).display_color;
    nlohmann::json c{{"row", o.cell.row},
                     {"col", o.cell.col},
                     {"kind", cat.kind_name(o.kind)},
                     {"texture", cat.texture_name(o.texture)},
                     {"caption", object_caption(o, cat)},
                     {"rgb", {rgb[0], rgb[1], rgb[2]}},
                     {"held", s.held_object && *s.held_object == o.uid}};
    if (mask) c["kept"] = mask->kept_uids.count(o.uid) > 0;
    cells.push_back(c);
  }
  return {{"width", s.width}, {"height", s.height}, {"cells", cells}};
}

}  // namespace plga
