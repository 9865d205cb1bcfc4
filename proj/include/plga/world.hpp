#pragma once

// Deterministic tabletop world: a 12x12 grid over the unit square, one object
// per cell, pick/place/sweep actions, and an oracle demonstrator that acts on a
// hidden preference profile.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "plga/catalog.hpp"
#include "plga/core.hpp"

namespace plga {

inline constexpr int kGridWidth = 12;
inline constexpr int kGridHeight = 12;
inline constexpr std::size_t kWaypoints = 8;

struct Cell {
  int row = 0;
  int col = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
  friend auto operator<=>(const Cell&, const Cell&) = default;
};

inline Point cell_center(Cell c, int width = kGridWidth, int height = kGridHeight) {
  return {(c.col + 0.5) / width, (c.row + 0.5) / height};
}

inline Cell cell_of(Point p, int width = kGridWidth, int height = kGridHeight) {
  auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
  return {clampi(static_cast<int>(std::floor(p.y * height)), height - 1),
          clampi(static_cast<int>(std::floor(p.x * width)), width - 1)};
}

struct SceneObject {
  int uid = 0;
  int kind = 0;
  int texture = 0;
  Point center;
  Cell cell;
  friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

struct Scene {
  std::vector<SceneObject> objects;
  int width = kGridWidth;
  int height = kGridHeight;
  std::optional<int> held_object;

  const SceneObject* find(int uid) const {
    for (const auto& o : objects)
      if (o.uid == uid) return &o;
    return nullptr;
  }
  SceneObject* find(int uid) {
    for (auto& o : objects)
      if (o.uid == uid) return &o;
    return nullptr;
  }
  const SceneObject* at(Cell c) const {
    for (const auto& o : objects)
      if (o.cell == c) return &o;
    return nullptr;
  }

  friend bool operator==(const Scene&, const Scene&) = default;
};

// Row-major occupancy grid (row 0 first).
inline std::vector<std::uint8_t> occupancy(const Scene& s) {
  std::vector<std::uint8_t> grid(static_cast<std::size_t>(s.width * s.height), 0);
  for (const auto& o : s.objects) grid[static_cast<std::size_t>(o.cell.row * s.width + o.cell.col)] = 1;
  return grid;
}

// Checks the generator invariants: centers inside their cells, cells in
// bounds, no shared cells.
inline void validate_scene(const Scene& s) {
  std::set<Cell> used;
  std::set<int> uids;
  for (const auto& o : s.objects) {
    if (o.cell.row < 0 || o.cell.row >= s.height || o.cell.col < 0 || o.cell.col >= s.width)
      throw Error(ErrorCode::data, "object " + std::to_string(o.uid) + " outside grid");
    if (!(cell_of(o.center, s.width, s.height) == o.cell))
      throw Error(ErrorCode::data, "object " + std::to_string(o.uid) + " center outside its cell");
    if (!used.insert(o.cell).second) throw Error(ErrorCode::data, "two objects share a cell");
    if (!uids.insert(o.uid).second) throw Error(ErrorCode::data, "duplicate object uid");
  }
  if (s.held_object && !s.find(*s.held_object)) throw Error(ErrorCode::data, "held object not in scene");
}

struct Pick {
  Point target;
  friend bool operator==(const Pick&, const Pick&) = default;
};
struct Place {
  Point target;
  friend bool operator==(const Place&, const Place&) = default;
};
struct Sweep {
  Point start;
  Point end;
  Point via;
  friend bool operator==(const Sweep&, const Sweep&) = default;
};
using Action = std::variant<Pick, Place, Sweep>;

inline std::vector<Point> action_points(const Action& a) {
  return std::visit(
      [](const auto& v) -> std::vector<Point> {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Sweep>)
          return {v.start, v.via, v.end};
        else
          return {v.target};
      },
      a);
}

inline bool action_in_bounds(const Action& a) {
  auto pts = action_points(a);
  return std::all_of(pts.begin(), pts.end(), in_unit_box);
}

// Resamples the polyline through all action keypoints to kWaypoints points
// evenly spaced by arc length.
inline std::array<Point, kWaypoints> canonical_waypoints(const std::vector<Action>& actions) {
  std::vector<Point> keys;
  for (const auto& a : actions)
    for (auto p : action_points(a)) keys.push_back(p);
  std::array<Point, kWaypoints> out{};
  if (keys.empty()) return out;
  std::vector<double> cum(keys.size(), 0.0);
  for (std::size_t i = 1; i < keys.size(); ++i) cum[i] = cum[i - 1] + distance(keys[i - 1], keys[i]);
  const double total = cum.back();
  if (total == 0.0) {
    out.fill(keys.front());
    return out;
  }
  std::size_t seg = 1;
  for (std::size_t k = 0; k < kWaypoints; ++k) {
    const double s = total * static_cast<double>(k) / static_cast<double>(kWaypoints - 1);
    while (seg + 1 < keys.size() && cum[seg] < s) ++seg;
    const double len = cum[seg] - cum[seg - 1];
    const double t = len > 0.0 ? std::clamp((s - cum[seg - 1]) / len, 0.0, 1.0) : 0.0;
    out[k] = lerp(keys[seg - 1], keys[seg], t);
  }
  out.back() = keys.back();
  return out;
}

struct Trajectory {
  Scene initial;
  std::vector<Action> actions;
  std::array<Point, kWaypoints> waypoints{};

  static Trajectory make(Scene initial, std::vector<Action> actions) {
    Trajectory t{std::move(initial), std::move(actions), {}};
    t.waypoints = canonical_waypoints(t.actions);
    return t;
  }
  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

// Mean waypoint distance over the workspace diagonal; lies in [0, 1].
inline double trajectory_distance(const Trajectory& a, const Trajectory& b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < kWaypoints; ++i) sum += distance(a.waypoints[i], b.waypoints[i]);
  return std::min(1.0, sum / static_cast<double>(kWaypoints) / std::sqrt(2.0));
}

// Flattened action parameters: 2 values for pick/place, 6 for sweep
// (start, via, end).
inline std::vector<double> action_vector(const Trajectory& t) {
  std::vector<double> out;
  for (const auto& a : t.actions)
    for (auto p : action_points(a)) {
      out.push_back(p.x);
      out.push_back(p.y);
    }
  return out;
}

enum class TaskFamily { pick, place, sweep };

inline const char* to_string(TaskFamily f) {
  switch (f) {
    case TaskFamily::pick: return "pick";
    case TaskFamily::place: return "place";
    case TaskFamily::sweep: return "sweep";
  }
  return "?";
}

inline TaskFamily task_family_from_string(const std::string& s) {
  if (s == "pick") return TaskFamily::pick;
  if (s == "place") return TaskFamily::place;
  if (s == "sweep") return TaskFamily::sweep;
  throw Error(ErrorCode::config, "unknown task family: " + s);
}

inline std::size_t action_dim(TaskFamily f) { return f == TaskFamily::sweep ? 6 : 2; }

// Candidate (kind, texture) pairs for one scene role. Scoped pools are
// filtered by the active preference profile before sampling.
struct FeaturePool {
  std::vector<std::string> kinds;
  std::vector<std::string> textures;
  bool scoped = false;

  bool empty() const { return kinds.empty() || textures.empty(); }
};

struct SceneDistribution {
  FeaturePool subject;             // place: held object; sweep: swept object
  FeaturePool target;              // pick/place: object acted on; sweep: goal
  FeaturePool contrast;            // only in feature-present scenes
  FeaturePool benign;              // sweep, feature-absent scenes: non-triggering obstacle
  FeaturePool target_companion;    // object directly below the target
  FeaturePool contrast_companion;  // object directly below the contrast object
  FeaturePool distractor;
};

struct TaskSpec {
  TaskFamily family = TaskFamily::pick;
  std::string utterance;
  SceneDistribution scene;
};

struct PreferenceProfile {
  std::string name;
  NameSet allowed_kinds;
  NameSet allowed_textures = NameSet::everything();
  std::set<std::string> avoid_kinds;
  NameSet avoid_textures = NameSet::everything();

  bool allows(const std::string& kind, const std::string& texture) const {
    return allowed_kinds.contains(kind) && allowed_textures.contains(texture);
  }
  bool triggers_avoid(const std::string& kind, const std::string& texture) const {
    return avoid_kinds.count(kind) > 0 && avoid_textures.contains(texture);
  }
};

struct WorldParams {
  double grasp_radius = 0.06;
  double clearance = 0.2;       // an avoid-object within this distance of the straight sweep blocks it
  double detour_offset = 0.75;  // perpendicular displacement of the detour via-point
  int max_retries = 100;
};

// ---- layout ---------------------------------------------------------------

namespace layout {
inline const std::vector<Cell>& pick_slots() {
  static const std::vector<Cell> s{{6, 2}, {6, 6}, {6, 10}};
  return s;
}
inline constexpr Cell kHomeCell{11, 0};
inline const std::vector<int>& sweep_rows() {
  static const std::vector<int> r{0, 1, 2};
  return r;
}
inline constexpr int kSweepStartCol = 2;
inline constexpr int kSweepGoalCol = 9;
inline constexpr int kSweepMinDistractorRow = 4;
inline Cell companion_of(Cell c) { return {c.row - 1, c.col}; }
}  // namespace layout

namespace detail {

struct Feature {
  int kind;
  int texture;
};

template <typename Pred>
std::vector<Feature> pool_pairs(const FeaturePool& pool, const Catalog& cat, Pred keep) {
  std::vector<Feature> out;
  for (const auto& k : pool.kinds)
    for (const auto& t : pool.textures)
      if (!pool.scoped || keep(k, t)) out.push_back({cat.kind_id(k), cat.texture_id(t)});
  return out;
}

inline Feature draw(const std::vector<Feature>& pairs, Rng& rng, const char* role) {
  if (pairs.empty()) throw Error(ErrorCode::generation, std::string("empty candidate pool for ") + role);
  return pairs[rng.index(pairs.size())];
}

inline bool kind_in(const FeaturePool& pool, const std::string& kind) {
  return std::find(pool.kinds.begin(), pool.kinds.end(), kind) != pool.kinds.end();
}

}  // namespace detail

// Draws a scene for `task`. Scoped pools are filtered by `profile` (the
// training subset or the full profile). Feature-present scenes include the
// preference-triggering object.
inline Scene sample_scene(const TaskSpec& task, const PreferenceProfile& profile, bool feature_present,
                          std::uint64_t seed, const Catalog& cat = default_catalog(),
                          const WorldParams& params = {}) {
  using detail::Feature;
  Rng rng(derive_seed(seed, "scene"));
  Scene scene;
  int next_uid = 0;
  auto add = [&](Feature f, Cell c) {
    scene.objects.push_back({next_uid, f.kind, f.texture, cell_center(c, scene.width, scene.height), c});
    return next_uid++;
  };
  auto allows = [&](const std::string& k, const std::string& t) { return profile.allows(k, t); };
  auto triggers = [&](const std::string& k, const std::string& t) { return profile.triggers_avoid(k, t); };
  const auto& d = task.scene;
  std::set<Cell> reserved;

  if (task.family == TaskFamily::sweep) {
    const int row = layout::sweep_rows()[rng.index(layout::sweep_rows().size())];
    const Cell start{row, layout::kSweepStartCol};
    const Cell goal{row, layout::kSweepGoalCol};
    add(detail::draw(detail::pool_pairs(d.subject, cat, allows), rng, "subject"), start);
    add(detail::draw(detail::pool_pairs(d.target, cat, allows), rng, "goal"), goal);
    const Cell obstacle{row, rng.index(2) == 0 ? 5 : 6};
    if (feature_present)
      add(detail::draw(detail::pool_pairs(d.contrast, cat, triggers), rng, "contrast"), obstacle);
    else if (!d.benign.empty())
      add(detail::draw(detail::pool_pairs(d.benign, cat, allows), rng, "benign"), obstacle);
    for (int r = 0; r < layout::kSweepMinDistractorRow; ++r)
      for (int c = 0; c < scene.width; ++c) reserved.insert({r, c});
  } else {
    const auto& slots = layout::pick_slots();
    std::vector<std::size_t> order(slots.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    const Cell target_cell = slots[order[0]];
    if (task.family == TaskFamily::place) {
      const int held = add(detail::draw(detail::pool_pairs(d.subject, cat, allows), rng, "subject"), layout::kHomeCell);
      scene.held_object = held;
    }
    add(detail::draw(detail::pool_pairs(d.target, cat, allows), rng, "target"), target_cell);
    if (!d.target_companion.empty())
      add(detail::draw(detail::pool_pairs(d.target_companion, cat, allows), rng, "target companion"),
          layout::companion_of(target_cell));
    if (feature_present) {
      const Cell contrast_cell = slots[order[1]];
      add(detail::draw(detail::pool_pairs(d.contrast, cat, allows), rng, "contrast"), contrast_cell);
      if (!d.contrast_companion.empty())
        add(detail::draw(detail::pool_pairs(d.contrast_companion, cat, allows), rng, "contrast companion"),
            layout::companion_of(contrast_cell));
    }
    for (auto c : slots) {
      reserved.insert(c);
      reserved.insert(layout::companion_of(c));
    }
    reserved.insert(layout::kHomeCell);
  }

  if (!d.distractor.empty()) {
    const auto f = detail::draw(detail::pool_pairs(d.distractor, cat, allows), rng, "distractor");
    for (int attempt = 0;; ++attempt) {
      if (attempt >= params.max_retries)
        throw Error(ErrorCode::generation, "could not place distractor without a cell collision");
      const Cell c{static_cast<int>(rng.index(static_cast<std::size_t>(scene.height))),
                   static_cast<int>(rng.index(static_cast<std::size_t>(scene.width)))};
      if (reserved.count(c) || scene.at(c)) continue;
      add(f, c);
      break;
    }
  }
  validate_scene(scene);
  return scene;
}

struct StepResult {
  Scene scene;
  bool noop = false;
  std::string note;
};

namespace detail {
inline std::optional<int> nearest_within(const Scene& s, Point p, double radius, std::optional<int> skip) {
  std::optional<int> best;
  double best_d = radius;
  for (const auto& o : s.objects) {
    if (skip && o.uid == *skip) continue;
    const double dd = distance(o.center, p);
    if (dd <= best_d) {
      best_d = dd;
      best = o.uid;
    }
  }
  return best;
}
}  // namespace detail

// Deterministic transition.
inline StepResult step(const Scene& scene, const Action& action, const WorldParams& params = {}) {
  if (!action_in_bounds(action)) throw Error(ErrorCode::invalid_action, "action point outside the unit workspace");
  StepResult r{scene, false, {}};
  if (const auto* pick = std::get_if<Pick>(&action)) {
    if (scene.held_object) {
      r.noop = true;
      r.note = "gripper already holds an object";
      return r;
    }
    auto uid = detail::nearest_within(scene, pick->target, params.grasp_radius, std::nullopt);
    if (!uid) {
      r.noop = true;
      r.note = "nothing within grasp radius";
      return r;
    }
    r.scene.held_object = *uid;
  } else if (const auto* place = std::get_if<Place>(&action)) {
    if (!scene.held_object) throw Error(ErrorCode::invalid_action, "place with an empty gripper");
    auto* obj = r.scene.find(*scene.held_object);
    obj->center = place->target;
    obj->cell = cell_of(place->target, scene.width, scene.height);
    r.scene.held_object.reset();
  } else {
    const auto& sw = std::get<Sweep>(action);
    auto uid = detail::nearest_within(scene, sw.start, params.grasp_radius, scene.held_object);
    if (!uid) {
      r.noop = true;
      r.note = "nothing to sweep at start point";
      return r;
    }
    auto* obj = r.scene.find(*uid);
    obj->center = sw.end;
    obj->cell = cell_of(sw.end, scene.width, scene.height);
  }
  return r;
}

struct OracleChoice {
  int manipulated_uid = -1;  // picked / placed / swept object
  int goal_uid = -1;         // pick target, place surface, sweep goal
  bool detour = false;
};

namespace detail {

inline std::vector<const SceneObject*> consistent_targets(const Scene& scene, const TaskSpec& task,
                                                          const PreferenceProfile& profile, const Catalog& cat) {
  std::vector<const SceneObject*> out;
  for (const auto& o : scene.objects) {
    if (scene.held_object && o.uid == *scene.held_object) continue;
    const auto& kn = cat.kind_name(o.kind);
    if (!kind_in(task.scene.target, kn) || !profile.allows(kn, cat.texture_name(o.texture))) continue;
    if (!task.scene.target_companion.empty()) {
      const auto* below = scene.at(layout::companion_of(o.cell));
      if (!below || !kind_in(task.scene.target_companion, cat.kind_name(below->kind)) ||
          !profile.allows(cat.kind_name(below->kind), cat.texture_name(below->texture)))
        continue;
    }
    out.push_back(&o);
  }
  return out;
}

inline const SceneObject* first_of_kind(const Scene& scene, const FeaturePool& pool, const Catalog& cat,
                                        std::optional<int> skip = std::nullopt) {
  for (const auto& o : scene.objects) {
    if (skip && o.uid == *skip) continue;
    if (kind_in(pool, cat.kind_name(o.kind))) return &o;
  }
  return nullptr;
}

}  // namespace detail

// Expert demonstration under the hidden profile.
inline Trajectory oracle_demo(const Scene& scene, const TaskSpec& task, const PreferenceProfile& profile,
                              const Catalog& cat = default_catalog(), const WorldParams& params = {},
                              OracleChoice* choice = nullptr) {
  OracleChoice ch;
  std::vector<Action> actions;
  if (task.family == TaskFamily::sweep) {
    const auto* subject = detail::first_of_kind(scene, task.scene.subject, cat);
    if (!subject) throw Error(ErrorCode::demo_unavailable, "no object to sweep");
    const auto* goal = detail::first_of_kind(scene, task.scene.target, cat, subject->uid);
    if (!goal) throw Error(ErrorCode::demo_unavailable, "no sweep goal in scene");
    const Point s = subject->center, e = goal->center;
    const Point mid = lerp(s, e, 0.5);
    Point via = mid;
    for (const auto& o : scene.objects) {
      if (o.uid == subject->uid || o.uid == goal->uid) continue;
      if (!profile.triggers_avoid(cat.kind_name(o.kind), cat.texture_name(o.texture))) continue;
      if (distance_to_segment(o.center, s, e) <= params.clearance) {
        ch.detour = true;
        break;
      }
    }
    if (ch.detour) {
      const double dx = e.x - s.x, dy = e.y - s.y;
      const double len = std::hypot(dx, dy);
      Point n{-dy / len, dx / len};
      if (n.y < 0.0 || (n.y == 0.0 && n.x < 0.0)) n = {-n.x, -n.y};
      via = clamp_unit({mid.x + params.detour_offset * n.x, mid.y + params.detour_offset * n.y});
    }
    ch.manipulated_uid = subject->uid;
    ch.goal_uid = goal->uid;
    actions.push_back(Sweep{s, e, via});
  } else {
    if (task.family == TaskFamily::place && !scene.held_object)
      throw Error(ErrorCode::demo_unavailable, "place task without a held object");
    auto targets = detail::consistent_targets(scene, task, profile, cat);
    if (targets.empty()) throw Error(ErrorCode::demo_unavailable, "no profile-consistent target in scene");
    const auto* t = targets.front();
    ch.goal_uid = t->uid;
    if (task.family == TaskFamily::pick) {
      ch.manipulated_uid = t->uid;
      actions.push_back(Pick{t->center});
    } else {
      ch.manipulated_uid = *scene.held_object;
      actions.push_back(Place{t->center});
    }
  }
  if (choice) *choice = ch;
  return Trajectory::make(scene, std::move(actions));
}

// Replays a trajectory through `step` and returns the distance between the
// manipulated object and its goal point at the end.
inline double replay_goal_error(const Trajectory& t, const OracleChoice& ch, const WorldParams& params = {}) {
  Scene s = t.initial;
  for (const auto& a : t.actions) s = step(s, a, params).scene;
  const auto* goal = t.initial.find(ch.goal_uid);
  const auto* moved = s.find(ch.manipulated_uid);
  if (!goal || !moved) return 1e9;
  if (std::holds_alternative<Pick>(t.actions.back()))
    return s.held_object == ch.manipulated_uid ? distance(moved->center, goal->center) : 1e9;
  return distance(moved->center, goal->center);
}

}  // namespace plga
