#pragma once

// Scene <-> text feature sets. caption() textualizes a scene; instantiate()
// is the inverse relative to a concrete scene: it masks out every object
// whose features were not kept.

#include <set>
#include <string>
#include <vector>

#include "plga/catalog.hpp"
#include "plga/world.hpp"

namespace plga {

// Kept textures may be a plain set or ALL (no texture restriction).
struct TextureSelection {
  bool all = false;
  std::set<std::string> names;

  bool contains(const std::string& t) const { return all || names.count(t) > 0; }
  friend bool operator==(const TextureSelection&, const TextureSelection&) = default;
};

struct FeatureSet {
  std::set<std::string> kinds;
  TextureSelection textures;
  std::vector<std::string> object_captions;  // "texture kind", one per object
};

inline std::string object_caption(const SceneObject& o, const Catalog& cat = default_catalog()) {
  return cat.texture_name(o.texture) + " " + cat.kind_name(o.kind);
}

inline FeatureSet caption(const Scene& scene, const Catalog& cat = default_catalog()) {
  FeatureSet fs;
  for (const auto& o : scene.objects) {
    fs.kinds.insert(cat.kind_name(o.kind));
    fs.textures.names.insert(cat.texture_name(o.texture));
    fs.object_captions.push_back(object_caption(o, cat));
  }
  return fs;
}

inline std::set<std::string> caption_set(const FeatureSet& fs) {
  return {fs.object_captions.begin(), fs.object_captions.end()};
}

struct AbstractState {
  int width = kGridWidth;
  int height = kGridHeight;
  std::vector<std::uint8_t> mask;  // row-major
  std::set<int> kept_uids;
  std::string source_scene_id;

  std::uint8_t at(int row, int col) const { return mask[static_cast<std::size_t>(row * width + col)]; }
  friend bool operator==(const AbstractState&, const AbstractState&) = default;
};

inline std::string scene_id(const Scene& s) {
  std::string key = std::to_string(s.width) + "x" + std::to_string(s.height) + ";" +
                    (s.held_object ? std::to_string(*s.held_object) : std::string("-"));
  for (const auto& o : s.objects)
    key += ";" + std::to_string(o.uid) + ":" + std::to_string(o.kind) + ":" + std::to_string(o.texture) + "@" +
           std::to_string(o.cell.row) + "," + std::to_string(o.cell.col);
  return hex64(fnv1a64(key));
}

// Retains an object iff its kind is kept and its texture is kept.
inline AbstractState instantiate(const Scene& scene, const FeatureSet& kept, const Catalog& cat = default_catalog()) {
  std::vector<std::string> unknown;
  for (const auto& k : kept.kinds)
    if (!cat.find_kind(k)) unknown.push_back("kind '" + k + "'");
  if (!kept.textures.all)
    for (const auto& t : kept.textures.names)
      if (!cat.find_texture(t)) unknown.push_back("texture '" + t + "'");
  if (!unknown.empty()) {
    std::string msg = "cannot resolve kept features:";
    for (const auto& u : unknown) msg += " " + u;
    throw Error(ErrorCode::data, msg);
  }
  AbstractState a;
  a.width = scene.width;
  a.height = scene.height;
  a.mask.assign(static_cast<std::size_t>(scene.width * scene.height), 0);
  a.source_scene_id = scene_id(scene);
  for (const auto& o : scene.objects) {
    if (!kept.kinds.count(cat.kind_name(o.kind))) continue;
    if (!kept.textures.contains(cat.texture_name(o.texture))) continue;
    a.kept_uids.insert(o.uid);
    a.mask[static_cast<std::size_t>(o.cell.row * scene.width + o.cell.col)] = 1;
  }
  return a;
}

// ASCII rendering, top row of the workspace first.
inline std::string render_mask_ascii(const AbstractState& a) {
  std::string out;
  for (int r = a.height - 1; r >= 0; --r) {
    for (int c = 0; c < a.width; ++c) out += a.at(r, c) ? '#' : '.';
    out += '\n';
  }
  return out;
}

// Plain-text (P3) pixmap, one pixel per cell, kept cells white.
inline std::string render_mask_ppm(const AbstractState& a) {
  std::string out = "P3\n" + std::to_string(a.width) + " " + std::to_string(a.height) + "\n255\n";
  for (int r = a.height - 1; r >= 0; --r) {
    for (int c = 0; c < a.width; ++c) {
      if (c) out += ' ';
      out += a.at(r, c) ? "255 255 255" : "0 0 0";
    }
    out += '\n';
  }
  return out;
}

}  // namespace plga
