#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "plga/experiment.hpp"

namespace testing_util {

inline std::string source_path(const std::string& rel) { return std::string(PLGA_SOURCE_DIR) + "/" + rel; }

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline plga::ExperimentSpec spec(const std::string& id) {
  return plga::load_spec(source_path("fixtures/specs/" + id + ".json"));
}

inline std::vector<std::string> spec_ids() {
  std::vector<std::string> ids;
  for (const auto& e : std::filesystem::directory_iterator(source_path("fixtures/specs")))
    ids.push_back(e.path().stem().string());
  std::sort(ids.begin(), ids.end());
  return ids;
}

struct Obj {
  std::string kind;
  std::string texture;
  int row;
  int col;
};

inline plga::Scene make_scene(const std::vector<Obj>& objs, std::optional<int> held = std::nullopt) {
  const auto& cat = plga::default_catalog();
  plga::Scene s;
  int uid = 0;
  for (const auto& o : objs) {
    plga::Cell c{o.row, o.col};
    s.objects.push_back({uid++, cat.kind_id(o.kind), cat.texture_id(o.texture), plga::cell_center(c), c});
  }
  s.held_object = held;
  plga::validate_scene(s);
  return s;
}

inline std::shared_ptr<plga::LmGateway> fixture_gateway() {
  plga::LmBackendConfig cfg;
  cfg.mode = plga::BackendMode::scripted;
  cfg.rules_path = source_path("fixtures/lm/rules.json");
  return std::make_shared<plga::LmGateway>(cfg);
}

inline std::shared_ptr<plga::AbstractionEngine> fixture_engine() {
  return std::make_shared<plga::AbstractionEngine>(fixture_gateway());
}

inline std::shared_ptr<plga::AbstractionEngine> engine_from_rules(const nlohmann::json& rules) {
  plga::LmBackendConfig cfg;
  return std::make_shared<plga::AbstractionEngine>(
      std::make_shared<plga::LmGateway>(cfg, plga::ScriptedRules::from_json(rules)));
}

inline plga::TrainConfig quick_train(int epochs = 300) {
  plga::TrainConfig c;
  c.epochs = epochs;
  return c;
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("plga-test-" + plga::hex64(plga::fnv1a64(std::to_string(reinterpret_cast<std::uintptr_t>(this)) +
                                                      std::to_string(std::chrono::steady_clock::now()
                                                                         .time_since_epoch()
                                                                         .count()))));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace testing_util
