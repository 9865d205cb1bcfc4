#include <gtest/gtest.h>

#include <set>

#include "helpers.hpp"
#include "plga/serialize.hpp"
#include "plga/world.hpp"

using namespace plga;
using testing_util::make_scene;

namespace {

const TaskSpec& sweep_task() {
  static const auto s = testing_util::spec("sweep_hot");
  return s.task;
}

Sweep sweep_of(const Trajectory& t) { return std::get<Sweep>(t.actions.front()); }

}  // namespace

TEST(Catalog, SizesWithinLimitsAndNamesUnique) {
  const auto& cat = default_catalog();
  EXPECT_LE(cat.kinds().size(), kMaxKinds);
  EXPECT_LE(cat.textures().size(), kMaxTextures);
  const auto kn = cat.kind_names();
  const auto tn = cat.texture_names();
  std::set<std::string> k(kn.begin(), kn.end());
  std::set<std::string> t(tn.begin(), tn.end());
  EXPECT_EQ(k.size(), cat.kinds().size());
  EXPECT_EQ(t.size(), cat.textures().size());
}

TEST(Catalog, FixtureFileMatchesBuiltIn) {
  auto loaded = load_catalog(testing_util::source_path("fixtures/world/catalog.json"));
  EXPECT_EQ(loaded.kind_names(), default_catalog().kind_names());
  EXPECT_EQ(loaded.texture_names(), default_catalog().texture_names());
}

TEST(Catalog, EveryTrueDistributionResolves) {
  // spec_from_json rejects unknown names, so loading is the check.
  for (const auto& id : testing_util::spec_ids()) {
    auto s = testing_util::spec(id);
    EXPECT_FALSE(s.true_distribution.is_null()) << id;
  }
}

TEST(Catalog, NameSetForms) {
  auto all_but = name_set_from_json("ALL \\ iPad, laptop, phone");
  EXPECT_TRUE(all_but.contains("mug"));
  EXPECT_FALSE(all_but.contains("laptop"));
  EXPECT_TRUE(name_set_from_json("All").contains("anything"));
  auto list = name_set_from_json("bowl, container, box");
  EXPECT_TRUE(list.contains("box"));
  EXPECT_FALSE(list.contains("plate"));
  EXPECT_THROW(name_set_from_json("bowl \\ box"), Error);
  EXPECT_THROW(name_set_from_json(""), Error);
}

TEST(SampleScene, DeterministicPerSeed) {
  const auto sp = testing_util::spec("pick_ripe");
  for (std::uint64_t seed : {0u, 7u, 123u}) {
    EXPECT_EQ(sample_scene(sp.task, sp.profile, true, seed), sample_scene(sp.task, sp.profile, true, seed));
  }
}

TEST(SampleScene, HotStoveSceneHasStoveAndFlower) {
  const auto sp = testing_util::spec("sweep_hot");
  const auto s = sample_scene(sp.task, sp.train_subset, true, 7);
  const auto& cat = default_catalog();
  bool stove = false, flower = false;
  for (const auto& o : s.objects) {
    stove |= cat.kind_name(o.kind) == "stove";
    flower |= cat.kind_name(o.kind) == "flower";
  }
  EXPECT_TRUE(stove);
  EXPECT_TRUE(flower);
}

TEST(SampleScene, RipeAbsentHasNoGreenTomato) {
  const auto sp = testing_util::spec("pick_ripe");
  const auto& cat = default_catalog();
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto s = sample_scene(sp.task, sp.profile, false, seed);
    for (const auto& o : s.objects)
      EXPECT_FALSE(cat.kind_name(o.kind) == "tomato" && cat.texture_name(o.texture) == "green") << "seed " << seed;
  }
  const auto s = sample_scene(sp.task, sp.profile, false, 3);
  int tomatoes = 0;
  for (const auto& o : s.objects) tomatoes += cat.kind_name(o.kind) == "tomato";
  EXPECT_EQ(tomatoes, 1);
}

TEST(SampleScene, GeneratorInvariantsHoldAcrossSpecs) {
  for (const auto& id : testing_util::spec_ids()) {
    const auto sp = testing_util::spec(id);
    for (std::uint64_t seed = 0; seed < 20; ++seed)
      for (bool present : {true, false}) {
        const auto s = sample_scene(sp.task, sp.profile, present, seed);
        std::set<Cell> cells;
        for (const auto& o : s.objects) {
          EXPECT_TRUE(cell_of(o.center) == o.cell);
          EXPECT_TRUE(cells.insert(o.cell).second);
          EXPECT_GE(o.cell.row, 0);
          EXPECT_LT(o.cell.row, s.height);
        }
      }
  }
}

TEST(SampleScene, EmptyPoolIsAGenerationError) {
  auto sp = testing_util::spec("pick_ripe");
  sp.task.scene.target.kinds = {"laptop"};
  sp.task.scene.target.scoped = true;
  EXPECT_THROW(
      {
        try {
          sample_scene(sp.task, sp.profile, false, 0);
        } catch (const Error& e) {
          EXPECT_EQ(e.code(), ErrorCode::generation);
          throw;
        }
      },
      Error);
}

TEST(Step, PickAtCenterGrasps) {
  auto s = make_scene({{"tomato", "red", 2, 3}, {"laptop", "silver", 5, 5}});
  auto r = step(s, Pick{s.objects[0].center});
  ASSERT_TRUE(r.scene.held_object);
  EXPECT_EQ(*r.scene.held_object, 0);
  EXPECT_FALSE(r.noop);
}

TEST(Step, PickNothingIsFlaggedNoop) {
  auto s = make_scene({{"tomato", "red", 2, 3}});
  auto r = step(s, Pick{{0.9, 0.9}});
  EXPECT_TRUE(r.noop);
  EXPECT_FALSE(r.scene.held_object);
}

TEST(Step, PlaceMovesHeldObject) {
  auto s = make_scene({{"mug", "white", 11, 0}, {"plate", "white", 6, 6}}, 0);
  auto r = step(s, Place{{0.5, 0.5}});
  EXPECT_EQ(r.scene.objects[0].center, (Point{0.5, 0.5}));
  EXPECT_FALSE(r.scene.held_object);
}

TEST(Step, PlaceWithEmptyGripperIsAnError) {
  auto s = make_scene({{"plate", "white", 6, 6}});
  EXPECT_THROW(step(s, Place{{0.5, 0.5}}), Error);
}

TEST(Step, OutOfBoundsActionRejected) {
  auto s = make_scene({{"plate", "white", 6, 6}});
  EXPECT_THROW(step(s, Pick{{1.2, 0.5}}), Error);
}

TEST(Step, SweepEndsAtGoal) {
  auto s = make_scene({{"food", "red", 1, 2}, {"sink", "red", 1, 9}});
  const Point a = s.objects[0].center, b = s.objects[1].center;
  auto r = step(s, Sweep{a, b, lerp(a, b, 0.5)});
  EXPECT_LE(distance(r.scene.objects[0].center, b), 0.1);
}

TEST(Oracle, DetourClearsHotStove) {
  auto s = make_scene({{"food", "red", 1, 2}, {"sink", "red", 1, 9}, {"stove", "red", 1, 5}});
  const auto sp = testing_util::spec("sweep_hot");
  const auto t = oracle_demo(s, sp.task, sp.profile);
  const WorldParams params;
  EXPECT_GE(distance(sweep_of(t).via, s.objects[2].center), params.clearance);
}

TEST(Oracle, StraightSweepUsesExactMidpoint) {
  auto s = make_scene({{"food", "red", 1, 2}, {"sink", "red", 1, 9}, {"flower", "pink", 8, 8}});
  const auto t = oracle_demo(s, sweep_task(), testing_util::spec("sweep_hot").profile);
  const auto sw = sweep_of(t);
  EXPECT_EQ(sw.via.x, (sw.start.x + sw.end.x) / 2.0);
  EXPECT_EQ(sw.via.y, (sw.start.y + sw.end.y) / 2.0);
}

TEST(Oracle, ColdStoveDoesNotTriggerDetour) {
  auto s = make_scene({{"food", "red", 1, 2}, {"sink", "red", 1, 9}, {"stove", "silver", 1, 5}});
  OracleChoice ch;
  oracle_demo(s, sweep_task(), testing_util::spec("sweep_hot").profile, default_catalog(), {}, &ch);
  EXPECT_FALSE(ch.detour);
}

TEST(Oracle, RipeProfilePicksRedTomato) {
  auto s = make_scene({{"tomato", "green", 6, 2}, {"tomato", "red", 6, 10}});
  const auto sp = testing_util::spec("pick_ripe");
  const auto t = oracle_demo(s, sp.task, sp.profile);
  EXPECT_EQ(std::get<Pick>(t.actions.front()).target, s.objects[1].center);
}

TEST(Oracle, NoConsistentTargetIsDemoUnavailable) {
  auto s = make_scene({{"tomato", "green", 6, 2}});
  const auto sp = testing_util::spec("pick_ripe");
  try {
    oracle_demo(s, sp.task, sp.profile);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::demo_unavailable);
  }
}

TEST(Oracle, ReplayEndsWithinAlphaOfGoal) {
  for (const auto& id : testing_util::spec_ids()) {
    const auto sp = testing_util::spec(id);
    for (std::uint64_t seed = 0; seed < 15; ++seed)
      for (bool present : {true, false}) {
        Scene s;
        try {
          s = sample_scene(sp.task, sp.profile, present, seed);
        } catch (const Error&) {
          continue;
        }
        OracleChoice ch;
        Trajectory t;
        try {
          t = oracle_demo(s, sp.task, sp.profile, default_catalog(), {}, &ch);
        } catch (const Error& e) {
          ASSERT_EQ(e.code(), ErrorCode::demo_unavailable);
          continue;
        }
        EXPECT_LE(replay_goal_error(t, ch), sp.alpha) << id << " seed " << seed;
      }
  }
}

TEST(TrajectoryDistance, IdentityIsZero) {
  auto s = make_scene({{"food", "red", 1, 2}, {"sink", "red", 1, 9}, {"stove", "red", 1, 5}});
  const auto t = oracle_demo(s, sweep_task(), testing_util::spec("sweep_hot").profile);
  EXPECT_EQ(trajectory_distance(t, t), 0.0);
}

TEST(TrajectoryDistance, StraightVersusDetourExceedsKappa) {
  auto hot = make_scene({{"food", "red", 1, 2}, {"sink", "red", 1, 9}, {"stove", "red", 1, 5}});
  auto cold = make_scene({{"food", "red", 1, 2}, {"sink", "red", 1, 9}, {"stove", "silver", 1, 5}});
  const auto prof = testing_util::spec("sweep_hot").profile;
  const auto d = trajectory_distance(oracle_demo(hot, sweep_task(), prof), oracle_demo(cold, sweep_task(), prof));
  EXPECT_GT(d, 0.2);
  EXPECT_LE(d, 1.0);
}

TEST(TrajectoryDistance, SamePickTargetIsZero) {
  auto a = make_scene({{"tomato", "red", 6, 2}, {"apple", "red", 3, 3}});
  auto b = make_scene({{"tomato", "red", 6, 2}, {"flower", "pink", 9, 9}});
  EXPECT_EQ(trajectory_distance(Trajectory::make(a, {Pick{a.objects[0].center}}),
                                Trajectory::make(b, {Pick{b.objects[0].center}})),
            0.0);
}

TEST(TrajectoryDistance, PseudometricOnDatasetTriples) {
  const auto sp = testing_util::spec("sweep_hot");
  const auto data = generate_dataset(sp, 3);
  const auto t = data.trajectories();
  for (std::size_t i = 0; i < t.size(); ++i)
    for (std::size_t j = 0; j < t.size(); ++j) {
      EXPECT_DOUBLE_EQ(trajectory_distance(t[i], t[j]), trajectory_distance(t[j], t[i]));
      for (std::size_t k = 0; k < t.size(); k += 3)
        EXPECT_LE(trajectory_distance(t[i], t[k]), trajectory_distance(t[i], t[j]) + trajectory_distance(t[j], t[k]) + 1e-12);
    }
}

TEST(Trajectory, AlwaysEightWaypoints) {
  auto s = make_scene({{"tomato", "red", 6, 2}});
  auto t = Trajectory::make(s, {Pick{s.objects[0].center}});
  EXPECT_EQ(t.waypoints.size(), kWaypoints);
  for (auto p : t.waypoints) EXPECT_EQ(p, s.objects[0].center);
  auto sw = Trajectory::make(s, {Sweep{{0.1, 0.1}, {0.9, 0.1}, {0.5, 0.1}}});
  EXPECT_EQ(sw.waypoints.front(), (Point{0.1, 0.1}));
  EXPECT_EQ(sw.waypoints.back(), (Point{0.9, 0.1}));
  // Evenly spaced along a straight segment.
  for (std::size_t i = 1; i < kWaypoints; ++i)
    EXPECT_NEAR(sw.waypoints[i].x - sw.waypoints[i - 1].x, 0.8 / 7.0, 1e-12);
}

TEST(Serialize, SceneAndTrajectoryRoundTrip) {
  const auto sp = testing_util::spec("place_stable");
  const auto data = generate_dataset(sp, 1);
  for (const auto& d : data.demos) {
    const auto& t = d.trajectory;
    EXPECT_EQ(scene_from_json(scene_to_json(t.initial)), t.initial);
    EXPECT_EQ(trajectory_from_json(trajectory_to_json(t)), t);
  }
}

TEST(Serialize, TamperedWaypointsRejected) {
  const auto data = generate_dataset(testing_util::spec("pick_ripe"), 0);
  auto j = trajectory_to_json(data.demos[0].trajectory);
  j["waypoints"][3][0] = 0.123;
  EXPECT_THROW(trajectory_from_json(j), Error);
}

TEST(Serialize, UnknownNameRejected) {
  auto j = scene_to_json(make_scene({{"tomato", "red", 6, 2}}));
  j["objects"][0]["kind"] = "unicorn";
  EXPECT_THROW(scene_from_json(j), Error);
}
