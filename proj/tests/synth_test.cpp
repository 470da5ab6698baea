#include <gtest/gtest.h>

#include <filesystem>

#include "support/harness.hpp"
#include "vidq/error.hpp"

using namespace vidq;
using namespace vidq::testing;

namespace {

// Frames (out of 100) on which object 1 goes undetected with miss_rate 0.1
// and seed 7. Frozen from a run.
const std::set<FrameId> kGoldenMissed = {9, 15, 20, 49, 69, 74, 89, 90};

std::set<FrameId> frames_with(const synth::World& w, std::int64_t id) {
  std::set<FrameId> out;
  for (const auto& [key, obj] : w.identity) {
    if (obj == id) out.insert(key.first);
  }
  return out;
}

}  // namespace

TEST(Synth, StaticObjectRepeatsItsBox) {
  synth::WorldSpec s;
  s.frames = 10;
  s.seed = 3;
  s.objects.push_back(linear(1, "car", 200, 200, 0, 0));
  const synth::World w = synth::generate(s);
  ASSERT_EQ(w.trace.size(), 10u);
  for (const auto& rec : w.trace) {
    ASSERT_EQ(rec.detections.size(), 1u);
    EXPECT_EQ(rec.detections[0].bbox, w.trace[0].detections[0].bbox);
  }
  EXPECT_EQ(w.trace[0].detections[0].bbox, (BBox{180, 185, 220, 215}));
}

TEST(Synth, LinearMotionIsAnArithmeticProgression) {
  synth::WorldSpec s;
  s.frames = 20;
  s.seed = 3;
  s.objects.push_back(linear(1, "car", 100, 100, 2, 0));
  const synth::World w = synth::generate(s);
  for (std::size_t f = 1; f < w.trace.size(); ++f) {
    EXPECT_DOUBLE_EQ(w.trace[f].detections[0].bbox.cx() - w.trace[f - 1].detections[0].bbox.cx(), 2.0);
  }
}

TEST(Synth, TurnSwitchesVelocity) {
  auto o = linear(1, "car", 100, 100, 2, 0);
  o.trajectory.turn_frame = 5;
  o.trajectory.vx2 = 0;
  o.trajectory.vy2 = 3;
  EXPECT_EQ(synth::center_at(o, 5), (std::pair<double, double>{110, 100}));
  EXPECT_EQ(synth::center_at(o, 7), (std::pair<double, double>{110, 106}));
}

TEST(Synth, EnterExitAndDropouts) {
  auto o = linear(1, "car", 100, 100, 0, 0, 3, 6);
  o.dropouts = {4};
  synth::WorldSpec s;
  s.frames = 10;
  s.seed = 1;
  s.objects.push_back(o);
  const synth::World w = synth::generate(s);
  EXPECT_EQ(frames_with(w, 1), (std::set<FrameId>{3, 5, 6}));
  ASSERT_NE(w.truth.objects(4), nullptr);
  EXPECT_EQ(w.truth.objects(4)->size(), 1u);
}

TEST(Synth, SeededMissesAreFrozen) {
  synth::WorldSpec s;
  s.frames = 100;
  s.seed = 7;
  s.noise.miss_rate = 0.1;
  s.objects.push_back(linear(1, "car", 200, 200, 0, 0));
  const auto seen = frames_with(synth::generate(s), 1);
  std::set<FrameId> missed;
  for (FrameId f = 0; f < 100; ++f) {
    if (!seen.count(f)) missed.insert(f);
  }
  EXPECT_EQ(missed, kGoldenMissed);
  EXPECT_EQ(frames_with(synth::generate(s), 1), seen);
}

TEST(Synth, JitterStaysBounded) {
  synth::WorldSpec s;
  s.frames = 30;
  s.seed = 2;
  s.noise.jitter = 1.5;
  s.objects.push_back(linear(1, "car", 200, 200, 0, 0));
  const synth::World w = synth::generate(s);
  for (const auto& rec : w.trace) {
    EXPECT_LE(std::abs(rec.detections[0].bbox.x1 - 180), 1.5);
    EXPECT_LE(std::abs(rec.detections[0].bbox.y2 - 215), 1.5);
  }
}

TEST(Synth, LabelsFollowTheQuery) {
  const Registry reg = Registry::with_builtins();
  const auto vp = compile(R"(
vobj Car {
  detector general_car;
  @stateless(intrinsic) property color = color;
}
query RedCar {
  bind c: Car;
  frame_constraint c.color == "red";
}
)",
                          reg);
  synth::WorldSpec s;
  s.frames = 30;
  s.seed = 1;
  const char* colors[] = {"blue", "red", "white"};
  for (int i = 0; i < 3; ++i) {
    auto o = linear(i, "car", 100, 100 + 100.0 * i, 0, 0, 10 * i, 10 * i + 9);
    o.attrs["color"] = Value(colors[i]);
    s.objects.push_back(o);
  }
  const GroundTruth gt = synth::label(s, vp, reg, "RedCar");
  for (FrameId f = 0; f < 30; ++f) EXPECT_EQ(gt.label(f), std::optional<bool>(f >= 10 && f < 20)) << f;
}

TEST(Synth, ProximityEventPlacesSecondObject) {
  synth::WorldSpec s;
  s.frames = 40;
  s.seed = 1;
  s.objects.push_back(linear(1, "person", 300, 300, 1, 0));
  s.objects.push_back(linear(2, "car", 800, 600, -2, 0));
  s.events.push_back(synth::PlantedEvent{"proximity", 1, 2, 20, 15, 0});
  const synth::WorldSpec applied = synth::apply_events(s);
  const auto a = synth::center_at(applied.objects[0], 20);
  const auto b = synth::center_at(applied.objects[1], 20);
  EXPECT_DOUBLE_EQ(b.first - a.first, 15);
  EXPECT_DOUBLE_EQ(b.second - a.second, 0);
  EXPECT_NO_THROW(synth::generate(s));
}

TEST(SynthSpec, SeedIsRequired) {
  EXPECT_THROW(synth::WorldSpec::from_json(nlohmann::json::parse(R"({"frames": 10, "objects": []})")), SpecError);
}

TEST(SynthSpec, LeavingTheFrameNeedsAnExit) {
  synth::WorldSpec s;
  s.frames = 100;
  s.seed = 1;
  s.width = 300;
  s.height = 300;
  s.objects.push_back(linear(1, "car", 100, 100, 5, 0));
  EXPECT_THROW(synth::generate(s), SpecError);
  clip_exits(s);
  EXPECT_NO_THROW(synth::generate(s));
}

TEST(SynthSpec, JsonRoundTripAndFiles) {
  synth::WorldSpec s;
  s.frames = 5;
  s.seed = 9;
  s.px_per_m = 20;
  s.objects.push_back(linear(1, "car", 100, 100, 1, 1));
  s.objects[0].attrs["color"] = Value("red");
  const synth::WorldSpec back = synth::WorldSpec::from_json(s.to_json());
  EXPECT_EQ(back.to_json(), s.to_json());
  TempDir dir("synth");
  synth::write_world(synth::generate(s), dir.str());
  for (const char* f : {"trace.jsonl", "truth.jsonl", "meta.json", "identity.jsonl"}) {
    EXPECT_TRUE(std::filesystem::exists(dir.file(f))) << f;
  }
  EXPECT_EQ(read_trace(dir.file("trace.jsonl")).size(), 5u);
}
