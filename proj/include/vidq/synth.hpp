#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vidq/dsl/validate.hpp"
#include "vidq/registry.hpp"
#include "vidq/trace_io.hpp"
#include "vidq/value.hpp"

namespace vidq::synth {

/// Linear motion, optionally switching to a second velocity after
/// `turn_frame` (a turn is two joined linear segments).
struct Trajectory {
  double x = 0, y = 0;    // center on the entry frame
  double vx = 0, vy = 0;  // px per frame
  std::optional<FrameId> turn_frame;
  double vx2 = 0, vy2 = 0;
  double w = 40, h = 30;
};

struct ObjectSpec {
  std::int64_t id = 0;
  std::string class_name = "car";
  std::map<std::string, Value> attrs;
  Trajectory trajectory;
  FrameId enter = 0;
  std::optional<FrameId> exit;  // last frame present (inclusive)
  double score = 0.9;
  /// Frames on which the detection is dropped on purpose (e.g. occlusion).
  std::vector<FrameId> dropouts;
};

/// Moves object `b` so its center sits at center(a) + offset on `frame`.
struct PlantedEvent {
  std::string kind = "proximity";
  std::int64_t a = 0;
  std::int64_t b = 0;
  FrameId frame = 0;
  double dx = 0, dy = 0;
};

struct Noise {
  double miss_rate = 0.0;
  double false_rate = 0.0;  // per-frame chance of one spurious detection
  double jitter = 0.0;      // max absolute bbox jitter in px
};

struct WorldSpec {
  std::int64_t frames = 0;
  double fps = 30.0;
  int width = 1920;
  int height = 1080;
  std::optional<double> px_per_m;
  std::vector<ObjectSpec> objects;
  std::vector<PlantedEvent> events;
  Noise noise;
  std::uint64_t seed = 0;

  /// Throws SpecError when the world description is unusable.
  void validate() const;
  static WorldSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  static WorldSpec load(const std::string& path);
};

struct World {
  VideoMeta meta;
  std::vector<TraceRecord> trace;
  GroundTruth truth;  // exact objects per frame
  /// (frame, detection index) -> true object id; -1 for spurious detections.
  std::map<std::pair<FrameId, int>, std::int64_t> identity;
};

/// Exact center of an object on a frame (no noise). Ignores presence.
std::pair<double, double> center_at(const ObjectSpec& o, FrameId f);
/// True when the object exists on the frame (dropouts still exist).
bool present(const ObjectSpec& o, FrameId f, std::int64_t frames);

/// Spec with planted events applied to the trajectories.
WorldSpec apply_events(const WorldSpec& spec);

World generate(const WorldSpec& spec);

/// Writes trace.jsonl, truth.jsonl, meta.json and identity.jsonl into `dir`.
void write_world(const World& w, const std::string& dir);

/// Per-frame labels of `query` computed from the noiseless world, without
/// the engine. Frames where no assignment of distinct objects satisfies the
/// query are labeled false. Throws UnsupportedError for constructs the
/// oracle cannot evaluate.
GroundTruth label(const WorldSpec& spec, const dsl::ValidatedProgram& program, const Registry& registry,
                  const std::string& query);

}  // namespace vidq::synth
