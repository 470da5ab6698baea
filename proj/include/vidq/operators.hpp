#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "vidq/datamodel.hpp"
#include "vidq/dsl/ast.hpp"
#include "vidq/trace_io.hpp"
#include "vidq/value.hpp"

namespace vidq::ops {

using RefResolver = std::function<Value(const dsl::PropertyRef&)>;

/// Kleene comparison: Undefined operands give Unknown.
Truth compare(const Value& v, dsl::CmpOp op, const std::vector<Value>& literals);

/// Three-valued evaluation with left-to-right short-circuit: And stops at the
/// first False, Or at the first True. Inside holds(rel, e) bare references
/// resolve against `rel`.
Truth evaluate(const dsl::PredicateExpr& e, const RefResolver& resolve);

/// Keeps frames for which `keep` is true; nodes on dropped frames go too.
FrameGraph frame_filter(const FrameGraph& in, const std::function<bool(FrameId)>& keep);

/// Adds one node per emitted detection on every alive frame. `detect`
/// returns trace-detection indices (kSceneNode for the scene node).
FrameGraph object_detector(const FrameGraph& in, const std::map<FrameId, const TraceRecord*>& records,
                           const std::function<std::vector<int>(const TraceRecord&)>& detect,
                           const std::string& type);

/// Calls `compute` once per node (eager projection).
void vobj_projector(const FrameGraph& in, const std::function<void(const VObjInstance&)>& compute);

/// Removes nodes for which `keep` is false. Frames stay even when emptied.
FrameGraph vobj_filter(const FrameGraph& in, const std::function<bool(const VObjInstance&)>& keep);

/// Joins per-binding branch graphs covering the same frame range. A frame
/// survives iff it is alive in every branch and every branch has a node on
/// it. Matches are the cartesian product of distinct nodes per binding.
FrameGraph join(const std::vector<FrameGraph>& branches, const std::vector<std::string>& bindings);

/// Builds matches on a single-branch graph (one binding).
FrameGraph single_branch_matches(const FrameGraph& in, const std::string& binding);

/// Adds a spatial-relation edge for every match (participant a -> b) and
/// attaches the computed properties.
FrameGraph relation_projector(const FrameGraph& in, const std::string& relation_binding, std::size_t role_a,
                              std::size_t role_b,
                              const std::function<std::map<std::string, Value>(const Match&)>& compute);

/// Removes matches for which `keep` is false, then frames left without one.
FrameGraph tuple_filter(const FrameGraph& in, const std::function<bool(const Match&)>& keep);

using TrackKey = std::vector<TrackId>;

/// Streaming duration evaluation over successive frames.
class DurationEvaluator {
 public:
  DurationEvaluator(std::int64_t min_frames, std::int64_t gap_tolerance);
  /// Keys that fire at `frame`, given the keys satisfied on it. Frames must
  /// be fed in increasing order; unsatisfied frames may be skipped.
  std::set<TrackKey> step(FrameId frame, const std::set<TrackKey>& satisfied);

 private:
  struct Run {
    FrameId start;
    FrameId last;
  };
  std::int64_t d_;
  std::int64_t g_;
  std::map<TrackKey, Run> runs_;
};

/// Whole-sequence form: set of (key, frame) firings.
std::set<std::pair<TrackKey, FrameId>> eval_duration(const std::map<TrackKey, std::set<FrameId>>& satisfied,
                                                     std::int64_t min_frames, std::int64_t gap_tolerance = 0);

struct TemporalResult {
  bool holds = false;
  std::vector<std::pair<FrameId, FrameId>> witnesses;  // (end of q1 run, start of q2 run)
  std::set<FrameId> occurrences;                       // frames of witnessing q2 runs
};

/// Streaming temporal evaluation; every frame of the video must be fed.
class TemporalEvaluator {
 public:
  explicit TemporalEvaluator(std::int64_t max_interval) : max_(max_interval) {}
  /// Returns true when `frame` belongs to a witnessing q2 run.
  bool step(FrameId frame, bool q1, bool q2);
  const TemporalResult& result() const { return result_; }

 private:
  std::int64_t max_;
  bool prev1_ = false;
  bool prev2_ = false;
  bool in_witness_ = false;
  std::optional<FrameId> last_end_;
  TemporalResult result_;
};

TemporalResult eval_temporal(const std::set<FrameId>& occ1, const std::set<FrameId>& occ2,
                             std::int64_t max_interval);

/// Per-track accumulation for video-level constraints.
class VideoAggregator {
 public:
  explicit VideoAggregator(dsl::Quantifier q = dsl::Quantifier::All, bool constrained = true)
      : q_(q), constrained_(constrained) {}
  void observe(TrackId track, Truth t);
  /// Tracks satisfying the constraint, ascending.
  std::vector<TrackId> satisfying() const;
  std::int64_t count_distinct() const { return static_cast<std::int64_t>(satisfying().size()); }

 private:
  struct Seen {
    bool any_true = false;
    bool any_false = false;
  };
  dsl::Quantifier q_;
  bool constrained_;
  std::map<TrackId, Seen> seen_;
};

}  // namespace vidq::ops
