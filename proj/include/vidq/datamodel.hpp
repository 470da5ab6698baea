#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "vidq/trace_io.hpp"
#include "vidq/value.hpp"

namespace vidq {

using TrackId = std::int64_t;

/// (frame id, index of the detection within the trace record).
struct NodeId {
  FrameId frame = 0;
  int det = 0;

  auto operator<=>(const NodeId&) const = default;
};

std::string to_string(const NodeId& id);

struct PropertyValue {
  Value value;
  FrameId computed_at = 0;

  bool operator==(const PropertyValue&) const = default;
};

/// One detected object on one frame.
struct VObjInstance {
  NodeId id;
  std::string class_name;  // declared VObj type
  BBox bbox;
  double score = 1.0;
  std::map<std::string, Value> attrs;  // raw detection attributes
  std::optional<TrackId> track_id;
  std::map<std::string, PropertyValue> properties;
  std::set<std::string> bindings;  // query bindings this node currently satisfies
};

enum class EdgeKind { Motion, SpatialRelation, DurationRelation, TemporalRelation };

std::string to_string(EdgeKind k);

struct Edge {
  EdgeKind kind = EdgeKind::Motion;
  NodeId from;
  NodeId to;
  std::string label;  // relation binding name, empty for motion edges
  std::map<std::string, PropertyValue> properties;

  bool same_endpoints(const Edge& o) const {
    return kind == o.kind && from == o.from && to == o.to && label == o.label;
  }
};

/// A tuple of nodes, one per binding, that jointly satisfy a query on a frame.
struct Match {
  FrameId frame = 0;
  std::vector<NodeId> nodes;

  auto operator<=>(const Match&) const = default;
};

/// The per-batch object graph flowing between operators.
struct FrameGraph {
  FrameId first = 0;  // frame range covered by the batch (inclusive)
  FrameId last = -1;
  std::vector<FrameId> frames;  // frames still alive, ascending
  std::map<NodeId, VObjInstance> nodes;
  std::vector<Edge> edges;

  /// Set once bindings are joined: binding order of every Match.
  std::vector<std::string> match_bindings;
  std::vector<Match> matches;

  bool has_frame(FrameId f) const;
  std::vector<const VObjInstance*> nodes_on(FrameId f) const;
  /// Removes a frame together with its nodes, incident edges and matches.
  void drop_frame(FrameId f);
  /// Removes a node and every incident edge and match.
  void drop_node(const NodeId& id);
};

/// Checks edge endpoints and the per-kind invariants. Empty result means valid.
std::vector<std::string> validate_graph(const FrameGraph& g);

/// Node/edge union keyed by node id. Both graphs must cover the same frame
/// range. Throws MergeConflictError when a property differs between sides.
FrameGraph graph_merge(const FrameGraph& a, const FrameGraph& b);

/// Human-readable dump used by golden tests and `explain --graph`.
std::string dump_graph(const FrameGraph& g);

/// Persistent identity of one object across frames.
class Track {
 public:
  Track(TrackId id, std::string class_name, std::map<std::string, std::size_t> history_caps = {});

  TrackId id() const { return id_; }
  const std::string& class_name() const { return class_name_; }
  FrameId last_seen() const { return last_seen_; }
  void set_last_seen(FrameId f) { last_seen_ = f; }

  bool tracks_history(const std::string& property) const { return caps_.count(property) > 0; }
  std::size_t history_size(const std::string& property) const;
  std::size_t history_cap(const std::string& property) const;

  /// Appends a value; the buffer keeps at most the declared cap.
  void record(const std::string& property, Value v);

  /// The k most recent values oldest-first, or nullopt (Undefined) when fewer
  /// than k exist. Throws SchemaError if the property has no history.
  std::optional<std::vector<Value>> window(const std::string& property, std::size_t k) const;

  /// Frame-stamped variants: a batch records every frame before any of its
  /// frames is evaluated, so windows are cut at `upto`.
  void record_at(const std::string& property, FrameId frame, Value v);
  std::optional<std::vector<Value>> window_at(const std::string& property, std::size_t k, FrameId upto) const;
  /// Extra entries kept beyond each cap (the batch size).
  void set_slack(std::size_t n) { slack_ = n; }

  /// First write wins; returns the stored label.
  bool set_label(const std::string& key, bool value);
  std::optional<bool> label(const std::string& key) const;

 private:
  TrackId id_;
  std::string class_name_;
  FrameId last_seen_ = -1;
  std::map<std::string, std::size_t> caps_;
  std::size_t slack_ = 0;
  std::map<std::string, std::deque<std::pair<FrameId, Value>>> history_;
  std::map<std::string, bool> labels_;
};

}  // namespace vidq
