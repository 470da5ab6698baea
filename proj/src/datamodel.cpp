#include "vidq/datamodel.hpp"

#include <algorithm>
#include <iterator>
#include <limits>
#include <sstream>

#include "vidq/error.hpp"

namespace vidq {

std::string to_string(const NodeId& id) {
  return "(" + std::to_string(id.frame) + "," + std::to_string(id.det) + ")";
}

std::string to_string(EdgeKind k) {
  switch (k) {
    case EdgeKind::Motion: return "motion";
    case EdgeKind::SpatialRelation: return "spatial";
    case EdgeKind::DurationRelation: return "duration";
    case EdgeKind::TemporalRelation: return "temporal";
  }
  return "?";
}

bool FrameGraph::has_frame(FrameId f) const { return std::binary_search(frames.begin(), frames.end(), f); }

std::vector<const VObjInstance*> FrameGraph::nodes_on(FrameId f) const {
  std::vector<const VObjInstance*> out;
  for (auto it = nodes.lower_bound(NodeId{f, std::numeric_limits<int>::min()});
       it != nodes.end() && it->first.frame == f; ++it) {
    out.push_back(&it->second);
  }
  return out;
}

void FrameGraph::drop_frame(FrameId f) {
  frames.erase(std::remove(frames.begin(), frames.end(), f), frames.end());
  for (auto it = nodes.begin(); it != nodes.end();) {
    it = it->first.frame == f ? nodes.erase(it) : std::next(it);
  }
  std::erase_if(edges, [&](const Edge& e) { return e.from.frame == f || e.to.frame == f; });
  std::erase_if(matches, [&](const Match& m) { return m.frame == f; });
}

void FrameGraph::drop_node(const NodeId& id) {
  nodes.erase(id);
  std::erase_if(edges, [&](const Edge& e) { return e.from == id || e.to == id; });
  std::erase_if(matches, [&](const Match& m) {
    return std::find(m.nodes.begin(), m.nodes.end(), id) != m.nodes.end();
  });
}

std::vector<std::string> validate_graph(const FrameGraph& g) {
  std::vector<std::string> problems;
  for (const auto& [id, n] : g.nodes) {
    if (n.id != id) problems.push_back("node key mismatch at " + to_string(id));
    if (!g.has_frame(id.frame)) problems.push_back("node " + to_string(id) + " on a dropped frame");
  }
  for (const auto& e : g.edges) {
    auto from = g.nodes.find(e.from);
    auto to = g.nodes.find(e.to);
    const std::string tag = to_string(e.kind) + " edge " + to_string(e.from) + "->" + to_string(e.to);
    if (from == g.nodes.end() || to == g.nodes.end()) {
      problems.push_back(tag + " references a missing node");
      continue;
    }
    switch (e.kind) {
      case EdgeKind::Motion:
        if (!from->second.track_id || from->second.track_id != to->second.track_id) {
          problems.push_back(tag + " joins different tracks");
        }
        if (e.to.frame != e.from.frame + 1) problems.push_back(tag + " spans non-consecutive frames");
        break;
      case EdgeKind::SpatialRelation:
        if (e.from.frame != e.to.frame) problems.push_back(tag + " crosses frames");
        break;
      case EdgeKind::DurationRelation: {
        auto lim = e.properties.find("max_frames");
        const FrameId dist = e.to.frame - e.from.frame;
        if (dist < 0) problems.push_back(tag + " runs backwards");
        if (lim != e.properties.end() && lim->second.value.is_number() &&
            static_cast<double>(dist) > lim->second.value.as_number()) {
          problems.push_back(tag + " exceeds its time constraint");
        }
        break;
      }
      case EdgeKind::TemporalRelation:
        if (!(e.from.frame < e.to.frame)) problems.push_back(tag + " does not move forward in time");
        break;
    }
  }
  for (const auto& m : g.matches) {
    for (const auto& id : m.nodes) {
      if (!g.nodes.count(id)) problems.push_back("match on frame " + std::to_string(m.frame) + " lost a node");
    }
  }
  return problems;
}

FrameGraph graph_merge(const FrameGraph& a, const FrameGraph& b) {
  // An empty default graph merges as identity.
  const bool a_empty = a.last < a.first && a.nodes.empty();
  const bool b_empty = b.last < b.first && b.nodes.empty();
  if (a_empty) return b;
  if (b_empty) return a;
  if (a.first != b.first || a.last != b.last) {
    throw InternalError("graph_merge: frame ranges differ");
  }
  FrameGraph out = a;
  std::vector<FrameId> frames;
  std::set_union(a.frames.begin(), a.frames.end(), b.frames.begin(), b.frames.end(), std::back_inserter(frames));
  out.frames = std::move(frames);
  for (const auto& [id, node] : b.nodes) {
    auto [it, inserted] = out.nodes.emplace(id, node);
    if (inserted) continue;
    VObjInstance& mine = it->second;
    for (const auto& [name, pv] : node.properties) {
      auto [pit, added] = mine.properties.emplace(name, pv);
      if (!added && pit->second.value != pv.value) {
        throw MergeConflictError("conflicting values for property '" + name + "' on node " + to_string(id));
      }
    }
    if (!mine.track_id) mine.track_id = node.track_id;
    mine.bindings.insert(node.bindings.begin(), node.bindings.end());
  }
  for (const auto& e : b.edges) {
    auto dup = std::find_if(out.edges.begin(), out.edges.end(), [&](const Edge& x) { return x.same_endpoints(e); });
    if (dup == out.edges.end()) {
      out.edges.push_back(e);
      continue;
    }
    for (const auto& [name, pv] : e.properties) {
      auto [pit, added] = dup->properties.emplace(name, pv);
      if (!added && pit->second.value != pv.value) {
        throw MergeConflictError("conflicting values for edge property '" + name + "'");
      }
    }
  }
  out.matches.clear();
  out.match_bindings.clear();
  return out;
}

std::string dump_graph(const FrameGraph& g) {
  std::ostringstream os;
  os << "graph frames " << g.first << ".." << g.last << " alive [";
  for (std::size_t i = 0; i < g.frames.size(); ++i) os << (i ? "," : "") << g.frames[i];
  os << "]\n";
  for (const auto& [id, n] : g.nodes) {
    os << "node " << to_string(id) << " " << n.class_name;
    if (n.track_id) os << " track=" << *n.track_id;
    if (!n.bindings.empty()) {
      os << " bind=";
      bool first = true;
      for (const auto& b : n.bindings) {
        os << (first ? "" : "|") << b;
        first = false;
      }
    }
    for (const auto& [name, pv] : n.properties) os << " " << name << "=" << to_string(pv.value);
    os << "\n";
  }
  for (const auto& e : g.edges) {
    os << "edge " << to_string(e.kind) << " " << to_string(e.from) << "->" << to_string(e.to);
    if (!e.label.empty()) os << " " << e.label;
    for (const auto& [name, pv] : e.properties) os << " " << name << "=" << to_string(pv.value);
    os << "\n";
  }
  for (const auto& m : g.matches) {
    os << "match " << m.frame;
    for (const auto& id : m.nodes) os << " " << to_string(id);
    os << "\n";
  }
  return os.str();
}

Track::Track(TrackId id, std::string class_name, std::map<std::string, std::size_t> history_caps)
    : id_(id), class_name_(std::move(class_name)), caps_(std::move(history_caps)) {}

std::size_t Track::history_size(const std::string& property) const {
  auto it = history_.find(property);
  return it == history_.end() ? 0 : it->second.size();
}

std::size_t Track::history_cap(const std::string& property) const {
  auto it = caps_.find(property);
  return it == caps_.end() ? 0 : it->second;
}

void Track::record(const std::string& property, Value v) { record_at(property, last_seen_, std::move(v)); }

void Track::record_at(const std::string& property, FrameId frame, Value v) {
  auto cap = caps_.find(property);
  if (cap == caps_.end()) throw SchemaError("property '" + property + "' keeps no history");
  auto& buf = history_[property];
  buf.emplace_back(frame, std::move(v));
  while (buf.size() > cap->second + slack_) buf.pop_front();
}

std::optional<std::vector<Value>> Track::window(const std::string& property, std::size_t k) const {
  return window_at(property, k, std::numeric_limits<FrameId>::max());
}

std::optional<std::vector<Value>> Track::window_at(const std::string& property, std::size_t k, FrameId upto) const {
  if (!caps_.count(property)) throw SchemaError("property '" + property + "' is not declared with history");
  auto it = history_.find(property);
  if (k == 0 || it == history_.end()) return std::nullopt;
  const auto& buf = it->second;
  auto end = buf.end();
  while (end != buf.begin() && std::prev(end)->first > upto) --end;
  if (static_cast<std::size_t>(end - buf.begin()) < k) return std::nullopt;
  std::vector<Value> out;
  out.reserve(k);
  for (auto i = end - static_cast<std::ptrdiff_t>(k); i != end; ++i) out.push_back(i->second);
  return out;
}

bool Track::set_label(const std::string& key, bool value) { return labels_.emplace(key, value).first->second; }

std::optional<bool> Track::label(const std::string& key) const {
  auto it = labels_.find(key);
  if (it == labels_.end()) return std::nullopt;
  return it->second;
}

}  // namespace vidq
