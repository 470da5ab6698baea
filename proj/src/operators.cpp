#include "vidq/operators.hpp"

#include <algorithm>

#include "vidq/error.hpp"

namespace vidq::ops {

using dsl::CmpOp;
using dsl::PredicateExpr;

namespace {

Truth compare_one(const Value& v, CmpOp op, const Value& lit) {
  if (v.is_number() && lit.is_number()) {
    const double a = v.as_number(), b = lit.as_number();
    switch (op) {
      case CmpOp::Eq: return truth_of(a == b);
      case CmpOp::Ne: return truth_of(a != b);
      case CmpOp::Lt: return truth_of(a < b);
      case CmpOp::Le: return truth_of(a <= b);
      case CmpOp::Gt: return truth_of(a > b);
      case CmpOp::Ge: return truth_of(a >= b);
      case CmpOp::In: break;
    }
    return Truth::Unknown;
  }
  if (v.is_string() && lit.is_string()) {
    const int c = v.as_string().compare(lit.as_string());
    switch (op) {
      case CmpOp::Eq: return truth_of(c == 0);
      case CmpOp::Ne: return truth_of(c != 0);
      case CmpOp::Lt: return truth_of(c < 0);
      case CmpOp::Le: return truth_of(c <= 0);
      case CmpOp::Gt: return truth_of(c > 0);
      case CmpOp::Ge: return truth_of(c >= 0);
      case CmpOp::In: break;
    }
    return Truth::Unknown;
  }
  // Mixed or non-ordered types: only (in)equality is meaningful.
  if (op == CmpOp::Eq) return truth_of(v == lit);
  if (op == CmpOp::Ne) return truth_of(!(v == lit));
  return Truth::Unknown;
}

}  // namespace

Truth compare(const Value& v, CmpOp op, const std::vector<Value>& literals) {
  if (v.is_undefined()) return Truth::Unknown;
  if (op == CmpOp::In) {
    for (const auto& l : literals) {
      if (compare_one(v, CmpOp::Eq, l) == Truth::True) return Truth::True;
    }
    return Truth::False;
  }
  if (literals.empty()) return Truth::Unknown;
  return compare_one(v, op, literals.front());
}

Truth evaluate(const PredicateExpr& e, const RefResolver& resolve) {
  switch (e.kind) {
    case PredicateExpr::Kind::Compare: return compare(resolve(e.ref), e.op, e.literals);
    case PredicateExpr::Kind::Not: return truth_not(evaluate(e.children.at(0), resolve));
    case PredicateExpr::Kind::And: {
      Truth acc = Truth::True;
      for (const auto& c : e.children) {
        acc = truth_and(acc, evaluate(c, resolve));
        if (acc == Truth::False) break;
      }
      return acc;
    }
    case PredicateExpr::Kind::Or: {
      Truth acc = Truth::False;
      for (const auto& c : e.children) {
        acc = truth_or(acc, evaluate(c, resolve));
        if (acc == Truth::True) break;
      }
      return acc;
    }
    case PredicateExpr::Kind::Holds: {
      const std::string& rel = e.relation;
      return evaluate(e.children.at(0), [&](const dsl::PropertyRef& r) {
        if (!r.binding.empty()) return resolve(r);
        dsl::PropertyRef scoped = r;
        scoped.binding = rel;
        return resolve(scoped);
      });
    }
  }
  return Truth::Unknown;
}

FrameGraph frame_filter(const FrameGraph& in, const std::function<bool(FrameId)>& keep) {
  FrameGraph out = in;
  for (FrameId f : in.frames) {
    if (!keep(f)) out.drop_frame(f);
  }
  return out;
}

FrameGraph object_detector(const FrameGraph& in, const std::map<FrameId, const TraceRecord*>& records,
                           const std::function<std::vector<int>(const TraceRecord&)>& detect,
                           const std::string& type) {
  FrameGraph out = in;
  for (FrameId f : in.frames) {
    auto it = records.find(f);
    if (it == records.end()) throw InternalError("detector: no trace record for frame " + std::to_string(f));
    const TraceRecord& rec = *it->second;
    for (int idx : detect(rec)) {
      VObjInstance n;
      n.id = NodeId{f, idx};
      n.class_name = type;
      if (idx >= 0) {
        const Detection& d = rec.detections.at(static_cast<std::size_t>(idx));
        n.bbox = d.bbox;
        n.score = d.score;
        n.attrs = d.attrs;
      }
      out.nodes.emplace(n.id, std::move(n));
    }
  }
  return out;
}

void vobj_projector(const FrameGraph& in, const std::function<void(const VObjInstance&)>& compute) {
  for (const auto& [id, node] : in.nodes) compute(node);
}

FrameGraph vobj_filter(const FrameGraph& in, const std::function<bool(const VObjInstance&)>& keep) {
  FrameGraph out = in;
  for (const auto& [id, node] : in.nodes) {
    if (!keep(node)) out.drop_node(id);
  }
  return out;
}

namespace {

void build_matches(FrameGraph& g, const std::vector<std::string>& bindings,
                   const std::vector<std::map<FrameId, std::vector<NodeId>>>& per_binding) {
  g.match_bindings = bindings;
  g.matches.clear();
  for (FrameId f : g.frames) {
    std::vector<const std::vector<NodeId>*> lists;
    bool empty = false;
    for (const auto& pb : per_binding) {
      auto it = pb.find(f);
      if (it == pb.end() || it->second.empty()) {
        empty = true;
        break;
      }
      lists.push_back(&it->second);
    }
    if (empty) continue;
    std::vector<NodeId> cur;
    std::function<void(std::size_t)> rec = [&](std::size_t i) {
      if (i == lists.size()) {
        g.matches.push_back(Match{f, cur});
        return;
      }
      for (const NodeId& n : *lists[i]) {
        if (std::find(cur.begin(), cur.end(), n) != cur.end()) continue;
        cur.push_back(n);
        rec(i + 1);
        cur.pop_back();
      }
    };
    rec(0);
  }
  std::set<FrameId> with_match;
  for (const auto& m : g.matches) with_match.insert(m.frame);
  for (FrameId f : std::vector<FrameId>(g.frames)) {
    if (!with_match.count(f)) g.drop_frame(f);
  }
}

}  // namespace

FrameGraph join(const std::vector<FrameGraph>& branches, const std::vector<std::string>& bindings) {
  if (branches.size() != bindings.size()) throw InternalError("join: branch/binding count mismatch");
  if (branches.empty()) return {};
  for (const auto& b : branches) {
    if (b.first != branches.front().first || b.last != branches.front().last) {
      throw InternalError("join: branches are not aligned on frames");
    }
  }
  std::set<FrameId> alive(branches.front().frames.begin(), branches.front().frames.end());
  std::vector<std::map<FrameId, std::vector<NodeId>>> per_binding(branches.size());
  for (std::size_t i = 0; i < branches.size(); ++i) {
    std::set<FrameId> has_node;
    for (const auto& [id, n] : branches[i].nodes) {
      has_node.insert(id.frame);
      per_binding[i][id.frame].push_back(id);
    }
    std::set<FrameId> next;
    for (FrameId f : branches[i].frames) {
      if (alive.count(f) && has_node.count(f)) next.insert(f);
    }
    alive = std::move(next);
  }
  FrameGraph out;
  out.first = branches.front().first;
  out.last = branches.front().last;
  out.frames.assign(alive.begin(), alive.end());
  for (std::size_t i = 0; i < branches.size(); ++i) {
    FrameGraph tagged = branches[i];
    tagged.frames = out.frames;
    for (auto it = tagged.nodes.begin(); it != tagged.nodes.end();) {
      if (!alive.count(it->first.frame)) {
        it = tagged.nodes.erase(it);
      } else {
        it->second.bindings.insert(bindings[i]);
        ++it;
      }
    }
    tagged.edges.erase(std::remove_if(tagged.edges.begin(), tagged.edges.end(),
                                      [&](const Edge& e) { return !tagged.nodes.count(e.from) || !tagged.nodes.count(e.to); }),
                       tagged.edges.end());
    out = graph_merge(out, tagged);
  }
  build_matches(out, bindings, per_binding);
  return out;
}

FrameGraph single_branch_matches(const FrameGraph& in, const std::string& binding) {
  FrameGraph out = in;
  std::vector<std::map<FrameId, std::vector<NodeId>>> per(1);
  for (auto& [id, n] : out.nodes) {
    n.bindings.insert(binding);
    per[0][id.frame].push_back(id);
  }
  build_matches(out, {binding}, per);
  return out;
}

FrameGraph relation_projector(const FrameGraph& in, const std::string& relation_binding, std::size_t role_a,
                              std::size_t role_b,
                              const std::function<std::map<std::string, Value>(const Match&)>& compute) {
  FrameGraph out = in;
  for (const auto& m : in.matches) {
    Edge e;
    e.kind = EdgeKind::SpatialRelation;
    e.from = m.nodes.at(role_a);
    e.to = m.nodes.at(role_b);
    e.label = relation_binding;
    for (auto& [k, v] : compute(m)) e.properties[k] = PropertyValue{v, m.frame};
    auto dup = std::find_if(out.edges.begin(), out.edges.end(), [&](const Edge& x) { return x.same_endpoints(e); });
    if (dup == out.edges.end()) {
      out.edges.push_back(std::move(e));
    } else {
      for (auto& [k, v] : e.properties) dup->properties[k] = v;
    }
  }
  return out;
}

FrameGraph tuple_filter(const FrameGraph& in, const std::function<bool(const Match&)>& keep) {
  FrameGraph out = in;
  out.matches.clear();
  std::set<FrameId> with_match;
  for (const auto& m : in.matches) {
    if (keep(m)) {
      with_match.insert(m.frame);
      out.matches.push_back(m);
    }
  }
  for (FrameId f : in.frames) {
    if (!with_match.count(f)) out.drop_frame(f);
  }
  return out;
}

DurationEvaluator::DurationEvaluator(std::int64_t min_frames, std::int64_t gap_tolerance)
    : d_(min_frames), g_(gap_tolerance) {
  if (d_ < 1) throw ConfigurationError("duration needs min_frames >= 1");
  if (g_ < 0) throw ConfigurationError("duration gap_tolerance must be >= 0");
}

std::set<TrackKey> DurationEvaluator::step(FrameId frame, const std::set<TrackKey>& satisfied) {
  std::set<TrackKey> fired;
  for (const auto& key : satisfied) {
    auto it = runs_.find(key);
    if (it == runs_.end() || frame - it->second.last > g_ + 1) {
      runs_[key] = Run{frame, frame};
    } else {
      it->second.last = frame;
    }
    if (frame - runs_[key].start + 1 >= d_) fired.insert(key);
  }
  // Runs that can no longer be extended are dropped.
  for (auto it = runs_.begin(); it != runs_.end();) {
    if (frame - it->second.last > g_ + 1) {
      it = runs_.erase(it);
    } else {
      ++it;
    }
  }
  return fired;
}

std::set<std::pair<TrackKey, FrameId>> eval_duration(const std::map<TrackKey, std::set<FrameId>>& satisfied,
                                                     std::int64_t min_frames, std::int64_t gap_tolerance) {
  std::map<FrameId, std::set<TrackKey>> by_frame;
  for (const auto& [key, frames] : satisfied) {
    for (FrameId f : frames) by_frame[f].insert(key);
  }
  DurationEvaluator ev(min_frames, gap_tolerance);
  std::set<std::pair<TrackKey, FrameId>> out;
  for (const auto& [f, keys] : by_frame) {
    for (const auto& k : ev.step(f, keys)) out.emplace(k, f);
  }
  return out;
}

bool TemporalEvaluator::step(FrameId frame, bool q1, bool q2) {
  if (prev1_ && !q1) last_end_ = frame - 1;
  if (q2 && !prev2_) {
    in_witness_ = last_end_ && frame - *last_end_ <= max_;
    if (in_witness_) {
      result_.holds = true;
      result_.witnesses.emplace_back(*last_end_, frame);
    }
  }
  if (!q2) in_witness_ = false;
  prev1_ = q1;
  prev2_ = q2;
  if (q2 && in_witness_) {
    result_.occurrences.insert(frame);
    return true;
  }
  return false;
}

TemporalResult eval_temporal(const std::set<FrameId>& occ1, const std::set<FrameId>& occ2,
                             std::int64_t max_interval) {
  TemporalEvaluator ev(max_interval);
  if (occ1.empty() && occ2.empty()) return ev.result();
  FrameId lo = std::min(occ1.empty() ? *occ2.begin() : *occ1.begin(), occ2.empty() ? *occ1.begin() : *occ2.begin());
  FrameId hi = std::max(occ1.empty() ? *occ2.rbegin() : *occ1.rbegin(), occ2.empty() ? *occ1.rbegin() : *occ2.rbegin());
  for (FrameId f = lo; f <= hi + 1; ++f) ev.step(f, occ1.count(f) > 0, occ2.count(f) > 0);
  return ev.result();
}

void VideoAggregator::observe(TrackId track, Truth t) {
  Seen& s = seen_[track];
  if (t == Truth::True) s.any_true = true;
  if (t == Truth::False) s.any_false = true;
}

std::vector<TrackId> VideoAggregator::satisfying() const {
  std::vector<TrackId> out;
  for (const auto& [id, s] : seen_) {
    bool ok;
    if (!constrained_) {
      ok = true;
    } else if (q_ == dsl::Quantifier::All) {
      ok = s.any_true && !s.any_false;
    } else {
      ok = s.any_true;
    }
    if (ok) out.push_back(id);
  }
  return out;
}

}  // namespace vidq::ops
