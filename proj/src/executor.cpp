#include "vidq/executor.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <tuple>

#include "vidq/datamodel.hpp"
#include "vidq/dsl/parser.hpp"
#include "vidq/error.hpp"
#include "vidq/hash.hpp"
#include "vidq/operators.hpp"

namespace vidq {

using json = nlohmann::json;
using dsl::PredicateExpr;
using dsl::PropertyRef;

std::uint64_t ExecStats::total_op_calls() const {
  std::uint64_t n = 0;
  for (const auto& [k, v] : op_calls) n += v;
  return n;
}

std::uint64_t ExecStats::invocations_of(const std::string& name) const {
  auto it = invocations.find(name);
  return it == invocations.end() ? 0 : it->second;
}

json ExecStats::to_json() const {
  json j;
  j["frames_read"] = frames_read;
  j["frames_emitted"] = frames_emitted;
  j["batches"] = batches;
  j["cost_units"] = cost_units;
  j["op_calls"] = op_calls;
  j["invocations"] = invocations;
  return j;
}

std::string QueryOutput::serialize() const {
  std::string s;
  for (const auto& f : frames) s += f.dump() + "\n";
  s += video.dump() + "\n";
  return s;
}

json QueryOutput::to_json() const {
  return {{"query", query}, {"frames", frames}, {"video", video}, {"labels", labels}};
}

QueryOutput QueryOutput::from_json(const json& j) {
  QueryOutput q;
  q.query = j.at("query").get<std::string>();
  for (const auto& f : j.at("frames")) q.frames.push_back(f);
  q.video = j.at("video");
  q.labels = j.at("labels").get<std::set<FrameId>>();
  return q;
}

std::string RunResult::serialize() const {
  std::string s;
  for (const auto& o : outputs) s += o.serialize();
  s += json{{"stats", stats.to_json()}}.dump() + "\n";
  return s;
}

namespace {

/// Per-branch context: the key caches are scoped by, the VObj type and (once
/// bindings are assigned) the track of every node.
struct Branch {
  std::string source;
  std::string type;
  std::map<NodeId, TrackId> tracks;
};

struct Flow {
  FrameGraph graph;
  Branch self;
  std::map<std::string, Branch> bound;
};

using FlowPtr = std::shared_ptr<const Flow>;

bool vobj_member(OpKind k) {
  return k == OpKind::VObjProjector || k == OpKind::VObjFilter;
}

json op_signature(const PlanOp& op) {
  json j = op.to_json();
  j.erase("id");
  j.erase("inputs");
  j.erase("cost");
  j.erase("placement");
  switch (op.kind) {
    case OpKind::ObjectDetector:
    case OpKind::ObjectTracker:
    case OpKind::FrameFilter:
    case OpKind::VObjProjector:
      j.erase("query");
      j.erase("binding");
      break;
    case OpKind::VObjFilter: j.erase("query"); break;
    case OpKind::Fused: {
      bool relational = false;
      j["fused"] = json::array();
      for (const auto& m : op.fused) {
        relational |= !vobj_member(m.kind);
        j["fused"].push_back(op_signature(m));
      }
      j.erase("binding");
      if (!relational) j.erase("query");
      break;
    }
    default: break;
  }
  return j;
}

std::string base_query(const dsl::ValidatedProgram& vp, const std::string& name) {
  const auto& q = vp.query(name);
  if (q.kind == dsl::QueryKind::Duration) return base_query(vp, q.inputs.at(0));
  if (q.kind == dsl::QueryKind::Temporal) return base_query(vp, q.inputs.at(1));
  return name;
}

}  // namespace

struct Engine::Impl {
  struct ExecNode {
    std::string key;
    PlanOp op;
    std::vector<std::size_t> inputs;
    std::string label;
    std::vector<std::vector<PredicateExpr>> preds;  // per member (one entry unless fused)
    std::unique_ptr<FrameFilterInstance> filter;
    std::unique_ptr<ops::DurationEvaluator> duration;
    std::unique_ptr<ops::TemporalEvaluator> temporal;
    int output = -1;
  };

  struct OutputState {
    QueryOutput out;
    bool emit_frames = false;
    std::string ref_query;
    std::vector<PropertyRef> frame_output;
    std::optional<PredicateExpr> video_pred;
    std::string video_binding;
    bool video_constrained = false;
    bool count_distinct = false;
    std::optional<ops::VideoAggregator> agg;
  };

  struct TrackerState {
    Tracker kalman;
    std::string type;
    std::map<TrackId, Track> tracks;
    std::map<TrackId, NodeId> last_node;
  };

  const dsl::ValidatedProgram& vp;
  const Registry& reg;
  VideoMeta meta;
  ExecConfig cfg;

  std::vector<std::unique_ptr<ExecNode>> nodes;
  std::map<std::string, std::size_t> by_key;
  std::vector<OutputState> outputs;
  std::vector<int> plan_outputs;
  std::map<std::string, TrackerState> trackers;

  std::map<FrameId, const TraceRecord*> records;
  std::map<std::tuple<std::string, NodeId, std::string>, Value> prop_cache;
  std::map<std::tuple<std::string, NodeId, NodeId, std::string>, Value> rel_cache;
  std::map<std::tuple<std::string, TrackId, std::string>, Value> memo_props;
  std::map<std::tuple<std::string, TrackId, std::string>, Truth> memo_labels;

  ExecStats stats;
  std::string current_op;

  Impl(const dsl::ValidatedProgram& p, const Registry& r, const VideoMeta& m, ExecConfig c)
      : vp(p), reg(r), meta(m), cfg(std::move(c)) {
    cfg.tracker.validate();
  }

  // -------------------------------------------------------------------------
  // registration

  void add_plan(const PlanDag& plan) {
    std::vector<std::size_t> idmap(plan.ops.size());
    int out_index = -1;
    for (const auto& op : plan.ops) {
      std::string material = op_signature(op).dump();
      std::vector<std::size_t> inputs;
      for (int in : op.inputs) {
        inputs.push_back(idmap.at(static_cast<std::size_t>(in)));
        material += "|" + nodes[inputs.back()]->key;
      }
      const std::string key = sha256_hex(material);
      auto it = by_key.find(key);
      if (it != by_key.end()) {
        idmap[static_cast<std::size_t>(op.id)] = it->second;
        if (op.kind == OpKind::Output) out_index = nodes[it->second]->output;
        continue;
      }
      auto node = std::make_unique<ExecNode>();
      node->key = key;
      node->op = op;
      node->inputs = std::move(inputs);
      node->label = op_label(op);
      init_node(*node);
      if (op.kind == OpKind::Output) out_index = node->output;
      by_key[key] = nodes.size();
      idmap[static_cast<std::size_t>(op.id)] = nodes.size();
      nodes.push_back(std::move(node));
    }
    if (out_index < 0) throw PlanError("plan for '" + plan.query + "' has no output operator");
    plan_outputs.push_back(out_index);
  }

  static std::vector<PredicateExpr> parse_all(const std::vector<std::string>& texts) {
    std::vector<PredicateExpr> out;
    for (const auto& t : texts) out.push_back(dsl::parse_predicate(t));
    return out;
  }

  void init_node(ExecNode& n) {
    const PlanOp& op = n.op;
    switch (op.kind) {
      case OpKind::FrameFilter: {
        const Registration* r = reg.find_filter(op.component);
        if (!r) throw LinkError("filter '" + op.component + "' is not registered");
        if (r->kind == ComponentKind::FrameFilter) n.filter = std::make_unique<FrameFilterInstance>(*r);
        break;
      }
      case OpKind::ObjectDetector: reg.get(ComponentKind::Detector, op.component); break;
      case OpKind::VObjFilter:
      case OpKind::RelationFilter: n.preds.push_back(parse_all(op.predicates)); break;
      case OpKind::Fused:
        for (const auto& m : op.fused) n.preds.push_back(parse_all(m.predicates));
        break;
      case OpKind::Duration: {
        std::int64_t d;
        if (op.params.contains("min_frames")) {
          d = op.params.at("min_frames").get<std::int64_t>();
        } else {
          d = static_cast<std::int64_t>(std::ceil(op.params.at("min_seconds").get<double>() * meta.fps - 1e-9));
        }
        n.duration = std::make_unique<ops::DurationEvaluator>(d, op.params.value("gap_tolerance", 0));
        break;
      }
      case OpKind::Temporal: {
        std::int64_t m;
        if (op.params.contains("max_interval")) {
          m = op.params.at("max_interval").get<std::int64_t>();
        } else {
          m = static_cast<std::int64_t>(
              std::floor(op.params.at("max_interval_seconds").get<double>() * meta.fps + 1e-9));
        }
        n.temporal = std::make_unique<ops::TemporalEvaluator>(m);
        break;
      }
      case OpKind::Output: {
        OutputState s;
        s.out.query = op.query;
        s.emit_frames = op.params.value("emit_frames", false);
        s.ref_query = base_query(vp, op.query);
        for (const auto& text : op.params.value("frame_output", std::vector<std::string>{})) {
          const auto dot = text.find('.');
          s.frame_output.push_back(PropertyRef{text.substr(0, dot), text.substr(dot + 1), {}});
        }
        if (op.params.contains("video")) {
          const auto& v = op.params.at("video");
          s.video_pred = dsl::parse_predicate(v.at("predicate").get<std::string>());
          s.video_binding = v.at("binding").get<std::string>();
          s.video_constrained = true;
          s.agg.emplace(v.at("quantifier") == "all" ? dsl::Quantifier::All : dsl::Quantifier::Any, true);
        }
        if (op.params.contains("video_output")) {
          s.count_distinct = true;
          s.video_binding = op.params.at("video_output").at("binding").get<std::string>();
          if (!s.agg) s.agg.emplace(dsl::Quantifier::All, false);
        }
        n.output = static_cast<int>(outputs.size());
        outputs.push_back(std::move(s));
        break;
      }
      default: break;
    }
  }

  // -------------------------------------------------------------------------
  // accounting and property evaluation

  void charge(const std::string& name, double cost) {
    ++stats.invocations[name];
    stats.cost_units += cost;
    stats.op_costs[current_op] += cost;
  }

  const TraceRecord& record(FrameId f) const {
    auto it = records.find(f);
    if (it == records.end()) throw InternalError("no trace record for frame " + std::to_string(f));
    return *it->second;
  }

  Value builtin(const VObjInstance& n, std::optional<TrackId> track, const std::string& p) const {
    if (p == "bbox") {
      if (n.id.det < 0) return {};
      return std::vector<double>{n.bbox.x1, n.bbox.y1, n.bbox.x2, n.bbox.y2};
    }
    if (p == "score") return n.score;
    if (p == "frame") return static_cast<std::int64_t>(n.id.frame);
    if (p == "track_id") return track ? Value(*track) : Value();
    if (p == "frame_rate") return meta.fps;
    return {};
  }

  Value vprop(const std::string& source, const std::string& type, const VObjInstance& n,
              std::optional<TrackId> track, const std::string& p) {
    if (dsl::is_builtin_property(p)) return builtin(n, track, p);
    const auto key = std::make_tuple(source, n.id, p);
    if (auto it = prop_cache.find(key); it != prop_cache.end()) return it->second;
    const dsl::ResolvedVObj& t = vp.vobj(type);
    auto dit = t.properties.find(p);
    if (dit == t.properties.end()) throw InternalError("vobj '" + type + "' has no property '" + p + "'");
    const dsl::PropertyDef& def = dit->second;
    const bool memoize = cfg.memo && def.intrinsic && track.has_value();
    const auto memo_key = std::make_tuple(source, track.value_or(-1), p);
    if (memoize) {
      if (auto it = memo_props.find(memo_key); it != memo_props.end()) {
        prop_cache[key] = it->second;
        return it->second;
      }
    }
    const Registration& fn = reg.get(ComponentKind::PropertyFn, def.impl);
    PropertyInput in;
    in.args = &def.args;
    in.attrs = &n.attrs;
    in.channels = &record(n.id.frame).channels;
    in.meta = &meta;
    bool ready = true;
    if (def.kind == dsl::PropertyKind::Stateful) {
      const Track* tr = nullptr;
      if (track) {
        auto ts = trackers.find(source);
        if (ts != trackers.end()) {
          auto tit = ts->second.tracks.find(*track);
          if (tit != ts->second.tracks.end()) tr = &tit->second;
        }
      }
      if (!tr) ready = false;
      for (std::size_t i = 0; ready && i < def.deps.size(); ++i) {
        auto w = tr->window_at(def.deps[i], def.window, n.id.frame);
        if (!w) {
          ready = false;
        } else if (std::any_of(w->begin(), w->end(), [](const Value& v) { return v.is_undefined(); })) {
          ready = false;
        } else {
          in.windows.push_back(std::move(*w));
        }
      }
    } else {
      for (const auto& dep : def.deps) {
        Value dv = vprop(source, type, n, track, dep);
        if (dv.is_undefined()) {
          ready = false;
          break;
        }
        in.deps.push_back(std::move(dv));
      }
    }
    Value v;
    if (ready) {
      v = reg.apply_property(fn, in);
      charge(fn.name, fn.cost_units);
      if (memoize) memo_props.emplace(memo_key, v);
    }
    prop_cache[key] = v;
    return v;
  }

  static std::optional<TrackId> track_in(const Branch& b, const NodeId& id) {
    auto it = b.tracks.find(id);
    if (it == b.tracks.end()) return std::nullopt;
    return it->second;
  }

  static std::size_t binding_index(const FrameGraph& g, const std::string& binding) {
    auto it = std::find(g.match_bindings.begin(), g.match_bindings.end(), binding);
    if (it == g.match_bindings.end()) throw InternalError("binding '" + binding + "' is not part of the match");
    return static_cast<std::size_t>(it - g.match_bindings.begin());
  }

  Value rprop(const Flow& f, const dsl::Binding& rb, const Match& m, const std::string& p) {
    const dsl::ResolvedRelation& rel = vp.relation(rb.type);
    std::vector<const VObjInstance*> parts;
    std::vector<const Branch*> branches;
    for (const auto& arg : rb.args) {
      parts.push_back(&f.graph.nodes.at(m.nodes.at(binding_index(f.graph, arg))));
      branches.push_back(&f.bound.at(arg));
    }
    const std::string scope = rb.type + "|" + branches.at(0)->source + "|" + branches.at(1)->source;
    const auto key = std::make_tuple(scope, parts[0]->id, parts[1]->id, p);
    if (auto it = rel_cache.find(key); it != rel_cache.end()) return it->second;
    auto dit = rel.properties.find(p);
    if (dit == rel.properties.end()) throw InternalError("relation '" + rb.type + "' has no property '" + p + "'");
    const dsl::PropertyDef& def = dit->second;
    PropertyInput in;
    in.args = &def.args;
    in.channels = &record(m.frame).channels;
    in.meta = &meta;
    bool ready = true;
    for (const auto& dep : def.deps) {
      Value dv;
      const auto dot = dep.find('.');
      if (dot == std::string::npos) {
        dv = rprop(f, rb, m, dep);
      } else {
        const std::string role = dep.substr(0, dot);
        std::size_t i = 0;
        while (i < rel.participants.size() && rel.participants[i].role != role) ++i;
        if (i == rel.participants.size()) throw InternalError("relation role '" + role + "' not found");
        const Branch& b = *branches.at(i);
        dv = vprop(b.source, b.type, *parts.at(i), track_in(b, parts[i]->id), dep.substr(dot + 1));
      }
      if (dv.is_undefined()) {
        ready = false;
        break;
      }
      in.deps.push_back(std::move(dv));
    }
    Value v;
    if (ready) {
      const Registration& fn = reg.get(ComponentKind::PropertyFn, def.impl);
      v = reg.apply_property(fn, in);
      charge(fn.name, fn.cost_units);
    }
    rel_cache[key] = v;
    return v;
  }

  ops::RefResolver match_resolver(const Flow& f, const Match& m, const std::string& query) {
    return [this, &f, &m, query](const PropertyRef& r) -> Value {
      const dsl::Binding* b = vp.query(query).binding(r.binding);
      if (b && b->is_relation()) return rprop(f, *b, m, r.property);
      const Branch& br = f.bound.at(r.binding);
      const NodeId id = m.nodes.at(binding_index(f.graph, r.binding));
      return vprop(br.source, br.type, f.graph.nodes.at(id), track_in(br, id), r.property);
    };
  }

  Truth eval_conjuncts(const std::vector<std::string>& texts, const std::vector<PredicateExpr>& preds,
                       const ops::RefResolver& resolve, const std::function<std::optional<std::string>(
                                                                const PredicateExpr&, const std::string&)>& memo_key) {
    Truth acc = Truth::True;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      ConjunctProfile& cp = stats.conjuncts[texts[i]];
      const double before = stats.cost_units;
      Truth t;
      const auto mk = memo_key ? memo_key(preds[i], texts[i]) : std::nullopt;
      std::tuple<std::string, TrackId, std::string> lk;
      bool hit = false;
      if (mk) {
        lk = std::make_tuple(*mk, 0, texts[i]);
        if (auto it = memo_labels.find(lk); it != memo_labels.end()) {
          t = it->second;
          hit = true;
        }
      }
      if (!hit) {
        t = ops::evaluate(preds[i], resolve);
        if (mk) memo_labels.emplace(lk, t);
      }
      ++cp.evaluations;
      if (t != Truth::True) ++cp.rejections;
      cp.cost_units += stats.cost_units - before;
      acc = truth_and(acc, t);
      if (acc != Truth::True) break;
    }
    return acc;
  }

  bool intrinsic_only(const std::string& type, const PredicateExpr& e) const {
    const auto& t = vp.vobj(type);
    const auto refs = dsl::collect_refs(e);
    if (refs.empty()) return false;
    for (const auto& r : refs) {
      auto it = t.properties.find(r.property);
      if (it == t.properties.end() || !it->second.intrinsic) return false;
    }
    return true;
  }

  // -------------------------------------------------------------------------
  // operator bodies

  void ensure_bound(Flow& f, const std::vector<std::string>& bindings) {
    if (!f.graph.match_bindings.empty()) return;
    if (bindings.size() != 1) throw InternalError("unjoined flow with several bindings");
    Branch b = f.self;
    for (const auto& [id, n] : f.graph.nodes) {
      if (n.track_id) b.tracks[id] = *n.track_id;
    }
    f.graph = ops::single_branch_matches(f.graph, bindings.front());
    f.bound[bindings.front()] = std::move(b);
  }

  void apply_vobj_projector(const PlanOp& op, Flow& f) {
    if (cfg.lazy) return;
    for (const auto& [id, n] : f.graph.nodes) vprop(f.self.source, f.self.type, n, n.track_id, op.property);
  }

  void apply_vobj_filter(const PlanOp& op, const std::vector<PredicateExpr>& preds, Flow& f) {
    const std::string& source = f.self.source;
    const std::string& type = f.self.type;
    f.graph = ops::vobj_filter(f.graph, [&](const VObjInstance& n) {
      auto resolve = [&](const PropertyRef& r) -> Value {
        if (r.binding != op.binding) throw InternalError("filter on '" + op.binding + "' refers to " + r.text());
        return vprop(source, type, n, n.track_id, r.property);
      };
      auto memo_key = [&](const PredicateExpr& e, const std::string&) -> std::optional<std::string> {
        if (!cfg.memo || !n.track_id || !intrinsic_only(type, e)) return std::nullopt;
        return source + "#" + std::to_string(*n.track_id);
      };
      return eval_conjuncts(op.predicates, preds, resolve, memo_key) == Truth::True;
    });
  }

  void apply_relation_projector(const PlanOp& op, Flow& f) {
    ensure_bound(f, op.bindings);
    const dsl::Binding* rb = vp.query(op.query).binding(op.binding);
    if (!rb) throw InternalError("unknown relation binding '" + op.binding + "'");
    const std::size_t a = binding_index(f.graph, rb->args.at(0));
    const std::size_t b = binding_index(f.graph, rb->args.at(1));
    const FrameGraph in = f.graph;
    f.graph = ops::relation_projector(in, op.binding, a, b, [&](const Match& m) {
      std::map<std::string, Value> props;
      if (!cfg.lazy) props[op.property] = rprop(f, *rb, m, op.property);
      return props;
    });
  }

  void apply_relation_filter(const PlanOp& op, const std::vector<PredicateExpr>& preds, Flow& f) {
    ensure_bound(f, op.bindings);
    f.graph = ops::tuple_filter(f.graph, [&](const Match& m) {
      return eval_conjuncts(op.predicates, preds, match_resolver(f, m, op.query), nullptr) == Truth::True;
    });
  }

  void apply_member(const PlanOp& op, const std::vector<PredicateExpr>& preds, Flow& f) {
    switch (op.kind) {
      case OpKind::VObjProjector: apply_vobj_projector(op, f); break;
      case OpKind::VObjFilter: apply_vobj_filter(op, preds, f); break;
      case OpKind::RelationProjector: apply_relation_projector(op, f); break;
      case OpKind::RelationFilter: apply_relation_filter(op, preds, f); break;
      default: throw InternalError("operator " + to_string(op.kind) + " cannot be fused");
    }
  }

  FlowPtr run_tracker(const ExecNode& node, const Flow& in) {
    auto out = std::make_shared<Flow>(in);
    out->self.source = node.key;
    const std::string& type = node.op.type;
    auto [tsit, created] = trackers.try_emplace(node.key, TrackerState{Tracker(cfg.tracker), type, {}, {}});
    TrackerState& ts = tsit->second;
    const dsl::ResolvedVObj* t = vp.vobjs.count(type) ? &vp.vobj(type) : nullptr;
    std::map<std::string, std::size_t> caps = t ? t->history_caps : std::map<std::string, std::size_t>{};
    std::vector<std::string> rec_order;
    for (const auto& [p, cap] : caps) {
      if (dsl::is_builtin_property(p)) rec_order.push_back(p);
    }
    if (t) {
      for (const auto& p : t->order) {
        if (caps.count(p)) rec_order.push_back(p);
      }
    }
    for (FrameId f : out->graph.frames) {
      std::vector<NodeId> ids;
      std::vector<BBox> boxes;
      for (const auto& [id, n] : out->graph.nodes) {
        if (id.frame != f) continue;
        ids.push_back(id);
        boxes.push_back(n.bbox);
      }
      std::vector<std::optional<TrackId>> assignment(ids.size());
      std::vector<bool> continues(ids.size(), false);
      const bool scene = !ids.empty() && ids.front().det == kSceneNode;
      if (scene) {
        for (std::size_t i = 0; i < ids.size(); ++i) {
          assignment[i] = 0;
          continues[i] = true;
        }
      } else {
        StepResult r = ts.kalman.step(f, boxes);
        assignment = std::move(r.assignment);
        continues = std::move(r.continues);
      }
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (!assignment[i]) continue;
        const TrackId tid = *assignment[i];
        VObjInstance& n = out->graph.nodes.at(ids[i]);
        n.track_id = tid;
        auto prev = ts.last_node.find(tid);
        if (continues[i] && prev != ts.last_node.end() && prev->second.frame == f - 1 &&
            out->graph.nodes.count(prev->second)) {
          Edge e;
          e.kind = EdgeKind::Motion;
          e.from = prev->second;
          e.to = ids[i];
          out->graph.edges.push_back(std::move(e));
        }
        ts.last_node[tid] = ids[i];
        auto [trit, fresh] = ts.tracks.try_emplace(tid, tid, type, caps);
        Track& tr = trit->second;
        if (fresh) tr.set_slack(cfg.batch_size + 1);
        tr.set_last_seen(f);
        for (const auto& p : rec_order) tr.record_at(p, f, vprop(node.key, type, n, tid, p));
      }
    }
    return out;
  }

  void prune_trackers() {
    for (auto& [key, ts] : trackers) {
      std::set<TrackId> alive;
      for (const auto& k : ts.kalman.tracks()) alive.insert(k.id);
      if (ts.tracks.count(0) && ts.kalman.tracks().empty()) alive.insert(0);
      for (auto it = ts.tracks.begin(); it != ts.tracks.end();) {
        it = alive.count(it->first) ? std::next(it) : ts.tracks.erase(it);
      }
      for (auto it = ts.last_node.begin(); it != ts.last_node.end();) {
        it = alive.count(it->first) ? std::next(it) : ts.last_node.erase(it);
      }
    }
  }

  FlowPtr run_duration(ExecNode& node, const Flow& in) {
    auto out = std::make_shared<Flow>(in);
    ensure_bound(*out, node.op.bindings);
    const FrameGraph& g = out->graph;
    std::map<FrameId, std::vector<std::pair<std::size_t, ops::TrackKey>>> by_frame;
    for (std::size_t i = 0; i < g.matches.size(); ++i) {
      const Match& m = g.matches[i];
      ops::TrackKey key;
      for (std::size_t b = 0; b < m.nodes.size(); ++b) {
        key.push_back(track_in(out->bound.at(g.match_bindings[b]), m.nodes[b]).value_or(-1));
      }
      by_frame[m.frame].emplace_back(i, std::move(key));
    }
    std::set<std::size_t> keep;
    for (FrameId f = g.first; f <= g.last; ++f) {
      std::set<ops::TrackKey> sat;
      auto it = by_frame.find(f);
      if (it != by_frame.end()) {
        for (const auto& [i, key] : it->second) sat.insert(key);
      }
      const auto fired = node.duration->step(f, sat);
      if (it == by_frame.end()) continue;
      for (const auto& [i, key] : it->second) {
        if (fired.count(key)) keep.insert(i);
      }
    }
    out->graph = ops::tuple_filter(g, [&](const Match& m) {
      return keep.count(static_cast<std::size_t>(&m - g.matches.data())) > 0;
    });
    return out;
  }

  FlowPtr run_temporal(ExecNode& node, const Flow& left, const Flow& right) {
    Flow a = left;
    ensure_bound(a, node.op.params.value("left_bindings", std::vector<std::string>{}));
    auto out = std::make_shared<Flow>(right);
    ensure_bound(*out, node.op.bindings);
    std::set<FrameId> q1, q2;
    for (const auto& m : a.graph.matches) q1.insert(m.frame);
    for (const auto& m : out->graph.matches) q2.insert(m.frame);
    std::set<FrameId> occ;
    for (FrameId f = out->graph.first; f <= out->graph.last; ++f) {
      if (node.temporal->step(f, q1.count(f) > 0, q2.count(f) > 0)) occ.insert(f);
    }
    out->graph = ops::tuple_filter(out->graph, [&](const Match& m) { return occ.count(m.frame) > 0; });
    return out;
  }

  void run_output(ExecNode& node, const Flow& in) {
    OutputState& s = outputs.at(static_cast<std::size_t>(node.output));
    Flow f = in;
    ensure_bound(f, node.op.bindings);
    const FrameGraph& g = f.graph;
    std::map<FrameId, std::vector<const Match*>> by_frame;
    for (const auto& m : g.matches) by_frame[m.frame].push_back(&m);

    std::vector<std::string> out_bindings;
    if (s.frame_output.empty()) {
      out_bindings = g.match_bindings;
    } else {
      for (const auto& b : g.match_bindings) {
        if (std::any_of(s.frame_output.begin(), s.frame_output.end(),
                        [&](const PropertyRef& r) { return r.binding == b; })) {
          out_bindings.push_back(b);
        }
      }
    }
    for (const auto& [frame, matches] : by_frame) {
      s.out.labels.insert(frame);
      if (s.video_binding.size()) {
        const std::size_t vb = binding_index(g, s.video_binding);
        const Branch& br = f.bound.at(s.video_binding);
        std::set<NodeId> seen;
        for (const Match* m : matches) {
          const NodeId id = m->nodes.at(vb);
          if (!seen.insert(id).second) continue;
          auto track = track_in(br, id);
          if (!track) continue;
          Truth t = Truth::True;
          if (s.video_pred) {
            const VObjInstance& n = g.nodes.at(id);
            t = ops::evaluate(*s.video_pred, [&](const PropertyRef& r) -> Value {
              return vprop(br.source, br.type, n, track, r.property);
            });
          }
          s.agg->observe(*track, t);
        }
      }
      if (!s.emit_frames) continue;
      json objects = json::array();
      for (const auto& b : out_bindings) {
        const std::size_t bi = binding_index(g, b);
        const Branch& br = f.bound.at(b);
        std::set<NodeId> ids;
        for (const Match* m : matches) ids.insert(m->nodes.at(bi));
        for (const NodeId& id : ids) {
          const VObjInstance& n = g.nodes.at(id);
          json props = json::object();
          for (const auto& r : s.frame_output) {
            if (r.binding != b) continue;
            props[r.property] = to_json(vprop(br.source, br.type, n, track_in(br, id), r.property));
          }
          objects.push_back({{"binding", b}, {"det", id.det}, {"props", props}});
        }
      }
      json record = {{"query", s.out.query}, {"frame", frame}, {"objects", objects}};
      const dsl::ResolvedQuery& rq = vp.query(s.ref_query);
      json relations = json::array();
      for (const auto& rb : rq.bindings) {
        if (!rb.is_relation()) continue;
        if (std::none_of(s.frame_output.begin(), s.frame_output.end(),
                         [&](const PropertyRef& r) { return r.binding == rb.name; })) {
          continue;
        }
        std::set<std::vector<int>> seen;
        for (const Match* m : matches) {
          std::vector<int> dets;
          for (const auto& arg : rb.args) dets.push_back(m->nodes.at(binding_index(g, arg)).det);
          if (!seen.insert(dets).second) continue;
          json props = json::object();
          for (const auto& r : s.frame_output) {
            if (r.binding == rb.name) props[r.property] = to_json(rprop(f, rb, *m, r.property));
          }
          relations.push_back({{"binding", rb.name}, {"dets", dets}, {"props", props}});
        }
      }
      if (!relations.empty()) record["relations"] = std::move(relations);
      s.out.frames.push_back(std::move(record));
      ++stats.frames_emitted;
    }
  }

  FlowPtr exec(ExecNode& node, const std::vector<FlowPtr>& in, const FrameBatch& batch) {
    const PlanOp& op = node.op;
    switch (op.kind) {
      case OpKind::VideoReader: {
        auto f = std::make_shared<Flow>();
        f->graph.first = batch.frames.front().frame_id;
        f->graph.last = batch.frames.back().frame_id;
        for (const auto& r : batch.frames) f->graph.frames.push_back(r.frame_id);
        return f;
      }
      case OpKind::FrameFilter: {
        auto f = std::make_shared<Flow>(*in.at(0));
        const Registration& r = *reg.find_filter(op.component);
        std::set<FrameId> pass;
        if (node.filter) {
          // Stateful filters see every frame so their history does not depend
          // on where they sit in the plan.
          for (const auto& rec : batch.frames) {
            charge(r.name, r.cost_units);
            if (node.filter->keep(rec)) pass.insert(rec.frame_id);
          }
        } else {
          for (FrameId fr : f->graph.frames) {
            charge(r.name, r.cost_units);
            if (reg.classify_frame(r, record(fr))) pass.insert(fr);
          }
        }
        f->graph = ops::frame_filter(f->graph, [&](FrameId fr) { return pass.count(fr) > 0; });
        return f;
      }
      case OpKind::ObjectDetector: {
        auto f = std::make_shared<Flow>();
        const Registration& r = reg.get(ComponentKind::Detector, op.component);
        f->graph = ops::object_detector(in.at(0)->graph, records,
                                        [&](const TraceRecord& rec) {
                                          charge(r.name, r.cost_units);
                                          return reg.detect(r, rec);
                                        },
                                        op.type);
        f->self = Branch{node.key, op.type, {}};
        return f;
      }
      case OpKind::ObjectTracker: return run_tracker(node, *in.at(0));
      case OpKind::VObjProjector:
        if (cfg.lazy) return in.at(0);
        [[fallthrough]];
      case OpKind::VObjFilter:
      case OpKind::RelationProjector:
      case OpKind::RelationFilter: {
        auto f = std::make_shared<Flow>(*in.at(0));
        apply_member(op, node.preds.empty() ? std::vector<PredicateExpr>{} : node.preds.front(), *f);
        return f;
      }
      case OpKind::Fused: {
        auto f = std::make_shared<Flow>(*in.at(0));
        for (std::size_t i = 0; i < op.fused.size(); ++i) apply_member(op.fused[i], node.preds.at(i), *f);
        return f;
      }
      case OpKind::Join: {
        std::vector<FrameGraph> graphs;
        for (const auto& fp : in) graphs.push_back(fp->graph);
        auto f = std::make_shared<Flow>();
        f->graph = ops::join(graphs, op.bindings);
        for (std::size_t i = 0; i < in.size(); ++i) {
          Branch b = in[i]->self;
          for (const auto& [id, n] : in[i]->graph.nodes) {
            if (n.track_id) b.tracks[id] = *n.track_id;
          }
          f->bound[op.bindings.at(i)] = std::move(b);
        }
        return f;
      }
      case OpKind::Duration: return run_duration(node, *in.at(0));
      case OpKind::Temporal: return run_temporal(node, *in.at(0), *in.at(1));
      case OpKind::Output: run_output(node, *in.at(0)); return nullptr;
    }
    throw InternalError("unknown operator kind");
  }

  void run_batch(const FrameBatch& batch) {
    records.clear();
    for (const auto& r : batch.frames) records[r.frame_id] = &r;
    prop_cache.clear();
    rel_cache.clear();
    stats.frames_read += batch.size();
    ++stats.batches;
    std::vector<FlowPtr> res(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      ExecNode& n = *nodes[i];
      current_op = n.label;
      ++stats.op_calls[n.label];
      std::vector<FlowPtr> in;
      for (std::size_t j : n.inputs) in.push_back(res[j]);
      res[i] = exec(n, in, batch);
    }
    prune_trackers();
  }

  RunResult run(TraceSource& trace) {
    const auto t0 = std::chrono::steady_clock::now();
    GapFiller filler(trace, meta.frame_count > 0 ? std::optional<std::int64_t>(meta.frame_count) : std::nullopt);
    Batcher batcher(filler, cfg.batch_size);
    if (!nodes.empty()) {
      while (auto b = batcher.next()) run_batch(*b);
    }
    RunResult r;
    for (auto& s : outputs) {
      json v;
      v["query"] = s.out.query;
      v["matched_frames"] = s.out.labels.size();
      if (s.video_constrained || s.count_distinct) {
        json video;
        const auto n = s.agg->count_distinct();
        if (s.video_constrained) {
          video["satisfying_tracks"] = n;
          video["tracks"] = s.agg->satisfying();
          video["holds"] = n > 0;
        }
        if (s.count_distinct) video["count_distinct"] = n;
        v["video"] = video;
      }
      s.out.video = v;
    }
    for (int idx : plan_outputs) r.outputs.push_back(outputs.at(static_cast<std::size_t>(idx)).out);
    stats.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.stats = stats;
    return r;
  }
};

Engine::Engine(const dsl::ValidatedProgram& program, const Registry& registry, const VideoMeta& meta,
               ExecConfig cfg)
    : impl_(std::make_unique<Impl>(program, registry, meta, std::move(cfg))) {}

Engine::~Engine() = default;

void Engine::add_plan(const PlanDag& plan) { impl_->add_plan(plan); }

std::size_t Engine::operator_count() const { return impl_->nodes.size(); }

RunResult Engine::run(TraceSource& trace) { return impl_->run(trace); }

RunResult execute(const std::vector<PlanDag>& plans, const dsl::ValidatedProgram& program, const Registry& registry,
                  TraceSource& trace, const VideoMeta& meta, const ExecConfig& cfg) {
  Engine e(program, registry, meta, cfg);
  for (const auto& p : plans) e.add_plan(p);
  return e.run(trace);
}

// ---------------------------------------------------------------------------
// Result store

ResultStore::ResultStore(std::string dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }

std::string ResultStore::path_for(const std::string& key) const { return dir_ + "/" + key + ".json"; }

std::optional<QueryOutput> ResultStore::get(const std::string& key, std::string* warning) const {
  const std::string path = path_for(key);
  std::ifstream in(path);
  if (!in) return std::nullopt;
  std::stringstream buf;
  buf << in.rdbuf();
  in.close();
  try {
    const json j = json::parse(buf.str());
    const json payload = j.at("payload");
    if (j.at("key") != key || j.at("sha256") != sha256_hex(payload.dump())) throw Error("checksum mismatch");
    return QueryOutput::from_json(payload);
  } catch (const std::exception& e) {
    if (warning) *warning = "result cache entry " + path + " is corrupt (" + e.what() + "); recomputing";
    std::error_code ec;
    std::filesystem::remove(path, ec);
    return std::nullopt;
  }
}

void ResultStore::put(const std::string& key, const QueryOutput& out) const {
  const json payload = out.to_json();
  const json j{{"key", key}, {"sha256", sha256_hex(payload.dump())}, {"payload", payload}};
  const std::string path = path_for(key);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp);
    if (!f) throw Error("cannot write result cache entry " + path);
    f << j.dump() << "\n";
  }
  std::filesystem::rename(tmp, path);
}

std::string result_key(const std::string& trace_hash, const PlanDag& plan, const dsl::ValidatedProgram& program,
                       const Registry& registry, const VideoMeta& meta, const ExecConfig& cfg) {
  json j;
  j["trace"] = trace_hash;
  j["plan"] = plan.to_json();
  j["program"] = dsl::serialize(program.program);
  j["registry"] = registry.to_json();
  j["seed"] = registry.seed();
  j["meta"] = meta_to_json(meta);
  j["tracker"] = {{"iou", cfg.tracker.iou_threshold},
                  {"max_age", cfg.tracker.max_age},
                  {"min_hits", cfg.tracker.min_hits},
                  {"q", cfg.tracker.process_noise},
                  {"r", cfg.tracker.measurement_noise}};
  return sha256_hex(j.dump());
}

RunResult run_session(const std::vector<PlanDag>& plans, const dsl::ValidatedProgram& program,
                      const Registry& registry, const std::string& trace_path, const VideoMeta& meta,
                      const ExecConfig& cfg, const ResultStore* store) {
  RunResult res;
  res.outputs.resize(plans.size());
  std::vector<std::size_t> misses;
  std::vector<std::string> keys(plans.size());
  if (store) {
    const std::string th = sha256_file(trace_path);
    for (std::size_t i = 0; i < plans.size(); ++i) {
      keys[i] = result_key(th, plans[i], program, registry, meta, cfg);
      std::string warning;
      auto hit = store->get(keys[i], &warning);
      if (!warning.empty()) res.warnings.push_back(warning);
      if (hit) {
        res.outputs[i] = std::move(*hit);
      } else {
        misses.push_back(i);
      }
    }
  } else {
    for (std::size_t i = 0; i < plans.size(); ++i) misses.push_back(i);
  }
  if (misses.empty()) return res;
  Engine engine(program, registry, meta, cfg);
  for (std::size_t i : misses) engine.add_plan(plans[i]);
  TraceReader reader(trace_path, meta);
  RunResult fresh = engine.run(reader);
  for (std::size_t j = 0; j < misses.size(); ++j) {
    res.outputs[misses[j]] = fresh.outputs[j];
    if (store) store->put(keys[misses[j]], fresh.outputs[j]);
  }
  res.stats = fresh.stats;
  return res;
}

}  // namespace vidq
