#include "vidq/planner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <future>
#include <sstream>

#include "vidq/dsl/parser.hpp"
#include "vidq/error.hpp"
#include "vidq/executor.hpp"
#include "vidq/hash.hpp"

namespace vidq {

using json = nlohmann::json;
using dsl::PredicateExpr;
using dsl::QueryKind;
using dsl::ResolvedQuery;
using dsl::ResolvedVObj;
using dsl::ValidatedProgram;

namespace {

const std::pair<OpKind, const char*> kKindNames[] = {
    {OpKind::VideoReader, "VideoReader"},
    {OpKind::FrameFilter, "FrameFilter"},
    {OpKind::ObjectDetector, "ObjectDetector"},
    {OpKind::ObjectTracker, "ObjectTracker"},
    {OpKind::VObjProjector, "VObjProjector"},
    {OpKind::VObjFilter, "VObjFilter"},
    {OpKind::Join, "Join"},
    {OpKind::RelationProjector, "RelationProjector"},
    {OpKind::RelationFilter, "RelationFilter"},
    {OpKind::Duration, "Duration"},
    {OpKind::Temporal, "Temporal"},
    {OpKind::Output, "Output"},
    {OpKind::Fused, "Fused"},
};

}  // namespace

std::string to_string(OpKind k) {
  for (const auto& [kind, name] : kKindNames) {
    if (kind == k) return name;
  }
  return "?";
}

OpKind op_kind_from_string(const std::string& s) {
  for (const auto& [kind, name] : kKindNames) {
    if (s == name) return kind;
  }
  throw ParseError("unknown operator kind '" + s + "'", 0);
}

json PlanOp::to_json() const {
  json j;
  j["id"] = id;
  j["kind"] = vidq::to_string(kind);
  j["inputs"] = inputs;
  if (!query.empty()) j["query"] = query;
  if (!binding.empty()) j["binding"] = binding;
  if (!type.empty()) j["type"] = type;
  if (!component.empty()) j["component"] = component;
  if (!property.empty()) j["property"] = property;
  if (!predicates.empty()) j["predicates"] = predicates;
  if (!bindings.empty()) j["bindings"] = bindings;
  if (!fused.empty()) {
    j["fused"] = json::array();
    for (const auto& f : fused) j["fused"].push_back(f.to_json());
  }
  if (!params.empty()) j["params"] = params;
  j["cost"] = cost;
  if (!placement_tag.empty()) j["placement"] = placement_tag;
  return j;
}

PlanOp PlanOp::from_json(const json& j) {
  PlanOp op;
  op.id = j.at("id").get<int>();
  op.kind = op_kind_from_string(j.at("kind").get<std::string>());
  op.inputs = j.at("inputs").get<std::vector<int>>();
  op.query = j.value("query", "");
  op.binding = j.value("binding", "");
  op.type = j.value("type", "");
  op.component = j.value("component", "");
  op.property = j.value("property", "");
  op.predicates = j.value("predicates", std::vector<std::string>{});
  op.bindings = j.value("bindings", std::vector<std::string>{});
  if (j.contains("fused")) {
    for (const auto& f : j.at("fused")) op.fused.push_back(from_json(f));
  }
  op.params = j.value("params", json::object());
  op.cost = j.value("cost", 0.0);
  op.placement_tag = j.value("placement", "");
  return op;
}

std::vector<int> PlanDag::consumers(int id) const {
  std::vector<int> out;
  for (const auto& op : ops) {
    if (std::find(op.inputs.begin(), op.inputs.end(), id) != op.inputs.end()) out.push_back(op.id);
  }
  return out;
}

std::size_t PlanDag::op_count() const {
  std::size_t n = 0;
  for (const auto& op : ops) n += op.kind == OpKind::Fused ? op.fused.size() : 1;
  return n;
}

void PlanDag::finalize() {
  json canon;
  canon["query"] = query;
  canon["sink"] = sink;
  canon["ops"] = json::array();
  for (const auto& op : ops) canon["ops"].push_back(op.to_json());
  plan_id = sha256_hex(canon.dump()).substr(0, 16);
}

json PlanDag::to_json() const {
  json j;
  j["version"] = kVersion;
  j["query"] = query;
  j["sink"] = sink;
  j["plan_id"] = plan_id;
  j["detectors"] = detectors;
  j["ops"] = json::array();
  for (const auto& op : ops) j["ops"].push_back(op.to_json());
  return j;
}

PlanDag PlanDag::from_json(const json& j) {
  try {
    if (!j.is_object()) throw ParseError("plan file must hold a JSON object", 0);
    const int version = j.at("version").get<int>();
    if (version != kVersion) {
      throw ParseError("plan file version " + std::to_string(version) + " is not supported (expected " +
                           std::to_string(kVersion) + ")",
                       0);
    }
    PlanDag d;
    d.query = j.at("query").get<std::string>();
    d.sink = j.at("sink").get<int>();
    d.detectors = j.value("detectors", std::map<std::string, std::string>{});
    for (const auto& o : j.at("ops")) d.ops.push_back(PlanOp::from_json(o));
    for (std::size_t i = 0; i < d.ops.size(); ++i) {
      if (d.ops[i].id != static_cast<int>(i)) throw ParseError("plan ops are not numbered in order", 0);
      for (int in : d.ops[i].inputs) {
        if (in < 0 || in >= static_cast<int>(i)) throw ParseError("plan op inputs are not topological", 0);
      }
    }
    if (d.sink < 0 || d.sink >= static_cast<int>(d.ops.size())) throw ParseError("plan sink out of range", 0);
    d.finalize();
    const std::string stored = j.at("plan_id").get<std::string>();
    if (stored != d.plan_id) throw ParseError("plan_id does not match plan contents", 0);
    return d;
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed plan: ") + e.what(), 0);
  }
}

std::string choice_key(const std::string& query, const std::string& binding) { return query + "." + binding; }

// ---------------------------------------------------------------------------
// Base DAG construction

namespace {

PredicateExpr rebind(PredicateExpr e, const std::string& binding) {
  if (e.kind == PredicateExpr::Kind::Compare) {
    if (e.ref.binding.empty()) e.ref.binding = binding;
    return e;
  }
  if (e.kind == PredicateExpr::Kind::Holds) return e;
  for (auto& c : e.children) c = rebind(std::move(c), binding);
  return e;
}

void add_closure(const ResolvedVObj& t, const std::string& p, std::set<std::string>& out) {
  auto it = t.properties.find(p);
  if (it == t.properties.end()) return;
  if (!out.insert(p).second) return;
  for (const auto& d : it->second.deps) add_closure(t, d, out);
}

void add_rel_closure(const dsl::ResolvedRelation& r, const std::string& p, std::set<std::string>& out) {
  auto it = r.properties.find(p);
  if (it == r.properties.end()) return;
  if (!out.insert(p).second) return;
  for (const auto& d : it->second.deps) {
    if (d.find('.') == std::string::npos) add_rel_closure(r, d, out);
  }
}

/// Detectors along the chain, most general (root-most) first, with the
/// chain index of the declaring level.
std::vector<std::pair<std::string, std::size_t>> chain_detectors(const ValidatedProgram& vp,
                                                                const std::string& type) {
  std::vector<std::pair<std::string, std::size_t>> out;
  if (type == dsl::kSceneType && !vp.program.find_vobj(type)) return {{dsl::kSceneDetector, 0}};
  const auto& chain = vp.vobj(type).chain;
  for (std::size_t i = chain.size(); i-- > 0;) {
    const auto* decl = vp.program.find_vobj(chain[i]);
    std::optional<std::string> det = decl ? decl->detector : std::nullopt;
    if (!det && chain[i] == dsl::kSceneType) det = dsl::kSceneDetector;
    if (!det) continue;
    auto dup = std::find_if(out.begin(), out.end(), [&](const auto& p) { return p.first == *det; });
    if (dup == out.end()) out.emplace_back(*det, i);
  }
  return out;
}

std::vector<std::string> vobj_bindings(const ResolvedQuery& q) {
  std::vector<std::string> out;
  for (const auto& b : q.bindings) {
    if (!b.is_relation()) out.push_back(b.name);
  }
  return out;
}

/// Bindings of the graph a query's evaluation produces.
std::vector<std::string> output_bindings(const ValidatedProgram& vp, const std::string& name) {
  const auto& q = vp.query(name);
  switch (q.kind) {
    case QueryKind::Basic:
    case QueryKind::Spatial: return vobj_bindings(q);
    case QueryKind::Duration: return output_bindings(vp, q.inputs.at(0));
    case QueryKind::Temporal: return output_bindings(vp, q.inputs.at(1));
  }
  return {};
}

std::vector<dsl::PropertyRef> output_refs(const ValidatedProgram& vp, const std::string& name) {
  const auto& q = vp.query(name);
  switch (q.kind) {
    case QueryKind::Basic:
    case QueryKind::Spatial: return q.frame_output;
    case QueryKind::Duration: return output_refs(vp, q.inputs.at(0));
    case QueryKind::Temporal: return output_refs(vp, q.inputs.at(1));
  }
  return {};
}

class DagBuilder {
 public:
  DagBuilder(const ValidatedProgram& vp, const Registry& reg, const BuildOptions& opts)
      : vp_(vp), reg_(reg), opts_(opts) {}

  PlanDag build(const std::string& query) {
    dag_.query = query;
    PlanOp reader;
    reader.kind = OpKind::VideoReader;
    int tail = add(std::move(reader));
    if (vp_.vobjs.count(dsl::kSceneType)) {
      for (const auto& f : vp_.vobj(dsl::kSceneType).filters) {
        PlanOp ff;
        ff.kind = OpKind::FrameFilter;
        ff.inputs = {tail};
        ff.component = f;
        ff.cost = filter_cost(f);
        ff.placement_tag = "scene";
        tail = add(std::move(ff));
      }
    }
    reader_tail_ = tail;
    const int last = build_query(query, false);
    const auto& q = vp_.query(query);

    PlanOp out;
    out.kind = OpKind::Output;
    out.inputs = {last};
    out.query = query;
    out.bindings = output_bindings(vp_, query);
    json p;
    p["emit_frames"] = q.kind != QueryKind::Basic || q.frame_constraint.has_value();
    p["frame_output"] = json::array();
    for (const auto& r : output_refs(vp_, query)) p["frame_output"].push_back(r.text());
    if (q.video_constraint) {
      const auto refs = dsl::collect_refs(q.video_constraint->predicate);
      p["video"] = {{"quantifier", q.video_constraint->quantifier == dsl::Quantifier::All ? "all" : "any"},
                    {"predicate", dsl::serialize(q.video_constraint->predicate)},
                    {"binding", refs.at(0).binding}};
    }
    if (q.video_output) {
      p["video_output"] = {{"aggregate", q.video_output->aggregate}, {"binding", q.video_output->binding}};
    }
    out.params = std::move(p);
    dag_.sink = add(std::move(out));
    dag_.finalize();
    return std::move(dag_);
  }

 private:
  int add(PlanOp op) {
    op.id = static_cast<int>(dag_.ops.size());
    dag_.ops.push_back(std::move(op));
    return dag_.ops.back().id;
  }

  double filter_cost(const std::string& name) const {
    const Registration* r = reg_.find_filter(name);
    if (!r) throw PlanError("filter '" + name + "' is not registered");
    return r->cost_units;
  }

  double fn_cost(const std::string& impl) const {
    const Registration* r = reg_.find(ComponentKind::PropertyFn, impl);
    if (!r) throw PlanError("property function '" + impl + "' is not registered");
    return r->cost_units;
  }

  int build_query(const std::string& name, bool need_tracks) {
    const auto& q = vp_.query(name);
    switch (q.kind) {
      case QueryKind::Basic:
      case QueryKind::Spatial: return build_basic(q, need_tracks);
      case QueryKind::Duration: {
        const int in = build_query(q.inputs.at(0), true);
        PlanOp d;
        d.kind = OpKind::Duration;
        d.inputs = {in};
        d.query = name;
        d.bindings = output_bindings(vp_, q.inputs.at(0));
        if (q.min_frames) d.params["min_frames"] = static_cast<std::int64_t>(std::llround(*q.min_frames));
        if (q.min_seconds) d.params["min_seconds"] = *q.min_seconds;
        d.params["gap_tolerance"] = q.gap_tolerance;
        return add(std::move(d));
      }
      case QueryKind::Temporal: {
        const int a = build_query(q.inputs.at(0), need_tracks);
        const int b = build_query(q.inputs.at(1), need_tracks);
        PlanOp t;
        t.kind = OpKind::Temporal;
        t.inputs = {a, b};
        t.query = name;
        t.bindings = output_bindings(vp_, q.inputs.at(1));
        t.params["left_bindings"] = output_bindings(vp_, q.inputs.at(0));
        if (q.max_interval) t.params["max_interval"] = static_cast<std::int64_t>(std::llround(*q.max_interval));
        if (q.max_interval_seconds) t.params["max_interval_seconds"] = *q.max_interval_seconds;
        return add(std::move(t));
      }
    }
    throw InternalError("unreachable query kind");
  }

  int build_basic(const ResolvedQuery& q, bool need_tracks) {
    const std::vector<std::string> vbs = vobj_bindings(q);
    std::map<std::string, std::vector<PredicateExpr>> per_binding;
    std::vector<PredicateExpr> cross;
    if (q.frame_constraint) {
      for (const auto& c : dsl::conjuncts(*q.frame_constraint)) {
        std::set<std::string> used;
        for (const auto& r : dsl::collect_refs(c)) used.insert(r.binding);
        const bool holds = dsl::serialize(c).find("holds(") != std::string::npos;
        if (used.size() == 1 && !holds && !q.binding(*used.begin())->is_relation()) {
          per_binding[*used.begin()].push_back(c);
        } else {
          cross.push_back(c);
        }
      }
    }

    // Properties needed per binding (directly referenced, then closed over deps).
    std::map<std::string, std::set<std::string>> direct;
    std::map<std::string, std::set<std::string>> rel_needed;
    auto note_ref = [&](const dsl::PropertyRef& r) {
      const dsl::Binding* b = q.binding(r.binding);
      if (!b) return;
      if (b->is_relation()) {
        rel_needed[b->name].insert(r.property);
      } else {
        direct[b->name].insert(r.property);
      }
    };
    if (q.frame_constraint) {
      for (const auto& r : dsl::collect_refs(*q.frame_constraint)) note_ref(r);
    }
    for (const auto& r : q.frame_output) note_ref(r);
    if (q.video_constraint) {
      for (const auto& r : dsl::collect_refs(q.video_constraint->predicate)) note_ref(r);
    }
    // Relation dependencies on participant properties.
    std::map<std::string, std::set<std::string>> rel_closure;
    for (const auto& b : q.bindings) {
      if (!b.is_relation()) continue;
      const auto& rel = vp_.relation(b.type);
      std::set<std::string> closure;
      for (const auto& p : rel_needed[b.name]) add_rel_closure(rel, p, closure);
      rel_closure[b.name] = closure;
      for (const auto& p : closure) {
        for (const auto& dep : rel.properties.at(p).deps) {
          const auto dot = dep.find('.');
          if (dot == std::string::npos) continue;
          const std::string role = dep.substr(0, dot);
          for (std::size_t i = 0; i < rel.participants.size(); ++i) {
            if (rel.participants[i].role == role) direct[b.args.at(i)].insert(dep.substr(dot + 1));
          }
        }
      }
    }

    std::string video_binding;
    if (q.video_constraint) video_binding = dsl::collect_refs(q.video_constraint->predicate).at(0).binding;
    if (q.video_output) video_binding = q.video_output->binding;

    std::vector<int> tails;
    for (const auto& bname : vbs) {
      const dsl::Binding& b = *q.binding(bname);
      const ResolvedVObj& t = vp_.vobj(b.type);

      const auto dets = chain_detectors(vp_, b.type);
      if (dets.empty()) throw PlanError("binding '" + bname + "' of type '" + b.type + "' has no detector");
      std::pair<std::string, std::size_t> chosen = dets.front();
      auto want = opts_.detectors.find(choice_key(q.name, bname));
      if (want != opts_.detectors.end()) {
        auto it = std::find_if(dets.begin(), dets.end(), [&](const auto& p) { return p.first == want->second; });
        if (it == dets.end()) {
          throw PlanError("detector '" + want->second + "' is not declared along the chain of '" + b.type + "'");
        }
        chosen = *it;
      }
      const Registration* det_reg = reg_.find(ComponentKind::Detector, chosen.first);
      if (!det_reg) throw PlanError("detector '" + chosen.first + "' is not registered");
      dag_.detectors[choice_key(q.name, bname)] = chosen.first;

      // Defining constraints along the chain; a specialized detector
      // subsumes those at its own level and below.
      std::vector<PredicateExpr> where;
      for (std::size_t i = t.chain.size(); i-- > 0;) {
        if (det_reg->specialized() && i <= chosen.second) continue;
        const auto* decl = vp_.program.find_vobj(t.chain[i]);
        if (!decl) continue;
        for (const auto& w : decl->where) {
          PredicateExpr rb = rebind(w, bname);
          for (const auto& r : dsl::collect_refs(rb)) direct[bname].insert(r.property);
          where.push_back(std::move(rb));
        }
      }

      std::set<std::string> needed;
      for (const auto& p : direct[bname]) add_closure(t, p, needed);
      bool stateful = false, intrinsic = false;
      for (const auto& p : needed) {
        const auto& def = t.properties.at(p);
        stateful |= def.kind == dsl::PropertyKind::Stateful;
        intrinsic |= def.intrinsic;
      }
      const bool tracker = stateful || (opts_.memo && intrinsic) || need_tracks || bname == video_binding ||
                           direct[bname].count("track_id") > 0;

      PlanOp det;
      det.kind = OpKind::ObjectDetector;
      det.inputs = {reader_tail_};
      det.query = q.name;
      det.binding = bname;
      det.type = b.type;
      det.component = chosen.first;
      det.cost = det_reg->cost_units;
      int tail = add(std::move(det));
      for (const auto& f : t.filters) {
        PlanOp ff;
        ff.kind = OpKind::FrameFilter;
        ff.inputs = {tail};
        ff.query = q.name;
        ff.binding = bname;
        ff.type = b.type;
        ff.component = f;
        ff.cost = filter_cost(f);
        tail = add(std::move(ff));
      }
      if (tracker) {
        PlanOp tr;
        tr.kind = OpKind::ObjectTracker;
        tr.inputs = {tail};
        tr.query = q.name;
        tr.binding = bname;
        tr.type = b.type;
        tail = add(std::move(tr));
      }
      for (const auto& p : t.order) {
        if (!needed.count(p)) continue;
        PlanOp pr;
        pr.kind = OpKind::VObjProjector;
        pr.inputs = {tail};
        pr.query = q.name;
        pr.binding = bname;
        pr.type = b.type;
        pr.property = p;
        pr.cost = fn_cost(t.properties.at(p).impl);
        tail = add(std::move(pr));
      }
      std::vector<PredicateExpr> filters = where;
      for (const auto& c : per_binding[bname]) filters.push_back(c);
      for (const auto& c : filters) {
        PlanOp f;
        f.kind = OpKind::VObjFilter;
        f.inputs = {tail};
        f.query = q.name;
        f.binding = bname;
        f.type = b.type;
        f.predicates = {dsl::serialize(c)};
        tail = add(std::move(f));
      }
      tails.push_back(tail);
    }

    int tail = tails.front();
    if (tails.size() > 1) {
      PlanOp j;
      j.kind = OpKind::Join;
      j.inputs = tails;
      j.query = q.name;
      j.bindings = vbs;
      tail = add(std::move(j));
    }
    for (const auto& b : q.bindings) {
      if (!b.is_relation()) continue;
      const auto& rel = vp_.relation(b.type);
      for (const auto& p : rel.order) {
        if (!rel_closure[b.name].count(p)) continue;
        PlanOp rp;
        rp.kind = OpKind::RelationProjector;
        rp.inputs = {tail};
        rp.query = q.name;
        rp.binding = b.name;
        rp.type = b.type;
        rp.property = p;
        rp.bindings = vbs;
        rp.cost = fn_cost(rel.properties.at(p).impl);
        tail = add(std::move(rp));
      }
    }
    for (const auto& c : cross) {
      PlanOp f;
      f.kind = OpKind::RelationFilter;
      f.inputs = {tail};
      f.query = q.name;
      f.bindings = vbs;
      f.predicates = {dsl::serialize(c)};
      tail = add(std::move(f));
    }
    return tail;
  }

  const ValidatedProgram& vp_;
  const Registry& reg_;
  const BuildOptions& opts_;
  PlanDag dag_;
  int reader_tail_ = 0;
};

/// Renumbers ops in DFS post-order from the sink (inputs in order).
PlanDag renumber(const PlanDag& in) {
  std::map<int, int> new_id;
  std::vector<PlanOp> ops;
  std::function<void(int)> visit = [&](int id) {
    if (new_id.count(id)) return;
    const PlanOp& op = in.op(id);
    for (int i : op.inputs) visit(i);
    PlanOp copy = op;
    for (int& i : copy.inputs) i = new_id.at(i);
    copy.id = static_cast<int>(ops.size());
    new_id[id] = copy.id;
    ops.push_back(std::move(copy));
  };
  visit(in.sink);
  PlanDag out = in;
  out.ops = std::move(ops);
  out.sink = new_id.at(in.sink);
  out.finalize();
  return out;
}

bool chain_member(const PlanOp& op) {
  switch (op.kind) {
    case OpKind::FrameFilter: return !op.binding.empty();
    case OpKind::ObjectDetector:
    case OpKind::ObjectTracker:
    case OpKind::VObjProjector:
    case OpKind::VObjFilter:
    case OpKind::RelationProjector:
    case OpKind::RelationFilter:
    case OpKind::Fused: return op.inputs.size() == 1;
    default: return false;
  }
}

/// Maximal linear chains of member ops, each in flow order.
std::vector<std::vector<int>> linear_chains(const PlanDag& dag, const std::function<bool(const PlanOp&)>& member) {
  std::vector<std::vector<int>> out;
  std::set<int> taken;
  for (const auto& op : dag.ops) {
    if (!member(op) || taken.count(op.id)) continue;
    // Start only where the predecessor cannot extend the chain.
    const int in = op.inputs.empty() ? -1 : op.inputs.front();
    if (in >= 0 && member(dag.op(in)) && dag.consumers(in).size() == 1) continue;
    std::vector<int> chain{op.id};
    taken.insert(op.id);
    while (true) {
      auto cons = dag.consumers(chain.back());
      if (cons.size() != 1 || !member(dag.op(cons.front())) || dag.op(cons.front()).inputs.size() != 1) break;
      chain.push_back(cons.front());
      taken.insert(cons.front());
    }
    out.push_back(std::move(chain));
  }
  return out;
}

/// Rewires `dag` so the ops of `chain` run in `order`.
void rewire(PlanDag& dag, const std::vector<int>& chain, const std::vector<int>& order) {
  const std::vector<int> head_inputs = dag.op(chain.front()).inputs;
  const int old_last = chain.back();
  const auto cons = dag.consumers(old_last);
  for (std::size_t i = 0; i < order.size(); ++i) {
    dag.ops[static_cast<std::size_t>(order[i])].inputs = i == 0 ? head_inputs : std::vector<int>{order[i - 1]};
  }
  for (int c : cons) {
    for (int& in : dag.ops[static_cast<std::size_t>(c)].inputs) {
      if (in == old_last) in = order.back();
    }
  }
  if (dag.sink == old_last) dag.sink = order.back();
}

/// (binding, property) pairs a filter's predicates reference.
std::set<std::pair<std::string, std::string>> filter_refs(const PlanOp& f) {
  std::set<std::pair<std::string, std::string>> out;
  for (const auto& text : f.predicates) {
    for (const auto& r : dsl::collect_refs(dsl::parse_predicate(text))) out.emplace(r.binding, r.property);
  }
  return out;
}

}  // namespace

PlanDag build_base_dag(const ValidatedProgram& program, const Registry& registry, const std::string& query,
                       const BuildOptions& opts) {
  program.query(query);
  return DagBuilder(program, registry, opts).build(query);
}

PlanDag pull_up_predicates(const PlanDag& in) {
  PlanDag dag = in;
  for (const auto& chain : linear_chains(dag, chain_member)) {
    std::vector<int> fixed, filters;
    const bool has_det = std::any_of(chain.begin(), chain.end(),
                                     [&](int id) { return dag.op(id).kind == OpKind::ObjectDetector; });
    if (has_det) {
      for (int id : chain) {
        if (dag.op(id).kind == OpKind::FrameFilter) fixed.push_back(id);
      }
    }
    for (int id : chain) {
      const PlanOp& op = dag.op(id);
      if (op.is_filter()) {
        filters.push_back(id);
      } else if (!(has_det && op.kind == OpKind::FrameFilter)) {
        fixed.push_back(id);
      }
    }
    // anchor index in `fixed` after which each filter goes (-1: chain head)
    // Filters keep their written order: a filter never overtakes an earlier
    // one, so lazy evaluation still sees the cheap-to-reject conjuncts first.
    std::vector<std::vector<int>> after(fixed.size() + 1);
    int floor = -1;
    for (int fid : filters) {
      const PlanOp& f = dag.op(fid);
      const auto refs = filter_refs(f);
      int anchor = -1;
      for (std::size_t i = 0; i < fixed.size(); ++i) {
        const PlanOp& op = dag.op(fixed[i]);
        bool dep = false;
        if (f.kind == OpKind::VObjFilter) {
          dep = op.kind == OpKind::ObjectDetector || op.kind == OpKind::ObjectTracker ||
                op.kind == OpKind::FrameFilter ||
                (op.kind == OpKind::VObjProjector && refs.count({f.binding, op.property}));
        } else {
          dep = (op.kind == OpKind::RelationProjector && refs.count({op.binding, op.property})) ||
                op.kind == OpKind::Fused;
        }
        if (dep) anchor = static_cast<int>(i);
      }
      anchor = std::max(anchor, floor);
      floor = anchor;
      after[static_cast<std::size_t>(anchor + 1)].push_back(fid);
    }
    std::vector<int> order = after[0];
    for (std::size_t i = 0; i < fixed.size(); ++i) {
      order.push_back(fixed[i]);
      order.insert(order.end(), after[i + 1].begin(), after[i + 1].end());
    }
    if (order != chain) rewire(dag, chain, order);
  }
  return renumber(dag);
}

PlanDag fuse_operators(const PlanDag& in) {
  PlanDag dag = in;
  auto fusable = [](const PlanOp& op) { return (op.is_filter() || op.is_projector()) && op.inputs.size() == 1; };
  std::set<int> removed;
  for (const auto& chain : linear_chains(dag, fusable)) {
    if (chain.size() < 2) continue;
    PlanOp f;
    f.kind = OpKind::Fused;
    const PlanOp& head = dag.op(chain.front());
    f.inputs = head.inputs;
    f.query = head.query;
    f.binding = head.kind == OpKind::VObjProjector || head.kind == OpKind::VObjFilter ? head.binding : "";
    for (int id : chain) {
      PlanOp member = dag.op(id);
      member.inputs.clear();
      member.id = 0;
      f.cost += member.cost;
      f.fused.push_back(std::move(member));
    }
    const int last = chain.back();
    const auto cons = dag.consumers(last);
    f.id = chain.front();
    dag.ops[static_cast<std::size_t>(chain.front())] = f;
    for (int c : cons) {
      for (int& i : dag.ops[static_cast<std::size_t>(c)].inputs) {
        if (i == last) i = chain.front();
      }
    }
    if (dag.sink == last) dag.sink = chain.front();
    for (std::size_t i = 1; i < chain.size(); ++i) removed.insert(chain[i]);
  }
  return renumber(dag);
}

std::vector<std::string> check_dag(const PlanDag& dag, const ValidatedProgram& program) {
  std::vector<std::string> problems;
  for (std::size_t i = 0; i < dag.ops.size(); ++i) {
    if (dag.ops[i].id != static_cast<int>(i)) problems.push_back("op " + std::to_string(i) + " has wrong id");
    for (int in : dag.ops[i].inputs) {
      if (in < 0 || in >= static_cast<int>(i)) problems.push_back("op " + std::to_string(i) + " input not upstream");
    }
  }
  if (!problems.empty()) return problems;
  // Flatten fused ops into their chains for the dependency checks.
  std::function<void(int, std::vector<const PlanOp*>&)> upstream = [&](int id, std::vector<const PlanOp*>& out) {
    const PlanOp& op = dag.op(id);
    for (int in : op.inputs) upstream(in, out);
    if (op.kind == OpKind::Fused) {
      for (const auto& m : op.fused) out.push_back(&m);
    } else {
      out.push_back(&op);
    }
  };
  for (const auto& top : dag.ops) {
    std::vector<const PlanOp*> flat;
    upstream(top.id, flat);
    std::vector<const PlanOp*> checks;
    if (top.kind == OpKind::Fused) {
      for (const auto& m : top.fused) checks.push_back(&m);
    } else {
      checks.push_back(&top);
    }
    for (const PlanOp* op : checks) {
      auto pos = std::find(flat.begin(), flat.end(), op);
      std::vector<const PlanOp*> before(flat.begin(), pos);
      auto has_projector = [&](const std::string& binding, const std::string& type, const std::string& prop) {
        return std::any_of(before.begin(), before.end(), [&](const PlanOp* u) {
          return u->kind == OpKind::VObjProjector && u->type == type && u->property == prop &&
                 (binding.empty() || u->binding == binding);
        });
      };
      if (op->kind == OpKind::VObjProjector) {
        const auto& t = program.vobj(op->type);
        const auto& def = t.properties.at(op->property);
        for (const auto& d : def.deps) {
          if (t.properties.count(d) && !has_projector(op->binding, op->type, d)) {
            problems.push_back("projector " + op->type + "." + op->property + " runs before its dependency " + d);
          }
        }
        if (def.kind == dsl::PropertyKind::Stateful &&
            std::none_of(before.begin(), before.end(), [&](const PlanOp* u) {
              return u->kind == OpKind::ObjectTracker && u->binding == op->binding;
            })) {
          problems.push_back("stateful projector " + op->type + "." + op->property + " has no upstream tracker");
        }
      }
      if (op->kind == OpKind::VObjFilter) {
        const auto& t = program.vobj(op->type);
        for (const auto& [b, p] : filter_refs(*op)) {
          if (t.properties.count(p) && !has_projector(b, op->type, p)) {
            problems.push_back("filter on " + b + "." + p + " runs before its projector");
          }
        }
      }
    }
  }
  return problems;
}

// ---------------------------------------------------------------------------
// Alternatives, profiling, selection

std::vector<std::pair<std::string, std::vector<std::string>>> detector_options(const ValidatedProgram& vp,
                                                                               const Registry& registry,
                                                                               const std::string& query) {
  std::vector<std::pair<std::string, std::vector<std::string>>> out;
  std::set<std::string> seen;
  std::function<void(const std::string&)> walk = [&](const std::string& name) {
    const auto& q = vp.query(name);
    if (q.kind == QueryKind::Duration || q.kind == QueryKind::Temporal) {
      for (const auto& in : q.inputs) walk(in);
      return;
    }
    for (const auto& b : q.bindings) {
      if (b.is_relation()) continue;
      const std::string key = choice_key(q.name, b.name);
      if (!seen.insert(key).second) continue;
      std::vector<std::string> dets;
      for (const auto& [d, level] : chain_detectors(vp, b.type)) {
        if (registry.has_detector(d)) dets.push_back(d);
      }
      if (dets.empty()) throw PlanError("binding '" + b.name + "' of type '" + b.type + "' has no registered detector");
      out.emplace_back(key, std::move(dets));
    }
  };
  walk(query);
  return out;
}

std::vector<PlanDag> enumerate_alternatives(const ValidatedProgram& program, const Registry& registry,
                                            const std::string& query, const PlannerConfig& cfg) {
  const auto options = detector_options(program, registry, query);
  std::size_t total = 1;
  for (const auto& [key, dets] : options) {
    total *= dets.size();
    if (total > cfg.max_alternatives) total = cfg.max_alternatives;
  }
  total = std::max<std::size_t>(1, std::min(total, cfg.max_alternatives));
  std::vector<PlanDag> out;
  std::vector<std::size_t> digits(options.size(), 0);
  for (std::size_t n = 0; n < total; ++n) {
    BuildOptions opts;
    opts.memo = cfg.memo;
    for (std::size_t i = 0; i < options.size(); ++i) opts.detectors[options[i].first] = options[i].second[digits[i]];
    PlanDag dag = build_base_dag(program, registry, query, opts);
    if (cfg.pullup) dag = pull_up_predicates(dag);
    if (cfg.fusion) dag = fuse_operators(dag);
    dag.finalize();
    out.push_back(std::move(dag));
    // Advance the mixed-radix counter, last choice point fastest.
    for (std::size_t i = options.size(); i-- > 0;) {
      if (++digits[i] < options[i].second.size()) break;
      digits[i] = 0;
    }
  }
  return out;
}

double f1_score(const std::set<FrameId>& reference, const std::set<FrameId>& candidate) {
  std::size_t tp = 0, fp = 0;
  for (FrameId f : candidate) {
    if (reference.count(f)) {
      ++tp;
    } else {
      ++fp;
    }
  }
  const std::size_t fn = reference.size() - tp;
  if (tp + fp + fn == 0) return 1.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

std::vector<ProfileReport> profile(const std::vector<PlanDag>& dags, std::size_t reference,
                                   const std::vector<TraceRecord>& canary, const VideoMeta& meta,
                                   const ValidatedProgram& program, const Registry& registry,
                                   const PlannerConfig& cfg) {
  if (canary.empty()) throw ProfilingError("canary trace is empty");
  if (reference >= dags.size()) throw ProfilingError("reference plan index out of range");
  ExecConfig ec;
  ec.memo = cfg.memo;
  ec.batch_size = cfg.batch_size;
  VideoMeta canary_meta = meta;
  canary_meta.frame_count = 0;
  auto run_one = [&](const PlanDag& dag) {
    MemoryTrace src(canary);
    return execute({dag}, program, registry, src, canary_meta, ec);
  };
  std::vector<RunResult> runs;
  if (cfg.parallel && dags.size() > 1) {
    std::vector<std::future<RunResult>> futs;
    for (const auto& d : dags) futs.push_back(std::async(std::launch::async, run_one, std::cref(d)));
    for (auto& f : futs) runs.push_back(f.get());
  } else {
    for (const auto& d : dags) runs.push_back(run_one(d));
  }
  const std::set<FrameId>& ref_labels = runs[reference].outputs.at(0).labels;
  std::vector<ProfileReport> out;
  for (std::size_t i = 0; i < dags.size(); ++i) {
    ProfileReport r;
    r.plan_id = dags[i].plan_id;
    r.labels = runs[i].outputs.at(0).labels;
    r.f1 = f1_score(ref_labels, r.labels);
    r.cost_units = runs[i].stats.cost_units;
    r.wall_seconds = runs[i].stats.batches ? runs[i].stats.wall_seconds / static_cast<double>(runs[i].stats.batches)
                                           : 0.0;
    r.op_count = dags[i].op_count();
    r.op_costs = runs[i].stats.op_costs;
    r.conjuncts = runs[i].stats.conjuncts;
    out.push_back(std::move(r));
  }
  return out;
}

Selection select_plan(const std::vector<ProfileReport>& reports, std::size_t reference, double accuracy_target) {
  if (reports.empty()) throw ProfilingError("no profile reports to select from");
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    if (r.f1 < accuracy_target) continue;
    if (!best) {
      best = i;
      continue;
    }
    const auto& b = reports[*best];
    if (r.cost_units != b.cost_units) {
      if (r.cost_units < b.cost_units) best = i;
    } else if (r.op_count != b.op_count) {
      if (r.op_count < b.op_count) best = i;
    } else if (r.plan_id < b.plan_id) {
      best = i;
    }
  }
  Selection s;
  if (best) {
    s.index = *best;
    return s;
  }
  s.index = reference;
  s.fallback = true;
  std::ostringstream os;
  os << "no candidate plan reaches accuracy target " << accuracy_target << "; using the reference plan";
  s.warning = os.str();
  return s;
}

PlanDag reorder_conjuncts(const PlanDag& in, const std::map<std::string, ConjunctProfile>& prof) {
  auto rank = [&](const PlanOp& f) {
    auto it = prof.find(f.predicates.front());
    if (it == prof.end() || it->second.evaluations == 0) return std::numeric_limits<double>::infinity();
    const double per_eval = it->second.cost_units / static_cast<double>(it->second.evaluations);
    const double reject = static_cast<double>(it->second.rejections) / static_cast<double>(it->second.evaluations);
    if (reject == 0) return std::numeric_limits<double>::infinity();
    return per_eval / reject;
  };
  PlanDag dag = in;
  for (auto& op : dag.ops) {
    if (op.kind != OpKind::Fused) continue;
    std::size_t i = 0;
    while (i < op.fused.size()) {
      if (!op.fused[i].is_filter()) {
        ++i;
        continue;
      }
      std::size_t j = i;
      while (j < op.fused.size() && op.fused[j].is_filter()) ++j;
      std::stable_sort(op.fused.begin() + static_cast<std::ptrdiff_t>(i), op.fused.begin() + static_cast<std::ptrdiff_t>(j),
                       [&](const PlanOp& a, const PlanOp& b) { return rank(a) < rank(b); });
      i = j;
    }
  }
  dag.finalize();
  return dag;
}

PlanResult plan_query(const ValidatedProgram& program, const Registry& registry, const std::string& query,
                      const std::vector<TraceRecord>& canary, const VideoMeta& meta, const PlannerConfig& cfg) {
  PlanResult r;
  r.candidates = enumerate_alternatives(program, registry, query, cfg);
  if (r.candidates.size() == 1) {
    r.plan = r.candidates.front();
    return r;
  }
  std::vector<TraceRecord> prefix = canary;
  if (cfg.canary_frames > 0 && prefix.size() > static_cast<std::size_t>(cfg.canary_frames)) {
    prefix.resize(static_cast<std::size_t>(cfg.canary_frames));
  }
  r.reports = profile(r.candidates, 0, prefix, meta, program, registry, cfg);
  r.selection = select_plan(r.reports, 0, cfg.accuracy_target);
  r.plan = r.candidates[r.selection.index];
  if (cfg.fusion) r.plan = reorder_conjuncts(r.plan, r.reports[r.selection.index].conjuncts);
  return r;
}

void save_plan(const PlanDag& dag, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write plan file '" + path + "'");
  out << dag.to_json().dump(2) << "\n";
}

PlanDag load_plan(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open plan file '" + path + "'", 0);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what(), 0);
  }
  return PlanDag::from_json(j);
}

void link_plan(const PlanDag& dag, const ValidatedProgram& program, const Registry& registry) {
  std::function<void(const PlanOp&)> check = [&](const PlanOp& op) {
    switch (op.kind) {
      case OpKind::ObjectDetector:
        if (!registry.has_detector(op.component)) {
          throw LinkError("plan uses unregistered detector '" + op.component + "'");
        }
        if (!program.vobjs.count(op.type)) throw LinkError("plan uses undeclared vobj '" + op.type + "'");
        break;
      case OpKind::FrameFilter:
        if (!registry.find_filter(op.component)) {
          throw LinkError("plan uses unregistered filter '" + op.component + "'");
        }
        break;
      case OpKind::VObjProjector: {
        auto it = program.vobjs.find(op.type);
        if (it == program.vobjs.end() || !it->second.properties.count(op.property)) {
          throw LinkError("plan projects unknown property '" + op.type + "." + op.property + "'");
        }
        if (!registry.has_property_fn(it->second.properties.at(op.property).impl)) {
          throw LinkError("plan uses unregistered property function '" +
                          it->second.properties.at(op.property).impl + "'");
        }
        break;
      }
      case OpKind::RelationProjector: {
        auto it = program.relations.find(op.type);
        if (it == program.relations.end() || !it->second.properties.count(op.property)) {
          throw LinkError("plan projects unknown relation property '" + op.type + "." + op.property + "'");
        }
        break;
      }
      case OpKind::Fused:
        for (const auto& m : op.fused) check(m);
        break;
      case OpKind::Output:
      case OpKind::Duration:
      case OpKind::Temporal:
        if (!program.queries.count(op.query)) throw LinkError("plan refers to unknown query '" + op.query + "'");
        break;
      default: break;
    }
  };
  for (const auto& op : dag.ops) check(op);
}

std::string op_label(const PlanOp& op) {
  std::string s = to_string(op.kind);
  switch (op.kind) {
    case OpKind::FrameFilter:
    case OpKind::ObjectDetector: s += " " + op.component; break;
    case OpKind::VObjProjector:
    case OpKind::RelationProjector: s += " " + op.type + "." + op.property; break;
    case OpKind::VObjFilter:
    case OpKind::RelationFilter:
      for (const auto& p : op.predicates) s += " " + p;
      break;
    case OpKind::Fused: {
      s += " {";
      for (std::size_t i = 0; i < op.fused.size(); ++i) s += (i ? "; " : "") + op_label(op.fused[i]);
      s += "}";
      break;
    }
    case OpKind::Duration:
    case OpKind::Temporal:
    case OpKind::Output: s += " " + op.query; break;
    default: break;
  }
  if (!op.binding.empty() && op.kind != OpKind::Fused) s += " [" + op.binding + "]";
  if (op.kind == OpKind::Fused && !op.binding.empty()) s += " [" + op.binding + "]";
  return s;
}

std::string explain_dot(const PlanDag& dag, const std::map<std::string, double>* op_costs) {
  auto esc = [](const std::string& s) {
    std::string o;
    for (char c : s) {
      if (c == '"' || c == '\\') o += '\\';
      o += c;
    }
    return o;
  };
  std::ostringstream os;
  os << "digraph plan {\n";
  os << "  label=\"" << esc(dag.query) << " plan " << dag.plan_id << "\";\n";
  os << "  node [shape=box];\n";
  for (const auto& op : dag.ops) {
    std::ostringstream cost;
    cost << "cost/inv=" << op.cost;
    if (op_costs) {
      auto it = op_costs->find(op_label(op));
      if (it != op_costs->end()) cost << " measured=" << it->second;
    }
    os << "  n" << op.id << " [label=\"" << esc(op_label(op)) << "\\n" << cost.str() << "\"];\n";
  }
  for (const auto& op : dag.ops) {
    for (int in : op.inputs) os << "  n" << in << " -> n" << op.id << ";\n";
  }
  os << "}\n";
  return os.str();
}

}  // namespace vidq
