#include "vidq/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>

#include "vidq/error.hpp"
#include "vidq/hash.hpp"

namespace vidq::synth {

using json = nlohmann::json;
using dsl::PredicateExpr;

namespace {

constexpr std::uint64_t kSpuriousKey = 0xFFFFFFFFull;

std::map<std::string, Value> values_from(const json& j) {
  std::map<std::string, Value> out;
  if (j.is_null()) return out;
  for (auto it = j.begin(); it != j.end(); ++it) out[it.key()] = value_from_json(it.value());
  return out;
}

json values_to(const std::map<std::string, Value>& m) {
  json j = json::object();
  for (const auto& [k, v] : m) j[k] = vidq::to_json(v);
  return j;
}

std::pair<double, double> velocity_at(const ObjectSpec& o, FrameId f) {
  const Trajectory& t = o.trajectory;
  if (t.turn_frame && f > *t.turn_frame) return {t.vx2, t.vy2};
  return {t.vx, t.vy};
}

BBox exact_box(const ObjectSpec& o, FrameId f) {
  const auto [cx, cy] = center_at(o, f);
  const double hw = o.trajectory.w / 2.0, hh = o.trajectory.h / 2.0;
  return BBox{cx - hw, cy - hh, cx + hw, cy + hh};
}

double motion_score(const WorldSpec& s, FrameId f) {
  double m = 0;
  for (const auto& o : s.objects) {
    if (!present(o, f, s.frames)) continue;
    const auto [vx, vy] = velocity_at(o, f);
    m += std::hypot(vx, vy);
  }
  return m;
}

}  // namespace

std::pair<double, double> center_at(const ObjectSpec& o, FrameId f) {
  const Trajectory& t = o.trajectory;
  const double dt = static_cast<double>(f - o.enter);
  if (!t.turn_frame || f <= *t.turn_frame) return {t.x + t.vx * dt, t.y + t.vy * dt};
  const double d1 = static_cast<double>(*t.turn_frame - o.enter);
  const double d2 = static_cast<double>(f - *t.turn_frame);
  return {t.x + t.vx * d1 + t.vx2 * d2, t.y + t.vy * d1 + t.vy2 * d2};
}

bool present(const ObjectSpec& o, FrameId f, std::int64_t frames) {
  const FrameId last = o.exit ? *o.exit : frames - 1;
  return f >= o.enter && f <= last && f < frames;
}

void WorldSpec::validate() const {
  if (frames < 0) throw SpecError("frames must be >= 0");
  if (!(fps > 0)) throw SpecError("fps must be positive");
  if (width <= 0 || height <= 0) throw SpecError("resolution must be positive");
  if (px_per_m && !(*px_per_m > 0)) throw SpecError("px_per_m must be positive");
  for (double r : {noise.miss_rate, noise.false_rate}) {
    if (r < 0 || r > 1) throw SpecError("noise rates must lie in [0, 1]");
  }
  if (noise.jitter < 0) throw SpecError("jitter must be >= 0");
  std::set<std::int64_t> ids;
  for (const auto& o : objects) {
    if (!ids.insert(o.id).second) throw SpecError("duplicate object id " + std::to_string(o.id));
    if (o.id < 0) throw SpecError("object ids must be >= 0");
    if (!(o.trajectory.w > 0) || !(o.trajectory.h > 0)) {
      throw SpecError("object " + std::to_string(o.id) + " needs a positive size");
    }
    if (o.exit && *o.exit < o.enter) throw SpecError("object " + std::to_string(o.id) + " exits before it enters");
    if (o.score < 0 || o.score > 1) throw SpecError("object " + std::to_string(o.id) + " score outside [0, 1]");
  }
  for (const auto& e : events) {
    if (e.kind != "proximity") throw SpecError("unknown event kind '" + e.kind + "'");
    if (!ids.count(e.a) || !ids.count(e.b)) throw SpecError("event refers to an unknown object");
    if (e.a == e.b) throw SpecError("event needs two distinct objects");
  }
}

WorldSpec WorldSpec::from_json(const json& j) {
  try {
    WorldSpec s;
    if (!j.contains("seed")) throw SpecError("world spec needs a seed");
    s.seed = j.at("seed").get<std::uint64_t>();
    s.frames = j.at("frames").get<std::int64_t>();
    s.fps = j.value("fps", 30.0);
    s.width = j.value("width", 1920);
    s.height = j.value("height", 1080);
    if (j.contains("px_per_m")) s.px_per_m = j.at("px_per_m").get<double>();
    for (const auto& o : j.value("objects", json::array())) {
      ObjectSpec os;
      os.id = o.at("id").get<std::int64_t>();
      os.class_name = o.value("class", "car");
      os.attrs = values_from(o.value("attrs", json::object()));
      os.enter = o.value("enter", FrameId{0});
      if (o.contains("exit")) os.exit = o.at("exit").get<FrameId>();
      os.score = o.value("score", 0.9);
      os.dropouts = o.value("dropouts", std::vector<FrameId>{});
      const json& t = o.at("trajectory");
      const std::string kind = t.value("kind", "linear");
      if (kind != "linear" && kind != "turn") throw SpecError("unknown trajectory kind '" + kind + "'");
      os.trajectory.x = t.at("x").get<double>();
      os.trajectory.y = t.at("y").get<double>();
      os.trajectory.vx = t.value("vx", 0.0);
      os.trajectory.vy = t.value("vy", 0.0);
      os.trajectory.w = t.value("w", 40.0);
      os.trajectory.h = t.value("h", 30.0);
      if (kind == "turn") {
        os.trajectory.turn_frame = t.at("turn_frame").get<FrameId>();
        os.trajectory.vx2 = t.value("vx2", 0.0);
        os.trajectory.vy2 = t.value("vy2", 0.0);
      }
      s.objects.push_back(std::move(os));
    }
    for (const auto& e : j.value("events", json::array())) {
      PlantedEvent pe;
      pe.kind = e.value("kind", "proximity");
      pe.a = e.at("a").get<std::int64_t>();
      pe.b = e.at("b").get<std::int64_t>();
      pe.frame = e.at("frame").get<FrameId>();
      pe.dx = e.value("dx", 0.0);
      pe.dy = e.value("dy", 0.0);
      s.events.push_back(pe);
    }
    if (j.contains("noise")) {
      const json& n = j.at("noise");
      s.noise.miss_rate = n.value("miss_rate", 0.0);
      s.noise.false_rate = n.value("false_rate", 0.0);
      s.noise.jitter = n.value("jitter", 0.0);
    }
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw SpecError(std::string("malformed world spec: ") + e.what());
  }
}

json WorldSpec::to_json() const {
  json j;
  j["seed"] = seed;
  j["frames"] = frames;
  j["fps"] = fps;
  j["width"] = width;
  j["height"] = height;
  if (px_per_m) j["px_per_m"] = *px_per_m;
  j["objects"] = json::array();
  for (const auto& o : objects) {
    json t{{"x", o.trajectory.x}, {"y", o.trajectory.y}, {"vx", o.trajectory.vx},
           {"vy", o.trajectory.vy}, {"w", o.trajectory.w}, {"h", o.trajectory.h}};
    t["kind"] = o.trajectory.turn_frame ? "turn" : "linear";
    if (o.trajectory.turn_frame) {
      t["turn_frame"] = *o.trajectory.turn_frame;
      t["vx2"] = o.trajectory.vx2;
      t["vy2"] = o.trajectory.vy2;
    }
    json oj{{"id", o.id}, {"class", o.class_name}, {"attrs", values_to(o.attrs)}, {"enter", o.enter},
            {"score", o.score}, {"trajectory", t}};
    if (o.exit) oj["exit"] = *o.exit;
    if (!o.dropouts.empty()) oj["dropouts"] = o.dropouts;
    j["objects"].push_back(oj);
  }
  j["events"] = json::array();
  for (const auto& e : events) {
    j["events"].push_back({{"kind", e.kind}, {"a", e.a}, {"b", e.b}, {"frame", e.frame}, {"dx", e.dx}, {"dy", e.dy}});
  }
  j["noise"] = {{"miss_rate", noise.miss_rate}, {"false_rate", noise.false_rate}, {"jitter", noise.jitter}};
  return j;
}

WorldSpec WorldSpec::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SpecError("cannot open world spec '" + path + "'");
  try {
    return from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw SpecError(path + ": " + e.what());
  }
}

WorldSpec apply_events(const WorldSpec& spec) {
  WorldSpec s = spec;
  auto find = [&](std::int64_t id) -> ObjectSpec& {
    for (auto& o : s.objects) {
      if (o.id == id) return o;
    }
    throw SpecError("event refers to unknown object " + std::to_string(id));
  };
  for (const auto& e : s.events) {
    const ObjectSpec& a = find(e.a);
    ObjectSpec& b = find(e.b);
    const auto [ax, ay] = center_at(a, e.frame);
    const auto [bx, by] = center_at(b, e.frame);
    b.trajectory.x += ax + e.dx - bx;
    b.trajectory.y += ay + e.dy - by;
  }
  return s;
}

World generate(const WorldSpec& spec) {
  spec.validate();
  const WorldSpec s = apply_events(spec);
  World w;
  w.meta.fps = s.fps;
  w.meta.width = s.width;
  w.meta.height = s.height;
  w.meta.frame_count = s.frames;
  w.meta.px_per_m = s.px_per_m;
  const double W = s.width, H = s.height;
  for (FrameId f = 0; f < s.frames; ++f) {
    TraceRecord rec;
    rec.frame_id = f;
    rec.channels["motion_score"] = motion_score(s, f);
    GroundTruthRecord gt;
    gt.frame_id = f;
    const auto uf = static_cast<std::uint64_t>(f);
    for (const auto& o : s.objects) {
      if (!present(o, f, s.frames)) continue;
      const BBox box = exact_box(o, f);
      if (box.x1 < 0 || box.y1 < 0 || box.x2 > W || box.y2 > H) {
        throw SpecError("object " + std::to_string(o.id) + " leaves the frame at frame " + std::to_string(f) +
                        " without a declared exit");
      }
      gt.objects.push_back(TruthObject{o.id, o.class_name, box, o.attrs});
      if (std::find(o.dropouts.begin(), o.dropouts.end(), f) != o.dropouts.end()) continue;
      const auto uid = static_cast<std::uint64_t>(o.id);
      if (s.noise.miss_rate > 0 && seeded_uniform(s.seed, {uf, uid, 1}) < s.noise.miss_rate) continue;
      BBox b = box;
      if (s.noise.jitter > 0) {
        double* c[4] = {&b.x1, &b.y1, &b.x2, &b.y2};
        for (std::uint64_t k = 0; k < 4; ++k) *c[k] += (seeded_uniform(s.seed, {uf, uid, 2 + k}) * 2 - 1) * s.noise.jitter;
        b.x1 = std::clamp(b.x1, 0.0, W - 1);
        b.y1 = std::clamp(b.y1, 0.0, H - 1);
        b.x2 = std::clamp(b.x2, b.x1 + 1, W);
        b.y2 = std::clamp(b.y2, b.y1 + 1, H);
      }
      w.identity[{f, static_cast<int>(rec.detections.size())}] = o.id;
      rec.detections.push_back(Detection{o.class_name, b, o.score, o.attrs});
    }
    if (s.noise.false_rate > 0 && seeded_uniform(s.seed, {uf, kSpuriousKey, 0}) < s.noise.false_rate) {
      const double bw = 40, bh = 30;
      const double x = seeded_uniform(s.seed, {uf, kSpuriousKey, 1}) * (W - bw);
      const double y = seeded_uniform(s.seed, {uf, kSpuriousKey, 2}) * (H - bh);
      const std::string cls = s.objects.empty() ? "car" : s.objects.front().class_name;
      w.identity[{f, static_cast<int>(rec.detections.size())}] = -1;
      rec.detections.push_back(Detection{cls, BBox{x, y, x + bw, y + bh}, 0.5, {}});
    }
    w.trace.push_back(std::move(rec));
    w.truth.add(std::move(gt));
  }
  return w;
}

void write_world(const World& w, const std::string& dir) {
  std::filesystem::create_directories(dir);
  write_trace(w.trace, dir + "/trace.jsonl");
  save_meta(w.meta, dir + "/meta.json");
  save_ground_truth(w.truth, dir + "/truth.jsonl");
  std::ofstream id(dir + "/identity.jsonl");
  if (!id) throw Error("cannot write " + dir + "/identity.jsonl");
  for (const auto& [key, obj] : w.identity) {
    id << json{{"frame", key.first}, {"det", key.second}, {"object", obj}}.dump() << "\n";
  }
}

// ---------------------------------------------------------------------------
// Label oracle

namespace {

Truth kleene_and(Truth a, Truth b) {
  if (a == Truth::False || b == Truth::False) return Truth::False;
  if (a == Truth::Unknown || b == Truth::Unknown) return Truth::Unknown;
  return Truth::True;
}

Truth kleene_or(Truth a, Truth b) {
  if (a == Truth::True || b == Truth::True) return Truth::True;
  if (a == Truth::Unknown || b == Truth::Unknown) return Truth::Unknown;
  return Truth::False;
}

Truth cmp(const Value& v, dsl::CmpOp op, const Value& lit) {
  auto order = [&](int c) {
    switch (op) {
      case dsl::CmpOp::Eq: return c == 0 ? Truth::True : Truth::False;
      case dsl::CmpOp::Ne: return c != 0 ? Truth::True : Truth::False;
      case dsl::CmpOp::Lt: return c < 0 ? Truth::True : Truth::False;
      case dsl::CmpOp::Le: return c <= 0 ? Truth::True : Truth::False;
      case dsl::CmpOp::Gt: return c > 0 ? Truth::True : Truth::False;
      case dsl::CmpOp::Ge: return c >= 0 ? Truth::True : Truth::False;
      default: return Truth::Unknown;
    }
  };
  if (v.is_number() && lit.is_number()) {
    const double a = v.as_number(), b = lit.as_number();
    return order(a < b ? -1 : (a > b ? 1 : 0));
  }
  if (v.is_string() && lit.is_string()) return order(v.as_string().compare(lit.as_string()));
  if (op == dsl::CmpOp::Eq) return v == lit ? Truth::True : Truth::False;
  if (op == dsl::CmpOp::Ne) return v == lit ? Truth::False : Truth::True;
  return Truth::Unknown;
}

using Resolver = std::function<Value(const dsl::PropertyRef&)>;

Truth eval(const PredicateExpr& e, const Resolver& r) {
  switch (e.kind) {
    case PredicateExpr::Kind::Compare: {
      const Value v = r(e.ref);
      if (v.is_undefined()) return Truth::Unknown;
      if (e.op == dsl::CmpOp::In) {
        for (const auto& l : e.literals) {
          if (cmp(v, dsl::CmpOp::Eq, l) == Truth::True) return Truth::True;
        }
        return Truth::False;
      }
      return e.literals.empty() ? Truth::Unknown : cmp(v, e.op, e.literals.front());
    }
    case PredicateExpr::Kind::Not: {
      const Truth t = eval(e.children.at(0), r);
      return t == Truth::Unknown ? t : (t == Truth::True ? Truth::False : Truth::True);
    }
    case PredicateExpr::Kind::And: {
      Truth acc = Truth::True;
      for (const auto& c : e.children) acc = kleene_and(acc, eval(c, r));
      return acc;
    }
    case PredicateExpr::Kind::Or: {
      Truth acc = Truth::False;
      for (const auto& c : e.children) acc = kleene_or(acc, eval(c, r));
      return acc;
    }
    case PredicateExpr::Kind::Holds:
      return eval(e.children.at(0), [&](const dsl::PropertyRef& ref) {
        dsl::PropertyRef scoped = ref;
        if (scoped.binding.empty()) scoped.binding = e.relation;
        return r(scoped);
      });
  }
  return Truth::Unknown;
}

class Oracle {
 public:
  Oracle(const WorldSpec& s, const dsl::ValidatedProgram& vp, const Registry& reg)
      : s_(apply_events(s)), vp_(vp), reg_(reg) {}

  std::set<FrameId> frames(const std::string& name) {
    std::set<FrameId> out;
    for (const auto& [f, keys] : assignments(name)) {
      if (!keys.empty()) out.insert(f);
    }
    return out;
  }

  /// Satisfying object-id tuples per frame.
  std::map<FrameId, std::set<std::vector<std::int64_t>>> assignments(const std::string& name) {
    const auto& q = vp_.query(name);
    switch (q.kind) {
      case dsl::QueryKind::Basic:
      case dsl::QueryKind::Spatial: return basic(q);
      case dsl::QueryKind::Duration: return duration(q);
      case dsl::QueryKind::Temporal: return temporal(q);
    }
    return {};
  }

 private:
  const ObjectSpec& object(std::int64_t id) const {
    for (const auto& o : s_.objects) {
      if (o.id == id) return o;
    }
    throw InternalError("unknown object");
  }

  bool is_type(const ObjectSpec& o, FrameId f, const std::string& type) {
    const auto& t = vp_.vobj(type);
    std::optional<std::string> det;
    for (auto it = t.chain.rbegin(); it != t.chain.rend() && !det; ++it) {
      const auto* d = vp_.program.find_vobj(*it);
      if (d && d->detector) det = d->detector;
    }
    if (!det) throw UnsupportedError("type '" + type + "' has no detector");
    const Registration* r = reg_.find(ComponentKind::Detector, *det);
    if (!r) throw UnsupportedError("detector '" + *det + "' is not registered");
    if (std::find(r->classes.begin(), r->classes.end(), o.class_name) == r->classes.end()) return false;
    for (const auto& level : t.chain) {
      const auto* d = vp_.program.find_vobj(level);
      if (!d) continue;
      for (const auto& w : d->where) {
        const Truth ok = eval(w, [&](const dsl::PropertyRef& ref) { return prop(o, f, type, ref.property); });
        if (ok != Truth::True) return false;
      }
    }
    return true;
  }

  Value builtin(const ObjectSpec& o, FrameId f, const std::string& p) const {
    if (p == "bbox") {
      const BBox b = exact_box(o, f);
      return std::vector<double>{b.x1, b.y1, b.x2, b.y2};
    }
    if (p == "score") return o.score;
    if (p == "frame") return static_cast<std::int64_t>(f);
    if (p == "track_id") return o.id;
    if (p == "frame_rate") return s_.fps;
    return {};
  }

  double scale(const std::map<std::string, Value>& args) const {
    auto it = args.find("unit");
    if (it != args.end() && it->second.is_string() && it->second.as_string() == "px") return 1.0;
    if (!s_.px_per_m) throw ConfigurationError("metric units need px_per_m");
    return *s_.px_per_m;
  }

  std::map<std::string, Value> merged_args(const dsl::PropertyDef& def, std::string* impl) const {
    const Registration* r = reg_.find(ComponentKind::PropertyFn, def.impl);
    if (!r) throw UnsupportedError("property function '" + def.impl + "' is not registered");
    *impl = r->impl;
    std::map<std::string, Value> a = r->default_args;
    for (const auto& [k, v] : def.args) a[k] = v;
    return a;
  }

  Value stateless(const std::string& impl, const std::map<std::string, Value>& args, const std::vector<Value>& deps,
                  const std::map<std::string, Value>* attrs, FrameId f) const {
    auto attr = [&](const std::string& k) -> Value {
      if (!attrs) return {};
      auto it = attrs->find(k);
      return it == attrs->end() ? Value{} : it->second;
    };
    auto key_or = [&](const std::string& d) {
      auto it = args.find("key");
      return it != args.end() && it->second.is_string() ? it->second.as_string() : d;
    };
    if (impl == "center") {
      const auto& b = deps.at(0).as_vector();
      return std::vector<double>{(b[0] + b[2]) / 2.0, (b[1] + b[3]) / 2.0};
    }
    if (impl == "color" || impl == "plate" || impl == "type" || impl == "feature_vector") return attr(key_or(impl));
    if (impl == "attr") return attr(key_or(""));
    if (impl == "distance") {
      const auto& a = deps.at(0).as_vector();
      const auto& b = deps.at(1).as_vector();
      return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1])) / scale(args);
    }
    if (impl == "iou") {
      const auto& a = deps.at(0).as_vector();
      const auto& b = deps.at(1).as_vector();
      const double ix = std::max(0.0, std::min(a[2], b[2]) - std::max(a[0], b[0]));
      const double iy = std::max(0.0, std::min(a[3], b[3]) - std::max(a[1], b[1]));
      const double inter = ix * iy;
      const double uni = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
      return uni > 0 ? inter / uni : 0.0;
    }
    if (impl == "channel") {
      auto it = args.find("name");
      if (it != args.end() && it->second.is_string() && it->second.as_string() == "motion_score") {
        return motion_score(s_, f);
      }
      return {};
    }
    throw UnsupportedError("oracle cannot evaluate property function '" + impl + "'");
  }

  Value prop(const ObjectSpec& o, FrameId f, const std::string& type, const std::string& p) {
    if (dsl::is_builtin_property(p)) return builtin(o, f, p);
    const auto& t = vp_.vobj(type);
    auto it = t.properties.find(p);
    if (it == t.properties.end()) throw UnsupportedError("unknown property '" + p + "'");
    const dsl::PropertyDef& def = it->second;
    std::string impl;
    const auto args = merged_args(def, &impl);
    if (def.kind == dsl::PropertyKind::Stateless) {
      std::vector<Value> deps;
      for (const auto& d : def.deps) {
        deps.push_back(prop(o, f, type, d));
        if (deps.back().is_undefined()) return {};
      }
      return stateless(impl, args, deps, &o.attrs, f);
    }
    const auto w = static_cast<FrameId>(def.window);
    if (f - o.enter + 1 < w) return {};
    std::vector<Value> win;
    for (FrameId g = f - w + 1; g <= f; ++g) {
      win.push_back(prop(o, g, type, def.deps.at(0)));
      if (win.back().is_undefined()) return {};
    }
    if (impl == "direction") {
      const auto& a = win.front().as_vector();
      const auto& b = win.back().as_vector();
      const double dx = b[0] - a[0], dy = b[1] - a[1];
      auto m = args.find("min_displacement");
      const double min_d = m != args.end() && m->second.is_number() ? m->second.as_number() : 1.0;
      if (std::sqrt(dx * dx + dy * dy) < min_d) return "stationary";
      if (std::abs(dx) >= std::abs(dy)) return dx > 0 ? "right" : "left";
      return dy > 0 ? "down" : "up";
    }
    if (impl == "speed") {
      if (win.size() < 2) return {};
      const auto& a = win.front().as_vector();
      const auto& b = win.back().as_vector();
      const double d = std::sqrt((b[0] - a[0]) * (b[0] - a[0]) + (b[1] - a[1]) * (b[1] - a[1]));
      return d * s_.fps / static_cast<double>(win.size() - 1) / scale(args);
    }
    if (impl == "similarity") {
      auto r = args.find("ref");
      if (r == args.end() || !r->second.is_vector()) throw ConfigurationError("similarity needs ref");
      std::vector<double> mean(r->second.as_vector().size(), 0.0);
      for (const auto& v : win) {
        if (!v.is_vector() || v.as_vector().size() != mean.size()) return {};
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += v.as_vector()[i] / static_cast<double>(win.size());
      }
      const auto& ref = r->second.as_vector();
      double dot = 0, na = 0, nb = 0;
      for (std::size_t i = 0; i < mean.size(); ++i) {
        dot += mean[i] * ref[i];
        na += mean[i] * mean[i];
        nb += ref[i] * ref[i];
      }
      if (na == 0 || nb == 0) return 0.0;
      return dot / (std::sqrt(na) * std::sqrt(nb));
    }
    throw UnsupportedError("oracle cannot evaluate stateful function '" + impl + "'");
  }

  Value rel_prop(const dsl::Binding& rb, const std::map<std::string, std::int64_t>& assign,
                 const std::map<std::string, std::string>& types, FrameId f, const std::string& p) {
    const auto& rel = vp_.relation(rb.type);
    auto it = rel.properties.find(p);
    if (it == rel.properties.end()) throw UnsupportedError("unknown relation property '" + p + "'");
    const auto& def = it->second;
    std::string impl;
    const auto args = merged_args(def, &impl);
    std::vector<Value> deps;
    for (const auto& d : def.deps) {
      const auto dot = d.find('.');
      if (dot == std::string::npos) {
        deps.push_back(rel_prop(rb, assign, types, f, d));
      } else {
        const std::string role = d.substr(0, dot);
        std::size_t i = 0;
        while (i < rel.participants.size() && rel.participants[i].role != role) ++i;
        const std::string& b = rb.args.at(i);
        deps.push_back(prop(object(assign.at(b)), f, types.at(b), d.substr(dot + 1)));
      }
      if (deps.back().is_undefined()) return {};
    }
    return stateless(impl, args, deps, nullptr, f);
  }

  std::map<FrameId, std::set<std::vector<std::int64_t>>> basic(const dsl::ResolvedQuery& q) {
    std::vector<const dsl::Binding*> vbs;
    std::map<std::string, std::string> types;
    for (const auto& b : q.bindings) {
      if (!b.is_relation()) {
        vbs.push_back(&b);
        types[b.name] = b.type;
      }
    }
    std::map<FrameId, std::set<std::vector<std::int64_t>>> out;
    for (FrameId f = 0; f < s_.frames; ++f) {
      std::vector<std::vector<std::int64_t>> cands(vbs.size());
      for (std::size_t i = 0; i < vbs.size(); ++i) {
        for (const auto& o : s_.objects) {
          if (present(o, f, s_.frames) && is_type(o, f, vbs[i]->type)) cands[i].push_back(o.id);
        }
      }
      std::vector<std::int64_t> cur;
      std::function<void(std::size_t)> rec = [&](std::size_t i) {
        if (i == vbs.size()) {
          std::map<std::string, std::int64_t> assign;
          for (std::size_t k = 0; k < vbs.size(); ++k) assign[vbs[k]->name] = cur[k];
          Truth t = Truth::True;
          if (q.frame_constraint) {
            t = eval(*q.frame_constraint, [&](const dsl::PropertyRef& r) -> Value {
              const dsl::Binding* b = q.binding(r.binding);
              if (b && b->is_relation()) return rel_prop(*b, assign, types, f, r.property);
              return prop(object(assign.at(r.binding)), f, types.at(r.binding), r.property);
            });
          }
          if (t == Truth::True) out[f].insert(cur);
          return;
        }
        for (std::int64_t id : cands[i]) {
          if (std::find(cur.begin(), cur.end(), id) != cur.end()) continue;
          cur.push_back(id);
          rec(i + 1);
          cur.pop_back();
        }
      };
      rec(0);
    }
    return out;
  }

  std::map<FrameId, std::set<std::vector<std::int64_t>>> duration(const dsl::ResolvedQuery& q) {
    const auto in = assignments(q.inputs.at(0));
    std::int64_t d = q.min_frames ? static_cast<std::int64_t>(std::llround(*q.min_frames))
                                  : static_cast<std::int64_t>(std::ceil(*q.min_seconds * s_.fps - 1e-9));
    const auto g = static_cast<std::int64_t>(q.gap_tolerance);
    std::map<std::vector<std::int64_t>, std::vector<FrameId>> by_key;
    for (const auto& [f, keys] : in) {
      for (const auto& k : keys) by_key[k].push_back(f);
    }
    std::map<FrameId, std::set<std::vector<std::int64_t>>> out;
    for (const auto& [k, fs] : by_key) {
      FrameId start = fs.front();
      for (std::size_t i = 0; i < fs.size(); ++i) {
        if (i > 0 && fs[i] - fs[i - 1] > g + 1) start = fs[i];
        if (fs[i] - start + 1 >= d) out[fs[i]].insert(k);
      }
    }
    return out;
  }

  std::map<FrameId, std::set<std::vector<std::int64_t>>> temporal(const dsl::ResolvedQuery& q) {
    const auto a = frames(q.inputs.at(0));
    const auto b = assignments(q.inputs.at(1));
    const std::int64_t m = q.max_interval
                               ? static_cast<std::int64_t>(std::llround(*q.max_interval))
                               : static_cast<std::int64_t>(std::floor(*q.max_interval_seconds * s_.fps + 1e-9));
    auto runs = [](const std::set<FrameId>& fs) {
      std::vector<std::pair<FrameId, FrameId>> r;
      for (FrameId f : fs) {
        if (!r.empty() && r.back().second == f - 1) {
          r.back().second = f;
        } else {
          r.emplace_back(f, f);
        }
      }
      return r;
    };
    std::set<FrameId> bf;
    for (const auto& [f, keys] : b) {
      if (!keys.empty()) bf.insert(f);
    }
    const auto r1 = runs(a);
    std::map<FrameId, std::set<std::vector<std::int64_t>>> out;
    for (const auto& [s2, e2] : runs(bf)) {
      std::optional<FrameId> last_end;
      for (const auto& [s1, e1] : r1) {
        if (e1 < s2) last_end = e1;
      }
      if (!last_end || s2 - *last_end > m) continue;
      for (FrameId f = s2; f <= e2; ++f) out[f] = b.at(f);
    }
    return out;
  }

  WorldSpec s_;
  const dsl::ValidatedProgram& vp_;
  const Registry& reg_;
};

}  // namespace

GroundTruth label(const WorldSpec& spec, const dsl::ValidatedProgram& program, const Registry& registry,
                  const std::string& query) {
  Oracle oracle(spec, program, registry);
  const auto frames = oracle.frames(query);
  GroundTruth gt;
  for (FrameId f = 0; f < spec.frames; ++f) {
    GroundTruthRecord r;
    r.frame_id = f;
    r.label = frames.count(f) > 0;
    gt.add(std::move(r));
  }
  return gt;
}

}  // namespace vidq::synth
