#include "vidq/registry.hpp"

#include <cmath>
#include <fstream>

#include "vidq/error.hpp"
#include "vidq/hash.hpp"

namespace vidq {

using json = nlohmann::json;
using dsl::ValueType;

std::string to_string(ComponentKind k) {
  switch (k) {
    case ComponentKind::Detector: return "detector";
    case ComponentKind::PropertyFn: return "property_fn";
    case ComponentKind::Classifier: return "classifier";
    case ComponentKind::FrameFilter: return "frame_filter";
  }
  return "?";
}

Value PropertyInput::arg(const std::string& name, Value fallback) const {
  if (args) {
    auto it = args->find(name);
    if (it != args->end()) return it->second;
  }
  return fallback;
}

std::string direction_of(double dx, double dy, double min_displacement) {
  if (std::hypot(dx, dy) < min_displacement) return "stationary";
  if (std::abs(dx) >= std::abs(dy)) return dx > 0 ? "right" : "left";
  return dy > 0 ? "down" : "up";
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) return 0.0;
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

namespace {

bool is_point(const Value& v) { return v.is_vector() && v.as_vector().size() == 2; }

double px_per_unit(const PropertyInput& in, const std::string& fn) {
  const Value unit = in.arg("unit", Value("m"));
  if (unit.is_string() && unit.as_string() == "px") return 1.0;
  if (!in.meta || !in.meta->px_per_m) {
    throw ConfigurationError(fn + " in meters needs px_per_m calibration in the video meta (or unit=\"px\")");
  }
  return *in.meta->px_per_m;
}

Value attr_lookup(const PropertyInput& in, const std::string& key) {
  if (!in.attrs) return {};
  auto it = in.attrs->find(key);
  return it == in.attrs->end() ? Value{} : it->second;
}

std::map<std::string, PropertyImpl> make_builtins() {
  std::map<std::string, PropertyImpl> m;
  m["center"] = [](const PropertyInput& in) -> Value {
    if (in.deps.empty() || !in.deps[0].is_vector() || in.deps[0].as_vector().size() != 4) return {};
    const auto& b = in.deps[0].as_vector();
    return std::vector<double>{(b[0] + b[2]) / 2.0, (b[1] + b[3]) / 2.0};
  };
  m["direction"] = [](const PropertyInput& in) -> Value {
    if (in.windows.empty() || in.windows[0].empty()) return {};
    const auto& w = in.windows[0];
    if (!is_point(w.front()) || !is_point(w.back())) return {};
    const double min_disp = in.arg("min_displacement", 1.0).as_number();
    return direction_of(w.back().as_vector()[0] - w.front().as_vector()[0],
                        w.back().as_vector()[1] - w.front().as_vector()[1], min_disp);
  };
  m["speed"] = [](const PropertyInput& in) -> Value {
    if (in.windows.empty() || in.windows[0].size() < 2) return {};
    const auto& w = in.windows[0];
    if (!is_point(w.front()) || !is_point(w.back())) return {};
    const double scale = px_per_unit(in, "speed");
    const double fps = in.meta ? in.meta->fps : 30.0;
    const double d = std::hypot(w.back().as_vector()[0] - w.front().as_vector()[0],
                                w.back().as_vector()[1] - w.front().as_vector()[1]);
    return d * fps / static_cast<double>(w.size() - 1) / scale;
  };
  m["distance"] = [](const PropertyInput& in) -> Value {
    if (in.deps.size() < 2 || !is_point(in.deps[0]) || !is_point(in.deps[1])) return {};
    const auto& a = in.deps[0].as_vector();
    const auto& b = in.deps[1].as_vector();
    return std::hypot(a[0] - b[0], a[1] - b[1]) / px_per_unit(in, "distance");
  };
  m["iou"] = [](const PropertyInput& in) -> Value {
    if (in.deps.size() < 2 || !in.deps[0].is_vector() || !in.deps[1].is_vector()) return {};
    const auto& a = in.deps[0].as_vector();
    const auto& b = in.deps[1].as_vector();
    if (a.size() != 4 || b.size() != 4) return {};
    return iou(BBox{a[0], a[1], a[2], a[3]}, BBox{b[0], b[1], b[2], b[3]});
  };
  for (const char* key : {"color", "plate", "type", "feature_vector"}) {
    const std::string k = key;
    m[k] = [k](const PropertyInput& in) -> Value {
      const Value over = in.arg("key");
      return attr_lookup(in, over.is_string() ? over.as_string() : k);
    };
  }
  m["attr"] = [](const PropertyInput& in) -> Value {
    const Value key = in.arg("key");
    if (!key.is_string()) throw ConfigurationError("attr() needs a string argument key=");
    return attr_lookup(in, key.as_string());
  };
  m["similarity"] = [](const PropertyInput& in) -> Value {
    const Value ref = in.arg("ref");
    if (!ref.is_vector()) throw ConfigurationError("similarity() needs a vector argument ref=[...]");
    std::vector<double> mean;
    const std::vector<Value>& src = in.windows.empty() ? in.deps : in.windows[0];
    if (src.empty()) return {};
    for (const auto& v : src) {
      if (!v.is_vector()) return {};
      if (mean.empty()) mean.assign(v.as_vector().size(), 0.0);
      if (v.as_vector().size() != mean.size()) return {};
      for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += v.as_vector()[i];
    }
    for (auto& x : mean) x /= static_cast<double>(src.size());
    return cosine_similarity(mean, ref.as_vector());
  };
  m["channel"] = [](const PropertyInput& in) -> Value {
    const Value name = in.arg("name");
    if (!name.is_string()) throw ConfigurationError("channel() needs a string argument name=");
    if (!in.channels) return {};
    auto it = in.channels->find(name.as_string());
    if (it == in.channels->end()) return {};
    return it->second;
  };
  return m;
}

struct BuiltinFn {
  const char* name;
  double cost;
  ValueType type;
};

const BuiltinFn kBuiltinFns[] = {
    {"center", 0.1, ValueType::Vector},       {"direction", 0.1, ValueType::String},
    {"speed", 0.1, ValueType::Number},        {"distance", 0.1, ValueType::Number},
    {"iou", 0.1, ValueType::Number},          {"color", 5.0, ValueType::String},
    {"plate", 5.0, ValueType::String},        {"type", 5.0, ValueType::String},
    {"feature_vector", 5.0, ValueType::Vector}, {"attr", 5.0, ValueType::Any},
    {"similarity", 5.0, ValueType::Number},   {"channel", 0.1, ValueType::Number},
};

const char* kGeneralClasses[] = {"car", "person", "truck", "bus", "bicycle", "motorcycle", "bag", "ball"};

ValueType parse_type(const std::string& s) {
  if (s == "bool") return ValueType::Bool;
  if (s == "number") return ValueType::Number;
  if (s == "string") return ValueType::String;
  if (s == "vector") return ValueType::Vector;
  if (s == "any") return ValueType::Any;
  throw ParseError("unknown property type '" + s + "'", 0);
}

std::map<std::string, Value> parse_value_map(const json& j) {
  std::map<std::string, Value> out;
  if (j.is_null()) return out;
  if (!j.is_object()) throw ParseError("expected an object of values", 0);
  for (auto it = j.begin(); it != j.end(); ++it) out[it.key()] = value_from_json(it.value());
  return out;
}

std::optional<ErrorProfile> parse_error_profile(const json& j) {
  if (j.is_null()) return std::nullopt;
  ErrorProfile p;
  p.miss_rate = j.value("miss_rate", 0.0);
  p.false_rate = j.value("false_rate", 0.0);
  p.seed = j.value("seed", std::uint64_t{0});
  return p;
}

json value_map_json(const std::map<std::string, Value>& m) {
  json j = json::object();
  for (const auto& [k, v] : m) j[k] = to_json(v);
  return j;
}

bool matches_attrs(const Detection& d, const std::map<std::string, Value>& match) {
  for (const auto& [k, v] : match) {
    auto it = d.attrs.find(k);
    if (it == d.attrs.end() || !(it->second == v)) return false;
  }
  return true;
}

bool in_classes(const Registration& r, const std::string& cls) {
  return std::find(r.classes.begin(), r.classes.end(), cls) != r.classes.end();
}

}  // namespace

const PropertyImpl* builtin_property_impl(const std::string& impl) {
  static const std::map<std::string, PropertyImpl> builtins = make_builtins();
  auto it = builtins.find(impl);
  return it == builtins.end() ? nullptr : &it->second;
}

bool FrameFilterInstance::keep(const TraceRecord& rec) {
  auto it = rec.channels.find(reg_.channel);
  if (it == rec.channels.end()) {
    throw ConfigurationError("frame filter '" + reg_.name + "' needs channel '" + reg_.channel + "' on frame " +
                             std::to_string(rec.frame_id));
  }
  const double v = it->second;
  if (reg_.filter_kind == FrameFilterKind::ChannelThreshold) {
    const std::string& op = reg_.op;
    if (op == ">") return v > reg_.threshold;
    if (op == ">=") return v >= reg_.threshold;
    if (op == "<") return v < reg_.threshold;
    if (op == "<=") return v <= reg_.threshold;
    if (op == "==") return v == reg_.threshold;
    if (op == "!=") return v != reg_.threshold;
    throw ConfigurationError("frame filter '" + reg_.name + "' has unknown op '" + op + "'");
  }
  bool keep = true;
  if (history_.size() >= reg_.window) {
    double mean = 0;
    for (std::size_t i = history_.size() - reg_.window; i < history_.size(); ++i) mean += history_[i];
    mean /= static_cast<double>(reg_.window);
    keep = std::abs(v - mean) > reg_.tolerance;
  }
  history_.push_back(v);
  if (history_.size() > reg_.window) history_.erase(history_.begin());
  return keep;
}

Registry Registry::with_builtins() {
  Registry r;
  for (const char* cls : kGeneralClasses) {
    Registration d;
    d.name = std::string("general_") + cls;
    d.kind = ComponentKind::Detector;
    d.cost_units = 100.0;
    d.classes = {cls};
    r.add(d);
  }
  Registration scene;
  scene.name = dsl::kSceneDetector;
  scene.kind = ComponentKind::Detector;
  scene.cost_units = 1.0;
  r.add(scene);
  for (const auto& f : kBuiltinFns) {
    Registration p;
    p.name = f.name;
    p.kind = ComponentKind::PropertyFn;
    p.cost_units = f.cost;
    p.impl = f.name;
    p.result_type = f.type;
    r.add(p);
  }
  Registration motion;
  motion.name = "similar_to_prev";
  motion.kind = ComponentKind::FrameFilter;
  motion.filter_kind = FrameFilterKind::SimilarToPrev;
  motion.channel = "motion_score";
  motion.window = 1;
  motion.cost_units = 1.0;
  r.add(motion);
  Registration moving;
  moving.name = "channel_threshold";
  moving.kind = ComponentKind::FrameFilter;
  moving.filter_kind = FrameFilterKind::ChannelThreshold;
  moving.channel = "motion_score";
  moving.op = ">";
  moving.threshold = 0.0;
  moving.cost_units = 1.0;
  r.add(moving);
  return r;
}

Registry Registry::from_manifest(const json& m, std::uint64_t seed) {
  Registry r = with_builtins();
  r.seed_ = seed;
  if (!m.is_object()) throw ParseError("registry manifest must be a JSON object", 0);
  try {
    for (const auto& d : m.value("detectors", json::array())) {
      Registration reg;
      reg.name = d.at("name").get<std::string>();
      reg.kind = ComponentKind::Detector;
      reg.classes = d.at("classes").get<std::vector<std::string>>();
      reg.match = parse_value_map(d.value("match", json()));
      reg.score_threshold = d.value("score_threshold", 0.0);
      reg.cost_units = d.value("cost", reg.match.empty() ? 100.0 : 20.0);
      reg.error_profile = parse_error_profile(d.value("error", json()));
      r.add(reg);
    }
    for (const auto& c : m.value("classifiers", json::array())) {
      Registration reg;
      reg.name = c.at("name").get<std::string>();
      reg.kind = ComponentKind::Classifier;
      reg.classes = {c.at("class").get<std::string>()};
      reg.match = parse_value_map(c.value("match", json()));
      reg.score_threshold = c.value("threshold", 0.0);
      reg.cost_units = c.value("cost", 1.0);
      reg.error_profile = parse_error_profile(c.value("error", json()));
      r.add(reg);
    }
    for (const auto& f : m.value("frame_filters", json::array())) {
      Registration reg;
      reg.name = f.at("name").get<std::string>();
      reg.kind = ComponentKind::FrameFilter;
      const std::string kind = f.at("kind").get<std::string>();
      if (kind == "similar_to_prev") {
        reg.filter_kind = FrameFilterKind::SimilarToPrev;
      } else if (kind == "channel_threshold") {
        reg.filter_kind = FrameFilterKind::ChannelThreshold;
      } else {
        throw ParseError("unknown frame filter kind '" + kind + "'", 0);
      }
      reg.channel = f.at("channel").get<std::string>();
      reg.window = f.value("window", std::size_t{1});
      reg.tolerance = f.value("tolerance", 0.0);
      reg.op = f.value("op", std::string(">"));
      reg.threshold = f.value("threshold", 0.0);
      reg.cost_units = f.value("cost", 1.0);
      r.add(reg);
    }
    for (const auto& p : m.value("property_fns", json::array())) {
      Registration reg;
      reg.name = p.at("name").get<std::string>();
      reg.kind = ComponentKind::PropertyFn;
      reg.impl = p.value("impl", reg.name);
      const Registration* base = r.find(ComponentKind::PropertyFn, reg.impl);
      reg.result_type = p.contains("type") ? parse_type(p.at("type").get<std::string>())
                                           : (base ? base->result_type : ValueType::Any);
      reg.cost_units = p.value("cost", base ? base->cost_units : 5.0);
      reg.default_args = parse_value_map(p.value("args", json()));
      r.add(reg);
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("registry manifest: ") + e.what(), 0);
  }
  return r;
}

Registry Registry::load(const std::string& path, std::uint64_t seed) {
  std::ifstream in(path);
  if (!in) throw ConfigurationError("cannot open registry manifest '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what(), 0);
  }
  return from_manifest(j, seed);
}

void Registry::add(Registration reg) {
  if (reg.name.empty()) throw RegistrationError("registration without a name");
  if (!(reg.cost_units > 0)) throw RegistrationError("'" + reg.name + "' needs cost_units > 0");
  if (reg.error_profile) {
    const auto& p = *reg.error_profile;
    if (p.miss_rate < 0 || p.miss_rate > 1 || p.false_rate < 0 || p.false_rate > 1) {
      throw RegistrationError("'" + reg.name + "' error rates must lie in [0,1]");
    }
  }
  if (reg.kind == ComponentKind::PropertyFn && !builtin_property_impl(reg.impl)) {
    throw RegistrationError("property function '" + reg.name + "' names unknown implementation '" + reg.impl + "'");
  }
  if (reg.kind == ComponentKind::FrameFilter && reg.window < 1) {
    throw RegistrationError("frame filter '" + reg.name + "' needs window >= 1");
  }
  if ((reg.kind == ComponentKind::Classifier || reg.kind == ComponentKind::FrameFilter) &&
      find_filter(reg.name)) {
    throw RegistrationError("duplicate filter registration '" + reg.name + "'");
  }
  auto key = std::make_pair(reg.kind, reg.name);
  if (regs_.count(key)) {
    throw RegistrationError("duplicate " + to_string(reg.kind) + " registration '" + reg.name + "'");
  }
  regs_.emplace(std::move(key), std::move(reg));
}

const Registration* Registry::find(ComponentKind kind, const std::string& name) const {
  auto it = regs_.find({kind, name});
  return it == regs_.end() ? nullptr : &it->second;
}

const Registration& Registry::get(ComponentKind kind, const std::string& name) const {
  const Registration* r = find(kind, name);
  if (!r) throw LinkError("no " + to_string(kind) + " registered as '" + name + "'");
  return *r;
}

const Registration* Registry::find_filter(const std::string& name) const {
  if (const auto* c = find(ComponentKind::Classifier, name)) return c;
  return find(ComponentKind::FrameFilter, name);
}

std::vector<const Registration*> Registry::all(ComponentKind kind) const {
  std::vector<const Registration*> out;
  for (const auto& [key, reg] : regs_) {
    if (key.first == kind) out.push_back(&reg);
  }
  return out;
}

std::uint64_t Registry::effective_seed(const ErrorProfile& p) const { return mix_keys({p.seed, seed_}); }

std::vector<int> Registry::detect(const Registration& det, const TraceRecord& rec) const {
  std::vector<int> out;
  if (det.name == dsl::kSceneDetector) return {kSceneNode};
  for (std::size_t i = 0; i < rec.detections.size(); ++i) {
    const Detection& d = rec.detections[i];
    if (!in_classes(det, d.class_name) || d.score < det.score_threshold) continue;
    const bool hit = matches_attrs(d, det.match);
    bool emit = hit;
    if (det.error_profile) {
      const std::uint64_t s = effective_seed(*det.error_profile);
      const auto f = static_cast<std::uint64_t>(rec.frame_id);
      if (hit) {
        emit = seeded_uniform(s, {f, i, 0}) >= det.error_profile->miss_rate;
      } else {
        emit = seeded_uniform(s, {f, i, 1}) < det.error_profile->false_rate;
      }
    }
    if (emit) out.push_back(static_cast<int>(i));
  }
  return out;
}

bool Registry::classify_frame(const Registration& c, const TraceRecord& rec) const {
  bool present = false;
  for (const auto& d : rec.detections) {
    if (in_classes(c, d.class_name) && d.score >= c.score_threshold && matches_attrs(d, c.match)) {
      present = true;
      break;
    }
  }
  if (!c.error_profile) return present;
  const double u = seeded_uniform(effective_seed(*c.error_profile), {static_cast<std::uint64_t>(rec.frame_id)});
  if (present) return u >= c.error_profile->miss_rate;
  return u < c.error_profile->false_rate;
}

Value Registry::apply_property(const Registration& fn, const PropertyInput& in) const {
  const PropertyImpl* impl = builtin_property_impl(fn.impl);
  if (!impl) throw LinkError("property function '" + fn.name + "' has no implementation");
  if (fn.default_args.empty()) return (*impl)(in);
  std::map<std::string, Value> merged = fn.default_args;
  if (in.args) {
    for (const auto& [k, v] : *in.args) merged[k] = v;
  }
  PropertyInput copy = in;
  copy.args = &merged;
  return (*impl)(copy);
}

bool Registry::has_detector(const std::string& name) const { return find(ComponentKind::Detector, name); }
bool Registry::has_property_fn(const std::string& name) const { return find(ComponentKind::PropertyFn, name); }
bool Registry::has_frame_filter(const std::string& name) const { return find_filter(name); }

ValueType Registry::property_fn_type(const std::string& name) const {
  const Registration* r = find(ComponentKind::PropertyFn, name);
  return r ? r->result_type : ValueType::Any;
}

json Registry::to_json() const {
  json out = json::array();
  for (const auto& [key, r] : regs_) {
    json j;
    j["kind"] = vidq::to_string(r.kind);
    j["name"] = r.name;
    j["cost"] = r.cost_units;
    if (r.error_profile) {
      j["error"] = {{"miss_rate", r.error_profile->miss_rate},
                    {"false_rate", r.error_profile->false_rate},
                    {"seed", effective_seed(*r.error_profile)}};
    }
    switch (r.kind) {
      case ComponentKind::Detector:
      case ComponentKind::Classifier:
        j["classes"] = r.classes;
        j["match"] = value_map_json(r.match);
        j["threshold"] = r.score_threshold;
        break;
      case ComponentKind::PropertyFn:
        j["impl"] = r.impl;
        j["args"] = value_map_json(r.default_args);
        break;
      case ComponentKind::FrameFilter:
        j["filter_kind"] = r.filter_kind == FrameFilterKind::SimilarToPrev ? "similar_to_prev" : "channel_threshold";
        j["channel"] = r.channel;
        j["window"] = r.window;
        j["tolerance"] = r.tolerance;
        j["op"] = r.op;
        j["threshold"] = r.threshold;
        break;
    }
    out.push_back(std::move(j));
  }
  return out;
}

}  // namespace vidq
