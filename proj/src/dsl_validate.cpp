#include "vidq/dsl/validate.hpp"

#include <algorithm>
#include <functional>
#include <set>

namespace vidq::dsl {

std::string Diagnostic::format(const std::string& file) const {
  return file + ":" + std::to_string(loc.line) + ":" + std::to_string(loc.col) + ": " + message;
}

bool is_builtin_property(const std::string& name) {
  return name == "bbox" || name == "score" || name == "frame" || name == "track_id" || name == "frame_rate";
}

ValueType builtin_property_type(const std::string& name) {
  if (name == "bbox") return ValueType::Vector;
  if (is_builtin_property(name)) return ValueType::Number;
  return ValueType::Any;
}

std::string to_string(QueryKind k) {
  switch (k) {
    case QueryKind::Basic: return "basic";
    case QueryKind::Spatial: return "spatial";
    case QueryKind::Duration: return "duration";
    case QueryKind::Temporal: return "temporal";
  }
  return "?";
}

const Binding* ResolvedQuery::binding(const std::string& n) const {
  auto it = std::find_if(bindings.begin(), bindings.end(), [&](const Binding& b) { return b.name == n; });
  return it == bindings.end() ? nullptr : &*it;
}

const ResolvedQuery& ValidatedProgram::query(const std::string& name) const {
  auto it = queries.find(name);
  if (it == queries.end()) throw SchemaError("unknown query '" + name + "'");
  return it->second;
}

const ResolvedVObj& ValidatedProgram::vobj(const std::string& name) const {
  auto it = vobjs.find(name);
  if (it == vobjs.end()) throw SchemaError("unknown vobj '" + name + "'");
  return it->second;
}

const ResolvedRelation& ValidatedProgram::relation(const std::string& name) const {
  auto it = relations.find(name);
  if (it == relations.end()) throw SchemaError("unknown relation '" + name + "'");
  return it->second;
}

bool ValidatedProgram::is_a(const std::string& type, const std::string& ancestor) const {
  auto it = vobjs.find(type);
  if (it == vobjs.end()) return false;
  const auto& chain = it->second.chain;
  return std::find(chain.begin(), chain.end(), ancestor) != chain.end();
}

ValidationError::ValidationError(std::string file, std::vector<Diagnostic> diags)
    : Error([&] {
        std::string msg;
        for (const auto& d : diags) msg += (msg.empty() ? "" : "\n") + d.format(file);
        return msg;
      }()),
      diags_(std::move(diags)) {}

namespace {

const char* type_name(ValueType t) {
  switch (t) {
    case ValueType::Bool: return "bool";
    case ValueType::Number: return "number";
    case ValueType::String: return "string";
    case ValueType::Vector: return "vector";
    default: return "any";
  }
}

ValueType literal_type(const Value& v) {
  if (v.is_bool()) return ValueType::Bool;
  if (v.is_number()) return ValueType::Number;
  if (v.is_string()) return ValueType::String;
  if (v.is_vector()) return ValueType::Vector;
  return ValueType::Any;
}

/// Depth-first topological sort over `names` (visited in the given order).
/// Returns the cycle path when one exists.
std::optional<std::vector<std::string>> topo_sort(
    const std::vector<std::string>& names,
    const std::function<std::vector<std::string>(const std::string&)>& edges, std::vector<std::string>& order) {
  std::map<std::string, int> state;  // 0 new, 1 on stack, 2 done
  std::vector<std::string> stack;
  std::optional<std::vector<std::string>> cycle;
  std::function<void(const std::string&)> visit = [&](const std::string& n) {
    if (cycle) return;
    int& s = state[n];
    if (s == 2) return;
    if (s == 1) {
      auto start = std::find(stack.begin(), stack.end(), n);
      std::vector<std::string> c(start, stack.end());
      c.push_back(n);
      cycle = std::move(c);
      return;
    }
    s = 1;
    stack.push_back(n);
    for (const auto& d : edges(n)) visit(d);
    stack.pop_back();
    state[n] = 2;
    if (!cycle) order.push_back(n);
  };
  for (const auto& n : names) visit(n);
  return cycle;
}

std::string join_path(const std::vector<std::string>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? " -> " : "") + xs[i];
  return out;
}

class Validator {
 public:
  Validator(const Program& p, const ComponentCatalog* cat) : p_(p), cat_(cat) { out_.program = p; }

  ValidationResult run() {
    resolve_vobjs();
    resolve_relations();
    for (const auto& q : p_.queries) resolve_query(q.name);
    for (const auto& h : p_.higher_order) resolve_query(h.name);
    for (const auto& q : p_.queries) out_.query_order.push_back(q.name);
    for (const auto& h : p_.higher_order) out_.query_order.push_back(h.name);
    ValidationResult r;
    r.diagnostics = std::move(diags_);
    if (r.diagnostics.empty()) r.program = std::move(out_);
    return r;
  }

 private:
  void error(SourceLoc loc, std::string msg) { diags_.push_back({loc, std::move(msg)}); }

  ValueType fn_type(const std::string& impl) const {
    if (!cat_ || !cat_->has_property_fn(impl)) return ValueType::Any;
    return cat_->property_fn_type(impl);
  }

  // ---------------------------------------------------------------- vobjs

  void resolve_vobjs() {
    std::vector<VObjDecl> decls = p_.vobjs;
    if (!p_.find_vobj(kSceneType)) {
      VObjDecl scene;
      scene.name = kSceneType;
      decls.push_back(scene);
    }
    std::map<std::string, const VObjDecl*> by_name;
    for (const auto& d : decls) by_name[d.name] = &d;

    for (const auto& d : decls) {
      std::vector<const VObjDecl*> chain{&d};
      bool broken = false;
      std::set<std::string> seen{d.name};
      while (chain.back()->parent) {
        const std::string& parent = *chain.back()->parent;
        auto it = by_name.find(parent);
        if (it == by_name.end()) {
          if (chain.size() == 1) error(d.loc, "vobj '" + d.name + "' extends undeclared vobj '" + parent + "'");
          broken = true;
          break;
        }
        if (!seen.insert(parent).second) {
          std::vector<std::string> path;
          for (auto* c : chain) path.push_back(c->name);
          path.push_back(parent);
          error(d.loc, "inheritance cycle: " + join_path(path));
          broken = true;
          break;
        }
        chain.push_back(it->second);
      }
      if (broken) continue;

      ResolvedVObj r;
      r.name = d.name;
      for (auto* c : chain) r.chain.push_back(c->name);

      std::set<std::string> own;
      for (const auto& prop : d.properties) {
        if (!own.insert(prop.name).second) {
          error(prop.loc, "property '" + prop.name + "' declared twice in vobj '" + d.name + "'");
        }
        if (is_builtin_property(prop.name)) {
          error(prop.loc, "property '" + prop.name + "' shadows a built-in property");
        }
      }

      std::vector<std::string> decl_order;
      for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
        for (const auto& prop : (*it)->properties) {
          if (!r.properties.count(prop.name)) decl_order.push_back(prop.name);
          r.properties[prop.name] = prop;
        }
      }
      if (!r.properties.count("center")) {
        PropertyDef c;
        c.name = "center";
        c.deps = {"bbox"};
        c.impl = "center";
        r.properties["center"] = c;
        decl_order.insert(decl_order.begin(), "center");
      }

      bool has_detector = d.name == kSceneType;
      for (auto* c : chain) {
        if (c->detector) {
          has_detector = true;
          if (cat_ && !cat_->has_detector(*c->detector) && c == &d) {
            error(d.loc, "unknown detector '" + *c->detector + "' on vobj '" + d.name + "'");
          }
        }
        for (const auto& f : c->filters) {
          if (std::find(r.filters.begin(), r.filters.end(), f) == r.filters.end()) r.filters.push_back(f);
          if (cat_ && c == &d && !cat_->has_frame_filter(f)) {
            error(d.loc, "unknown classifier or frame filter '" + f + "' on vobj '" + d.name + "'");
          }
        }
      }
      if (!has_detector) {
        error(d.loc, "vobj '" + d.name + "' has no detector on itself or any ancestor");
      }

      for (const auto& prop : d.properties) check_property(prop, r.properties, d.name);

      auto cycle = topo_sort(
          decl_order,
          [&](const std::string& n) {
            std::vector<std::string> deps;
            auto it = r.properties.find(n);
            if (it == r.properties.end()) return deps;
            for (const auto& dep : it->second.deps) {
              if (r.properties.count(dep)) deps.push_back(dep);
            }
            return deps;
          },
          r.order);
      if (cycle) {
        error(r.properties.at(cycle->front()).loc,
              "property dependency cycle in vobj '" + d.name + "': " + join_path(*cycle));
      }

      for (const auto& [name, prop] : r.properties) {
        if (prop.kind != PropertyKind::Stateful) continue;
        for (const auto& dep : prop.deps) {
          auto& cap = r.history_caps[dep];
          cap = std::max(cap, prop.window);
        }
      }
      out_.vobjs[d.name] = std::move(r);
    }

    // where-constraints are checked against the flattened type they sit on.
    for (const auto& d : decls) {
      auto it = out_.vobjs.find(d.name);
      if (it == out_.vobjs.end()) continue;
      for (const auto& w : d.where) {
        for (const auto& ref : collect_refs(w)) {
          if (!ref.binding.empty()) {
            error(ref.loc, "where-constraints refer to the object's own properties; drop the '" + ref.binding +
                               ".' prefix");
            continue;
          }
          if (!it->second.properties.count(ref.property) && !is_builtin_property(ref.property)) {
            error(ref.loc, "vobj '" + d.name + "' has no property '" + ref.property + "'");
          }
        }
        check_types(w, [&](const PropertyRef& ref) { return vobj_prop_type(it->second, ref.property); });
      }
    }
  }

  void check_property(const PropertyDef& prop, const std::map<std::string, PropertyDef>& scope,
                      const std::string& owner) {
    if (prop.intrinsic && prop.kind == PropertyKind::Stateful) {
      error(prop.loc, "intrinsic property '" + prop.name + "' must be stateless");
    }
    if (prop.kind == PropertyKind::Stateful) {
      if (prop.window < 1) error(prop.loc, "stateful property '" + prop.name + "' needs window >= 1");
      if (prop.deps.empty()) error(prop.loc, "stateful property '" + prop.name + "' needs at least one dependency");
    }
    if (cat_ && !cat_->has_property_fn(prop.impl)) {
      error(prop.loc, "unknown property function '" + prop.impl + "' for '" + owner + "." + prop.name + "'");
    }
    for (const auto& dep : prop.deps) {
      if (dep.find('.') != std::string::npos) {
        error(prop.loc, "vobj property '" + prop.name + "' cannot depend on qualified name '" + dep + "'");
      } else if (!scope.count(dep) && !is_builtin_property(dep) && dep != "center") {
        error(prop.loc, "property '" + prop.name + "' depends on undeclared property '" + dep + "'");
      }
    }
  }

  ValueType vobj_prop_type(const ResolvedVObj& v, const std::string& prop) const {
    if (is_builtin_property(prop)) return builtin_property_type(prop);
    auto it = v.properties.find(prop);
    if (it == v.properties.end()) return ValueType::Any;
    return fn_type(it->second.impl);
  }

  // ------------------------------------------------------------ relations

  void resolve_relations() {
    std::map<std::string, const RelationDecl*> by_name;
    for (const auto& r : p_.relations) by_name[r.name] = &r;
    for (const auto& d : p_.relations) {
      std::vector<const RelationDecl*> chain{&d};
      std::set<std::string> seen{d.name};
      bool broken = false;
      while (chain.back()->parent) {
        const std::string& parent = *chain.back()->parent;
        auto it = by_name.find(parent);
        if (it == by_name.end()) {
          if (chain.size() == 1) error(d.loc, "relation '" + d.name + "' extends undeclared relation '" + parent + "'");
          broken = true;
          break;
        }
        if (!seen.insert(parent).second) {
          error(d.loc, "inheritance cycle involving relation '" + d.name + "'");
          broken = true;
          break;
        }
        chain.push_back(it->second);
      }
      if (broken) continue;

      ResolvedRelation r;
      r.name = d.name;
      for (auto* c : chain) {
        if (!c->participants.empty()) {
          r.participants = c->participants;
          break;
        }
      }
      if (r.participants.size() != 2) {
        error(d.loc, "relation '" + d.name + "' must have exactly two participants");
      }
      std::set<std::string> roles;
      for (const auto& part : r.participants) {
        if (!roles.insert(part.role).second) error(d.loc, "duplicate participant role '" + part.role + "'");
        if (!out_.vobjs.count(part.type)) {
          error(d.loc, "relation '" + d.name + "' participant '" + part.role + "' has undeclared type '" + part.type +
                           "'");
        }
      }
      std::vector<std::string> decl_order;
      for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
        for (const auto& prop : (*it)->properties) {
          if (!r.properties.count(prop.name)) decl_order.push_back(prop.name);
          r.properties[prop.name] = prop;
        }
      }
      std::set<std::string> own;
      for (const auto& prop : d.properties) {
        if (!own.insert(prop.name).second) error(prop.loc, "property '" + prop.name + "' declared twice");
        if (prop.intrinsic) error(prop.loc, "relation properties cannot be intrinsic");
        if (prop.kind == PropertyKind::Stateful) {
          error(prop.loc, "relation property '" + prop.name +
                              "' cannot be stateful; express cross-frame conditions with duration or temporal queries");
        }
        if (cat_ && !cat_->has_property_fn(prop.impl)) {
          error(prop.loc, "unknown property function '" + prop.impl + "' for '" + d.name + "." + prop.name + "'");
        }
        for (const auto& dep : prop.deps) {
          const auto dot = dep.find('.');
          if (dot == std::string::npos) {
            if (!r.properties.count(dep)) {
              error(prop.loc, "relation property '" + prop.name + "' depends on undeclared property '" + dep + "'");
            }
            continue;
          }
          const std::string role = dep.substr(0, dot);
          const std::string name = dep.substr(dot + 1);
          auto part = std::find_if(r.participants.begin(), r.participants.end(),
                                   [&](const Participant& p) { return p.role == role; });
          if (part == r.participants.end()) {
            error(prop.loc, "unknown participant '" + role + "' in dependency '" + dep + "'");
            continue;
          }
          auto vt = out_.vobjs.find(part->type);
          if (vt != out_.vobjs.end() && !vt->second.properties.count(name) && !is_builtin_property(name)) {
            error(prop.loc, "vobj '" + part->type + "' has no property '" + name + "'");
          }
        }
      }
      auto cycle = topo_sort(
          decl_order,
          [&](const std::string& n) {
            std::vector<std::string> deps;
            for (const auto& dep : r.properties.at(n).deps) {
              if (dep.find('.') == std::string::npos && r.properties.count(dep)) deps.push_back(dep);
            }
            return deps;
          },
          r.order);
      if (cycle) {
        error(r.properties.at(cycle->front()).loc,
              "property dependency cycle in relation '" + d.name + "': " + join_path(*cycle));
      }
      for (const auto& [name, prop] : r.properties) {
        if (prop.kind != PropertyKind::Stateful) continue;
        for (const auto& dep : prop.deps) r.history_caps[dep] = std::max(r.history_caps[dep], prop.window);
      }
      out_.relations[d.name] = std::move(r);
    }
  }

  // -------------------------------------------------------------- queries

  using TypeOf = std::function<ValueType(const PropertyRef&)>;

  void check_types(const PredicateExpr& e, const TypeOf& type_of) {
    using K = PredicateExpr::Kind;
    if (e.kind != K::Compare) {
      for (const auto& c : e.children) {
        if (e.kind == K::Holds) {
          check_types(c, [&](const PropertyRef& r) {
            PropertyRef scoped = r;
            if (scoped.binding.empty()) scoped.binding = e.relation;
            return type_of(scoped);
          });
        } else {
          check_types(c, type_of);
        }
      }
      return;
    }
    const ValueType ref_t = type_of(e.ref);
    if (e.op == CmpOp::In) {
      if (e.literals.empty()) {
        error(e.loc, "'in' needs a non-empty set");
        return;
      }
      const ValueType first = literal_type(e.literals.front());
      for (const auto& l : e.literals) {
        if (literal_type(l) != first) {
          error(e.loc, "'in' set for '" + e.ref.text() + "' mixes literal types");
          return;
        }
      }
      if (first == ValueType::Vector) error(e.loc, "'in' sets cannot hold vectors");
      if (ref_t != ValueType::Any && ref_t != first) {
        error(e.loc, std::string("type mismatch: '") + e.ref.text() + "' is " + type_name(ref_t) +
                         " but the set holds " + type_name(first) + " values");
      }
      return;
    }
    const ValueType lit_t = literal_type(e.literals.front());
    if (lit_t == ValueType::Vector) {
      error(e.loc, "vector literals cannot be compared");
      return;
    }
    if ((lit_t == ValueType::String || lit_t == ValueType::Bool) && e.op != CmpOp::Eq && e.op != CmpOp::Ne) {
      error(e.loc, std::string("operator '") + to_string(e.op) + "' is not defined for " + type_name(lit_t) +
                       " values");
    }
    if (ref_t == ValueType::Vector) {
      error(e.loc, "'" + e.ref.text() + "' is a vector and cannot be compared");
    } else if (ref_t != ValueType::Any && ref_t != lit_t) {
      error(e.loc, std::string("type mismatch: '") + e.ref.text() + "' is " + type_name(ref_t) + " but compared with " +
                       type_name(lit_t));
    }
  }

  /// Validates references of a predicate against the binding list.
  void check_predicate(const PredicateExpr& e, const std::vector<Binding>& bindings) {
    auto find = [&](const std::string& n) -> const Binding* {
      auto it = std::find_if(bindings.begin(), bindings.end(), [&](const Binding& b) { return b.name == n; });
      return it == bindings.end() ? nullptr : &*it;
    };
    std::function<void(const PredicateExpr&)> holds_check = [&](const PredicateExpr& x) {
      if (x.kind == PredicateExpr::Kind::Holds) {
        const Binding* b = find(x.relation);
        if (!b || !b->is_relation()) error(x.loc, "holds() needs a relation binding, '" + x.relation + "' is not one");
      }
      for (const auto& c : x.children) holds_check(c);
    };
    holds_check(e);
    bool refs_ok = true;
    for (const auto& ref : collect_refs(e)) {
      if (ref.binding.empty()) {
        error(ref.loc, "property reference '" + ref.property + "' needs a binding (write binding." + ref.property + ")");
        refs_ok = false;
        continue;
      }
      const Binding* b = find(ref.binding);
      if (!b) {
        error(ref.loc, "unknown binding '" + ref.binding + "'");
        refs_ok = false;
        continue;
      }
      if (!binding_has_property(*b, ref.property)) {
        error(ref.loc, "'" + b->type + "' has no property '" + ref.property + "'");
        refs_ok = false;
      }
    }
    if (!refs_ok) return;
    check_types(e, [&](const PropertyRef& ref) { return binding_prop_type(*find(ref.binding), ref.property); });
  }

  bool binding_has_property(const Binding& b, const std::string& prop) const {
    if (b.is_relation()) {
      auto it = out_.relations.find(b.type);
      return it != out_.relations.end() && it->second.properties.count(prop) > 0;
    }
    auto it = out_.vobjs.find(b.type);
    return it != out_.vobjs.end() && (it->second.properties.count(prop) > 0 || is_builtin_property(prop));
  }

  ValueType binding_prop_type(const Binding& b, const std::string& prop) const {
    if (b.is_relation()) {
      const auto& rel = out_.relations.at(b.type);
      auto it = rel.properties.find(prop);
      return it == rel.properties.end() ? ValueType::Any : fn_type(it->second.impl);
    }
    return vobj_prop_type(out_.vobjs.at(b.type), prop);
  }

  bool check_bindings(const std::vector<Binding>& bindings) {
    bool ok = true;
    std::set<std::string> names;
    for (const auto& b : bindings) {
      if (!names.insert(b.name).second) {
        error(b.loc, "binding '" + b.name + "' declared twice");
        ok = false;
      }
    }
    for (const auto& b : bindings) {
      if (b.is_relation() || out_.relations.count(b.type)) {
        auto rel = out_.relations.find(b.type);
        if (rel == out_.relations.end()) {
          error(b.loc, "undeclared relation '" + b.type + "'");
          ok = false;
          continue;
        }
        if (b.args.size() != rel->second.participants.size()) {
          error(b.loc, "relation '" + b.type + "' takes " + std::to_string(rel->second.participants.size()) +
                           " participants, got " + std::to_string(b.args.size()));
          ok = false;
          continue;
        }
        for (std::size_t i = 0; i < b.args.size(); ++i) {
          auto arg = std::find_if(bindings.begin(), bindings.end(),
                                  [&](const Binding& x) { return x.name == b.args[i]; });
          if (arg == bindings.end() || arg->is_relation()) {
            error(b.loc, "relation argument '" + b.args[i] + "' must name a vobj binding");
            ok = false;
          } else if (out_.vobjs.count(arg->type) && !out_.is_a(arg->type, rel->second.participants[i].type)) {
            error(b.loc, "binding '" + arg->name + "' of type '" + arg->type + "' cannot play role '" +
                             rel->second.participants[i].role + "' (" + rel->second.participants[i].type + ")");
            ok = false;
          }
        }
      } else if (!out_.vobjs.count(b.type)) {
        error(b.loc, "undeclared vobj '" + b.type + "'");
        ok = false;
      }
    }
    return ok;
  }

  void check_outputs(const std::vector<PropertyRef>& outs, const std::vector<Binding>& bindings) {
    for (const auto& r : outs) {
      auto b = std::find_if(bindings.begin(), bindings.end(), [&](const Binding& x) { return x.name == r.binding; });
      if (b == bindings.end()) {
        error(r.loc, "frame_output refers to unknown binding '" + r.binding + "'");
      } else if (!binding_has_property(*b, r.property)) {
        error(r.loc, "'" + b->type + "' has no property '" + r.property + "'");
      }
    }
  }

  /// Resolves any query by name (basic or higher-order), memoized, with
  /// cycle detection across query references.
  const ResolvedQuery* resolve_query(const std::string& name) {
    if (auto it = out_.queries.find(name); it != out_.queries.end()) return &it->second;
    if (failed_.count(name)) return nullptr;
    if (!in_progress_.insert(name).second) {
      const SourceLoc loc = p_.find_query(name) ? p_.find_query(name)->loc : p_.find_higher_order(name)->loc;
      error(loc, "query '" + name + "' refers to itself through inheritance or composition");
      failed_.insert(name);
      return nullptr;
    }
    const ResolvedQuery* out = nullptr;
    if (const auto* q = p_.find_query(name)) {
      out = resolve_basic(*q);
    } else if (const auto* h = p_.find_higher_order(name)) {
      out = resolve_higher(*h);
    }
    in_progress_.erase(name);
    if (!out) failed_.insert(name);
    return out;
  }

  const ResolvedQuery* resolve_basic(const QueryDecl& q) {
    ResolvedQuery r;
    r.name = q.name;
    r.kind = QueryKind::Basic;
    if (q.parent) {
      if (!p_.find_query(*q.parent)) {
        if (p_.find_higher_order(*q.parent)) {
          error(q.loc, "query '" + q.name + "' can only extend a basic query");
        } else {
          error(q.loc, "query '" + q.name + "' extends undeclared query '" + *q.parent + "'");
        }
        return nullptr;
      }
      const ResolvedQuery* parent = resolve_query(*q.parent);
      if (!parent) return nullptr;
      r = *parent;
      r.name = q.name;
    }
    r.bindings.insert(r.bindings.end(), q.bindings.begin(), q.bindings.end());
    if (q.frame_constraint) {
      if (r.frame_constraint) {
        r.frame_constraint = PredicateExpr::conj({*r.frame_constraint, *q.frame_constraint});
      } else {
        r.frame_constraint = q.frame_constraint;
      }
    }
    if (!q.frame_output.empty()) r.frame_output = q.frame_output;
    if (q.video_constraint) r.video_constraint = q.video_constraint;
    if (q.video_output) r.video_output = q.video_output;

    if (!check_bindings(r.bindings)) return nullptr;
    if (!r.frame_constraint && !r.video_constraint) {
      error(q.loc, "query '" + q.name + "' needs a frame_constraint or a video_constraint");
    }
    if (q.frame_constraint) check_predicate(*q.frame_constraint, r.bindings);
    check_outputs(q.frame_output, r.bindings);
    if (q.video_constraint) {
      check_predicate(q.video_constraint->predicate, r.bindings);
      std::set<std::string> used;
      for (const auto& ref : collect_refs(q.video_constraint->predicate)) used.insert(ref.binding);
      if (used.size() != 1) {
        error(q.video_constraint->predicate.loc, "video_constraint must refer to exactly one vobj binding");
      } else if (const Binding* b = r.binding(*used.begin()); b && b->is_relation()) {
        error(q.video_constraint->predicate.loc, "video_constraint must quantify over a vobj binding");
      }
    }
    if (q.video_output) {
      if (q.video_output->aggregate != "count_distinct") {
        error(q.video_output->loc, "unknown video aggregate '" + q.video_output->aggregate + "'");
      }
      const Binding* b = r.binding(q.video_output->binding);
      if (!b || b->is_relation()) {
        error(q.video_output->loc, "video_output must name a vobj binding");
      }
    }
    return &(out_.queries[q.name] = std::move(r));
  }

  const ResolvedQuery* resolve_higher(const HigherOrderDecl& h) {
    ResolvedQuery r;
    r.name = h.name;
    r.inputs = h.inputs;
    std::vector<const ResolvedQuery*> inputs;
    for (const auto& in : h.inputs) {
      if (!p_.find_query(in) && !p_.find_higher_order(in)) {
        error(h.inputs_loc, "undeclared query '" + in + "'");
        return nullptr;
      }
      const ResolvedQuery* rq = resolve_query(in);
      if (!rq) return nullptr;
      inputs.push_back(rq);
    }
    switch (h.kind) {
      case HigherOrderKind::Duration: {
        r.kind = QueryKind::Duration;
        if (inputs.size() != 1) {
          error(h.loc, "duration query '" + h.name + "' takes exactly one query");
          return nullptr;
        }
        if (inputs[0]->kind != QueryKind::Basic && inputs[0]->kind != QueryKind::Spatial) {
          error(h.inputs_loc, "composition rule 2 violated: duration query '" + h.name +
                                  "' takes basic or spatial queries, but '" + inputs[0]->name + "' is a " +
                                  to_string(inputs[0]->kind) + " query");
          return nullptr;
        }
        if (!inputs[0]->frame_constraint) {
          error(h.inputs_loc, "duration query input '" + inputs[0]->name + "' needs a frame_constraint");
        }
        if (h.min_frames.has_value() == h.min_seconds.has_value()) {
          error(h.loc, "duration query '" + h.name + "' needs exactly one of min_frames or min_seconds");
        } else if (h.min_frames && *h.min_frames < 1) {
          error(h.loc, "min_frames must be at least 1");
        } else if (h.min_seconds && !(*h.min_seconds > 0)) {
          error(h.loc, "min_seconds must be positive");
        }
        r.min_frames = h.min_frames;
        r.min_seconds = h.min_seconds;
        r.gap_tolerance = h.gap_tolerance;
        break;
      }
      case HigherOrderKind::Spatial: {
        r.kind = QueryKind::Spatial;
        if (inputs.size() != 2) {
          error(h.loc, "spatial query '" + h.name + "' takes exactly two queries");
          return nullptr;
        }
        for (const auto* in : inputs) {
          if (in->kind != QueryKind::Basic) {
            error(h.inputs_loc, "composition rule 1 violated: spatial query '" + h.name +
                                    "' takes only basic queries, but '" + in->name + "' is a " + to_string(in->kind) +
                                    " query");
            return nullptr;
          }
          if (!in->frame_constraint) {
            error(h.inputs_loc, "spatial query input '" + in->name + "' needs a frame_constraint");
          }
        }
        for (const auto* in : inputs) {
          r.bindings.insert(r.bindings.end(), in->bindings.begin(), in->bindings.end());
          r.frame_output.insert(r.frame_output.end(), in->frame_output.begin(), in->frame_output.end());
        }
        r.bindings.insert(r.bindings.end(), h.bindings.begin(), h.bindings.end());
        if (!check_bindings(r.bindings)) return nullptr;
        std::vector<PredicateExpr> parts;
        for (const auto* in : inputs) {
          if (in->frame_constraint) parts.push_back(*in->frame_constraint);
        }
        if (h.constraint) {
          check_predicate(*h.constraint, r.bindings);
          parts.push_back(*h.constraint);
        }
        if (!parts.empty()) r.frame_constraint = PredicateExpr::conj(std::move(parts));
        check_outputs(h.frame_output, r.bindings);
        r.frame_output.insert(r.frame_output.end(), h.frame_output.begin(), h.frame_output.end());
        break;
      }
      case HigherOrderKind::Temporal: {
        r.kind = QueryKind::Temporal;
        if (inputs.size() != 2) {
          error(h.loc, "temporal query '" + h.name + "' takes exactly two queries");
          return nullptr;
        }
        for (const auto* in : inputs) {
          if ((in->kind == QueryKind::Basic || in->kind == QueryKind::Spatial) && !in->frame_constraint) {
            error(h.inputs_loc, "temporal query input '" + in->name + "' needs a frame_constraint");
          }
        }
        if (h.max_interval.has_value() == h.max_interval_seconds.has_value()) {
          error(h.loc, "temporal query '" + h.name + "' needs exactly one of max_interval or max_interval_seconds");
        }
        r.max_interval = h.max_interval;
        r.max_interval_seconds = h.max_interval_seconds;
        break;
      }
    }
    return &(out_.queries[h.name] = std::move(r));
  }

  const Program& p_;
  const ComponentCatalog* cat_;
  ValidatedProgram out_;
  std::vector<Diagnostic> diags_;
  std::set<std::string> in_progress_;
  std::set<std::string> failed_;
};

}  // namespace

ValidationResult validate(const Program& program, const ComponentCatalog* catalog) {
  return Validator(program, catalog).run();
}

ValidatedProgram validate_or_throw(const Program& program, const std::string& file, const ComponentCatalog* catalog) {
  auto r = validate(program, catalog);
  if (!r.ok()) throw ValidationError(file, std::move(r.diagnostics));
  return std::move(*r.program);
}

std::optional<PredicateExpr> effective_constraint(const Program& program, const std::string& query) {
  std::vector<PredicateExpr> parts;
  std::set<std::string> seen;
  const QueryDecl* q = program.find_query(query);
  if (!q) throw SchemaError("unknown basic query '" + query + "'");
  std::vector<const QueryDecl*> chain;
  while (q && seen.insert(q->name).second) {
    chain.push_back(q);
    q = q->parent ? program.find_query(*q->parent) : nullptr;
  }
  for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
    if ((*it)->frame_constraint) parts.push_back(*(*it)->frame_constraint);
  }
  if (parts.empty()) return std::nullopt;
  return PredicateExpr::conj(std::move(parts));
}

}  // namespace vidq::dsl
