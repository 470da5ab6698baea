#include "vidq/dsl/ast.hpp"

#include <algorithm>
#include <sstream>

namespace vidq::dsl {

std::string to_string(CmpOp op) {
  switch (op) {
    case CmpOp::Eq: return "==";
    case CmpOp::Ne: return "!=";
    case CmpOp::Lt: return "<";
    case CmpOp::Le: return "<=";
    case CmpOp::Gt: return ">";
    case CmpOp::Ge: return ">=";
    case CmpOp::In: return "in";
  }
  return "?";
}

std::string to_string(HigherOrderKind k) {
  switch (k) {
    case HigherOrderKind::Duration: return "duration";
    case HigherOrderKind::Spatial: return "spatial";
    case HigherOrderKind::Temporal: return "temporal";
  }
  return "?";
}

PredicateExpr PredicateExpr::compare(PropertyRef ref, CmpOp op, Value literal) {
  PredicateExpr e;
  e.kind = Kind::Compare;
  e.loc = ref.loc;
  e.ref = std::move(ref);
  e.op = op;
  e.literals.push_back(std::move(literal));
  return e;
}

PredicateExpr PredicateExpr::in_set(PropertyRef ref, std::vector<Value> set) {
  PredicateExpr e;
  e.kind = Kind::Compare;
  e.loc = ref.loc;
  e.ref = std::move(ref);
  e.op = CmpOp::In;
  e.literals = std::move(set);
  return e;
}

namespace {

PredicateExpr flatten_into(PredicateExpr::Kind kind, std::vector<PredicateExpr> parts) {
  if (parts.size() == 1) return std::move(parts.front());
  PredicateExpr e;
  e.kind = kind;
  for (auto& p : parts) {
    if (p.kind == kind) {
      for (auto& c : p.children) e.children.push_back(std::move(c));
    } else {
      e.children.push_back(std::move(p));
    }
  }
  if (!e.children.empty()) e.loc = e.children.front().loc;
  return e;
}

}  // namespace

PredicateExpr PredicateExpr::conj(std::vector<PredicateExpr> parts) { return flatten_into(Kind::And, std::move(parts)); }

PredicateExpr PredicateExpr::disj(std::vector<PredicateExpr> parts) { return flatten_into(Kind::Or, std::move(parts)); }

PredicateExpr PredicateExpr::negate(PredicateExpr inner) {
  PredicateExpr e;
  e.kind = Kind::Not;
  e.loc = inner.loc;
  e.children.push_back(std::move(inner));
  return e;
}

PredicateExpr PredicateExpr::holds(std::string relation, PredicateExpr inner) {
  PredicateExpr e;
  e.kind = Kind::Holds;
  e.loc = inner.loc;
  e.relation = std::move(relation);
  e.children.push_back(std::move(inner));
  return e;
}

bool PredicateExpr::operator==(const PredicateExpr& o) const {
  if (kind != o.kind) return false;
  switch (kind) {
    case Kind::Compare: return ref == o.ref && op == o.op && literals == o.literals;
    case Kind::Holds: return relation == o.relation && children == o.children;
    default: return children == o.children;
  }
}

std::vector<PredicateExpr> conjuncts(const PredicateExpr& e) {
  if (e.kind != PredicateExpr::Kind::And) return {e};
  std::vector<PredicateExpr> out;
  for (const auto& c : e.children) {
    auto sub = conjuncts(c);
    out.insert(out.end(), sub.begin(), sub.end());
  }
  return out;
}

namespace {

void collect(const PredicateExpr& e, const std::string& scope, std::vector<PropertyRef>& out) {
  switch (e.kind) {
    case PredicateExpr::Kind::Compare: {
      PropertyRef r = e.ref;
      if (r.binding.empty() && !scope.empty()) r.binding = scope;
      out.push_back(std::move(r));
      break;
    }
    case PredicateExpr::Kind::Holds:
      for (const auto& c : e.children) collect(c, e.relation, out);
      break;
    default:
      for (const auto& c : e.children) collect(c, scope, out);
  }
}

}  // namespace

std::vector<PropertyRef> collect_refs(const PredicateExpr& e) {
  std::vector<PropertyRef> out;
  collect(e, "", out);
  return out;
}

bool PropertyDef::operator==(const PropertyDef& o) const {
  return name == o.name && kind == o.kind && window == o.window && intrinsic == o.intrinsic && deps == o.deps &&
         impl == o.impl && args == o.args;
}

bool VObjDecl::operator==(const VObjDecl& o) const {
  return name == o.name && parent == o.parent && detector == o.detector && where == o.where &&
         filters == o.filters && properties == o.properties;
}

bool RelationDecl::operator==(const RelationDecl& o) const {
  return name == o.name && parent == o.parent && participants == o.participants && properties == o.properties;
}

bool QueryDecl::operator==(const QueryDecl& o) const {
  return name == o.name && parent == o.parent && bindings == o.bindings && frame_constraint == o.frame_constraint &&
         frame_output == o.frame_output && video_constraint == o.video_constraint && video_output == o.video_output;
}

bool HigherOrderDecl::operator==(const HigherOrderDecl& o) const {
  return kind == o.kind && name == o.name && inputs == o.inputs && min_frames == o.min_frames &&
         min_seconds == o.min_seconds && gap_tolerance == o.gap_tolerance && bindings == o.bindings &&
         constraint == o.constraint && frame_output == o.frame_output && max_interval == o.max_interval &&
         max_interval_seconds == o.max_interval_seconds;
}

template <typename T>
static const T* find_named(const std::vector<T>& v, const std::string& name) {
  auto it = std::find_if(v.begin(), v.end(), [&](const T& x) { return x.name == name; });
  return it == v.end() ? nullptr : &*it;
}

const VObjDecl* Program::find_vobj(const std::string& name) const { return find_named(vobjs, name); }
const RelationDecl* Program::find_relation(const std::string& name) const { return find_named(relations, name); }
const QueryDecl* Program::find_query(const std::string& name) const { return find_named(queries, name); }
const HigherOrderDecl* Program::find_higher_order(const std::string& name) const {
  return find_named(higher_order, name);
}

std::string serialize_literal(const Value& v) {
  if (v.is_string()) {
    std::string out = "\"";
    for (char c : v.as_string()) {
      switch (c) {
        case '"': out += "\\\""; break;
        case '\\': out += "\\\\"; break;
        case '\n': out += "\\n"; break;
        case '\t': out += "\\t"; break;
        default: out += c;
      }
    }
    return out + "\"";
  }
  if (v.is_bool()) return v.as_bool() ? "true" : "false";
  if (v.is_number()) return nlohmann::json(v.as_number()).dump();
  if (v.is_vector()) {
    std::string out = "[";
    const auto& xs = v.as_vector();
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (i) out += ", ";
      out += nlohmann::json(xs[i]).dump();
    }
    return out + "]";
  }
  return "undefined";
}

namespace {

bool is_atomic(const PredicateExpr& e) {
  return e.kind == PredicateExpr::Kind::Compare || e.kind == PredicateExpr::Kind::Holds ||
         e.kind == PredicateExpr::Kind::Not;
}

void serialize_expr(const PredicateExpr& e, std::ostream& os) {
  using K = PredicateExpr::Kind;
  switch (e.kind) {
    case K::Compare:
      os << e.ref.text() << ' ' << to_string(e.op) << ' ';
      if (e.op == CmpOp::In) {
        os << '[';
        for (std::size_t i = 0; i < e.literals.size(); ++i) os << (i ? ", " : "") << serialize_literal(e.literals[i]);
        os << ']';
      } else {
        os << serialize_literal(e.literals.front());
      }
      break;
    case K::Holds:
      os << "holds(" << e.relation << ", ";
      serialize_expr(e.children.front(), os);
      os << ')';
      break;
    case K::Not:
      os << '!';
      if (is_atomic(e.children.front())) {
        serialize_expr(e.children.front(), os);
      } else {
        os << '(';
        serialize_expr(e.children.front(), os);
        os << ')';
      }
      break;
    case K::And:
    case K::Or: {
      const char* sep = e.kind == K::And ? " & " : " | ";
      for (std::size_t i = 0; i < e.children.size(); ++i) {
        if (i) os << sep;
        const auto& c = e.children[i];
        const bool paren = c.kind == K::Or || (c.kind == K::And && e.kind == K::And);
        if (paren) os << '(';
        serialize_expr(c, os);
        if (paren) os << ')';
      }
      break;
    }
  }
}

void serialize_property(const PropertyDef& p, std::ostream& os) {
  os << "  @" << (p.kind == PropertyKind::Stateful ? "stateful" : "stateless");
  std::vector<std::string> ann;
  if (!p.deps.empty()) {
    std::string d = "deps=[";
    for (std::size_t i = 0; i < p.deps.size(); ++i) d += (i ? ", " : "") + p.deps[i];
    ann.push_back(d + "]");
  }
  if (p.kind == PropertyKind::Stateful) ann.push_back("window=" + std::to_string(p.window));
  if (p.intrinsic) ann.push_back("intrinsic");
  if (!ann.empty()) {
    os << '(';
    for (std::size_t i = 0; i < ann.size(); ++i) os << (i ? ", " : "") << ann[i];
    os << ')';
  }
  os << " property " << p.name << " = " << p.impl;
  if (!p.args.empty()) {
    os << '(';
    bool first = true;
    for (const auto& [k, v] : p.args) {
      os << (first ? "" : ", ") << k << '=' << serialize_literal(v);
      first = false;
    }
    os << ')';
  }
  os << ";\n";
}

void serialize_binding(const Binding& b, std::ostream& os, const char* indent) {
  os << indent << "bind " << b.name << ": " << b.type;
  if (!b.args.empty()) {
    os << '(';
    for (std::size_t i = 0; i < b.args.size(); ++i) os << (i ? ", " : "") << b.args[i];
    os << ')';
  }
  os << ";\n";
}

void serialize_outputs(const std::vector<PropertyRef>& refs, std::ostream& os) {
  if (refs.empty()) return;
  os << "  frame_output ";
  for (std::size_t i = 0; i < refs.size(); ++i) os << (i ? ", " : "") << refs[i].text();
  os << ";\n";
}

std::string number_text(double d) {
  if (d == static_cast<double>(static_cast<long long>(d))) return std::to_string(static_cast<long long>(d));
  return nlohmann::json(d).dump();
}

}  // namespace

std::string serialize(const PredicateExpr& e) {
  std::ostringstream os;
  serialize_expr(e, os);
  return os.str();
}

std::string serialize(const Program& p) {
  std::ostringstream os;
  for (const auto& v : p.vobjs) {
    os << "vobj " << v.name;
    if (v.parent) os << " extends " << *v.parent;
    os << " {\n";
    if (v.detector) os << "  detector " << *v.detector << ";\n";
    for (const auto& w : v.where) os << "  where " << serialize(w) << ";\n";
    for (const auto& f : v.filters) os << "  filter " << f << ";\n";
    for (const auto& prop : v.properties) serialize_property(prop, os);
    os << "}\n\n";
  }
  for (const auto& r : p.relations) {
    os << "relation " << r.name;
    if (r.parent) os << " extends " << *r.parent;
    if (!r.participants.empty()) {
      os << '(';
      for (std::size_t i = 0; i < r.participants.size(); ++i) {
        os << (i ? ", " : "") << r.participants[i].role << ": " << r.participants[i].type;
      }
      os << ')';
    }
    os << " {\n";
    for (const auto& prop : r.properties) serialize_property(prop, os);
    os << "}\n\n";
  }
  for (const auto& q : p.queries) {
    os << "query " << q.name;
    if (q.parent) os << " extends " << *q.parent;
    os << " {\n";
    for (const auto& b : q.bindings) serialize_binding(b, os, "  ");
    if (q.frame_constraint) os << "  frame_constraint " << serialize(*q.frame_constraint) << ";\n";
    serialize_outputs(q.frame_output, os);
    if (q.video_constraint) {
      os << "  video_constraint " << (q.video_constraint->quantifier == Quantifier::All ? "all" : "any") << '('
         << serialize(q.video_constraint->predicate) << ");\n";
    }
    if (q.video_output) os << "  video_output " << q.video_output->aggregate << '(' << q.video_output->binding << ");\n";
    os << "}\n\n";
  }
  for (const auto& h : p.higher_order) {
    os << to_string(h.kind) << " query " << h.name << '(';
    for (std::size_t i = 0; i < h.inputs.size(); ++i) os << (i ? ", " : "") << h.inputs[i];
    os << ") {\n";
    if (h.min_frames) os << "  min_frames " << number_text(*h.min_frames) << ";\n";
    if (h.min_seconds) os << "  min_seconds " << number_text(*h.min_seconds) << ";\n";
    if (h.kind == HigherOrderKind::Duration && h.gap_tolerance) os << "  gap_tolerance " << h.gap_tolerance << ";\n";
    for (const auto& b : h.bindings) serialize_binding(b, os, "  ");
    if (h.constraint) os << "  constraint " << serialize(*h.constraint) << ";\n";
    serialize_outputs(h.frame_output, os);
    if (h.max_interval) os << "  max_interval " << number_text(*h.max_interval) << ";\n";
    if (h.max_interval_seconds) os << "  max_interval_seconds " << number_text(*h.max_interval_seconds) << ";\n";
    os << "}\n\n";
  }
  return os.str();
}

namespace {

void dump_expr(const PredicateExpr& e, int depth, std::ostream& os) {
  const std::string pad(static_cast<std::size_t>(depth) * 2, ' ');
  using K = PredicateExpr::Kind;
  switch (e.kind) {
    case K::Compare: {
      os << pad << "Compare " << e.ref.text() << ' ' << to_string(e.op);
      for (const auto& l : e.literals) os << ' ' << serialize_literal(l);
      os << '\n';
      break;
    }
    case K::Holds:
      os << pad << "Holds " << e.relation << '\n';
      dump_expr(e.children.front(), depth + 1, os);
      break;
    default:
      os << pad << (e.kind == K::And ? "And" : e.kind == K::Or ? "Or" : "Not") << '\n';
      for (const auto& c : e.children) dump_expr(c, depth + 1, os);
  }
}

void dump_props(const std::vector<PropertyDef>& props, std::ostream& os) {
  for (const auto& p : props) {
    os << "  Property " << p.name << ' ' << (p.kind == PropertyKind::Stateful ? "stateful" : "stateless");
    if (p.kind == PropertyKind::Stateful) os << " window=" << p.window;
    if (p.intrinsic) os << " intrinsic";
    os << " impl=" << p.impl << " deps=[";
    for (std::size_t i = 0; i < p.deps.size(); ++i) os << (i ? "," : "") << p.deps[i];
    os << "]\n";
  }
}

}  // namespace

std::string dump_ast(const Program& p) {
  std::ostringstream os;
  os << "Program\n";
  for (const auto& v : p.vobjs) {
    os << " VObj " << v.name;
    if (v.parent) os << " : " << *v.parent;
    if (v.detector) os << " detector=" << *v.detector;
    os << '\n';
    for (const auto& w : v.where) {
      os << "  Where\n";
      dump_expr(w, 3, os);
    }
    for (const auto& f : v.filters) os << "  Filter " << f << '\n';
    dump_props(v.properties, os);
  }
  for (const auto& r : p.relations) {
    os << " Relation " << r.name;
    if (r.parent) os << " : " << *r.parent;
    for (const auto& part : r.participants) os << ' ' << part.role << ':' << part.type;
    os << '\n';
    dump_props(r.properties, os);
  }
  for (const auto& q : p.queries) {
    os << " Query " << q.name;
    if (q.parent) os << " : " << *q.parent;
    os << '\n';
    for (const auto& b : q.bindings) {
      os << "  Bind " << b.name << ' ' << b.type;
      for (const auto& a : b.args) os << ' ' << a;
      os << '\n';
    }
    if (q.frame_constraint) {
      os << "  FrameConstraint\n";
      dump_expr(*q.frame_constraint, 3, os);
    }
    for (const auto& r : q.frame_output) os << "  Output " << r.text() << '\n';
    if (q.video_constraint) {
      os << "  VideoConstraint " << (q.video_constraint->quantifier == Quantifier::All ? "all" : "any") << '\n';
      dump_expr(q.video_constraint->predicate, 3, os);
    }
    if (q.video_output) os << "  VideoOutput " << q.video_output->aggregate << ' ' << q.video_output->binding << '\n';
  }
  for (const auto& h : p.higher_order) {
    os << " " << to_string(h.kind) << "Query " << h.name << " (";
    for (std::size_t i = 0; i < h.inputs.size(); ++i) os << (i ? "," : "") << h.inputs[i];
    os << ")\n";
    if (h.constraint) {
      os << "  Constraint\n";
      dump_expr(*h.constraint, 3, os);
    }
  }
  return os.str();
}

}  // namespace vidq::dsl
