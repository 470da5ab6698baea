#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vidq/value.hpp"

namespace vidq::dsl {

struct SourceLoc {
  std::size_t line = 0;
  std::size_t col = 0;
};

/// `binding.property`, or a bare `property` inside `where` / `holds`.
struct PropertyRef {
  std::string binding;
  std::string property;
  SourceLoc loc;

  bool operator==(const PropertyRef& o) const { return binding == o.binding && property == o.property; }
  std::string text() const { return binding.empty() ? property : binding + "." + property; }
};

enum class CmpOp { Eq, Ne, Lt, Le, Gt, Ge, In };

std::string to_string(CmpOp op);

struct PredicateExpr {
  enum class Kind { And, Or, Not, Compare, Holds };

  Kind kind = Kind::Compare;
  std::vector<PredicateExpr> children;  // And/Or: 2+, Not/Holds: 1
  PropertyRef ref;                      // Compare
  CmpOp op = CmpOp::Eq;                 // Compare
  std::vector<Value> literals;          // Compare: 1 value, or the `in` set
  std::string relation;                 // Holds
  SourceLoc loc;

  static PredicateExpr compare(PropertyRef ref, CmpOp op, Value literal);
  static PredicateExpr in_set(PropertyRef ref, std::vector<Value> set);
  static PredicateExpr conj(std::vector<PredicateExpr> parts);
  static PredicateExpr disj(std::vector<PredicateExpr> parts);
  static PredicateExpr negate(PredicateExpr inner);
  static PredicateExpr holds(std::string relation, PredicateExpr inner);

  /// Structural equality; source locations are ignored.
  bool operator==(const PredicateExpr& o) const;
};

/// Flattens nested top-level And nodes into a conjunct list.
std::vector<PredicateExpr> conjuncts(const PredicateExpr& e);

/// Every property reference in the expression. References inside
/// `holds(rel, ...)` are reported with binding `rel` when written bare.
std::vector<PropertyRef> collect_refs(const PredicateExpr& e);

enum class PropertyKind { Stateless, Stateful };

struct PropertyDef {
  std::string name;
  PropertyKind kind = PropertyKind::Stateless;
  std::size_t window = 0;  // Stateful only
  bool intrinsic = false;
  std::vector<std::string> deps;  // names; relation deps may be `role.prop`
  std::string impl;               // registry property-function name
  std::map<std::string, Value> args;
  SourceLoc loc;

  bool operator==(const PropertyDef& o) const;
};

struct VObjDecl {
  std::string name;
  std::optional<std::string> parent;
  std::optional<std::string> detector;
  std::vector<PredicateExpr> where;    // defining constraints relative to the parent
  std::vector<std::string> filters;    // registered classifiers / frame filters
  std::vector<PropertyDef> properties;
  SourceLoc loc;

  bool operator==(const VObjDecl& o) const;
};

struct Participant {
  std::string role;
  std::string type;
  bool operator==(const Participant&) const = default;
};

struct RelationDecl {
  std::string name;
  std::optional<std::string> parent;
  std::vector<Participant> participants;
  std::vector<PropertyDef> properties;
  SourceLoc loc;

  bool operator==(const RelationDecl& o) const;
};

/// `bind name: Type;` or `bind name: Relation(a, b);`
struct Binding {
  std::string name;
  std::string type;
  std::vector<std::string> args;  // participant bindings, relations only
  SourceLoc loc;

  bool is_relation() const { return !args.empty(); }
  bool operator==(const Binding& o) const { return name == o.name && type == o.type && args == o.args; }
};

enum class Quantifier { All, Any };

struct VideoConstraint {
  Quantifier quantifier = Quantifier::All;
  PredicateExpr predicate;
  bool operator==(const VideoConstraint&) const = default;
};

struct VideoOutput {
  std::string aggregate = "count_distinct";
  std::string binding;
  SourceLoc loc;
  bool operator==(const VideoOutput& o) const { return aggregate == o.aggregate && binding == o.binding; }
};

struct QueryDecl {
  std::string name;
  std::optional<std::string> parent;
  std::vector<Binding> bindings;
  std::optional<PredicateExpr> frame_constraint;
  std::vector<PropertyRef> frame_output;
  std::optional<VideoConstraint> video_constraint;
  std::optional<VideoOutput> video_output;
  SourceLoc loc;

  bool operator==(const QueryDecl& o) const;
};

enum class HigherOrderKind { Duration, Spatial, Temporal };

std::string to_string(HigherOrderKind k);

struct HigherOrderDecl {
  HigherOrderKind kind = HigherOrderKind::Duration;
  std::string name;
  std::vector<std::string> inputs;
  SourceLoc inputs_loc;
  // Duration
  std::optional<double> min_frames;
  std::optional<double> min_seconds;
  std::size_t gap_tolerance = 0;
  // Spatial
  std::vector<Binding> bindings;
  std::optional<PredicateExpr> constraint;
  std::vector<PropertyRef> frame_output;
  // Temporal
  std::optional<double> max_interval;
  std::optional<double> max_interval_seconds;
  SourceLoc loc;

  bool operator==(const HigherOrderDecl& o) const;
};

struct Program {
  std::vector<VObjDecl> vobjs;
  std::vector<RelationDecl> relations;
  std::vector<QueryDecl> queries;
  std::vector<HigherOrderDecl> higher_order;

  bool empty() const { return vobjs.empty() && relations.empty() && queries.empty() && higher_order.empty(); }
  bool operator==(const Program&) const = default;

  const VObjDecl* find_vobj(const std::string& name) const;
  const RelationDecl* find_relation(const std::string& name) const;
  const QueryDecl* find_query(const std::string& name) const;
  const HigherOrderDecl* find_higher_order(const std::string& name) const;
};

/// Canonical source text; parse(serialize(p)) == p.
std::string serialize(const Program& p);
std::string serialize(const PredicateExpr& e);
std::string serialize_literal(const Value& v);

/// Indented tree dump for golden tests.
std::string dump_ast(const Program& p);

}  // namespace vidq::dsl
