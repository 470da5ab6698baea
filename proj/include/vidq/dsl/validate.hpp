#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vidq/dsl/ast.hpp"
#include "vidq/error.hpp"

namespace vidq::dsl {

enum class ValueType { Any, Bool, Number, String, Vector };

/// The slice of the component registry that validation needs. Kept abstract
/// so the language front-end does not depend on the registry.
class ComponentCatalog {
 public:
  virtual ~ComponentCatalog() = default;
  virtual bool has_detector(const std::string& name) const = 0;
  virtual bool has_property_fn(const std::string& name) const = 0;
  /// Binary classifiers and frame filters share one namespace in `filter`.
  virtual bool has_frame_filter(const std::string& name) const = 0;
  virtual ValueType property_fn_type(const std::string& name) const = 0;
};

struct Diagnostic {
  SourceLoc loc;
  std::string message;

  /// `file:line:col: message`
  std::string format(const std::string& file) const;
  bool operator==(const Diagnostic& o) const {
    return loc.line == o.loc.line && loc.col == o.loc.col && message == o.message;
  }
};

/// Names every VObj carries without declaring them.
bool is_builtin_property(const std::string& name);
ValueType builtin_property_type(const std::string& name);

inline constexpr const char* kSceneType = "Scene";
inline constexpr const char* kSceneDetector = "scene";

struct ResolvedVObj {
  std::string name;
  std::vector<std::string> chain;                 // self first, then ancestors
  std::map<std::string, PropertyDef> properties;  // flattened; child overrides parent
  std::vector<std::string> order;                 // dependencies before dependents
  std::map<std::string, std::size_t> history_caps;
  std::vector<std::string> filters;  // classifiers/frame filters along the chain, self first
};

struct ResolvedRelation {
  std::string name;
  std::vector<Participant> participants;
  std::map<std::string, PropertyDef> properties;
  std::vector<std::string> order;
  std::map<std::string, std::size_t> history_caps;
};

enum class QueryKind { Basic, Spatial, Duration, Temporal };

std::string to_string(QueryKind k);

/// A query after inheritance flattening. Spatial queries are compiled into
/// the same shape as basic ones (merged bindings, conjoined constraints).
struct ResolvedQuery {
  std::string name;
  QueryKind kind = QueryKind::Basic;
  std::vector<Binding> bindings;
  std::optional<PredicateExpr> frame_constraint;  // effective
  std::vector<PropertyRef> frame_output;
  std::optional<VideoConstraint> video_constraint;
  std::optional<VideoOutput> video_output;

  std::vector<std::string> inputs;  // Duration: 1, Temporal: 2
  std::optional<double> min_frames;
  std::optional<double> min_seconds;
  std::size_t gap_tolerance = 0;
  std::optional<double> max_interval;
  std::optional<double> max_interval_seconds;

  const Binding* binding(const std::string& name) const;
};

struct ValidatedProgram {
  Program program;
  std::map<std::string, ResolvedVObj> vobjs;
  std::map<std::string, ResolvedRelation> relations;
  std::map<std::string, ResolvedQuery> queries;
  std::vector<std::string> query_order;  // declaration order

  const ResolvedQuery& query(const std::string& name) const;
  const ResolvedVObj& vobj(const std::string& name) const;
  const ResolvedRelation& relation(const std::string& name) const;
  /// True if `type` is `ancestor` or inherits from it.
  bool is_a(const std::string& type, const std::string& ancestor) const;
};

struct ValidationResult {
  std::optional<ValidatedProgram> program;
  std::vector<Diagnostic> diagnostics;
  bool ok() const { return diagnostics.empty(); }
};

ValidationResult validate(const Program& program, const ComponentCatalog* catalog = nullptr);

class ValidationError : public Error {
 public:
  ValidationError(std::string file, std::vector<Diagnostic> diags);
  const std::vector<Diagnostic>& diagnostics() const { return diags_; }

 private:
  std::vector<Diagnostic> diags_;
};

ValidatedProgram validate_or_throw(const Program& program, const std::string& file = "<input>",
                                   const ComponentCatalog* catalog = nullptr);

/// The query's own frame constraint conjoined with every ancestor's
/// (ancestors first). nullopt when no level declares one.
std::optional<PredicateExpr> effective_constraint(const Program& program, const std::string& query);

}  // namespace vidq::dsl
