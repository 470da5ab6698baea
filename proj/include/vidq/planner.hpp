#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "vidq/dsl/validate.hpp"
#include "vidq/registry.hpp"
#include "vidq/trace_io.hpp"

namespace vidq {

struct ExecStats;
struct ExecConfig;

enum class OpKind {
  VideoReader,
  FrameFilter,
  ObjectDetector,
  ObjectTracker,
  VObjProjector,
  VObjFilter,
  Join,
  RelationProjector,
  RelationFilter,
  Duration,
  Temporal,
  Output,
  Fused,
};

std::string to_string(OpKind k);
OpKind op_kind_from_string(const std::string& s);

struct PlanOp {
  int id = 0;
  OpKind kind = OpKind::VideoReader;
  std::vector<int> inputs;
  std::string query;      // (sub)query the op belongs to; empty for shared ops
  std::string binding;    // branch binding, or relation binding for relation ops
  std::string type;       // VObj or relation type
  std::string component;  // detector / classifier / frame filter
  std::string property;   // projector target
  std::vector<std::string> predicates;  // filter conjuncts, canonical text
  std::vector<std::string> bindings;    // Join / tuple ops: binding order
  std::vector<PlanOp> fused;            // Fused: member ops in execution order
  nlohmann::json params = nlohmann::json::object();
  double cost = 0.0;  // declared cost units per invocation
  std::string placement_tag;

  bool is_filter() const { return kind == OpKind::VObjFilter || kind == OpKind::RelationFilter; }
  bool is_projector() const { return kind == OpKind::VObjProjector || kind == OpKind::RelationProjector; }
  nlohmann::json to_json() const;
  static PlanOp from_json(const nlohmann::json& j);
};

struct PlanDag {
  static constexpr int kVersion = 1;

  std::string query;
  std::vector<PlanOp> ops;  // topological order; ops[i].id == i
  int sink = -1;
  std::string plan_id;
  /// Detector chosen per (query, binding); informational.
  std::map<std::string, std::string> detectors;

  const PlanOp& op(int id) const { return ops.at(static_cast<std::size_t>(id)); }
  std::vector<int> consumers(int id) const;
  /// Recomputes plan_id from the canonical op list.
  void finalize();
  std::size_t op_count() const;
  nlohmann::json to_json() const;
  static PlanDag from_json(const nlohmann::json& j);
};

/// Per (query, binding) detector choice; missing entries use the most
/// general detector of the binding's type.
using DetectorChoice = std::map<std::string, std::string>;

std::string choice_key(const std::string& query, const std::string& binding);

struct BuildOptions {
  bool memo = true;
  DetectorChoice detectors;
};

/// Unoptimized DAG: per binding detector -> frame filters -> [tracker] ->
/// projectors -> filters; join; relation projectors and filters; higher-order
/// evaluators; output.
PlanDag build_base_dag(const dsl::ValidatedProgram& program, const Registry& registry, const std::string& query,
                       const BuildOptions& opts = {});

/// Moves each filter to just after the last operator it depends on and
/// registered classifiers / frame filters ahead of their detector.
PlanDag pull_up_predicates(const PlanDag& dag);

/// Merges maximal runs of adjacent projector/filter operators of one chain.
PlanDag fuse_operators(const PlanDag& dag);

/// Structural checks: acyclic, topological order, projector dependencies
/// upstream, filters after their projectors. Empty means valid.
std::vector<std::string> check_dag(const PlanDag& dag, const dsl::ValidatedProgram& program);

struct PlannerConfig {
  double accuracy_target = 0.9;
  bool pullup = true;
  bool fusion = true;
  bool memo = true;
  std::size_t max_alternatives = 32;
  std::int64_t canary_frames = 300;
  std::size_t batch_size = 64;
  bool parallel = true;
};

/// Detector choices per (query, binding) along each inheritance chain,
/// most general first.
std::vector<std::pair<std::string, std::vector<std::string>>> detector_options(
    const dsl::ValidatedProgram& program, const Registry& registry, const std::string& query);

/// Candidate plans; element 0 is the reference plan (most general
/// detectors). Optimization passes follow `cfg`.
std::vector<PlanDag> enumerate_alternatives(const dsl::ValidatedProgram& program, const Registry& registry,
                                            const std::string& query, const PlannerConfig& cfg = {});

/// Frame-level F1 of `candidate` against `reference`; 1 when both are empty.
double f1_score(const std::set<FrameId>& reference, const std::set<FrameId>& candidate);

struct ConjunctProfile {
  std::uint64_t evaluations = 0;
  std::uint64_t rejections = 0;
  double cost_units = 0.0;
};

struct ProfileReport {
  std::string plan_id;
  double f1 = 0.0;
  double cost_units = 0.0;
  double wall_seconds = 0.0;  // per batch
  std::size_t op_count = 0;
  std::map<std::string, double> op_costs;
  std::map<std::string, ConjunctProfile> conjuncts;
  std::set<FrameId> labels;
};

/// Runs every dag over the canary; index `reference` supplies the labels.
std::vector<ProfileReport> profile(const std::vector<PlanDag>& dags, std::size_t reference,
                                   const std::vector<TraceRecord>& canary, const VideoMeta& meta,
                                   const dsl::ValidatedProgram& program, const Registry& registry,
                                   const PlannerConfig& cfg);

struct Selection {
  std::size_t index = 0;
  bool fallback = false;
  std::string warning;
};

/// Cheapest plan meeting the target; ties -> fewer ops -> smaller plan_id.
/// Falls back to `reference` with a warning when none qualifies.
Selection select_plan(const std::vector<ProfileReport>& reports, std::size_t reference, double accuracy_target);

/// Reorders conjuncts of fused filter runs by ascending cost / rejection rate.
PlanDag reorder_conjuncts(const PlanDag& dag, const std::map<std::string, ConjunctProfile>& profile);

struct PlanResult {
  PlanDag plan;
  std::vector<PlanDag> candidates;
  std::vector<ProfileReport> reports;
  Selection selection;
};

/// enumerate -> profile (when more than one candidate) -> select.
PlanResult plan_query(const dsl::ValidatedProgram& program, const Registry& registry, const std::string& query,
                      const std::vector<TraceRecord>& canary, const VideoMeta& meta, const PlannerConfig& cfg);

void save_plan(const PlanDag& dag, const std::string& path);
/// Throws ParseError on malformed files or version mismatch.
PlanDag load_plan(const std::string& path);
/// Throws LinkError when the plan names components or properties that the
/// registry / program do not provide.
void link_plan(const PlanDag& dag, const dsl::ValidatedProgram& program, const Registry& registry);

/// DOT rendering with per-operator costs.
std::string explain_dot(const PlanDag& dag, const std::map<std::string, double>* op_costs = nullptr);

/// Human label of an operator, e.g. `VObjFilter[car](car.color == "red")`.
std::string op_label(const PlanOp& op);

}  // namespace vidq
