#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "vidq/dsl/validate.hpp"
#include "vidq/planner.hpp"
#include "vidq/registry.hpp"
#include "vidq/trace_io.hpp"
#include "vidq/tracker.hpp"

namespace vidq {

struct ExecConfig {
  bool lazy = true;
  bool memo = true;
  std::size_t batch_size = 64;
  TrackerConfig tracker;
};

struct ExecStats {
  std::map<std::string, std::uint64_t> op_calls;     // per operator label, once per batch
  std::map<std::string, std::uint64_t> invocations;  // per component / property function
  std::map<std::string, double> op_costs;            // cost units per operator label
  std::map<std::string, ConjunctProfile> conjuncts;  // per conjunct text
  std::uint64_t frames_read = 0;
  std::uint64_t frames_emitted = 0;
  std::uint64_t batches = 0;
  double cost_units = 0.0;
  double wall_seconds = 0.0;

  std::uint64_t total_op_calls() const;
  std::uint64_t invocations_of(const std::string& name) const;
  /// Deterministic summary; wall time is left out so result files stay
  /// byte-identical across runs.
  nlohmann::json to_json() const;
};

/// Output of one query: frame records plus the video-level trailer.
struct QueryOutput {
  std::string query;
  std::vector<nlohmann::json> frames;
  nlohmann::json video = nlohmann::json::object();
  std::set<FrameId> labels;  // frames with at least one match

  /// One JSON line per frame record, then the trailer line.
  std::string serialize() const;
  nlohmann::json to_json() const;
  static QueryOutput from_json(const nlohmann::json& j);
};

struct RunResult {
  std::vector<QueryOutput> outputs;
  ExecStats stats;
  std::vector<std::string> warnings;

  /// Every query's lines, then one stats line.
  std::string serialize() const;
};

/// Runs one or more linked plans over a trace in a single pass. Operators
/// with the same signature and inputs are executed once per batch and shared
/// between plans.
class Engine {
 public:
  Engine(const dsl::ValidatedProgram& program, const Registry& registry, const VideoMeta& meta, ExecConfig cfg);
  ~Engine();
  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  void add_plan(const PlanDag& plan);
  /// Number of distinct operators after sharing.
  std::size_t operator_count() const;
  RunResult run(TraceSource& trace);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

RunResult execute(const std::vector<PlanDag>& plans, const dsl::ValidatedProgram& program, const Registry& registry,
                  TraceSource& trace, const VideoMeta& meta, const ExecConfig& cfg);

/// Materialized query outputs in a directory of content-hash-named entries.
class ResultStore {
 public:
  explicit ResultStore(std::string dir);
  /// nullopt on a miss. A corrupt entry is removed and reported in `warning`.
  std::optional<QueryOutput> get(const std::string& key, std::string* warning = nullptr) const;
  void put(const std::string& key, const QueryOutput& out) const;
  std::string path_for(const std::string& key) const;

 private:
  std::string dir_;
};

/// Key of one query's result: trace content, program, plan, registry, meta
/// and seed.
std::string result_key(const std::string& trace_hash, const PlanDag& plan, const dsl::ValidatedProgram& program,
                       const Registry& registry, const VideoMeta& meta, const ExecConfig& cfg);

/// Runs `plans` over the trace file, serving cached queries from `store`
/// when given and executing the rest together.
RunResult run_session(const std::vector<PlanDag>& plans, const dsl::ValidatedProgram& program,
                      const Registry& registry, const std::string& trace_path, const VideoMeta& meta,
                      const ExecConfig& cfg, const ResultStore* store = nullptr);

}  // namespace vidq
