// vidq: command-line front end (run | profile | explain | synth | validate).

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "vidq/dsl/parser.hpp"
#include "vidq/dsl/validate.hpp"
#include "vidq/error.hpp"
#include "vidq/executor.hpp"
#include "vidq/hash.hpp"
#include "vidq/planner.hpp"
#include "vidq/registry.hpp"
#include "vidq/synth.hpp"
#include "vidq/trace_io.hpp"

namespace {

using json = nlohmann::json;
using namespace vidq;

constexpr int kExitParse = 1;
constexpr int kExitPlan = 2;
constexpr int kExitRuntime = 3;

struct StageError {
  int code;
  std::string message;
};

struct Options {
  std::string program;
  std::string trace;
  std::string meta;
  std::string registry;
  std::string canary;
  std::string plan_cache;
  std::string result_cache;
  std::string out;
  std::vector<std::string> queries;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  double accuracy_target = 0.9;
  std::int64_t canary_frames = 300;
  std::size_t max_alternatives = 32;
  bool no_memo = false;
  bool no_lazy = false;
  bool no_pullup = false;
  bool no_fusion = false;
  bool all = false;
  double iou_threshold = 0.3;
  int max_age = 30;
  int min_hits = 1;
};

template <typename F>
auto stage(int code, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError{code, e.what()};
  }
}

struct Loaded {
  Registry registry;
  dsl::ValidatedProgram program;
  VideoMeta meta;
  std::vector<std::string> queries;
};

Loaded load(const Options& o) {
  Loaded l;
  stage(kExitParse, [&] {
    l.registry = o.registry.empty() ? Registry::with_builtins() : Registry::load(o.registry, o.seed);
    l.registry.set_seed(o.seed);
    const dsl::Program p = dsl::parse_file(o.program);
    l.program = dsl::validate_or_throw(p, o.program, &l.registry);
    if (l.program.query_order.empty()) throw Error(o.program + ": program declares no queries");
    if (o.queries.empty()) {
      // Queries not consumed by a higher-order query, in declaration order.
      std::set<std::string> consumed;
      for (const auto& [name, q] : l.program.queries) consumed.insert(q.inputs.begin(), q.inputs.end());
      for (const auto& name : l.program.query_order) {
        if (!consumed.count(name)) l.queries.push_back(name);
      }
    } else {
      for (const auto& q : o.queries) {
        if (!l.program.queries.count(q)) throw Error("unknown query '" + q + "'");
        l.queries.push_back(q);
      }
    }
    return 0;
  });
  stage(kExitRuntime, [&] {
    if (!o.meta.empty()) l.meta = load_meta(o.meta);
    l.meta.validate();
    return 0;
  });
  return l;
}

PlannerConfig planner_config(const Options& o) {
  PlannerConfig c;
  c.accuracy_target = o.accuracy_target;
  c.pullup = !o.no_pullup;
  c.fusion = !o.no_fusion;
  c.memo = !o.no_memo;
  c.max_alternatives = o.max_alternatives;
  c.canary_frames = o.canary_frames;
  c.batch_size = o.batch_size;
  return c;
}

ExecConfig exec_config(const Options& o) {
  ExecConfig c;
  c.lazy = !o.no_lazy;
  c.memo = !o.no_memo;
  c.batch_size = o.batch_size;
  c.tracker.iou_threshold = o.iou_threshold;
  c.tracker.max_age = o.max_age;
  c.tracker.min_hits = o.min_hits;
  return c;
}

std::vector<TraceRecord> read_canary(const Options& o, const VideoMeta& meta) {
  const std::string path = o.canary.empty() ? o.trace : o.canary;
  if (path.empty()) throw StageError{kExitRuntime, "no trace given (use --trace or --canary)"};
  return stage(kExitRuntime, [&] {
    TraceReader reader(path, meta);
    std::vector<TraceRecord> out;
    while (auto r = reader.next()) {
      if (o.canary_frames > 0 && r->frame_id >= o.canary_frames) break;
      out.push_back(std::move(*r));
    }
    return out;
  });
}

std::string plan_cache_key(const Options& o, const Loaded& l, const std::string& query,
                           const std::vector<TraceRecord>& canary) {
  json j;
  j["program"] = dsl::serialize(l.program.program);
  j["query"] = query;
  j["registry"] = l.registry.to_json();
  j["seed"] = o.seed;
  j["meta"] = meta_to_json(l.meta);
  j["canary"] = sha256_hex(serialize_trace(canary));
  j["config"] = {{"target", o.accuracy_target}, {"pullup", !o.no_pullup}, {"fusion", !o.no_fusion},
                 {"memo", !o.no_memo},          {"max", o.max_alternatives}, {"batch", o.batch_size}};
  return sha256_hex(j.dump());
}

/// Plans every selected query, consulting the plan cache when configured.
std::vector<PlanResult> plan_all(const Options& o, const Loaded& l) {
  const auto canary = read_canary(o, l.meta);
  std::vector<PlanResult> out;
  for (const auto& q : l.queries) {
    std::string cached;
    if (!o.plan_cache.empty()) {
      std::filesystem::create_directories(o.plan_cache);
      cached = o.plan_cache + "/" + plan_cache_key(o, l, q, canary) + ".plan.json";
      if (std::filesystem::exists(cached)) {
        try {
          PlanResult r;
          r.plan = load_plan(cached);
          link_plan(r.plan, l.program, l.registry);
          r.candidates = {r.plan};
          out.push_back(std::move(r));
          continue;
        } catch (const Error& e) {
          std::cerr << "warning: ignoring cached plan " << cached << ": " << e.what() << "\n";
        }
      }
    }
    PlanResult r = stage(kExitPlan, [&] { return plan_query(l.program, l.registry, q, canary, l.meta, planner_config(o)); });
    if (r.selection.fallback) std::cerr << "warning: " << q << ": " << r.selection.warning << "\n";
    if (!cached.empty()) stage(kExitRuntime, [&] {
        save_plan(r.plan, cached);
        return 0;
      });
    out.push_back(std::move(r));
  }
  return out;
}

void emit(const Options& o, const std::string& text) {
  if (o.out.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream f(o.out, std::ios::binary);
  if (!f) throw StageError{kExitRuntime, "cannot write " + o.out};
  f << text;
}

int cmd_run(const Options& o) {
  if (o.trace.empty()) throw StageError{kExitRuntime, "--trace is required"};
  Loaded l = load(o);
  auto plans = plan_all(o, l);
  std::vector<PlanDag> dags;
  for (auto& p : plans) dags.push_back(p.plan);
  RunResult r = stage(kExitRuntime, [&] {
    std::optional<ResultStore> store;
    if (!o.result_cache.empty()) store.emplace(o.result_cache);
    return run_session(dags, l.program, l.registry, o.trace, l.meta, exec_config(o), store ? &*store : nullptr);
  });
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
  emit(o, r.serialize());
  return 0;
}

int cmd_profile(const Options& o) {
  Loaded l = load(o);
  auto plans = plan_all(o, l);
  std::ostringstream os;
  os << std::left << std::setw(16) << "query" << std::setw(18) << "plan_id" << std::setw(10) << "f1"
     << std::setw(14) << "cost_units" << std::setw(6) << "ops"
     << "detectors\n";
  for (std::size_t i = 0; i < plans.size(); ++i) {
    const auto& p = plans[i];
    for (std::size_t c = 0; c < p.candidates.size(); ++c) {
      const PlanDag& d = p.candidates[c];
      std::string dets;
      for (const auto& [k, v] : d.detectors) dets += (dets.empty() ? "" : ",") + k + "=" + v;
      os << std::setw(16) << l.queries[i] << std::setw(18) << d.plan_id;
      if (c < p.reports.size()) {
        os << std::setw(10) << std::setprecision(4) << p.reports[c].f1 << std::setw(14) << p.reports[c].cost_units;
      } else {
        os << std::setw(10) << "-" << std::setw(14) << "-";
      }
      os << std::setw(6) << d.op_count() << dets << (c == p.selection.index ? "  *selected" : "") << "\n";
    }
  }
  emit(o, os.str());
  return 0;
}

int cmd_explain(const Options& o) {
  Loaded l = load(o);
  auto plans = plan_all(o, l);
  std::string text;
  for (const auto& p : plans) {
    if (o.all) {
      for (std::size_t c = 0; c < p.candidates.size(); ++c) {
        const auto* costs = c < p.reports.size() ? &p.reports[c].op_costs : nullptr;
        text += explain_dot(p.candidates[c], costs);
      }
    } else {
      const auto* costs = p.selection.index < p.reports.size() ? &p.reports[p.selection.index].op_costs : nullptr;
      text += explain_dot(p.plan, costs);
    }
  }
  emit(o, text);
  return 0;
}

int cmd_validate(const Options& o) {
  Loaded l = load(o);
  std::ostringstream os;
  os << o.program << ": ok (" << l.program.vobjs.size() << " vobjs, " << l.program.relations.size()
     << " relations, " << l.program.queries.size() << " queries)\n";
  emit(o, os.str());
  return 0;
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir, const Options& o,
              const std::vector<std::string>& label_queries) {
  synth::WorldSpec spec = stage(kExitParse, [&] { return synth::WorldSpec::load(spec_path); });
  stage(kExitRuntime, [&] {
    synth::write_world(synth::generate(spec), out_dir);
    return 0;
  });
  if (!label_queries.empty()) {
    if (o.program.empty()) throw StageError{kExitParse, "--label needs --program"};
    Options copy = o;
    copy.queries = label_queries;
    Loaded l = load(copy);
    for (const auto& q : l.queries) {
      stage(kExitRuntime, [&] {
        save_ground_truth(synth::label(spec, l.program, l.registry, q), out_dir + "/labels_" + q + ".jsonl");
        return 0;
      });
    }
  }
  return 0;
}

void add_common(CLI::App* c, Options& o, bool needs_trace) {
  c->add_option("--program", o.program, "query program file")->required();
  auto* t = c->add_option("--trace", o.trace, "detection trace file");
  if (needs_trace) t->required();
  c->add_option("--meta", o.meta, "video meta file");
  c->add_option("--registry", o.registry, "registry manifest");
  c->add_option("--query", o.queries, "query to evaluate (repeatable); default: every top-level query");
  c->add_option("--batch-size", o.batch_size, "frames per batch")->check(CLI::PositiveNumber);
  c->add_option("--seed", o.seed, "seed mixed into every error profile");
  c->add_option("--accuracy-target", o.accuracy_target, "minimum canary F1 for a candidate plan")
      ->check(CLI::Range(0.0, 1.0));
  c->add_option("--canary", o.canary, "canary trace (default: prefix of --trace)");
  c->add_option("--canary-frames", o.canary_frames, "canary length in frames");
  c->add_option("--max-alternatives", o.max_alternatives, "cap on candidate plans")->check(CLI::PositiveNumber);
  c->add_flag("--no-memo", o.no_memo, "disable intrinsic memoization");
  c->add_flag("--no-lazy", o.no_lazy, "compute every projected property eagerly");
  c->add_flag("--no-pullup", o.no_pullup, "disable predicate pull-up");
  c->add_flag("--no-fusion", o.no_fusion, "disable operator fusion");
  c->add_option("--plan-cache", o.plan_cache, "directory of saved plans");
  c->add_option("--out", o.out, "output file (default: standard output)");
  c->add_option("--iou-threshold", o.iou_threshold, "tracker IoU threshold");
  c->add_option("--max-age", o.max_age, "tracker max age in frames");
  c->add_option("--min-hits", o.min_hits, "tracker hits before a track is confirmed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vidq - declarative queries over video detection traces"};
  app.require_subcommand(1);
  Options o;

  auto* run = app.add_subcommand("run", "plan and execute queries over a trace");
  add_common(run, o, true);
  run->add_option("--result-cache", o.result_cache, "directory of materialized query results");

  auto* prof = app.add_subcommand("profile", "profile candidate plans on the canary");
  add_common(prof, o, false);

  auto* expl = app.add_subcommand("explain", "print the selected plan as DOT");
  add_common(expl, o, false);
  expl->add_flag("--all", o.all, "print every candidate plan");

  auto* val = app.add_subcommand("validate", "parse and validate a program");
  val->add_option("--program", o.program, "query program file")->required();
  val->add_option("--registry", o.registry, "registry manifest");
  val->add_option("--out", o.out, "output file");

  std::string spec_path, out_dir;
  std::vector<std::string> label_queries;
  auto* syn = app.add_subcommand("synth", "generate a synthetic world");
  syn->add_option("--spec", spec_path, "world spec file")->required();
  syn->add_option("--out-dir", out_dir, "output directory")->required();
  syn->add_option("--program", o.program, "program for --label");
  syn->add_option("--registry", o.registry, "registry manifest for --label");
  syn->add_option("--label", label_queries, "write oracle labels for this query (repeatable)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(o);
    if (prof->parsed()) return cmd_profile(o);
    if (expl->parsed()) return cmd_explain(o);
    if (val->parsed()) return cmd_validate(o);
    if (syn->parsed()) return cmd_synth(spec_path, out_dir, o, label_queries);
  } catch (const StageError& e) {
    std::cerr << "error: " << e.message << "\n";
    return e.code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
