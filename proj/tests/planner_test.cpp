#include <gtest/gtest.h>

#include <fstream>

#include "support/harness.hpp"
#include "vidq/error.hpp"

using namespace vidq;
using vidq::testing::compile;
using vidq::testing::TempDir;

namespace {

const char* kProgram = R"(
vobj Car {
  detector general_car;
  @stateless(deps=[bbox]) property center = center;
  @stateful(deps=[center], window=3) property direction = direction;
  @stateless(intrinsic) property color = color;
}
vobj RedCar extends Car {
  detector red_car;
  where color == "red";
}
vobj Person {
  detector general_person;
  @stateless(deps=[bbox]) property center = center;
  @stateless(intrinsic) property type = type;
}
vobj Officer extends Person {
  detector officer;
  where type == "officer";
}
vobj GuardedCar extends Car {
  filter has_car;
}
relation Near(p: Person, c: Car) {
  @stateless(deps=[p.center, c.center]) property d = distance(unit="px");
}
query Colors {
  bind c: Car;
  frame_constraint c.color == "red";
  frame_output c.color;
}
query Moving {
  bind c: Car;
  frame_constraint c.direction == "left";
}
query Guarded {
  bind g: GuardedCar;
  frame_constraint g.color == "red";
}
query Pair {
  bind o: Officer;
  bind r: RedCar;
  frame_constraint o.type == "officer" and r.color == "red";
}
query Close {
  bind p: Person;
  bind c: Car;
  bind n: Near(p, c);
  frame_constraint n.d < 100 and c.color == "red";
}
)";

Registry registry() {
  return Registry::from_manifest(nlohmann::json::parse(R"({
    "detectors": [
      {"name": "red_car", "classes": ["car"], "match": {"color": "red"}},
      {"name": "officer", "classes": ["person"], "match": {"type": "officer"}}
    ],
    "classifiers": [{"name": "has_car", "class": "car"}]
  })"));
}

std::size_t count_kind(const PlanDag& d, OpKind k) {
  std::size_t n = 0;
  for (const auto& op : d.ops) n += op.kind == k;
  return n;
}

int first_of(const PlanDag& d, OpKind k) {
  for (const auto& op : d.ops) {
    if (op.kind == k) return op.id;
  }
  return -1;
}

PlannerConfig plain() {
  PlannerConfig pc;
  pc.fusion = false;
  return pc;
}

class Planner : public ::testing::Test {
 protected:
  Registry reg = registry();
  dsl::ValidatedProgram vp = compile(kProgram, reg);
};

}  // namespace

TEST_F(Planner, StatefulPropertyAddsTracker) {
  const PlanDag d = build_base_dag(vp, reg, "Moving");
  EXPECT_EQ(count_kind(d, OpKind::ObjectTracker), 1u);
  EXPECT_TRUE(check_dag(d, vp).empty());
}

TEST_F(Planner, StatelessQueryHasNoTrackerWithoutMemo) {
  BuildOptions opts;
  opts.memo = false;
  const PlanDag d = build_base_dag(vp, reg, "Colors", opts);
  EXPECT_EQ(count_kind(d, OpKind::ObjectTracker), 0u);
  EXPECT_EQ(count_kind(d, OpKind::VideoReader), 1u);
  EXPECT_EQ(count_kind(d, OpKind::Output), 1u);
  // Memoizing the intrinsic color needs track identities.
  EXPECT_EQ(count_kind(build_base_dag(vp, reg, "Colors"), OpKind::ObjectTracker), 1u);
}

TEST_F(Planner, FusionMergesProjectorAndFilter) {
  const PlanDag fused = fuse_operators(pull_up_predicates(build_base_dag(vp, reg, "Colors")));
  EXPECT_EQ(count_kind(fused, OpKind::Fused), 1u);
  EXPECT_EQ(count_kind(fused, OpKind::VObjProjector), 0u);
  EXPECT_EQ(count_kind(fused, OpKind::VObjFilter), 0u);
  EXPECT_TRUE(check_dag(fused, vp).empty());
}

TEST_F(Planner, FusionDoesNotCrossAJoin) {
  const PlanDag fused = fuse_operators(pull_up_predicates(build_base_dag(vp, reg, "Close")));
  EXPECT_EQ(count_kind(fused, OpKind::Join), 1u);
  const int join = first_of(fused, OpKind::Join);
  for (const auto& op : fused.ops) {
    if (op.kind != OpKind::Fused) continue;
    bool before = false, after = false;
    for (const auto& m : op.fused) {
      if (m.kind == OpKind::RelationProjector || m.kind == OpKind::RelationFilter) {
        after = true;
      } else {
        before = true;
      }
    }
    EXPECT_FALSE(before && after) << op_label(op);
    if (after) {
      EXPECT_GT(op.id, join);
    }
  }
}

TEST_F(Planner, PullUpKeepsFiltersAfterTheirProjectors) {
  const PlanDag d = pull_up_predicates(build_base_dag(vp, reg, "Close"));
  EXPECT_TRUE(check_dag(d, vp).empty());
  // The car color filter runs before the join, the distance filter after.
  const int join = first_of(d, OpKind::Join);
  for (const auto& op : d.ops) {
    if (op.kind == OpKind::VObjFilter) {
      EXPECT_LT(op.id, join);
    }
    if (op.kind == OpKind::RelationFilter) {
      EXPECT_GT(op.id, join);
    }
  }
}

TEST_F(Planner, ClassifierRunsBeforeDetector) {
  const PlanDag d = pull_up_predicates(build_base_dag(vp, reg, "Guarded"));
  const int filt = first_of(d, OpKind::FrameFilter);
  const int det = first_of(d, OpKind::ObjectDetector);
  ASSERT_GE(filt, 0);
  ASSERT_GE(det, 0);
  EXPECT_LT(filt, det);
  EXPECT_EQ(d.op(filt).component, "has_car");
}

TEST_F(Planner, AlternativesFollowInheritanceChains) {
  EXPECT_EQ(enumerate_alternatives(vp, reg, "Colors", plain()).size(), 1u);
  const auto alts = enumerate_alternatives(vp, reg, "Pair", plain());
  ASSERT_EQ(alts.size(), 4u);
  std::set<std::string> ids;
  for (const auto& a : alts) ids.insert(a.plan_id);
  EXPECT_EQ(ids.size(), 4u);
  // Element 0 uses the most general detectors.
  EXPECT_EQ(alts[0].detectors.at(choice_key("Pair", "r")), "general_car");
  EXPECT_EQ(alts[0].detectors.at(choice_key("Pair", "o")), "general_person");
}

TEST_F(Planner, MaxAlternativesCapsEnumeration) {
  PlannerConfig pc = plain();
  pc.max_alternatives = 2;
  EXPECT_EQ(enumerate_alternatives(vp, reg, "Pair", pc).size(), 2u);
}

TEST(F1, Arithmetic) {
  std::set<FrameId> ref, cand;
  for (FrameId f = 0; f < 10; ++f) ref.insert(f);
  for (FrameId f = 2; f < 12; ++f) cand.insert(f);
  // 8 true positives, 2 false positives, 2 false negatives.
  EXPECT_DOUBLE_EQ(f1_score(ref, cand), 0.8);
  EXPECT_DOUBLE_EQ(f1_score({}, {}), 1.0);
  EXPECT_DOUBLE_EQ(f1_score({1}, {}), 0.0);
}

TEST(Selection, CheapestQualifyingThenFallback) {
  std::vector<ProfileReport> reps(3);
  reps[0] = {"a", 1.0, 100, 0, 5, {}, {}, {}};
  reps[1] = {"b", 0.95, 40, 0, 5, {}, {}, {}};
  reps[2] = {"c", 0.5, 10, 0, 5, {}, {}, {}};
  EXPECT_EQ(select_plan(reps, 0, 0.9).index, 1u);
  const Selection fb = select_plan(reps, 0, 0.99);
  EXPECT_EQ(fb.index, 0u);
  EXPECT_FALSE(fb.fallback);
  const Selection none = select_plan(reps, 0, 1.01);
  EXPECT_TRUE(none.fallback);
  EXPECT_FALSE(none.warning.empty());
  EXPECT_EQ(select_plan({reps[2]}, 0, 0.0).index, 0u);
}

TEST(Selection, TiesBreakOnOpsThenId) {
  std::vector<ProfileReport> reps(3);
  reps[0] = {"z", 1.0, 10, 0, 6, {}, {}, {}};
  reps[1] = {"y", 1.0, 10, 0, 5, {}, {}, {}};
  reps[2] = {"x", 1.0, 10, 0, 5, {}, {}, {}};
  EXPECT_EQ(select_plan(reps, 0, 0.9).index, 2u);
}

TEST_F(Planner, SaveLoadPreservesPlanId) {
  TempDir dir("plan");
  const PlanDag d = enumerate_alternatives(vp, reg, "Close").front();
  save_plan(d, dir.file("p.json"));
  const PlanDag back = load_plan(dir.file("p.json"));
  EXPECT_EQ(back.plan_id, d.plan_id);
  EXPECT_EQ(back.to_json(), d.to_json());
  EXPECT_NO_THROW(link_plan(back, vp, reg));
}

TEST_F(Planner, CorruptedPlanFileIsParseError) {
  TempDir dir("plan");
  save_plan(enumerate_alternatives(vp, reg, "Colors").front(), dir.file("p.json"));
  std::ofstream(dir.file("p.json"), std::ios::app) << "}}garbage";
  EXPECT_THROW(load_plan(dir.file("p.json")), ParseError);
  std::ofstream(dir.file("q.json")) << R"({"version": 99, "ops": []})";
  EXPECT_THROW(load_plan(dir.file("q.json")), ParseError);
}

TEST_F(Planner, LinkingAgainstAnotherRegistryFails) {
  const auto alts = enumerate_alternatives(vp, reg, "Pair", plain());
  const PlanDag& specialized = alts.back();
  EXPECT_EQ(specialized.detectors.at(choice_key("Pair", "r")), "red_car");
  const Registry bare = Registry::with_builtins();
  EXPECT_THROW(link_plan(specialized, vp, bare), LinkError);
  EXPECT_NO_THROW(link_plan(alts.front(), vp, bare));
}

TEST_F(Planner, ExplainShowsBranchesAndJoin) {
  const std::string dot = explain_dot(enumerate_alternatives(vp, reg, "Pair").front());
  EXPECT_EQ(dot.rfind("digraph", 0), 0u);
  EXPECT_NE(dot.find("Join"), std::string::npos);
  EXPECT_NE(dot.find("general_car"), std::string::npos);
  EXPECT_NE(dot.find("general_person"), std::string::npos);
}

TEST_F(Planner, PlanQueryWithOneCandidateSkipsProfiling) {
  const PlanResult r = plan_query(vp, reg, "Colors", {}, VideoMeta{}, PlannerConfig{});
  EXPECT_EQ(r.candidates.size(), 1u);
  EXPECT_TRUE(r.reports.empty());
  EXPECT_EQ(r.plan.plan_id, r.candidates.front().plan_id);
}

TEST_F(Planner, ProfilingNeedsACanary) {
  EXPECT_THROW(plan_query(vp, reg, "Pair", {}, VideoMeta{}, PlannerConfig{}), ProfilingError);
}
