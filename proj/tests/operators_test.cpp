#include <gtest/gtest.h>

#include "vidq/dsl/parser.hpp"
#include "vidq/error.hpp"
#include "vidq/operators.hpp"
#include "vidq/registry.hpp"

using namespace vidq;
using namespace vidq::ops;

namespace {

FrameGraph frames(FrameId first, FrameId last) {
  FrameGraph g;
  g.first = first;
  g.last = last;
  for (FrameId f = first; f <= last; ++f) g.frames.push_back(f);
  return g;
}

void put(FrameGraph& g, FrameId f, int det) {
  VObjInstance n;
  n.id = {f, det};
  n.class_name = "Car";
  g.nodes[n.id] = n;
}

RefResolver table(std::map<std::string, Value> values, int* calls = nullptr) {
  return [values = std::move(values), calls](const dsl::PropertyRef& r) {
    if (calls) ++*calls;
    auto it = values.find(r.text());
    return it == values.end() ? Value{} : it->second;
  };
}

Value run_fn(const std::string& name, PropertyInput in) {
  static const Registry reg = Registry::with_builtins();
  return reg.apply_property(reg.get(ComponentKind::PropertyFn, name), in);
}

std::set<FrameId> range(FrameId a, FrameId b) {
  std::set<FrameId> s;
  for (FrameId f = a; f <= b; ++f) s.insert(f);
  return s;
}

std::set<FrameId> fired_frames(const std::set<std::pair<TrackKey, FrameId>>& fired) {
  std::set<FrameId> s;
  for (const auto& [k, f] : fired) s.insert(f);
  return s;
}

}  // namespace

TEST(Kleene, CompareWithUndefinedIsUnknown) {
  EXPECT_EQ(compare(Value{}, dsl::CmpOp::Eq, {Value("red")}), Truth::Unknown);
  EXPECT_EQ(compare(Value("red"), dsl::CmpOp::Eq, {Value("red")}), Truth::True);
  EXPECT_EQ(compare(Value(3), dsl::CmpOp::In, {Value(1), Value(3)}), Truth::True);
  EXPECT_EQ(compare(Value(2), dsl::CmpOp::Gt, {Value(5)}), Truth::False);
}

TEST(Kleene, ConnectiveTables) {
  const auto r = table({{"a.t", Value(1)}, {"a.f", Value(0)}});
  auto eval = [&](const std::string& src) { return evaluate(dsl::parse_predicate(src), r); };
  EXPECT_EQ(eval("a.u == 1 and a.f == 1"), Truth::False);
  EXPECT_EQ(eval("a.u == 1 and a.t == 1"), Truth::Unknown);
  EXPECT_EQ(eval("a.u == 1 or a.t == 1"), Truth::True);
  EXPECT_EQ(eval("a.u == 1 or a.f == 1"), Truth::Unknown);
  EXPECT_EQ(eval("not a.u == 1"), Truth::Unknown);
  EXPECT_EQ(eval("not a.f == 1"), Truth::True);
}

TEST(Kleene, OrShortCircuitsLeftToRight) {
  int calls = 0;
  const auto r = table({{"a.t", Value(1)}}, &calls);
  EXPECT_EQ(evaluate(dsl::parse_predicate("a.t == 1 or a.x == 1 or a.y == 1"), r), Truth::True);
  EXPECT_EQ(calls, 1);
  calls = 0;
  EXPECT_EQ(evaluate(dsl::parse_predicate("a.t == 0 and a.x == 1"), r), Truth::False);
  EXPECT_EQ(calls, 1);
}

TEST(FrameFilters, SimilarToPrevKeepsChanges) {
  Registration reg;
  reg.name = "similar_to_prev";
  reg.kind = ComponentKind::FrameFilter;
  reg.filter_kind = FrameFilterKind::SimilarToPrev;
  reg.channel = "motion";
  reg.window = 1;
  FrameFilterInstance inst(reg);
  std::set<FrameId> kept;
  const double values[] = {5, 5, 7, 7};
  for (FrameId f = 0; f < 4; ++f) {
    TraceRecord rec;
    rec.frame_id = f;
    rec.channels["motion"] = values[f];
    if (inst.keep(rec)) kept.insert(f);
  }
  EXPECT_EQ(kept, (std::set<FrameId>{0, 2}));
}

TEST(FrameFilters, DroppedFramesTakeTheirNodes) {
  FrameGraph g = frames(0, 3);
  for (FrameId f = 0; f < 4; ++f) put(g, f, 0);
  const FrameGraph out = frame_filter(g, [](FrameId f) { return f % 2 == 0; });
  EXPECT_EQ(out.frames, (std::vector<FrameId>{0, 2}));
  EXPECT_EQ(out.nodes.size(), 2u);
}

TEST(Detector, AddsNodesOnAliveFramesOnly) {
  FrameGraph g = frames(0, 1);
  g.frames = {1};
  std::vector<TraceRecord> recs(2);
  recs[0].frame_id = 0;
  recs[1].frame_id = 1;
  recs[1].detections.resize(3);
  const std::map<FrameId, const TraceRecord*> by_frame{{0, &recs[0]}, {1, &recs[1]}};
  const FrameGraph out = object_detector(g, by_frame, [](const TraceRecord&) { return std::vector<int>{0, 2}; }, "Car");
  EXPECT_EQ(out.nodes.size(), 2u);
  EXPECT_TRUE(out.nodes.count(NodeId{1, 2}));
}

TEST(PropertyImpl, CenterOfBox) {
  PropertyInput in;
  in.deps = {Value(std::vector<double>{10, 10, 20, 20})};
  EXPECT_EQ(run_fn("center", in), Value(std::vector<double>{15, 15}));
}

TEST(PropertyImpl, DirectionFromWindow) {
  PropertyInput in;
  in.windows = {{Value(std::vector<double>{0, 0}), Value(std::vector<double>{4, 0}), Value(std::vector<double>{8, 1})}};
  EXPECT_EQ(run_fn("direction", in), Value("right"));
  in.windows = {{}};
  EXPECT_TRUE(run_fn("direction", in).is_undefined());
}

TEST(PropertyImpl, DistanceInMeters) {
  VideoMeta meta;
  meta.px_per_m = 10.0;
  PropertyInput in;
  in.meta = &meta;
  in.deps = {Value(std::vector<double>{0, 0}), Value(std::vector<double>{30, 40})};
  EXPECT_DOUBLE_EQ(run_fn("distance", in).as_number(), 5.0);
  meta.px_per_m.reset();
  EXPECT_THROW(run_fn("distance", in), ConfigurationError);
}

TEST(PropertyImpl, SpeedScalesByFps) {
  VideoMeta meta;
  meta.fps = 10;
  meta.px_per_m = 2.0;
  const std::map<std::string, Value> args;
  PropertyInput in;
  in.meta = &meta;
  in.args = &args;
  in.windows = {{Value(std::vector<double>{0, 0}), Value(std::vector<double>{4, 0}), Value(std::vector<double>{8, 0})}};
  // 8 px over 2 frames at 10 fps is 40 px/s, i.e. 20 m/s.
  EXPECT_DOUBLE_EQ(run_fn("speed", in).as_number(), 20.0);
}

TEST(Join, FrameIntersection) {
  FrameGraph a = frames(0, 4), b = frames(0, 4);
  for (FrameId f : {0, 1, 2}) put(a, f, 0);
  for (FrameId f : {1, 2, 3}) put(b, f, 1);
  b.frames = {0, 1, 3, 4};
  const FrameGraph j = join({a, b}, {"x", "y"});
  EXPECT_EQ(j.frames, std::vector<FrameId>{1});
  EXPECT_EQ(j.matches.size(), 1u);
  EXPECT_EQ(j.match_bindings, (std::vector<std::string>{"x", "y"}));
}

TEST(Join, CartesianProductAndRelationEdges) {
  FrameGraph a = frames(0, 0), b = frames(0, 0);
  put(a, 0, 0);
  put(a, 0, 1);
  put(b, 0, 2);
  put(b, 0, 3);
  const FrameGraph j = join({a, b}, {"p", "c"});
  ASSERT_EQ(j.matches.size(), 4u);
  const FrameGraph r = relation_projector(j, "r", 0, 1, [](const Match&) {
    return std::map<std::string, Value>{{"d", Value(1)}};
  });
  std::size_t spatial = 0;
  for (const auto& e : r.edges) spatial += e.kind == EdgeKind::SpatialRelation;
  EXPECT_EQ(spatial, 4u);
}

TEST(Join, MisalignedBranchesThrow) {
  EXPECT_THROW(join({frames(0, 3), frames(0, 4)}, {"a", "b"}), InternalError);
}

TEST(TupleFilter, DropsMatchesThenEmptyFrames) {
  FrameGraph a = frames(0, 1);
  put(a, 0, 0);
  put(a, 1, 0);
  const FrameGraph s = single_branch_matches(a, "c");
  ASSERT_EQ(s.matches.size(), 2u);
  const FrameGraph out = tuple_filter(s, [](const Match& m) { return m.frame == 1; });
  EXPECT_EQ(out.frames, std::vector<FrameId>{1});
  EXPECT_EQ(out.matches.size(), 1u);
}

TEST(Duration, FiresFromTheNthFrame) {
  const TrackKey k{1};
  EXPECT_EQ(fired_frames(eval_duration({{k, range(1, 25)}}, 20)), range(20, 25));
  EXPECT_EQ(fired_frames(eval_duration({{k, range(1, 25)}}, 1)), range(1, 25));
  EXPECT_TRUE(eval_duration({{k, range(1, 25)}}, 26).empty());
}

TEST(Duration, HoleResetsUnlessTolerated) {
  const TrackKey k{1};
  std::set<FrameId> holed = range(0, 9);
  holed.erase(5);
  EXPECT_EQ(fired_frames(eval_duration({{k, holed}}, 6)), std::set<FrameId>{});
  EXPECT_EQ(fired_frames(eval_duration({{k, holed}}, 6, 1)), range(6, 9));
}

TEST(Duration, KeysAreIndependent) {
  const auto fired = eval_duration({{{1}, range(0, 4)}, {{2}, range(3, 4)}}, 3);
  EXPECT_EQ(fired.size(), 3u);
  for (const auto& [k, f] : fired) EXPECT_EQ(k, TrackKey{1});
}

TEST(Temporal, WithinWindow) {
  const auto r = eval_temporal({100}, {120}, 30);
  EXPECT_TRUE(r.holds);
  ASSERT_EQ(r.witnesses.size(), 1u);
  EXPECT_EQ(r.witnesses[0], (std::pair<FrameId, FrameId>{100, 120}));
  EXPECT_EQ(r.occurrences, std::set<FrameId>{120});
}

TEST(Temporal, OutsideWindowOrWrongOrder) {
  EXPECT_FALSE(eval_temporal({100}, {120}, 10).holds);
  EXPECT_FALSE(eval_temporal({120}, {100}, 30).holds);
  EXPECT_FALSE(eval_temporal({}, {}, 30).holds);
}

TEST(VideoAggregate, CountsSatisfyingTracks) {
  VideoAggregator all(dsl::Quantifier::All);
  all.observe(1, Truth::True);
  all.observe(2, Truth::True);
  all.observe(2, Truth::Unknown);
  all.observe(3, Truth::True);
  all.observe(3, Truth::False);
  EXPECT_EQ(all.count_distinct(), 2);
  EXPECT_EQ(all.satisfying(), (std::vector<TrackId>{1, 2}));
  EXPECT_EQ(VideoAggregator{}.count_distinct(), 0);
}

TEST(VideoAggregate, AnyAndUnconstrained) {
  VideoAggregator any(dsl::Quantifier::Any);
  any.observe(1, Truth::False);
  any.observe(1, Truth::True);
  any.observe(2, Truth::False);
  EXPECT_EQ(any.satisfying(), std::vector<TrackId>{1});
  VideoAggregator none(dsl::Quantifier::All, false);
  none.observe(5, Truth::False);
  EXPECT_EQ(none.count_distinct(), 1);
}
