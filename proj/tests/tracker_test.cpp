#include <gtest/gtest.h>

#include <set>

#include "vidq/error.hpp"
#include "vidq/tracker.hpp"

using namespace vidq;

namespace {

BBox at(double x, double y) { return {x, y, x + 20, y + 20}; }

/// Runs a single box moving +dx per frame, absent on frames in `gone`.
std::vector<TrackId> follow(const TrackerConfig& cfg, int frames, double dx, const std::set<int>& gone) {
  Tracker t(cfg);
  std::vector<TrackId> ids;
  for (int f = 0; f < frames; ++f) {
    if (gone.count(f)) {
      t.step(f, {});
      continue;
    }
    const auto r = t.step(f, {at(10 + dx * f, 50)});
    if (r.assignment[0]) ids.push_back(*r.assignment[0]);
  }
  return ids;
}

}  // namespace

TEST(Kalman, PredictAdvancesCenterByVelocity) {
  KalmanState s = KalmanState::from_bbox(at(0, 0));
  s.x(4) = 3.0;
  s.x(5) = -1.0;
  const double trace_before = s.P.trace();
  const KalmanState p = predict(s);
  EXPECT_DOUBLE_EQ(p.x(0), s.x(0) + 3.0);
  EXPECT_DOUBLE_EQ(p.x(1), s.x(1) - 1.0);
  EXPECT_GT(p.P.trace(), trace_before);
}

TEST(Kalman, UpdateMovesTowardMeasurementAndShrinksCovariance) {
  const KalmanState s = KalmanState::from_bbox(at(0, 0));
  const KalmanState u = update(s, at(4, 0));
  EXPECT_GT(u.x(0), s.x(0));
  EXPECT_LT(u.x(0), s.x(0) + 4.0);
  EXPECT_LT(u.P.trace(), s.P.trace());
}

TEST(Kalman, BoxRoundTrip) {
  const BBox b{10, 20, 50, 40};
  const BBox r = KalmanState::from_bbox(b).to_bbox();
  EXPECT_NEAR(r.x1, b.x1, 1e-9);
  EXPECT_NEAR(r.y1, b.y1, 1e-9);
  EXPECT_NEAR(r.x2, b.x2, 1e-9);
  EXPECT_NEAR(r.y2, b.y2, 1e-9);
}

TEST(Associate, IdenticalBoxesMatchOneToOne) {
  const std::vector<BBox> boxes{at(0, 0), at(100, 100)};
  const Association a = associate(boxes, boxes, 0.3);
  EXPECT_EQ(a.matches, (std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}, {1, 1}}));
  EXPECT_TRUE(a.unmatched_tracks.empty());
  EXPECT_TRUE(a.unmatched_detections.empty());
}

TEST(Associate, DisjointBoxesNeverMatch) {
  const Association a = associate({at(0, 0)}, {at(200, 200)}, 0.3);
  EXPECT_TRUE(a.matches.empty());
  EXPECT_EQ(a.unmatched_tracks, std::vector<std::size_t>{0});
  EXPECT_EQ(a.unmatched_detections, std::vector<std::size_t>{0});
}

TEST(Associate, GreedyByScore) {
  const Association a = associate_scores({{0.9, 0.3}, {0.4, 0.8}}, 0.5);
  EXPECT_EQ(a.matches, (std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}, {1, 1}}));
}

TEST(Associate, GreedyTakesBestPairFirst) {
  // Track 0 prefers detection 1 only slightly less than track 1 does.
  const Association a = associate_scores({{0.6, 0.7}, {0.0, 0.9}}, 0.5);
  EXPECT_EQ(a.matches, (std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}, {1, 1}}));
}

TEST(Associate, EmptyInputs) {
  EXPECT_TRUE(associate({}, {}, 0.3).matches.empty());
  EXPECT_EQ(associate({}, {at(0, 0)}, 0.3).unmatched_detections.size(), 1u);
}

TEST(TrackerRun, LinearObjectKeepsOneTrack) {
  const auto ids = follow({}, 40, 2.0, {});
  ASSERT_EQ(ids.size(), 40u);
  EXPECT_EQ(std::set<TrackId>(ids.begin(), ids.end()).size(), 1u);
}

TEST(TrackerRun, ShortDropoutKeepsIdentity) {
  TrackerConfig cfg;
  cfg.max_age = 3;
  const auto ids = follow(cfg, 20, 1.0, {10, 11});
  EXPECT_EQ(std::set<TrackId>(ids.begin(), ids.end()).size(), 1u);
}

TEST(TrackerRun, LongDropoutStartsNewTrack) {
  TrackerConfig cfg;
  cfg.max_age = 3;
  const auto ids = follow(cfg, 20, 1.0, {10, 11, 12, 13, 14});
  EXPECT_EQ(std::set<TrackId>(ids.begin(), ids.end()).size(), 2u);
}

TEST(TrackerRun, MinHitsHoldsBackTentativeTracks) {
  TrackerConfig cfg;
  cfg.min_hits = 3;
  Tracker t(cfg);
  EXPECT_FALSE(t.step(0, {at(0, 0)}).assignment[0].has_value());
  EXPECT_FALSE(t.step(1, {at(1, 0)}).assignment[0].has_value());
  const auto r = t.step(2, {at(2, 0)});
  ASSERT_TRUE(r.assignment[0].has_value());
  EXPECT_TRUE(r.continues[0]);
}

TEST(TrackerRun, TwoSeparatedObjectsGetDistinctIds) {
  Tracker t;
  std::set<TrackId> a, b;
  for (int f = 0; f < 20; ++f) {
    const auto r = t.step(f, {at(10 + f, 10), at(10 + f, 200)});
    a.insert(*r.assignment[0]);
    b.insert(*r.assignment[1]);
  }
  EXPECT_EQ(a.size(), 1u);
  EXPECT_EQ(b.size(), 1u);
  EXPECT_NE(*a.begin(), *b.begin());
}

TEST(TrackerRun, SteppingBackwardsIsAnError) {
  Tracker t;
  t.step(5, {});
  EXPECT_THROW(t.step(5, {}), InternalError);
}

TEST(TrackerConfigCheck, RejectsBadValues) {
  TrackerConfig cfg;
  cfg.iou_threshold = 1.5;
  EXPECT_THROW(cfg.validate(), ConfigurationError);
  cfg = {};
  cfg.max_age = 0;
  EXPECT_THROW(Tracker{cfg}, ConfigurationError);
}
