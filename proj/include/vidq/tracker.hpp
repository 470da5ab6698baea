#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <optional>
#include <utility>
#include <vector>

#include "vidq/datamodel.hpp"
#include "vidq/trace_io.hpp"

namespace vidq {

struct TrackerConfig {
  double iou_threshold = 0.3;
  int max_age = 30;
  int min_hits = 1;
  double process_noise = 1.0;
  double measurement_noise = 1.0;

  void validate() const;
};

/// Constant-velocity state (cx, cy, area, aspect, vcx, vcy, varea).
struct KalmanState {
  Eigen::Matrix<double, 7, 1> x = Eigen::Matrix<double, 7, 1>::Zero();
  Eigen::Matrix<double, 7, 7> P = Eigen::Matrix<double, 7, 7>::Identity();

  static KalmanState from_bbox(const BBox& b);
  BBox to_bbox() const;
};

KalmanState predict(const KalmanState& s, const TrackerConfig& cfg = {});
KalmanState update(const KalmanState& s, const BBox& measurement, const TrackerConfig& cfg = {});

struct Association {
  std::vector<std::pair<std::size_t, std::size_t>> matches;  // (track, detection)
  std::vector<std::size_t> unmatched_tracks;
  std::vector<std::size_t> unmatched_detections;
};

/// Greedy matching by descending score; ties broken by (track, detection)
/// index so the result never depends on sort stability.
Association associate_scores(const std::vector<std::vector<double>>& scores, double threshold);
Association associate(const std::vector<BBox>& tracks, const std::vector<BBox>& detections, double threshold);

struct KalmanTrack {
  TrackId id = 0;
  KalmanState state;
  int hits = 0;
  int time_since_update = 0;
  FrameId last_frame = 0;
};

struct StepResult {
  /// Track id per input detection; nullopt while the track is tentative.
  std::vector<std::optional<TrackId>> assignment;
  /// True for detections whose track was also matched on the previous frame.
  std::vector<bool> continues;
};

/// SORT-style tracker for one object type.
class Tracker {
 public:
  explicit Tracker(TrackerConfig cfg = {}, TrackId first_id = 1);

  StepResult step(FrameId frame, const std::vector<BBox>& detections);
  const std::vector<KalmanTrack>& tracks() const { return tracks_; }
  const TrackerConfig& config() const { return cfg_; }

 private:
  TrackerConfig cfg_;
  TrackId next_id_;
  std::vector<KalmanTrack> tracks_;
  std::optional<FrameId> last_frame_;
};

}  // namespace vidq
