#include "vidq/tracker.hpp"

#include <algorithm>
#include <cmath>

#include "vidq/error.hpp"

namespace vidq {

namespace {

using Mat7 = Eigen::Matrix<double, 7, 7>;
using Mat4 = Eigen::Matrix<double, 4, 4>;
using Mat47 = Eigen::Matrix<double, 4, 7>;
using Vec4 = Eigen::Matrix<double, 4, 1>;

Mat7 transition() {
  Mat7 F = Mat7::Identity();
  F(0, 4) = F(1, 5) = F(2, 6) = 1.0;
  return F;
}

Mat47 observation() {
  Mat47 H = Mat47::Zero();
  for (int i = 0; i < 4; ++i) H(i, i) = 1.0;
  return H;
}

Mat7 process_noise(double scale) {
  Mat7 Q = Mat7::Identity();
  Q(6, 6) *= 0.01;
  for (int i = 4; i < 7; ++i) Q(i, i) *= 0.01;
  return Q * scale;
}

Mat4 measurement_noise(double scale) {
  Mat4 R = Mat4::Identity();
  R(2, 2) *= 10.0;
  R(3, 3) *= 10.0;
  return R * scale;
}

Vec4 measure(const BBox& b) {
  Vec4 z;
  z << b.cx(), b.cy(), b.area(), b.width() / b.height();
  return z;
}

}  // namespace

void TrackerConfig::validate() const {
  if (!(iou_threshold > 0 && iou_threshold < 1)) throw ConfigurationError("tracker iou_threshold must be in (0,1)");
  if (max_age < 1) throw ConfigurationError("tracker max_age must be positive");
  if (min_hits < 1) throw ConfigurationError("tracker min_hits must be positive");
  if (!(process_noise > 0) || !(measurement_noise > 0)) {
    throw ConfigurationError("tracker noise scales must be positive");
  }
}

KalmanState KalmanState::from_bbox(const BBox& b) {
  KalmanState s;
  s.x.head<4>() = measure(b);
  s.P = Mat7::Identity() * 10.0;
  for (int i = 4; i < 7; ++i) s.P(i, i) *= 1000.0;
  return s;
}

BBox KalmanState::to_bbox() const {
  const double area = std::max(x(2), 1e-9);
  const double aspect = std::max(x(3), 1e-9);
  const double w = std::sqrt(area * aspect);
  const double h = area / w;
  return {x(0) - w / 2, x(1) - h / 2, x(0) + w / 2, x(1) + h / 2};
}

KalmanState predict(const KalmanState& s, const TrackerConfig& cfg) {
  KalmanState out = s;
  if (out.x(6) + out.x(2) <= 0) out.x(6) = 0;
  static const Mat7 F = transition();
  out.x = F * out.x;
  out.P = F * out.P * F.transpose() + process_noise(cfg.process_noise);
  out.P = (out.P + out.P.transpose()) / 2.0;
  return out;
}

KalmanState update(const KalmanState& s, const BBox& measurement, const TrackerConfig& cfg) {
  static const Mat47 H = observation();
  KalmanState out = s;
  const Vec4 y = measure(measurement) - H * s.x;
  const Mat4 S = H * s.P * H.transpose() + measurement_noise(cfg.measurement_noise);
  const Eigen::Matrix<double, 7, 4> K = s.P * H.transpose() * S.inverse();
  out.x = s.x + K * y;
  // Joseph form keeps P symmetric positive semi-definite.
  const Mat7 I_KH = Mat7::Identity() - K * H;
  out.P = I_KH * s.P * I_KH.transpose() + K * measurement_noise(cfg.measurement_noise) * K.transpose();
  out.P = (out.P + out.P.transpose()) / 2.0;
  return out;
}

Association associate_scores(const std::vector<std::vector<double>>& scores, double threshold) {
  struct Cand {
    double score;
    std::size_t t, d;
  };
  const std::size_t nt = scores.size();
  const std::size_t nd = nt ? scores.front().size() : 0;
  std::vector<Cand> cands;
  for (std::size_t t = 0; t < nt; ++t) {
    for (std::size_t d = 0; d < nd; ++d) {
      if (scores[t][d] >= threshold) cands.push_back({scores[t][d], t, d});
    }
  }
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.t != b.t) return a.t < b.t;
    return a.d < b.d;
  });
  std::vector<bool> used_t(nt, false), used_d(nd, false);
  Association out;
  for (const auto& c : cands) {
    if (used_t[c.t] || used_d[c.d]) continue;
    used_t[c.t] = used_d[c.d] = true;
    out.matches.emplace_back(c.t, c.d);
  }
  std::sort(out.matches.begin(), out.matches.end());
  for (std::size_t t = 0; t < nt; ++t) {
    if (!used_t[t]) out.unmatched_tracks.push_back(t);
  }
  for (std::size_t d = 0; d < nd; ++d) {
    if (!used_d[d]) out.unmatched_detections.push_back(d);
  }
  return out;
}

Association associate(const std::vector<BBox>& tracks, const std::vector<BBox>& detections, double threshold) {
  std::vector<std::vector<double>> m(tracks.size(), std::vector<double>(detections.size()));
  for (std::size_t t = 0; t < tracks.size(); ++t) {
    for (std::size_t d = 0; d < detections.size(); ++d) m[t][d] = iou(tracks[t], detections[d]);
  }
  if (tracks.empty()) {
    Association out;
    for (std::size_t d = 0; d < detections.size(); ++d) out.unmatched_detections.push_back(d);
    return out;
  }
  return associate_scores(m, threshold);
}

Tracker::Tracker(TrackerConfig cfg, TrackId first_id) : cfg_(cfg), next_id_(first_id) { cfg_.validate(); }

StepResult Tracker::step(FrameId frame, const std::vector<BBox>& detections) {
  if (last_frame_ && frame <= *last_frame_) {
    throw InternalError("tracker stepped backwards to frame " + std::to_string(frame));
  }
  const FrameId elapsed = last_frame_ ? frame - *last_frame_ : 1;
  for (auto& t : tracks_) {
    for (FrameId i = 0; i < elapsed; ++i) t.state = predict(t.state, cfg_);
    t.time_since_update += static_cast<int>(elapsed);
  }

  std::vector<BBox> predicted;
  predicted.reserve(tracks_.size());
  for (const auto& t : tracks_) predicted.push_back(t.state.to_bbox());
  const Association a = associate(predicted, detections, cfg_.iou_threshold);

  StepResult r;
  r.assignment.assign(detections.size(), std::nullopt);
  r.continues.assign(detections.size(), false);
  for (const auto& [ti, di] : a.matches) {
    KalmanTrack& t = tracks_[ti];
    const bool consecutive = t.last_frame == frame - 1 && t.time_since_update == 1;
    t.state = update(t.state, detections[di], cfg_);
    t.hits += 1;
    t.time_since_update = 0;
    t.last_frame = frame;
    if (t.hits >= cfg_.min_hits) {
      r.assignment[di] = t.id;
      r.continues[di] = consecutive;
    }
  }
  std::vector<KalmanTrack> spawned;
  for (std::size_t di : a.unmatched_detections) {
    KalmanTrack t;
    t.id = next_id_++;
    t.state = KalmanState::from_bbox(detections[di]);
    t.hits = 1;
    t.last_frame = frame;
    if (t.hits >= cfg_.min_hits) r.assignment[di] = t.id;
    spawned.push_back(std::move(t));
  }
  tracks_.erase(std::remove_if(tracks_.begin(), tracks_.end(),
                               [&](const KalmanTrack& t) { return t.time_since_update > cfg_.max_age; }),
                tracks_.end());
  tracks_.insert(tracks_.end(), spawned.begin(), spawned.end());
  last_frame_ = frame;
  return r;
}

}  // namespace vidq
