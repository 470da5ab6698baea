#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vidq/value.hpp"

namespace vidq {

using FrameId = std::int64_t;

/// Axis-aligned pixel box (x1, y1) top-left, (x2, y2) bottom-right.
struct BBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return (x1 + x2) / 2.0; }
  double cy() const { return (y1 + y2) / 2.0; }

  bool operator==(const BBox&) const = default;
};

double iou(const BBox& a, const BBox& b);

struct Detection {
  std::string class_name;
  BBox bbox;
  double score = 1.0;
  std::map<std::string, Value> attrs;

  bool operator==(const Detection&) const = default;
};

struct TraceRecord {
  FrameId frame_id = 0;
  std::vector<Detection> detections;
  std::map<std::string, double> channels;

  bool operator==(const TraceRecord&) const = default;
};

struct VideoMeta {
  double fps = 30.0;
  int width = 1920;
  int height = 1080;
  std::int64_t frame_count = 0;
  std::optional<double> px_per_m;

  /// Throws ConfigurationError when an invariant is broken.
  void validate() const;
  bool operator==(const VideoMeta&) const = default;
};

VideoMeta meta_from_json(const nlohmann::json& j);
nlohmann::json meta_to_json(const VideoMeta& m);
VideoMeta load_meta(const std::string& path);
void save_meta(const VideoMeta& meta, const std::string& path);

/// Parses one trace line. `line_no` is 1-based and used in errors. When
/// `bounds` is given, boxes must lie inside the frame.
TraceRecord parse_trace_line(std::string_view line, std::size_t line_no,
                             const VideoMeta* bounds = nullptr);

/// Canonical single-line form: keys sorted, no whitespace.
std::string serialize_record(const TraceRecord& rec);
nlohmann::json record_to_json(const TraceRecord& rec);

/// Pull-based record stream.
class TraceSource {
 public:
  virtual ~TraceSource() = default;
  virtual std::optional<TraceRecord> next() = 0;
};

/// Streams a line-delimited trace file. Blank lines are skipped. Enforces
/// strictly increasing frame ids.
class TraceReader : public TraceSource {
 public:
  explicit TraceReader(const std::string& path, std::optional<VideoMeta> bounds = std::nullopt);
  std::optional<TraceRecord> next() override;

 private:
  std::ifstream in_;
  std::optional<VideoMeta> bounds_;
  std::size_t line_no_ = 0;
  std::optional<FrameId> last_frame_;
};

/// Serves records from memory; checks ordering like TraceReader.
class MemoryTrace : public TraceSource {
 public:
  explicit MemoryTrace(std::vector<TraceRecord> records);
  std::optional<TraceRecord> next() override;

 private:
  std::vector<TraceRecord> records_;
  std::size_t pos_ = 0;
};

/// Inserts empty records for frame ids missing between consecutive records,
/// and (optionally) up to `frame_count - 1` at the end of the stream.
class GapFiller : public TraceSource {
 public:
  GapFiller(TraceSource& inner, std::optional<std::int64_t> frame_count = std::nullopt);
  std::optional<TraceRecord> next() override;

 private:
  TraceSource& inner_;
  std::optional<std::int64_t> frame_count_;
  std::optional<TraceRecord> pending_;
  FrameId next_frame_ = 0;
  bool exhausted_ = false;
};

/// Stops after the first `limit` frames (by frame id).
class PrefixTrace : public TraceSource {
 public:
  PrefixTrace(TraceSource& inner, std::int64_t limit) : inner_(inner), limit_(limit) {}
  std::optional<TraceRecord> next() override;

 private:
  TraceSource& inner_;
  std::int64_t limit_;
};

std::vector<TraceRecord> read_trace(const std::string& path,
                                    std::optional<VideoMeta> bounds = std::nullopt);
void write_trace(const std::vector<TraceRecord>& records, const std::string& path);
std::string serialize_trace(const std::vector<TraceRecord>& records);

struct FrameBatch {
  std::vector<TraceRecord> frames;
  bool empty() const { return frames.empty(); }
  std::size_t size() const { return frames.size(); }
};

/// Groups a stream into consecutive batches of at most `batch_size` frames.
class Batcher {
 public:
  Batcher(TraceSource& source, std::size_t batch_size);
  std::optional<FrameBatch> next();

 private:
  TraceSource& source_;
  std::size_t batch_size_;
};

std::vector<FrameBatch> batch(std::vector<TraceRecord> records, std::size_t batch_size);

struct TruthObject {
  std::int64_t id = 0;
  std::string class_name;
  BBox bbox;
  std::map<std::string, Value> attrs;

  bool operator==(const TruthObject&) const = default;
};

struct GroundTruthRecord {
  FrameId frame_id = 0;
  std::optional<bool> label;
  std::vector<TruthObject> objects;
};

/// Per-frame labels and/or true object identities.
class GroundTruth {
 public:
  /// Throws DuplicateKeyError if the frame is already present.
  void add(GroundTruthRecord record);
  /// nullopt means the frame carries no label ("absent").
  std::optional<bool> label(FrameId frame) const;
  const std::vector<TruthObject>* objects(FrameId frame) const;
  bool contains(FrameId frame) const { return records_.count(frame) > 0; }
  std::size_t size() const { return records_.size(); }
  const std::map<FrameId, GroundTruthRecord>& records() const { return records_; }

 private:
  std::map<FrameId, GroundTruthRecord> records_;
};

GroundTruth load_ground_truth(const std::string& path);
void save_ground_truth(const GroundTruth& gt, const std::string& path);

}  // namespace vidq
