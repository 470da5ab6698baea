#include "vidq/trace_io.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "vidq/error.hpp"

namespace vidq {

using nlohmann::json;

double iou(const BBox& a, const BBox& b) {
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

void VideoMeta::validate() const {
  if (!(fps > 0)) throw ConfigurationError("fps must be positive");
  if (width <= 0 || height <= 0) throw ConfigurationError("resolution must be positive");
  if (frame_count < 0) throw ConfigurationError("frame count must be non-negative");
  if (px_per_m && !(*px_per_m > 0)) throw ConfigurationError("px_per_m must be positive");
}

VideoMeta meta_from_json(const json& j) {
  VideoMeta m;
  try {
    m.fps = j.at("fps").get<double>();
    m.width = j.at("width").get<int>();
    m.height = j.at("height").get<int>();
    m.frame_count = j.value("frames", std::int64_t{0});
    if (j.contains("px_per_m") && !j["px_per_m"].is_null()) m.px_per_m = j["px_per_m"].get<double>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("meta: ") + e.what(), 1);
  }
  m.validate();
  return m;
}

json meta_to_json(const VideoMeta& m) {
  json j = {{"fps", m.fps}, {"width", m.width}, {"height", m.height}, {"frames", m.frame_count}};
  if (m.px_per_m) j["px_per_m"] = *m.px_per_m;
  return j;
}

VideoMeta load_meta(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open meta file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what(), 1);
  }
  return meta_from_json(j);
}

void save_meta(const VideoMeta& meta, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << meta_to_json(meta).dump() << '\n';
}

namespace {

std::map<std::string, Value> attrs_from_json(const json& j) {
  std::map<std::string, Value> out;
  if (j.is_null()) return out;
  if (!j.is_object()) throw std::invalid_argument("attrs must be an object");
  for (const auto& [k, v] : j.items()) {
    if (!(v.is_string() || v.is_number() || v.is_array() || v.is_boolean())) {
      throw std::invalid_argument("attribute '" + k + "' must be a string, number or numeric array");
    }
    out.emplace(k, value_from_json(v));
  }
  return out;
}

json attrs_to_json(const std::map<std::string, Value>& attrs) {
  json j = json::object();
  for (const auto& [k, v] : attrs) j[k] = to_json(v);
  return j;
}

BBox bbox_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw std::invalid_argument("bbox must have 4 numbers");
  BBox b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
  if (!(b.x1 < b.x2) || !(b.y1 < b.y2)) throw std::invalid_argument("bbox must satisfy x1<x2, y1<y2");
  return b;
}

}  // namespace

TraceRecord parse_trace_line(std::string_view line, std::size_t line_no, const VideoMeta* bounds) {
  TraceRecord rec;
  try {
    const json j = json::parse(line);
    if (!j.is_object()) throw std::invalid_argument("record must be an object");
    const auto frame = j.at("frame").get<std::int64_t>();
    if (frame < 0) throw std::invalid_argument("frame must be non-negative");
    rec.frame_id = frame;
    if (j.contains("dets")) {
      for (const auto& d : j.at("dets")) {
        Detection det;
        det.class_name = d.at("class").get<std::string>();
        det.bbox = bbox_from_json(d.at("bbox"));
        det.score = d.value("score", 1.0);
        if (det.score < 0.0 || det.score > 1.0) throw std::invalid_argument("score must be in [0,1]");
        if (d.contains("attrs")) det.attrs = attrs_from_json(d.at("attrs"));
        if (bounds && (det.bbox.x1 < 0 || det.bbox.y1 < 0 || det.bbox.x2 > bounds->width ||
                       det.bbox.y2 > bounds->height)) {
          throw std::invalid_argument("bbox outside frame bounds");
        }
        rec.detections.push_back(std::move(det));
      }
    }
    if (j.contains("channels")) {
      for (const auto& [k, v] : j.at("channels").items()) rec.channels.emplace(k, v.get<double>());
    }
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception& e) {
    throw ParseError("line " + std::to_string(line_no) + ": " + e.what(), line_no);
  }
  return rec;
}

json record_to_json(const TraceRecord& rec) {
  json dets = json::array();
  for (const auto& d : rec.detections) {
    dets.push_back({{"class", d.class_name},
                    {"bbox", {d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2}},
                    {"score", d.score},
                    {"attrs", attrs_to_json(d.attrs)}});
  }
  json ch = json::object();
  for (const auto& [k, v] : rec.channels) ch[k] = v;
  return {{"frame", rec.frame_id}, {"dets", std::move(dets)}, {"channels", std::move(ch)}};
}

std::string serialize_record(const TraceRecord& rec) { return record_to_json(rec).dump(); }

TraceReader::TraceReader(const std::string& path, std::optional<VideoMeta> bounds)
    : in_(path), bounds_(std::move(bounds)) {
  if (!in_) throw Error("cannot open trace file " + path);
}

std::optional<TraceRecord> TraceReader::next() {
  std::string line;
  while (std::getline(in_, line)) {
    ++line_no_;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    TraceRecord rec = parse_trace_line(line, line_no_, bounds_ ? &*bounds_ : nullptr);
    if (last_frame_ && rec.frame_id <= *last_frame_) {
      throw OrderingError("line " + std::to_string(line_no_) + ": frame " + std::to_string(rec.frame_id) +
                              " does not follow frame " + std::to_string(*last_frame_),
                          line_no_);
    }
    last_frame_ = rec.frame_id;
    return rec;
  }
  return std::nullopt;
}

MemoryTrace::MemoryTrace(std::vector<TraceRecord> records) : records_(std::move(records)) {
  for (std::size_t i = 1; i < records_.size(); ++i) {
    if (records_[i].frame_id <= records_[i - 1].frame_id) {
      throw OrderingError("record " + std::to_string(i + 1) + ": frame ids not strictly increasing", i + 1);
    }
  }
}

std::optional<TraceRecord> MemoryTrace::next() {
  if (pos_ >= records_.size()) return std::nullopt;
  return records_[pos_++];
}

GapFiller::GapFiller(TraceSource& inner, std::optional<std::int64_t> frame_count)
    : inner_(inner), frame_count_(frame_count) {}

std::optional<TraceRecord> GapFiller::next() {
  if (!pending_ && !exhausted_) {
    pending_ = inner_.next();
    if (!pending_) exhausted_ = true;
  }
  if (pending_) {
    if (pending_->frame_id > next_frame_) {
      TraceRecord gap;
      gap.frame_id = next_frame_++;
      return gap;
    }
    TraceRecord out = std::move(*pending_);
    pending_.reset();
    next_frame_ = out.frame_id + 1;
    return out;
  }
  if (frame_count_ && next_frame_ < *frame_count_) {
    TraceRecord gap;
    gap.frame_id = next_frame_++;
    return gap;
  }
  return std::nullopt;
}

std::optional<TraceRecord> PrefixTrace::next() {
  auto rec = inner_.next();
  if (!rec || rec->frame_id >= limit_) return std::nullopt;
  return rec;
}

std::vector<TraceRecord> read_trace(const std::string& path, std::optional<VideoMeta> bounds) {
  TraceReader reader(path, std::move(bounds));
  std::vector<TraceRecord> out;
  while (auto rec = reader.next()) out.push_back(std::move(*rec));
  return out;
}

std::string serialize_trace(const std::vector<TraceRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += serialize_record(r);
    out += '\n';
  }
  return out;
}

void write_trace(const std::vector<TraceRecord>& records, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << serialize_trace(records);
}

Batcher::Batcher(TraceSource& source, std::size_t batch_size) : source_(source), batch_size_(batch_size) {
  if (batch_size_ == 0) throw ConfigurationError("batch size must be at least 1");
}

std::optional<FrameBatch> Batcher::next() {
  FrameBatch b;
  while (b.frames.size() < batch_size_) {
    auto rec = source_.next();
    if (!rec) break;
    b.frames.push_back(std::move(*rec));
  }
  if (b.frames.empty()) return std::nullopt;
  return b;
}

std::vector<FrameBatch> batch(std::vector<TraceRecord> records, std::size_t batch_size) {
  MemoryTrace src(std::move(records));
  Batcher batcher(src, batch_size);
  std::vector<FrameBatch> out;
  while (auto b = batcher.next()) out.push_back(std::move(*b));
  return out;
}

void GroundTruth::add(GroundTruthRecord record) {
  const FrameId f = record.frame_id;
  if (!records_.emplace(f, std::move(record)).second) {
    throw DuplicateKeyError("duplicate ground-truth frame " + std::to_string(f));
  }
}

std::optional<bool> GroundTruth::label(FrameId frame) const {
  auto it = records_.find(frame);
  if (it == records_.end()) return std::nullopt;
  return it->second.label;
}

const std::vector<TruthObject>* GroundTruth::objects(FrameId frame) const {
  auto it = records_.find(frame);
  return it == records_.end() ? nullptr : &it->second.objects;
}

GroundTruth load_ground_truth(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open ground-truth file " + path);
  GroundTruth gt;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    GroundTruthRecord rec;
    try {
      const json j = json::parse(line);
      rec.frame_id = j.at("frame").get<FrameId>();
      if (j.contains("label")) rec.label = j.at("label").get<bool>();
      if (j.contains("objects")) {
        for (const auto& o : j.at("objects")) {
          TruthObject obj;
          obj.id = o.at("id").get<std::int64_t>();
          obj.class_name = o.at("class").get<std::string>();
          if (o.contains("bbox")) obj.bbox = bbox_from_json(o.at("bbox"));
          if (o.contains("attrs")) obj.attrs = attrs_from_json(o.at("attrs"));
          rec.objects.push_back(std::move(obj));
        }
      }
    } catch (const std::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what(), line_no);
    }
    gt.add(std::move(rec));
  }
  return gt;
}

void save_ground_truth(const GroundTruth& gt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  for (const auto& [frame, rec] : gt.records()) {
    json j = {{"frame", frame}};
    if (rec.label) j["label"] = *rec.label;
    if (!rec.objects.empty()) {
      json objs = json::array();
      for (const auto& o : rec.objects) {
        objs.push_back({{"id", o.id},
                        {"class", o.class_name},
                        {"bbox", {o.bbox.x1, o.bbox.y1, o.bbox.x2, o.bbox.y2}},
                        {"attrs", attrs_to_json(o.attrs)}});
      }
      j["objects"] = std::move(objs);
    }
    out << j.dump() << '\n';
  }
}

}  // namespace vidq
