#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vidq/dsl/validate.hpp"
#include "vidq/trace_io.hpp"
#include "vidq/value.hpp"

namespace vidq {

/// Detection index of the single per-frame node the scene detector emits.
inline constexpr int kSceneNode = -1;

enum class ComponentKind { Detector, PropertyFn, Classifier, FrameFilter };

std::string to_string(ComponentKind k);

struct ErrorProfile {
  double miss_rate = 0.0;
  double false_rate = 0.0;
  std::uint64_t seed = 0;
};

/// Inputs handed to a property-function body.
struct PropertyInput {
  const std::map<std::string, Value>* args = nullptr;
  /// Stateless: current value of each dependency, in declared order.
  std::vector<Value> deps;
  /// Stateful: window of each dependency, oldest first.
  std::vector<std::vector<Value>> windows;
  const std::map<std::string, Value>* attrs = nullptr;
  const std::map<std::string, double>* channels = nullptr;
  const VideoMeta* meta = nullptr;

  /// Argument lookup with fallback to `fallback`.
  Value arg(const std::string& name, Value fallback = {}) const;
};

using PropertyImpl = std::function<Value(const PropertyInput&)>;

enum class FrameFilterKind { SimilarToPrev, ChannelThreshold };

struct Registration {
  std::string name;
  ComponentKind kind = ComponentKind::Detector;
  double cost_units = 1.0;
  std::optional<ErrorProfile> error_profile;

  // Detector / Classifier: which trace detections count. A detector with a
  // non-empty `match` is specialized.
  std::vector<std::string> classes;
  std::map<std::string, Value> match;
  double score_threshold = 0.0;

  // PropertyFn
  std::string impl;  // built-in body this function runs
  dsl::ValueType result_type = dsl::ValueType::Any;
  std::map<std::string, Value> default_args;

  // FrameFilter
  FrameFilterKind filter_kind = FrameFilterKind::ChannelThreshold;
  std::string channel;
  std::size_t window = 1;
  double tolerance = 0.0;
  std::string op = ">";
  double threshold = 0.0;

  bool specialized() const { return kind == ComponentKind::Detector && !match.empty(); }
};

/// Stateful per-run instance of a frame filter (similar_to_prev keeps the
/// previous channel values).
class FrameFilterInstance {
 public:
  explicit FrameFilterInstance(const Registration& reg) : reg_(reg) {}
  bool keep(const TraceRecord& rec);

 private:
  const Registration& reg_;
  std::vector<double> history_;
};

class Registry : public dsl::ComponentCatalog {
 public:
  /// Empty registry; use with_builtins() for the shipped catalog.
  Registry() = default;
  static Registry with_builtins();
  /// Built-ins plus the manifest's registrations. `seed` is mixed into every
  /// error-profile seed.
  static Registry from_manifest(const nlohmann::json& manifest, std::uint64_t seed = 0);
  static Registry load(const std::string& path, std::uint64_t seed = 0);

  /// Throws RegistrationError on a duplicate name within the kind or a
  /// broken invariant.
  void add(Registration reg);
  const Registration* find(ComponentKind kind, const std::string& name) const;
  const Registration& get(ComponentKind kind, const std::string& name) const;
  /// Classifier or frame filter named in a `filter` clause.
  const Registration* find_filter(const std::string& name) const;
  std::vector<const Registration*> all(ComponentKind kind) const;

  std::uint64_t seed() const { return seed_; }
  void set_seed(std::uint64_t s) { seed_ = s; }

  /// Trace-detection indices the detector emits on this record.
  std::vector<int> detect(const Registration& detector, const TraceRecord& rec) const;
  /// Presence classifier with seeded error flips.
  bool classify_frame(const Registration& classifier, const TraceRecord& rec) const;
  Value apply_property(const Registration& fn, const PropertyInput& in) const;

  bool has_detector(const std::string& name) const override;
  bool has_property_fn(const std::string& name) const override;
  bool has_frame_filter(const std::string& name) const override;
  dsl::ValueType property_fn_type(const std::string& name) const override;

  /// Canonical JSON of every registration (used to key caches).
  nlohmann::json to_json() const;

 private:
  std::uint64_t effective_seed(const ErrorProfile& p) const;

  std::map<std::pair<ComponentKind, std::string>, Registration> regs_;
  std::uint64_t seed_ = 0;
};

/// Built-in property-function body by name, or nullptr.
const PropertyImpl* builtin_property_impl(const std::string& impl);

/// `direction` vocabulary helper: dominant axis of (dx, dy) in image
/// coordinates (+y points down).
std::string direction_of(double dx, double dy, double min_displacement = 1.0);

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace vidq
