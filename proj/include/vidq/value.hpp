#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

namespace vidq {

/// Marker for a property that has no value yet (window not full, or the
/// computation was skipped).
struct Undefined {
  bool operator==(const Undefined&) const = default;
};

/// A property value: Undefined, boolean, number, string or numeric vector.
class Value {
 public:
  using Storage = std::variant<Undefined, bool, double, std::string, std::vector<double>>;

  Value() = default;
  Value(bool b) : v_(b) {}
  Value(double d) : v_(d) {}
  Value(int i) : v_(static_cast<double>(i)) {}
  Value(std::int64_t i) : v_(static_cast<double>(i)) {}
  Value(std::string s) : v_(std::move(s)) {}
  Value(const char* s) : v_(std::string(s)) {}
  Value(std::vector<double> v) : v_(std::move(v)) {}

  bool is_undefined() const { return std::holds_alternative<Undefined>(v_); }
  bool is_bool() const { return std::holds_alternative<bool>(v_); }
  bool is_number() const { return std::holds_alternative<double>(v_); }
  bool is_string() const { return std::holds_alternative<std::string>(v_); }
  bool is_vector() const { return std::holds_alternative<std::vector<double>>(v_); }

  bool as_bool() const { return std::get<bool>(v_); }
  double as_number() const { return std::get<double>(v_); }
  const std::string& as_string() const { return std::get<std::string>(v_); }
  const std::vector<double>& as_vector() const { return std::get<std::vector<double>>(v_); }

  const Storage& storage() const { return v_; }

  /// Short type name used in diagnostics ("undefined", "bool", "number", ...).
  std::string type_name() const;

  bool operator==(const Value& other) const = default;

 private:
  Storage v_;
};

/// Undefined -> null, vectors -> arrays.
nlohmann::json to_json(const Value& v);
/// Inverse of to_json. Integers become numbers; arrays must be numeric.
Value value_from_json(const nlohmann::json& j);

std::string to_string(const Value& v);

/// Three-valued truth used by predicate evaluation.
enum class Truth : std::uint8_t { False, True, Unknown };

inline Truth truth_and(Truth a, Truth b) {
  if (a == Truth::False || b == Truth::False) return Truth::False;
  if (a == Truth::Unknown || b == Truth::Unknown) return Truth::Unknown;
  return Truth::True;
}
inline Truth truth_or(Truth a, Truth b) {
  if (a == Truth::True || b == Truth::True) return Truth::True;
  if (a == Truth::Unknown || b == Truth::Unknown) return Truth::Unknown;
  return Truth::False;
}
inline Truth truth_not(Truth a) {
  if (a == Truth::Unknown) return a;
  return a == Truth::True ? Truth::False : Truth::True;
}
inline Truth truth_of(bool b) { return b ? Truth::True : Truth::False; }

}  // namespace vidq
