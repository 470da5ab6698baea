#include "vidq/value.hpp"

#include <cmath>
#include <cstdint>

#include "vidq/error.hpp"

namespace vidq {

std::string Value::type_name() const {
  switch (v_.index()) {
    case 0: return "undefined";
    case 1: return "bool";
    case 2: return "number";
    case 3: return "string";
    default: return "vector";
  }
}

nlohmann::json to_json(const Value& v) {
  return std::visit(
      [](const auto& x) -> nlohmann::json {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, Undefined>) {
          return nullptr;
        } else if constexpr (std::is_same_v<T, double>) {
          // Integral numbers print without a fraction (ids, frame numbers).
          if (std::nearbyint(x) == x && std::abs(x) < 9.0e15) return static_cast<std::int64_t>(x);
          return x;
        } else {
          return x;
        }
      },
      v.storage());
}

Value value_from_json(const nlohmann::json& j) {
  if (j.is_null()) return Value{};
  if (j.is_boolean()) return Value(j.get<bool>());
  if (j.is_number()) return Value(j.get<double>());
  if (j.is_string()) return Value(j.get<std::string>());
  if (j.is_array()) {
    std::vector<double> out;
    out.reserve(j.size());
    for (const auto& e : j) {
      if (!e.is_number()) throw ParseError("vector values must be numeric", 0);
      out.push_back(e.get<double>());
    }
    return Value(std::move(out));
  }
  throw ParseError("unsupported value type: " + std::string(j.type_name()), 0);
}

std::string to_string(const Value& v) {
  if (v.is_undefined()) return "undefined";
  return to_json(v).dump();
}

}  // namespace vidq
