#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

namespace mvdb {

using Value = std::int32_t;

/// Sorted, duplicate-free set of values. Input ranges are always small.
using ValueSet = std::vector<Value>;

inline bool contains(const ValueSet& set, Value v) {
  return std::binary_search(set.begin(), set.end(), v);
}

enum class PrimKind : std::uint8_t { In, Out };

/// Built-in primitive table. The numeric value is the primitive's id in the
/// table; programs import primitives by name and map call indices onto ids.
enum class PrimId : std::uint8_t {
  DigitalRead,
  ColorSensor,
  DigitalWrite,
  Rotate,
  Delay,
};

struct PrimitiveInfo {
  PrimId id;
  std::string_view name;
  PrimKind kind;
  std::uint32_t arity;
  /// Range before dependency rules are applied (In only).
  ValueSet base_range;
};

inline const std::array<PrimitiveInfo, 5>& primitive_table() {
  static const std::array<PrimitiveInfo, 5> table{{
      {PrimId::DigitalRead, "digital_read", PrimKind::In, 1, {0, 1}},
      {PrimId::ColorSensor, "color_sensor", PrimKind::In, 0, {0, 1, 2, 3, 4}},
      {PrimId::DigitalWrite, "digital_write", PrimKind::Out, 2, {}},
      {PrimId::Rotate, "rotate", PrimKind::Out, 2, {}},
      {PrimId::Delay, "delay", PrimKind::Out, 1, {}},
  }};
  return table;
}

inline const PrimitiveInfo& primitive_info(PrimId id) {
  return primitive_table()[static_cast<std::size_t>(id)];
}

inline std::optional<PrimId> find_primitive(std::string_view name) {
  for (const auto& p : primitive_table()) {
    if (p.name == name) return p.id;
  }
  return std::nullopt;
}

}  // namespace mvdb
