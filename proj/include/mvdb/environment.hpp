#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mvdb/primitives.hpp"

namespace mvdb {

class PrimitiveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Where a sensor's live readings come from. Sensors without an entry are
/// sampled from the primitive's range.
struct SensorSource {
  enum class Kind : std::uint8_t { Fixed, Script };
  Kind kind = Kind::Fixed;
  std::vector<Value> values;  // one value for Fixed

  friend bool operator==(const SensorSource&, const SensorSource&) = default;
};

/// "When pin `pin` reads `level`, `prim` called with `args` returns `forced`."
/// A disengaged argument matches anything.
struct DependencyRule {
  int pin = 0;
  int level = 0;
  PrimId prim = PrimId::DigitalRead;
  std::vector<std::optional<Value>> args;
  Value forced = 0;

  bool matches(PrimId p, const std::vector<Value>& actual) const {
    if (p != prim || actual.size() != args.size()) return false;
    for (std::size_t i = 0; i < args.size(); ++i) {
      if (args[i] && *args[i] != actual[i]) return false;
    }
    return true;
  }

  friend bool operator==(const DependencyRule&, const DependencyRule&) = default;
};

/// Sensor key for an input call: "color" for color_sensor(), the pin number
/// for digital_read(pin).
inline std::string sensor_key(PrimId prim, const std::vector<Value>& args) {
  if (prim == PrimId::ColorSensor) return "color";
  return args.empty() ? std::string{} : std::to_string(args[0]);
}

/// The simulated external world. Equality covers everything except the
/// scripted-sensor cursors.
struct Environment {
  std::map<int, int> pins;      // pin -> level in {0, 1}
  std::map<int, int> encoders;  // motor -> angle in degrees
  std::map<std::string, SensorSource> sensors;
  std::vector<DependencyRule> rules;
  std::map<std::string, std::size_t> script_cursors;

  int pin(int id) const {
    auto it = pins.find(id);
    return it == pins.end() ? 0 : it->second;
  }
  int angle(int motor) const {
    auto it = encoders.find(motor);
    return it == encoders.end() ? 0 : it->second;
  }

  friend bool operator==(const Environment& a, const Environment& b) {
    return a.pins == b.pins && a.encoders == b.encoders && a.sensors == b.sensors &&
           a.rules == b.rules;
  }
};

/// The serialized external state: exactly what output primitives can touch.
struct ExternalState {
  std::vector<std::pair<int, int>> pins;
  std::vector<std::pair<int, int>> motors;

  friend bool operator==(const ExternalState&, const ExternalState&) = default;
};

inline ExternalState serialize_external(const Environment& env) {
  ExternalState s;
  s.pins.assign(env.pins.begin(), env.pins.end());
  s.motors.assign(env.encoders.begin(), env.encoders.end());
  return s;
}

inline Environment restore_external(Environment env, const ExternalState& s) {
  env.pins = {s.pins.begin(), s.pins.end()};
  env.encoders = {s.motors.begin(), s.motors.end()};
  return env;
}

/// A captured piece of external state. `prior` is empty when the component
/// did not exist before the primitive ran.
struct CapturedComponent {
  enum class Kind : std::uint8_t { Pin, Motor };
  Kind kind = Kind::Pin;
  int id = 0;
  std::optional<int> prior;

  friend bool operator==(const CapturedComponent&, const CapturedComponent&) = default;
};

/// The deterministic reversal of one output primitive execution.
struct CompensationRecord {
  PrimId prim = PrimId::Delay;
  bool nop = true;
  std::vector<CapturedComponent> captured;
  /// Set when this record reverses an output primitive, even an effect-free
  /// one such as delay. Stepping back over it is an external step.
  bool reverses_output = false;

  static CompensationRecord none() { return {}; }
  bool is_nop() const { return nop; }

  friend bool operator==(const CompensationRecord&, const CompensationRecord&) = default;
};

inline void apply_compensation_in_place(Environment& env, const CompensationRecord& comp) {
  if (comp.nop) return;
  for (const auto& c : comp.captured) {
    auto& target = c.kind == CapturedComponent::Kind::Pin ? env.pins : env.encoders;
    if (c.prior) {
      target[c.id] = *c.prior;
    } else {
      target.erase(c.id);
    }
  }
}

inline Environment apply_compensation(Environment env, const CompensationRecord& comp) {
  apply_compensation_in_place(env, comp);
  return env;
}

struct OutputResult {
  Value ret = 0;
  CompensationRecord comp;
};

inline constexpr Value kOutputOk = 0;

/// Runs an output primitive against `env`, returning its status code and the
/// record that undoes it.
inline OutputResult perform_output(Environment& env, PrimId prim, const std::vector<Value>& args) {
  const PrimitiveInfo& info = primitive_info(prim);
  if (info.kind != PrimKind::Out)
    throw PrimitiveError(std::string(info.name) + " is not an output primitive");
  if (args.size() != info.arity)
    throw PrimitiveError(std::string(info.name) + ": expected " + std::to_string(info.arity) +
                         " arguments, got " + std::to_string(args.size()));
  auto capture = [](const std::map<int, int>& m, CapturedComponent::Kind kind, int id) {
    auto it = m.find(id);
    return CapturedComponent{kind, id, it == m.end() ? std::nullopt : std::optional<int>(it->second)};
  };
  OutputResult out;
  switch (prim) {
    case PrimId::DigitalWrite: {
      const int pin = args[0];
      out.comp = {prim, false, {capture(env.pins, CapturedComponent::Kind::Pin, pin)}, true};
      env.pins[pin] = args[1] != 0 ? 1 : 0;
      break;
    }
    case PrimId::Rotate: {
      const int motor = args[0];
      out.comp = {prim, false, {}, true};
      for (const auto& [id, angle] : env.encoders)
        out.comp.captured.push_back({CapturedComponent::Kind::Motor, id, angle});
      if (!env.encoders.contains(motor))
        out.comp.captured.push_back({CapturedComponent::Kind::Motor, motor, std::nullopt});
      env.encoders[motor] = static_cast<int>(static_cast<std::uint32_t>(env.angle(motor)) +
                                             static_cast<std::uint32_t>(args[1]));
      break;
    }
    case PrimId::Delay:
      out.comp = {prim, true, {}, true};
      break;
    default:
      break;
  }
  out.ret = kOutputOk;
  return out;
}

struct CallOutputResult {
  Value ret = 0;
  CompensationRecord comp;
  Environment env;
};

inline CallOutputResult call_output(Environment env, PrimId prim, const std::vector<Value>& args) {
  OutputResult r = perform_output(env, prim, args);
  return {r.ret, std::move(r.comp), std::move(env)};
}

inline ValueSet input_range(const Environment& env, PrimId prim, const std::vector<Value>& args) {
  const PrimitiveInfo& info = primitive_info(prim);
  if (info.kind != PrimKind::In)
    throw PrimitiveError(std::string(info.name) + " is not an input primitive");
  // later rules win
  for (auto it = env.rules.rbegin(); it != env.rules.rend(); ++it) {
    if (env.pin(it->pin) == it->level && it->matches(prim, args)) return {it->forced};
  }
  return info.base_range;
}

/// A live reading. Always a member of input_range(env, prim, args); only the
/// scripted-sensor cursor in `env` advances.
inline Value sample_input(Environment& env, PrimId prim, const std::vector<Value>& args,
                          std::uint64_t seed) {
  const ValueSet range = input_range(env, prim, args);
  if (range.size() == 1) return range.front();
  const std::string key = sensor_key(prim, args);
  if (auto it = env.sensors.find(key); it != env.sensors.end()) {
    const SensorSource& src = it->second;
    if (src.kind == SensorSource::Kind::Fixed && !src.values.empty() &&
        contains(range, src.values.front()))
      return src.values.front();
    if (src.kind == SensorSource::Kind::Script) {
      std::size_t& cursor = env.script_cursors[key];
      if (cursor < src.values.size() && contains(range, src.values[cursor]))
        return src.values[cursor++];
    }
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, range.size() - 1);
  return range[pick(rng)];
}

/// Appends `rule`. Returns a warning when an earlier rule has the same
/// condition and argument pattern but a different conclusion.
inline std::optional<std::string> register_dependency(Environment& env, DependencyRule rule) {
  std::optional<std::string> warning;
  if (primitive_info(rule.prim).kind != PrimKind::In)
    throw PrimitiveError("dependency rules can only constrain input primitives");
  if (rule.args.size() != primitive_info(rule.prim).arity)
    throw PrimitiveError("dependency rule argument count does not match the primitive");
  if (!contains(primitive_info(rule.prim).base_range, rule.forced))
    throw PrimitiveError("dependency rule forces a value outside the primitive's range");
  for (const auto& r : env.rules) {
    if (r.pin == rule.pin && r.level == rule.level && r.prim == rule.prim && r.args == rule.args &&
        r.forced != rule.forced) {
      warning = "conflicting dependency rule for " + std::string(primitive_info(rule.prim).name) +
                ": the later rule wins";
    }
  }
  env.rules.push_back(std::move(rule));
  return warning;
}

enum class EffectKind : std::uint8_t { Applied, Compensated };

/// One step affecting external state. `call` is the program call index.
struct ExternalEffect {
  EffectKind kind = EffectKind::Applied;
  std::uint32_t call = 0;
  PrimId prim = PrimId::Delay;
  std::vector<Value> args;  // Applied only
  Value ret = 0;            // Applied only

  friend bool operator==(const ExternalEffect&, const ExternalEffect&) = default;
};

/// Cancels each Compensated against the Applied it undoes.
inline std::vector<ExternalEffect> reduce_effects(const std::vector<ExternalEffect>& trace) {
  std::vector<ExternalEffect> out;
  for (const auto& e : trace) {
    if (e.kind == EffectKind::Compensated && !out.empty() &&
        out.back().kind == EffectKind::Applied && out.back().call == e.call) {
      out.pop_back();
    } else {
      out.push_back(e);
    }
  }
  return out;
}

}  // namespace mvdb
