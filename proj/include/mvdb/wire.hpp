#pragma once

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "mvdb/session.hpp"
#include "mvdb/text_format.hpp"

namespace mvdb::protocol {

using json = nlohmann::json;

namespace req {
struct Play {
  friend bool operator==(const Play&, const Play&) = default;
};
struct Pause {
  friend bool operator==(const Pause&, const Pause&) = default;
};
struct Step {
  friend bool operator==(const Step&, const Step&) = default;
};
struct StepBack {
  friend bool operator==(const StepBack&, const StepBack&) = default;
};
struct Mock {
  std::uint32_t prim = 0;
  std::vector<Value> args;
  Value value = 0;
  friend bool operator==(const Mock&, const Mock&) = default;
};
struct Unmock {
  std::uint32_t prim = 0;
  std::vector<Value> args;
  friend bool operator==(const Unmock&, const Unmock&) = default;
};
struct Jump {
  std::uint64_t node = 0;
  friend bool operator==(const Jump&, const Jump&) = default;
};
struct ExploreRange {
  std::uint64_t node = 0;
  std::optional<std::vector<Value>> values;
  friend bool operator==(const ExploreRange&, const ExploreRange&) = default;
};
struct Snapshot {
  friend bool operator==(const Snapshot&, const Snapshot&) = default;
};
/// `env` holds an environment file in text form.
struct LoadEnv {
  std::string env;
  friend bool operator==(const LoadEnv&, const LoadEnv&) = default;
};
}  // namespace req

using Request = std::variant<req::Play, req::Pause, req::Step, req::StepBack, req::Mock, req::Unmock,
                             req::Jump, req::ExploreRange, req::Snapshot, req::LoadEnv>;

// ---- requests -------------------------------------------------------------

inline json request_json(const Request& r) {
  struct V {
    json operator()(const req::Play&) const { return {{"cmd", "play"}}; }
    json operator()(const req::Pause&) const { return {{"cmd", "pause"}}; }
    json operator()(const req::Step&) const { return {{"cmd", "step"}}; }
    json operator()(const req::StepBack&) const { return {{"cmd", "stepBack"}}; }
    json operator()(const req::Mock& m) const {
      return {{"cmd", "mock"}, {"prim", m.prim}, {"args", m.args}, {"value", m.value}};
    }
    json operator()(const req::Unmock& m) const {
      return {{"cmd", "unmock"}, {"prim", m.prim}, {"args", m.args}};
    }
    json operator()(const req::Jump& j) const { return {{"cmd", "jump"}, {"node", j.node}}; }
    json operator()(const req::ExploreRange& e) const {
      json j = {{"cmd", "exploreRange"}, {"node", e.node}};
      if (e.values) j["values"] = *e.values;
      return j;
    }
    json operator()(const req::Snapshot&) const { return {{"cmd", "snapshot"}}; }
    json operator()(const req::LoadEnv& l) const { return {{"cmd", "loadEnv"}, {"env", l.env}}; }
  };
  return std::visit(V{}, r);
}

inline std::string encode_request(const Request& r) { return request_json(r).dump(-1, ' ', false, json::error_handler_t::replace); }

struct RequestDecode {
  std::optional<Request> request;
  std::optional<event::Diagnostic> error;
};

namespace detail {

class FieldError : public std::runtime_error {
 public:
  FieldError(std::string field, const std::string& what)
      : std::runtime_error(what), field(std::move(field)) {}
  std::string field;
};

template <class T>
T integer_field(const json& j, const char* name, T lo, T hi) {
  auto it = j.find(name);
  if (it == j.end()) throw FieldError(name, std::string("missing field '") + name + "'");
  if (!it->is_number_integer()) throw FieldError(name, std::string("field '") + name + "' must be an integer");
  if (it->is_number_unsigned()) {
    const auto v = it->get<std::uint64_t>();
    if (v > static_cast<std::uint64_t>(hi)) throw FieldError(name, std::string("field '") + name + "' is out of range");
    return static_cast<T>(v);
  }
  const auto v = it->get<std::int64_t>();
  if (v < static_cast<std::int64_t>(lo) ||
      (v > 0 && static_cast<std::uint64_t>(v) > static_cast<std::uint64_t>(hi)))
    throw FieldError(name, std::string("field '") + name + "' is out of range");
  return static_cast<T>(v);
}

inline Value value_field(const json& j, const char* name) {
  return integer_field<Value>(j, name, std::numeric_limits<Value>::min(), std::numeric_limits<Value>::max());
}

inline std::vector<Value> values_field(const json& j, const char* name) {
  auto it = j.find(name);
  if (it == j.end()) throw FieldError(name, std::string("missing field '") + name + "'");
  if (!it->is_array()) throw FieldError(name, std::string("field '") + name + "' must be a list of integers");
  std::vector<Value> out;
  for (const auto& e : *it) {
    json wrap = {{"v", e}};
    try {
      out.push_back(value_field(wrap, "v"));
    } catch (const FieldError&) {
      throw FieldError(name, std::string("field '") + name + "' must be a list of 32-bit integers");
    }
  }
  return out;
}

// Best-effort position of a field in the raw line, for diagnostics.
inline std::size_t field_offset(std::string_view line, const std::string& field) {
  const auto at = line.find("\"" + field + "\"");
  return at == std::string_view::npos ? 0 : at;
}

}  // namespace detail

/// Parses one request line. Unknown fields are ignored.
inline RequestDecode decode_request(std::string_view line) {
  json j;
  try {
    j = json::parse(line.begin(), line.end());
  } catch (const json::parse_error& e) {
    return {std::nullopt, event::Diagnostic{"MalformedMessage", e.what(), e.byte == 0 ? 0 : e.byte - 1}};
  } catch (const json::exception& e) {
    // e.g. a float literal that overflows a double; the parser gives no position
    return {std::nullopt, event::Diagnostic{"MalformedMessage", e.what(), 0}};
  }
  if (!j.is_object())
    return {std::nullopt, event::Diagnostic{"MalformedMessage", "a request must be a JSON object", 0}};
  auto cmd_it = j.find("cmd");
  if (cmd_it == j.end() || !cmd_it->is_string())
    return {std::nullopt, event::Diagnostic{"MalformedMessage", "missing string field 'cmd'", 0}};
  const std::string cmd = cmd_it->get<std::string>();
  using detail::integer_field;
  try {
    if (cmd == "play") return {req::Play{}, {}};
    if (cmd == "pause") return {req::Pause{}, {}};
    if (cmd == "step") return {req::Step{}, {}};
    if (cmd == "stepBack") return {req::StepBack{}, {}};
    if (cmd == "snapshot") return {req::Snapshot{}, {}};
    if (cmd == "mock")
      return {req::Mock{integer_field<std::uint32_t>(j, "prim", 0, UINT32_MAX), detail::values_field(j, "args"),
                        detail::value_field(j, "value")},
              {}};
    if (cmd == "unmock")
      return {req::Unmock{integer_field<std::uint32_t>(j, "prim", 0, UINT32_MAX), detail::values_field(j, "args")}, {}};
    if (cmd == "jump") return {req::Jump{integer_field<std::uint64_t>(j, "node", 0, UINT64_MAX)}, {}};
    if (cmd == "exploreRange") {
      req::ExploreRange e{integer_field<std::uint64_t>(j, "node", 0, UINT64_MAX), std::nullopt};
      if (j.contains("values") && !j["values"].is_null()) e.values = detail::values_field(j, "values");
      return {e, {}};
    }
    if (cmd == "loadEnv") {
      auto it = j.find("env");
      if (it == j.end() || !it->is_string()) throw detail::FieldError("env", "missing string field 'env'");
      return {req::LoadEnv{it->get<std::string>()}, {}};
    }
  } catch (const detail::FieldError& e) {
    return {std::nullopt, event::Diagnostic{"MalformedMessage", e.what(), detail::field_offset(line, e.field)}};
  }
  return {std::nullopt, event::Diagnostic{"UnknownCommand", "unknown cmd '" + cmd + "'",
                                          detail::field_offset(line, "cmd")}};
}

// ---- events ---------------------------------------------------------------

inline std::string_view edge_kind_name(EdgeLabel::Kind k) {
  switch (k) {
    case EdgeLabel::Kind::Plain: return "plain";
    case EdgeLabel::Kind::Input: return "input";
    case EdgeLabel::Kind::Output: return "output";
  }
  return "plain";
}

inline std::string_view label_kind_name(LabelKind k) {
  switch (k) {
    case LabelKind::Func: return "func";
    case LabelKind::Block: return "block";
    case LabelKind::Loop: return "loop";
    case LabelKind::If: return "if";
  }
  return "func";
}

inline json edge_json(const EdgeLabel& e) {
  json j = {{"kind", edge_kind_name(e.kind)}};
  if (e.kind != EdgeLabel::Kind::Plain) j["value"] = e.value;
  if (e.kind == EdgeLabel::Kind::Output) j["prim"] = e.prim;
  return j;
}

inline json pairs_json(const std::vector<std::pair<int, int>>& v) {
  json a = json::array();
  for (const auto& [k, x] : v) a.push_back({k, x});
  return a;
}

inline json payload_json(const SnapshotPayload& p) {
  json frames = json::array();
  for (const Frame& f : p.frames) {
    json labels = json::array();
    for (const Label& l : f.labels)
      labels.push_back({{"kind", label_kind_name(l.kind)}, {"seq", l.seq}, {"pc", l.pc}, {"height", l.height}});
    frames.push_back({{"func", f.func}, {"locals", f.locals}, {"stack", f.stack}, {"labels", labels}});
  }
  json memory = json::array();
  for (const Run& r : p.memory) memory.push_back({r.byte, r.length});
  return {{"stepIndex", p.step_index},
          {"globals", p.globals},
          {"frames", frames},
          {"memorySize", p.memory_size},
          {"memory", memory},
          {"external", {{"pins", pairs_json(p.external.pins)}, {"motors", pairs_json(p.external.motors)}}}};
}

inline json event_json(const Event& ev) {
  struct V {
    json operator()(const event::Paused& e) const {
      return {{"type", "paused"}, {"node", e.node.value}, {"depth", e.depth}};
    }
    json operator()(const event::Stepped& e) const {
      json j = {{"type", "stepped"}, {"node", e.node.value}, {"depth", e.depth}, {"rule", e.rule}, {"back", e.back}};
      if (e.pc) {
        j["pc"] = {{"func", e.pc->func}, {"seq", e.pc->seq}, {"offset", e.pc->offset}};
      } else {
        j["pc"] = nullptr;
      }
      return j;
    }
    json operator()(const event::Halted& e) const { return {{"type", "halted"}, {"node", e.node.value}}; }
    json operator()(const event::Trapped& e) const {
      return {{"type", "trapped"}, {"node", e.node.value}, {"reason", e.reason}};
    }
    json operator()(const event::Snapshot& e) const {
      json j = payload_json(e.payload);
      j["type"] = "snapshot";
      j["node"] = e.node.value;
      return j;
    }
    json operator()(const event::TreeNodeAdded& e) const {
      json j = {{"type", "treeNode"}, {"id", e.id.value}, {"depth", e.depth}, {"edge", edge_json(e.edge)}};
      j["parent"] = e.parent ? json(e.parent->value) : json(nullptr);
      if (e.label) j["label"] = *e.label;
      return j;
    }
    json operator()(const event::MocksChanged& e) const {
      json mocks = json::array();
      for (const auto& m : e.mocks) mocks.push_back({{"prim", m.prim}, {"args", m.args}, {"value", m.value}});
      return {{"type", "mocksChanged"}, {"mocks", mocks}};
    }
    json operator()(const event::Effect& e) const {
      return {{"type", "effect"},
              {"kind", e.effect.kind == EffectKind::Applied ? "applied" : "compensated"},
              {"call", e.effect.call},
              {"prim", primitive_info(e.effect.prim).name},
              {"args", e.effect.args},
              {"ret", e.effect.ret}};
    }
    json operator()(const event::Diagnostic& e) const {
      json j = {{"type", "diagnostic"}, {"code", e.code}, {"message", e.message}};
      if (e.offset) j["offset"] = *e.offset;
      return j;
    }
  };
  return std::visit(V{}, ev);
}

inline std::string encode_event(const Event& ev) { return event_json(ev).dump(-1, ' ', false, json::error_handler_t::replace); }

namespace detail {

inline std::vector<std::pair<int, int>> pairs_from(const json& a) {
  std::vector<std::pair<int, int>> out;
  for (const auto& p : a) out.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
  return out;
}

inline SnapshotPayload payload_from(const json& j) {
  SnapshotPayload p;
  p.step_index = j.at("stepIndex").get<std::uint64_t>();
  p.globals = j.at("globals").get<std::vector<Value>>();
  for (const auto& f : j.at("frames")) {
    Frame fr;
    fr.func = f.at("func").get<std::uint32_t>();
    fr.locals = f.at("locals").get<std::vector<Value>>();
    fr.stack = f.at("stack").get<std::vector<Value>>();
    for (const auto& l : f.at("labels")) {
      Label lab;
      const auto kind = l.at("kind").get<std::string>();
      if (kind == "func") lab.kind = LabelKind::Func;
      else if (kind == "block") lab.kind = LabelKind::Block;
      else if (kind == "loop") lab.kind = LabelKind::Loop;
      else if (kind == "if") lab.kind = LabelKind::If;
      else throw std::invalid_argument("unknown label kind '" + kind + "'");
      lab.seq = l.at("seq").get<std::uint32_t>();
      lab.pc = l.at("pc").get<std::uint32_t>();
      lab.height = l.at("height").get<std::uint32_t>();
      fr.labels.push_back(lab);
    }
    p.frames.push_back(std::move(fr));
  }
  p.memory_size = j.at("memorySize").get<std::uint32_t>();
  for (const auto& r : j.at("memory")) p.memory.push_back({r.at(0).get<std::uint8_t>(), r.at(1).get<std::uint32_t>()});
  p.external.pins = pairs_from(j.at("external").at("pins"));
  p.external.motors = pairs_from(j.at("external").at("motors"));
  return p;
}

inline EdgeLabel edge_from(const json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "plain") return EdgeLabel::plain();
  if (kind == "input") return EdgeLabel::input(j.at("value").get<Value>());
  if (kind == "output") return EdgeLabel::output(j.at("prim").get<std::string>(), j.at("value").get<Value>());
  throw std::invalid_argument("unknown edge kind '" + kind + "'");
}

}  // namespace detail

/// Parses one event line; throws std::invalid_argument or json errors on
/// malformed input. Used by frontends and tests.
inline Event decode_event(std::string_view line) {
  const json j = json::parse(line.begin(), line.end());
  const auto type = j.at("type").get<std::string>();
  auto node = [&](const char* k) { return NodeId{j.at(k).get<std::uint64_t>()}; };
  if (type == "paused") return event::Paused{node("node"), j.at("depth").get<std::uint64_t>()};
  if (type == "stepped") {
    event::Stepped s{node("node"), j.at("depth").get<std::uint64_t>(), j.at("rule").get<std::string>(), std::nullopt,
                     j.at("back").get<bool>()};
    if (const auto& pc = j.at("pc"); !pc.is_null())
      s.pc = Location{pc.at("func").get<std::uint32_t>(), pc.at("seq").get<std::uint32_t>(),
                      pc.at("offset").get<std::uint32_t>()};
    return s;
  }
  if (type == "halted") return event::Halted{node("node")};
  if (type == "trapped") return event::Trapped{node("node"), j.at("reason").get<std::string>()};
  if (type == "snapshot") return event::Snapshot{node("node"), detail::payload_from(j)};
  if (type == "treeNode") {
    event::TreeNodeAdded t;
    t.id = node("id");
    if (!j.at("parent").is_null()) t.parent = node("parent");
    t.depth = j.at("depth").get<std::uint64_t>();
    t.edge = detail::edge_from(j.at("edge"));
    if (j.contains("label")) t.label = j.at("label").get<std::string>();
    return t;
  }
  if (type == "mocksChanged") {
    event::MocksChanged m;
    for (const auto& e : j.at("mocks"))
      m.mocks.push_back({e.at("prim").get<std::uint32_t>(), e.at("args").get<std::vector<Value>>(),
                         e.at("value").get<Value>()});
    return m;
  }
  if (type == "effect") {
    ExternalEffect e;
    e.kind = j.at("kind").get<std::string>() == "applied" ? EffectKind::Applied : EffectKind::Compensated;
    e.call = j.at("call").get<std::uint32_t>();
    auto prim = find_primitive(j.at("prim").get<std::string>());
    if (!prim) throw std::invalid_argument("unknown primitive in effect event");
    e.prim = *prim;
    e.args = j.at("args").get<std::vector<Value>>();
    e.ret = j.at("ret").get<Value>();
    return event::Effect{e};
  }
  if (type == "diagnostic") {
    event::Diagnostic d{j.at("code").get<std::string>(), j.at("message").get<std::string>(), std::nullopt};
    if (j.contains("offset")) d.offset = j.at("offset").get<std::size_t>();
    return d;
  }
  throw std::invalid_argument("unknown event type '" + type + "'");
}

// ---- dispatch -------------------------------------------------------------

/// Applies one decoded request to the session and returns the events it causes.
inline Events apply_request(Session& s, const Request& r) {
  struct V {
    Session& s;
    Events operator()(const req::Play&) const { return s.play(); }
    Events operator()(const req::Pause&) const { return s.pause(); }
    Events operator()(const req::Step&) const { return s.step(); }
    Events operator()(const req::StepBack&) const { return s.step_back(); }
    Events operator()(const req::Mock& m) const { return s.mock(m.prim, m.args, m.value); }
    Events operator()(const req::Unmock& m) const { return s.unmock(m.prim, m.args); }
    Events operator()(const req::Jump& j) const { return s.jump(NodeId{j.node}); }
    Events operator()(const req::ExploreRange& e) const {
      if (!s.tree().contains(NodeId{e.node}))
        return {event::Diagnostic{"UnknownNode", "unknown node " + std::to_string(e.node), {}}};
      return s.explore_range(NodeId{e.node}, e.values);
    }
    Events operator()(const req::Snapshot&) const { return s.snapshot(); }
    Events operator()(const req::LoadEnv& l) const {
      try {
        std::vector<std::string> warnings;
        Environment env = load_env_text(l.env, &warnings);
        Events out;
        for (auto& w : warnings) out.push_back(event::Diagnostic{"ConflictingRule", std::move(w), {}});
        Events loaded = s.load_env(std::move(env));
        out.insert(out.end(), loaded.begin(), loaded.end());
        return out;
      } catch (const ParseError& e) {
        return {event::Diagnostic{"BadEnvironment", e.what(), {}}};
      }
    }
  };
  return std::visit(V{s}, r);
}

}  // namespace mvdb::protocol
