#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "mvdb/config_codec.hpp"
#include "mvdb/debugger.hpp"
#include "mvdb/multiverse.hpp"
#include "mvdb/snapshot_payload.hpp"

namespace mvdb {

/// Position of the next instruction.
struct Location {
  std::uint32_t func = 0;
  std::uint32_t seq = 0;
  std::uint32_t offset = 0;

  friend bool operator==(const Location&, const Location&) = default;
};

inline std::optional<Location> location_of(const ProgramConfig& c) {
  if (c.frames.empty()) return std::nullopt;
  const Frame& f = c.frames.back();
  const Label& l = f.labels.back();
  return Location{f.func, l.seq, l.pc};
}

namespace event {
struct Paused {
  NodeId node;
  std::uint64_t depth = 0;
  friend bool operator==(const Paused&, const Paused&) = default;
};
struct Stepped {
  NodeId node;
  std::uint64_t depth = 0;
  std::string rule;
  std::optional<Location> pc;
  bool back = false;
  friend bool operator==(const Stepped&, const Stepped&) = default;
};
struct Halted {
  NodeId node;
  friend bool operator==(const Halted&, const Halted&) = default;
};
struct Trapped {
  NodeId node;
  std::string reason;
  friend bool operator==(const Trapped&, const Trapped&) = default;
};
struct Snapshot {
  NodeId node;
  protocol::SnapshotPayload payload;
  friend bool operator==(const Snapshot&, const Snapshot&) = default;
};
struct TreeNodeAdded {
  NodeId id;
  std::optional<NodeId> parent;
  std::uint64_t depth = 0;
  EdgeLabel edge;
  std::optional<std::string> label;
  friend bool operator==(const TreeNodeAdded&, const TreeNodeAdded&) = default;
};
struct MockEntry {
  std::uint32_t prim = 0;
  std::vector<Value> args;
  Value value = 0;
  friend bool operator==(const MockEntry&, const MockEntry&) = default;
};
struct MocksChanged {
  std::vector<MockEntry> mocks;
  friend bool operator==(const MocksChanged&, const MocksChanged&) = default;
};
struct Effect {
  ExternalEffect effect;
  friend bool operator==(const Effect&, const Effect&) = default;
};
struct Diagnostic {
  std::string code;
  std::string message;
  std::optional<std::size_t> offset;
  friend bool operator==(const Diagnostic&, const Diagnostic&) = default;
};
}  // namespace event

using Event = std::variant<event::Paused, event::Stepped, event::Halted, event::Trapped,
                           event::Snapshot, event::TreeNodeAdded, event::MocksChanged,
                           event::Effect, event::Diagnostic>;

using Events = std::vector<Event>;

inline event::TreeNodeAdded tree_node_event(const TreeNode& n) {
  return {n.id, n.parent, n.depth, n.edge, n.label};
}

struct SessionOptions {
  std::uint64_t seed = 0;
  /// Interval snapshot every `interval` base steps; nullopt means never.
  std::optional<std::uint64_t> checkpoint_interval;
};

struct JumpStats {
  std::uint64_t reverse_steps = 0;
  std::uint64_t forward_steps = 0;
  NodeId join;
};

/// A debugging session: the debugger plus the multiverse tree it explores.
class Session {
 public:
  Session(std::shared_ptr<const Program> program, Environment env, SessionOptions options = {})
      : options_(options),
        dbg_(std::move(program), std::move(env), options.seed),
        tree_(make_tree(dbg_)) {}

  const Debugger& debugger() const { return dbg_; }
  const MultiverseTree& tree() const { return tree_; }
  const JumpStats& last_jump() const { return last_jump_; }
  std::optional<std::uint64_t> checkpoint_interval() const { return options_.checkpoint_interval; }

  /// nullopt disables interval snapshots; primitive snapshots are always taken.
  void set_checkpoint_interval(std::optional<std::uint64_t> interval) {
    if (interval && *interval == 0) throw std::invalid_argument("checkpoint interval must be >= 1");
    options_.checkpoint_interval = interval;
  }

  Events step() {
    Events out;
    DispatchResult r = dbg_.step();
    after_forward(r, out);
    if (r.forward) out.push_back(stepped_event(r));
    return out;
  }

  Events step_back() {
    Events out;
    DispatchResult r = dbg_.step_back();
    after_backward(r, out);
    if (r.applied()) out.push_back(stepped_event(r));
    return out;
  }

  Events pause() {
    Events out;
    DispatchResult r = dbg_.dispatch(msg::Pause{});
    diagnostics(r, out);
    if (r.applied()) out.push_back(paused_event());
    return out;
  }

  Events play() {
    Events out;
    DispatchResult r = dbg_.dispatch(msg::Play{});
    diagnostics(r, out);
    return out;
  }

  bool playing() const { return dbg_.state() == ExecState::Play; }

  /// Runs up to `max_steps` run-rule transitions while playing. Falls back to
  /// PAUSE when no run rule applies (halt, trap, unusable mock).
  Events run(std::uint64_t max_steps) {
    Events out;
    if (!playing()) return out;
    std::optional<DispatchResult> last;
    for (std::uint64_t i = 0; i < max_steps; ++i) {
      DispatchResult r = dbg_.dispatch();
      if (!r.applied()) {
        diagnostics(r, out);
        dbg_.dispatch(msg::Pause{});
        if (last) out.push_back(stepped_event(*last));
        out.push_back(paused_event());
        return out;
      }
      after_forward(r, out);
      last = std::move(r);
    }
    if (last) out.push_back(stepped_event(*last));
    return out;
  }

  Events mock(std::uint32_t prim, std::vector<Value> args, Value value) {
    Events out;
    DispatchResult r = dbg_.register_mock(prim, std::move(args), value);
    diagnostics(r, out);
    if (r.applied()) out.push_back(mocks_event());
    return out;
  }

  Events unmock(std::uint32_t prim, std::vector<Value> args) {
    Events out;
    DispatchResult r = dbg_.unregister_mock(prim, std::move(args));
    diagnostics(r, out);
    if (r.applied()) out.push_back(mocks_event());
    return out;
  }

  /// Travels to `target`: step back one instruction at a time to the join,
  /// then forward along the recorded path, forcing input edges with
  /// transient mocks.
  Events jump(NodeId target) {
    Events out;
    if (!tree_.contains(target)) {
      out.push_back(event::Diagnostic{"UnknownNode", "unknown node " + std::to_string(target.value), {}});
      return out;
    }
    if (playing()) {
      dbg_.dispatch(msg::Pause{});
      out.push_back(paused_event());
    }
    last_jump_ = {};
    last_jump_.join = tree_.find_join(tree_.cursor(), target);
    while (tree_.cursor() != last_jump_.join) {
      DispatchResult r = dbg_.step_back();
      if (!r.applied()) throw IntegrityError("step back refused during a jump");
      after_backward(r, out);
      ++last_jump_.reverse_steps;
    }
    for (NodeId next : tree_.path_from(last_jump_.join, target)) {
      const TreeNode& node = tree_.node(next);
      const TreeNode& here = tree_.current();
      DispatchResult r;
      if (node.edge.kind == EdgeLabel::Kind::Input) {
        if (!here.site || here.site->kind != PrimKind::In)
          throw IntegrityError("input edge below a node without an input call site");
        r = forced_step(*here.site, node.edge.value);
      } else {
        r = dbg_.step();
      }
      if (!r.forward) throw IntegrityError("forward step refused during a jump");
      after_forward(r, out);
      if (tree_.cursor() != next) throw IntegrityError("jump diverged from the recorded path");
      ++last_jump_.forward_steps;
    }
    out.push_back(event::Stepped{tree_.cursor(), tree_.current().depth, "jump",
                                 location_of(dbg_.current()),
                                 last_jump_.forward_steps == 0 && last_jump_.reverse_steps > 0});
    return out;
  }

  /// Adds one branch per value under the input node `node` (all range values
  /// when `values` is empty) and returns to `node`.
  Events explore_range(NodeId node, std::optional<std::vector<Value>> values = std::nullopt) {
    Events out = jump(node);
    const TreeNode& n = tree_.node(node);
    if (!n.site || n.site->kind != PrimKind::In) {
      out.push_back(event::Diagnostic{"NotAnInputPrimitive",
                                      "node " + std::to_string(node.value) + " is not at an input call", {}});
      return out;
    }
    const CallSite site = *n.site;
    const ValueSet range = dbg_.pending_input()->second;
    const std::vector<Value> wanted = values ? *values : range;
    for (Value v : wanted) {
      if (!contains(range, v)) {
        out.push_back(event::Diagnostic{"MockOutOfRange", "value " + std::to_string(v) + " is outside the range", {}});
        continue;
      }
      DispatchResult r = forced_step(site, v);
      if (!r.forward) {
        diagnostics(r, out);
        continue;
      }
      after_forward(r, out);
      DispatchResult back = dbg_.step_back();
      after_backward(back, out);
    }
    out.push_back(event::Stepped{tree_.cursor(), tree_.current().depth, "explore-range",
                                 location_of(dbg_.current()), false});
    return out;
  }

  Events snapshot() const { return {snapshot_event()}; }

  /// Replaces the environment; only allowed before the tree has grown.
  Events load_env(Environment env) {
    if (tree_.size() != 1 || dbg_.current().step_index != 0)
      return {event::Diagnostic{"SessionStarted", "loadEnv is only accepted before the first step", {}}};
    dbg_.reset_environment(std::move(env));
    return {snapshot_event()};
  }

  /// Everything a (re)connecting frontend needs to rebuild its view.
  Events full_state() const {
    Events out;
    for (NodeId id : tree_.ids()) out.push_back(tree_node_event(tree_.node(id)));
    out.push_back(mocks_event());
    out.push_back(snapshot_event());
    out.push_back(paused_event());
    return out;
  }

 private:
  static std::pair<std::optional<std::string>, std::optional<CallSite>> call_site(
      const Debugger& dbg) {
    auto call = pending_primitive(dbg.current(), dbg.program());
    if (!call) return {};
    const PrimitiveInfo& info = dbg.program().primitive(call->call_index);
    return {std::string(info.name), CallSite{call->call_index, call->args, info.kind}};
  }

  static MultiverseTree make_tree(const Debugger& dbg) {
    auto [label, site] = call_site(dbg);
    return MultiverseTree(config_digest(dbg.current()), std::move(label), std::move(site));
  }

  DispatchResult forced_step(const CallSite& site, Value v) {
    const MockKey key{site.call, site.args};
    std::optional<Value> saved;
    if (auto it = dbg_.mocks().find(key); it != dbg_.mocks().end()) saved = it->second;
    DispatchResult reg = dbg_.register_mock(site.call, site.args, v);
    if (!reg.applied()) return reg;
    DispatchResult r = dbg_.step();
    if (saved) {
      dbg_.register_mock(site.call, site.args, *saved);
    } else {
      dbg_.unregister_mock(site.call, site.args);
    }
    return r;
  }

  void diagnostics(const DispatchResult& r, Events& out) const {
    for (const auto& d : r.diagnostics) {
      if (d.code == DiagnosticCode::Halted) {
        out.push_back(event::Halted{tree_.cursor()});
      } else if (d.code == DiagnosticCode::Trapped && r.trap) {
        out.push_back(event::Trapped{tree_.cursor(), *r.trap});
      } else {
        out.push_back(event::Diagnostic{std::string(diagnostic_name(d.code)), d.message, {}});
      }
    }
  }

  void after_forward(const DispatchResult& r, Events& out) {
    diagnostics(r, out);
    if (!r.forward) return;
    const ForwardStep& fs = *r.forward;
    EdgeLabel edge;
    switch (fs.kind) {
      case StepKind::Plain: edge = EdgeLabel::plain(); break;
      case StepKind::Input: edge = EdgeLabel::input(fs.value); break;
      case StepKind::Output:
        edge = EdgeLabel::output(std::string(dbg_.program().primitive(fs.call).name), fs.value);
        break;
    }
    auto [label, site] = call_site(dbg_);
    auto rec = tree_.record_transition(edge, config_digest(dbg_.current()), std::move(label), std::move(site));
    if (rec.created) out.push_back(tree_node_event(tree_.node(rec.node)));
    if (r.effect) out.push_back(event::Effect{*r.effect});
    if (r.snapshot_added) out.push_back(snapshot_event());
    if (options_.checkpoint_interval && dbg_.current().step_index % *options_.checkpoint_interval == 0)
      dbg_.take_interval_snapshot();
  }

  void after_backward(const DispatchResult& r, Events& out) {
    diagnostics(r, out);
    if (!r.applied()) return;
    tree_.retreat(config_digest(dbg_.current()));
    if (r.effect) out.push_back(event::Effect{*r.effect});
  }

  event::Stepped stepped_event(const DispatchResult& r) const {
    return {tree_.cursor(), tree_.current().depth, r.rule ? std::string(rule_name(*r.rule)) : std::string{},
            location_of(dbg_.current()), r.stepped_back()};
  }

  event::Paused paused_event() const { return {tree_.cursor(), tree_.current().depth}; }

  event::Snapshot snapshot_event() const {
    return {tree_.cursor(), protocol::make_payload(dbg_.current(), dbg_.environment())};
  }

  event::MocksChanged mocks_event() const {
    event::MocksChanged m;
    for (const auto& [key, v] : dbg_.mocks()) m.mocks.push_back({key.first, key.second, v});
    return m;
  }

  SessionOptions options_;
  Debugger dbg_;
  MultiverseTree tree_;
  JumpStats last_jump_;
};

}  // namespace mvdb
