#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "mvdb/environment.hpp"
#include "mvdb/machine.hpp"

namespace mvdb {

enum class ExecState : std::uint8_t { Pause, Play };

namespace msg {
struct Step {};
struct StepBack {};
struct Pause {};
struct Play {};
struct Mock {
  std::uint32_t prim = 0;
  std::vector<Value> args;
  Value value = 0;
};
struct Unmock {
  std::uint32_t prim = 0;
  std::vector<Value> args;
};
}  // namespace msg

using DebugMessage = std::variant<msg::Step, msg::StepBack, msg::Pause, msg::Play, msg::Mock, msg::Unmock>;

/// The transition rules of the debugger semantics.
enum class Rule : std::uint8_t {
  Run,
  StepForwards,
  Pause,
  Play,
  RunPrimIn,
  RunPrimOut,
  RunMock,
  StepPrimIn,
  StepPrimOut,
  StepMock,
  StepBack,
  StepBackCompensate,
  RegisterMock,
  UnregisterMock,
};

inline std::string_view rule_name(Rule r) {
  switch (r) {
    case Rule::Run: return "run";
    case Rule::StepForwards: return "step-forwards";
    case Rule::Pause: return "pause";
    case Rule::Play: return "play";
    case Rule::RunPrimIn: return "run-prim-in";
    case Rule::RunPrimOut: return "run-prim-out";
    case Rule::RunMock: return "run-mock";
    case Rule::StepPrimIn: return "step-prim-in";
    case Rule::StepPrimOut: return "step-prim-out";
    case Rule::StepMock: return "step-mock";
    case Rule::StepBack: return "step-back";
    case Rule::StepBackCompensate: return "step-back-compensate";
    case Rule::RegisterMock: return "register-mock";
    case Rule::UnregisterMock: return "unregister-mock";
  }
  return "?";
}

struct Snapshot {
  ProgramConfig config;
  CompensationRecord compensation;
  ExternalState external;
};

using MockKey = std::pair<std::uint32_t, std::vector<Value>>;
/// Keys compare element-wise over the full argument list.
using MockTable = std::map<MockKey, Value>;

enum class DiagnosticCode : std::uint8_t {
  NoPriorState,
  Halted,
  Trapped,
  AlreadyPaused,
  AlreadyPlaying,
  NotPaused,
  MockOutOfRange,
  NotAnInputPrimitive,
  ArityMismatch,
};

inline std::string_view diagnostic_name(DiagnosticCode c) {
  switch (c) {
    case DiagnosticCode::NoPriorState: return "NoPriorState";
    case DiagnosticCode::Halted: return "Halted";
    case DiagnosticCode::Trapped: return "Trapped";
    case DiagnosticCode::AlreadyPaused: return "AlreadyPaused";
    case DiagnosticCode::AlreadyPlaying: return "AlreadyPlaying";
    case DiagnosticCode::NotPaused: return "NotPaused";
    case DiagnosticCode::MockOutOfRange: return "MockOutOfRange";
    case DiagnosticCode::NotAnInputPrimitive: return "NotAnInputPrimitive";
    case DiagnosticCode::ArityMismatch: return "ArityMismatch";
  }
  return "?";
}

struct Diagnostic {
  DiagnosticCode code;
  std::string message;
};

/// Raised when an internal invariant of the debugger or the multiverse tree
/// is violated. Indicates a bug, never a user error.
class IntegrityError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

enum class StepKind : std::uint8_t { Plain, Input, Output };

/// What a forward transition did.
struct ForwardStep {
  StepKind kind = StepKind::Plain;
  std::uint32_t call = 0;
  std::vector<Value> args;
  Value value = 0;  // input value or output return value
  bool mocked = false;
};

struct DispatchResult {
  std::optional<Rule> rule;
  std::vector<Diagnostic> diagnostics;
  std::optional<ForwardStep> forward;
  std::optional<std::string> trap;
  std::optional<ExternalEffect> effect;
  bool snapshot_added = false;
  std::uint64_t replayed = 0;  // base steps re-executed by a step back

  bool applied() const { return rule.has_value(); }
  bool stepped_back() const {
    return rule == Rule::StepBack || rule == Rule::StepBackCompensate;
  }
};

struct LogEntry {
  Rule rule;
  std::optional<ExternalEffect> effect;
};

/// Steps of a rule-application log that affect external state: output
/// primitive applications and compensations of outputs, in order.
inline std::vector<ExternalEffect> external_trace(const std::vector<LogEntry>& log) {
  std::vector<ExternalEffect> out;
  for (const auto& e : log) {
    if (e.effect) out.push_back(*e.effect);
  }
  return out;
}

/// The debugger configuration together with its transition function.
/// Copyable; the program is shared and immutable.
class Debugger {
 public:
  Debugger(std::shared_ptr<const Program> program, Environment env, std::uint64_t seed = 0)
      : program_(std::move(program)), env_(std::move(env)), rng_(seed) {
    if (!program_) throw std::invalid_argument("debugger needs a program");
    if (auto errors = validate_program(*program_); !errors.empty())
      throw std::invalid_argument("invalid program: " + errors.front().to_string());
    current_ = initial_config(*program_);
    snapshots_.push_back({current_, CompensationRecord::none(), serialize_external(env_)});
  }

  /// Applies the single rule matching (state, message, config). When none
  /// matches the configuration is unchanged and a diagnostic explains why.
  DispatchResult dispatch(const std::optional<DebugMessage>& message = std::nullopt) {
    DispatchResult out;
    if (!message) {
      if (state_ != ExecState::Play) {
        out.diagnostics.push_back({DiagnosticCode::NotPaused, "nothing to do while paused"});
        return out;
      }
      forward(out, /*run=*/true);
      return out;
    }
    std::visit([&](const auto& m) { handle(out, m); }, *message);
    return out;
  }

  DispatchResult step() { return dispatch(msg::Step{}); }
  DispatchResult step_back() { return dispatch(msg::StepBack{}); }
  DispatchResult register_mock(std::uint32_t prim, std::vector<Value> args, Value v) {
    return dispatch(msg::Mock{prim, std::move(args), v});
  }
  DispatchResult unregister_mock(std::uint32_t prim, std::vector<Value> args) {
    return dispatch(msg::Unmock{prim, std::move(args)});
  }

  /// Appends {current, r_nop}. No-op when the last snapshot is already at the
  /// current step index.
  bool take_interval_snapshot() {
    if (snapshots_.back().config.step_index == current_.step_index) return false;
    snapshots_.push_back({current_, CompensationRecord::none(), serialize_external(env_)});
    return true;
  }

  /// Replaces the environment. Only meaningful before anything ran.
  void reset_environment(Environment env) {
    env_ = std::move(env);
    for (auto& s : snapshots_) s.external = serialize_external(env_);
  }

  const Program& program() const { return *program_; }
  std::shared_ptr<const Program> shared_program() const { return program_; }
  ExecState state() const { return state_; }
  const ProgramConfig& current() const { return current_; }
  const std::vector<Snapshot>& snapshots() const { return snapshots_; }
  const MockTable& mocks() const { return mocks_; }
  const Environment& environment() const { return env_; }
  const std::vector<ExternalEffect>& effects() const { return effects_; }
  const std::vector<LogEntry>& log() const { return log_; }
  bool halted() const { return current_.finished(); }

  /// Range of the input primitive call at the current config, if stopped at one.
  std::optional<std::pair<PendingCall, ValueSet>> pending_input() const {
    auto call = pending_primitive(current_, *program_);
    if (!call || program_->primitive(call->call_index).kind != PrimKind::In) return std::nullopt;
    ValueSet range = input_range(env_, program_->imports[call->call_index].prim, call->args);
    return std::make_pair(std::move(*call), std::move(range));
  }

 private:
  void apply(DispatchResult& out, Rule r, std::optional<ExternalEffect> effect = std::nullopt) {
    out.rule = r;
    out.effect = effect;
    log_.push_back({r, effect});
    if (effect) effects_.push_back(*effect);
  }

  void handle(DispatchResult& out, const msg::Pause&) {
    if (state_ == ExecState::Pause) {
      out.diagnostics.push_back({DiagnosticCode::AlreadyPaused, "already paused"});
      return;
    }
    state_ = ExecState::Pause;
    apply(out, Rule::Pause);
  }

  void handle(DispatchResult& out, const msg::Play&) {
    if (state_ == ExecState::Play) {
      out.diagnostics.push_back({DiagnosticCode::AlreadyPlaying, "already playing"});
      return;
    }
    state_ = ExecState::Play;
    apply(out, Rule::Play);
  }

  void pause_for(DispatchResult& out, std::string_view what) {
    if (state_ == ExecState::Play) {
      out.diagnostics.push_back(
          {DiagnosticCode::NotPaused, std::string(what) + " received while playing: pausing first"});
      state_ = ExecState::Pause;
    }
  }

  void handle(DispatchResult& out, const msg::Step&) {
    pause_for(out, "step");
    forward(out, /*run=*/false);
  }

  void handle(DispatchResult& out, const msg::StepBack&) {
    pause_for(out, "stepBack");
    backward(out);
  }

  std::optional<Diagnostic> check_input_key(std::uint32_t prim, const std::vector<Value>& args) const {
    if (!program_->is_primitive(prim) || program_->primitive(prim).kind != PrimKind::In)
      return Diagnostic{DiagnosticCode::NotAnInputPrimitive,
                        "call index " + std::to_string(prim) + " is not an input primitive"};
    if (args.size() != program_->primitive(prim).arity)
      return Diagnostic{DiagnosticCode::ArityMismatch,
                        std::string(program_->primitive(prim).name) + " takes " +
                            std::to_string(program_->primitive(prim).arity) + " arguments"};
    return std::nullopt;
  }

  void handle(DispatchResult& out, const msg::Mock& m) {
    if (auto d = check_input_key(m.prim, m.args)) {
      out.diagnostics.push_back(std::move(*d));
      return;
    }
    const ValueSet range = input_range(env_, program_->imports[m.prim].prim, m.args);
    if (!contains(range, m.value)) {
      out.diagnostics.push_back({DiagnosticCode::MockOutOfRange,
                                 "value " + std::to_string(m.value) + " is outside the range of " +
                                     std::string(program_->primitive(m.prim).name)});
      return;
    }
    mocks_[{m.prim, m.args}] = m.value;
    apply(out, Rule::RegisterMock);
  }

  void handle(DispatchResult& out, const msg::Unmock& m) {
    mocks_.erase({m.prim, m.args});
    apply(out, Rule::UnregisterMock);
  }

  void forward(DispatchResult& out, bool run) {
    const Program& p = *program_;
    auto call = pending_primitive(current_, p);
    if (!call) {
      const AdvanceResult r = advance(current_, p);
      switch (r.kind) {
        case Advance::Stepped:
          out.forward = ForwardStep{};
          apply(out, run ? Rule::Run : Rule::StepForwards);
          return;
        case Advance::Halted:
          out.diagnostics.push_back({DiagnosticCode::Halted, "program has halted"});
          return;
        case Advance::Trapped:
          out.trap = r.trap;
          out.diagnostics.push_back({DiagnosticCode::Trapped, std::string("trap: ") + r.trap});
          return;
        case Advance::Primitive:
          throw IntegrityError("primitive call without a pending call");
      }
    }
    const PrimId prim = p.imports[call->call_index].prim;
    ForwardStep fs;
    fs.call = call->call_index;
    fs.args = call->args;
    CompensationRecord comp = CompensationRecord::none();
    std::optional<ExternalEffect> effect;
    Rule rule;
    if (primitive_info(prim).kind == PrimKind::In) {
      fs.kind = StepKind::Input;
      const ValueSet range = input_range(env_, prim, call->args);
      if (auto it = mocks_.find({call->call_index, call->args}); it != mocks_.end()) {
        if (!contains(range, it->second)) {
          out.diagnostics.push_back(
              {DiagnosticCode::MockOutOfRange,
               "mocked value " + std::to_string(it->second) + " is no longer in range"});
          return;
        }
        fs.value = it->second;
        fs.mocked = true;
        rule = run ? Rule::RunMock : Rule::StepMock;
      } else {
        fs.value = sample_input(env_, prim, call->args, rng_());
        rule = run ? Rule::RunPrimIn : Rule::StepPrimIn;
      }
    } else {
      fs.kind = StepKind::Output;
      OutputResult r = perform_output(env_, prim, call->args);
      fs.value = r.ret;
      comp = std::move(r.comp);
      effect = ExternalEffect{EffectKind::Applied, call->call_index, prim, call->args, r.ret};
      rule = run ? Rule::RunPrimOut : Rule::StepPrimOut;
    }
    complete_primitive(current_, p, fs.value);
    snapshots_.push_back({current_, std::move(comp), serialize_external(env_)});
    out.snapshot_added = true;
    out.forward = std::move(fs);
    apply(out, rule, std::move(effect));
  }

  void backward(DispatchResult& out) {
    const std::uint64_t m = current_.step_index;
    if (m == 0) {
      out.diagnostics.push_back({DiagnosticCode::NoPriorState, "stepping back is not possible at the start"});
      return;
    }
    Rule rule = Rule::StepBack;
    std::optional<ExternalEffect> effect;
    if (snapshots_.back().config.step_index == m) {
      if (snapshots_.size() < 2) throw IntegrityError("snapshot at current state without predecessor");
      const Snapshot& last = snapshots_.back();
      apply_compensation_in_place(env_, last.compensation);
      if (last.compensation.reverses_output) {
        effect = ExternalEffect{EffectKind::Compensated, primitive_call_before(last.config),
                                last.compensation.prim, {}, 0};
      }
      snapshots_.pop_back();
      rule = Rule::StepBackCompensate;
      if (serialize_external(env_) != snapshots_.back().external)
        throw IntegrityError("compensation did not restore the external state of the snapshot");
    }
    const Snapshot& base = snapshots_.back();
    ProgramConfig replay = base.config;
    while (replay.step_index + 1 < m) {
      const AdvanceResult r = advance(replay, *program_);
      if (r.kind != Advance::Stepped)
        throw IntegrityError("replay segment after the last snapshot is not primitive-free");
      ++out.replayed;
    }
    current_ = std::move(replay);
    apply(out, rule, std::move(effect));
  }

  // Call index of the primitive whose completion produced `after`.
  std::uint32_t primitive_call_before(const ProgramConfig& after) const {
    const Frame& f = after.frames.back();
    const Label& l = f.labels.back();
    return static_cast<std::uint32_t>(program_->functions[f.func].seqs[l.seq][l.pc - 1].imm);
  }

  std::shared_ptr<const Program> program_;
  ExecState state_ = ExecState::Pause;
  MockTable mocks_;
  ProgramConfig current_;
  std::vector<Snapshot> snapshots_;
  Environment env_;
  std::vector<ExternalEffect> effects_;
  std::vector<LogEntry> log_;
  std::mt19937_64 rng_;
};

}  // namespace mvdb
