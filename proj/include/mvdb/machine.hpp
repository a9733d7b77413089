#pragma once

#include <cstdint>
#include <cstring>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "mvdb/program.hpp"

namespace mvdb {

enum class LabelKind : std::uint8_t { Func, Block, Loop, If };

/// One entry of the structured control stack: the body being executed, the
/// offset of the next instruction in it and the value-stack height on entry.
struct Label {
  LabelKind kind = LabelKind::Func;
  std::uint32_t seq = 0;
  std::uint32_t pc = 0;
  std::uint32_t height = 0;

  friend bool operator==(const Label&, const Label&) = default;
};

struct Frame {
  std::uint32_t func = 0;  // index into Program::functions
  std::vector<Value> locals;
  std::vector<Value> stack;
  std::vector<Label> labels;

  friend bool operator==(const Frame&, const Frame&) = default;
};

struct ProgramConfig {
  std::vector<Value> globals;
  std::vector<std::uint8_t> memory;
  std::vector<Frame> frames;  // empty once the entry function has returned
  std::uint64_t step_index = 0;

  bool finished() const { return frames.empty(); }

  friend bool operator==(const ProgramConfig&, const ProgramConfig&) = default;
};

/// Structural equality ignoring the step index.
inline bool config_equal(const ProgramConfig& a, const ProgramConfig& b) {
  return a.globals == b.globals && a.memory == b.memory && a.frames == b.frames;
}

inline constexpr std::size_t kMaxCallDepth = 1024;

inline ProgramConfig initial_config(const Program& program) {
  ProgramConfig config;
  config.globals = program.globals;
  config.memory.assign(program.memory_size, 0);
  const Function& entry = program.functions.at(0);
  Frame frame;
  frame.func = 0;
  frame.locals.assign(entry.params + entry.locals, 0);
  frame.labels.push_back({LabelKind::Func, 0, 0, 0});
  config.frames.push_back(std::move(frame));
  return config;
}

// Step outcomes.

struct Next {
  ProgramConfig config;
};
struct InputChoice {
  std::uint32_t prim = 0;  // call index
  std::vector<Value> args;
  ValueSet range;
};
struct OutputCall {
  std::uint32_t prim = 0;  // call index
  std::vector<Value> args;
};
struct Halted {};
struct Trapped {
  std::string reason;
};

using StepOutcome = std::variant<Next, InputChoice, OutputCall, Halted, Trapped>;

class ValueOutOfRange : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace trap {
inline constexpr const char* kDivideByZero = "divide-by-zero";
inline constexpr const char* kIntegerOverflow = "integer-overflow";
inline constexpr const char* kOutOfBounds = "out-of-bounds memory access";
inline constexpr const char* kStackUnderflow = "stack underflow";
inline constexpr const char* kCallStackExhausted = "call stack exhausted";
}  // namespace trap

/// A primitive call the machine is stopped at.
struct PendingCall {
  std::uint32_t call_index = 0;
  std::vector<Value> args;
};

enum class Advance : std::uint8_t { Stepped, Primitive, Halted, Trapped };

struct AdvanceResult {
  Advance kind = Advance::Stepped;
  const char* trap = nullptr;
};

namespace detail {

inline const Instruction* next_instruction(const ProgramConfig& c, const Program& p) {
  if (c.frames.empty()) return nullptr;
  const Frame& f = c.frames.back();
  const Label& l = f.labels.back();
  const Sequence& seq = p.functions[f.func].seqs[l.seq];
  return l.pc < seq.size() ? &seq[l.pc] : nullptr;
}

inline std::uint32_t u32(Value v) { return static_cast<std::uint32_t>(v); }
inline Value i32(std::uint32_t v) { return static_cast<Value>(v); }

// Pops the current frame and hands its results to the caller.
inline const char* return_from_function(ProgramConfig& c, const Program& p) {
  Frame& f = c.frames.back();
  const std::uint32_t results = p.functions[f.func].results;
  if (f.stack.size() < results) return trap::kStackUnderflow;
  std::vector<Value> out(f.stack.end() - results, f.stack.end());
  c.frames.pop_back();
  if (!c.frames.empty()) {
    auto& caller = c.frames.back().stack;
    caller.insert(caller.end(), out.begin(), out.end());
  }
  return nullptr;
}

inline const char* branch(ProgramConfig& c, const Program& p, std::uint32_t depth) {
  Frame& f = c.frames.back();
  const std::size_t target = f.labels.size() - 1 - depth;
  Label& l = f.labels[target];
  switch (l.kind) {
    case LabelKind::Func:
      return return_from_function(c, p);
    case LabelKind::Loop:
      f.stack.resize(l.height);
      l.pc = 0;
      f.labels.resize(target + 1);
      return nullptr;
    default:
      f.stack.resize(l.height);
      f.labels.resize(target);
      return nullptr;
  }
}

}  // namespace detail

/// The primitive call the config is stopped at, if any. Returns nullopt when
/// the next instruction is not a primitive call or its arguments are missing.
inline std::optional<PendingCall> pending_primitive(const ProgramConfig& c, const Program& p) {
  const Instruction* ins = detail::next_instruction(c, p);
  if (!ins || ins->op != Opcode::Call || !p.is_primitive(detail::u32(ins->imm))) return std::nullopt;
  const auto call = detail::u32(ins->imm);
  const auto arity = p.primitive(call).arity;
  const auto& stack = c.frames.back().stack;
  if (stack.size() < arity) return std::nullopt;
  return PendingCall{call, std::vector<Value>(stack.end() - arity, stack.end())};
}

/// Performs one base-language reduction in place. Stops without touching the
/// config at primitive calls, on halt, and on traps.
inline AdvanceResult advance(ProgramConfig& c, const Program& p) {
  using detail::i32;
  using detail::u32;
  if (c.frames.empty()) return {Advance::Halted};
  Frame& f = c.frames.back();
  Label& l = f.labels.back();
  const Sequence& seq = p.functions[f.func].seqs[l.seq];
  auto& st = f.stack;

  if (l.pc >= seq.size()) {
    // implicit `end`
    if (l.kind == LabelKind::Func) {
      if (const char* t = detail::return_from_function(c, p)) return {Advance::Trapped, t};
    } else {
      f.labels.pop_back();
    }
    ++c.step_index;
    return {Advance::Stepped};
  }

  const Instruction& ins = seq[l.pc];
  auto need = [&](std::size_t n) { return st.size() >= n; };
  auto underflow = AdvanceResult{Advance::Trapped, trap::kStackUnderflow};
  auto binary = [&](auto op) -> AdvanceResult {
    if (!need(2)) return underflow;
    const Value b = st.back();
    const Value a = st[st.size() - 2];
    st.pop_back();
    st.back() = op(a, b);
    ++l.pc;
    return {Advance::Stepped};
  };

  AdvanceResult r{Advance::Stepped};
  switch (ins.op) {
    case Opcode::Const:
      st.push_back(ins.imm);
      ++l.pc;
      break;
    case Opcode::Add:
      r = binary([](Value a, Value b) { return i32(u32(a) + u32(b)); });
      break;
    case Opcode::Sub:
      r = binary([](Value a, Value b) { return i32(u32(a) - u32(b)); });
      break;
    case Opcode::Mul:
      r = binary([](Value a, Value b) { return i32(u32(a) * u32(b)); });
      break;
    case Opcode::DivS: {
      if (!need(2)) return underflow;
      const Value b = st.back();
      const Value a = st[st.size() - 2];
      if (b == 0) return {Advance::Trapped, trap::kDivideByZero};
      if (a == std::numeric_limits<Value>::min() && b == -1)
        return {Advance::Trapped, trap::kIntegerOverflow};
      r = binary([](Value x, Value y) { return x / y; });
      break;
    }
    case Opcode::Eq:
      r = binary([](Value a, Value b) { return Value{a == b}; });
      break;
    case Opcode::Ne:
      r = binary([](Value a, Value b) { return Value{a != b}; });
      break;
    case Opcode::LtS:
      r = binary([](Value a, Value b) { return Value{a < b}; });
      break;
    case Opcode::GtS:
      r = binary([](Value a, Value b) { return Value{a > b}; });
      break;
    case Opcode::And:
      r = binary([](Value a, Value b) { return a & b; });
      break;
    case Opcode::Or:
      r = binary([](Value a, Value b) { return a | b; });
      break;
    case Opcode::Drop:
      if (!need(1)) return underflow;
      st.pop_back();
      ++l.pc;
      break;
    case Opcode::Nop:
      ++l.pc;
      break;
    case Opcode::LocalGet:
      st.push_back(f.locals[u32(ins.imm)]);
      ++l.pc;
      break;
    case Opcode::LocalSet:
      if (!need(1)) return underflow;
      f.locals[u32(ins.imm)] = st.back();
      st.pop_back();
      ++l.pc;
      break;
    case Opcode::LocalTee:
      if (!need(1)) return underflow;
      f.locals[u32(ins.imm)] = st.back();
      ++l.pc;
      break;
    case Opcode::GlobalGet:
      st.push_back(c.globals[u32(ins.imm)]);
      ++l.pc;
      break;
    case Opcode::GlobalSet:
      if (!need(1)) return underflow;
      c.globals[u32(ins.imm)] = st.back();
      st.pop_back();
      ++l.pc;
      break;
    case Opcode::Load: {
      if (!need(1)) return underflow;
      const std::uint64_t ea = std::uint64_t{u32(st.back())} + u32(ins.imm);
      if (ea + 4 > c.memory.size()) return {Advance::Trapped, trap::kOutOfBounds};
      std::uint32_t word = 0;
      for (int i = 3; i >= 0; --i) word = (word << 8) | c.memory[ea + static_cast<unsigned>(i)];
      st.back() = i32(word);
      ++l.pc;
      break;
    }
    case Opcode::Store: {
      if (!need(2)) return underflow;
      const std::uint32_t word = u32(st.back());
      const std::uint64_t ea = std::uint64_t{u32(st[st.size() - 2])} + u32(ins.imm);
      if (ea + 4 > c.memory.size()) return {Advance::Trapped, trap::kOutOfBounds};
      for (unsigned i = 0; i < 4; ++i) c.memory[ea + i] = static_cast<std::uint8_t>(word >> (8 * i));
      st.resize(st.size() - 2);
      ++l.pc;
      break;
    }
    case Opcode::Block:
    case Opcode::Loop: {
      ++l.pc;
      const auto height = static_cast<std::uint32_t>(st.size());
      f.labels.push_back({ins.op == Opcode::Block ? LabelKind::Block : LabelKind::Loop, u32(ins.imm),
                          0, height});
      break;
    }
    case Opcode::If: {
      if (!need(1)) return underflow;
      const Value cond = st.back();
      st.pop_back();
      ++l.pc;
      const auto height = static_cast<std::uint32_t>(st.size());
      if (cond != 0) {
        f.labels.push_back({LabelKind::If, u32(ins.imm), 0, height});
      } else if (ins.alt != -1) {
        f.labels.push_back({LabelKind::If, u32(ins.alt), 0, height});
      }
      break;
    }
    case Opcode::Br:
      if (const char* t = detail::branch(c, p, u32(ins.imm))) return {Advance::Trapped, t};
      break;
    case Opcode::BrIf: {
      if (!need(1)) return underflow;
      const Value cond = st.back();
      if (cond != 0) {
        // A trapping return must leave the config untouched.
        const Label& target = f.labels[f.labels.size() - 1 - u32(ins.imm)];
        if (target.kind == LabelKind::Func &&
            st.size() - 1 < p.functions[f.func].results)
          return underflow;
        st.pop_back();
        detail::branch(c, p, u32(ins.imm));
      } else {
        st.pop_back();
        ++l.pc;
      }
      break;
    }
    case Opcode::Call: {
      const auto call = u32(ins.imm);
      if (p.is_primitive(call)) {
        if (!need(p.primitive(call).arity)) return underflow;
        return {Advance::Primitive};
      }
      const std::uint32_t callee_idx = call - p.import_count();
      const Function& callee = p.functions[callee_idx];
      if (!need(callee.params)) return underflow;
      if (c.frames.size() >= kMaxCallDepth) return {Advance::Trapped, trap::kCallStackExhausted};
      Frame next;
      next.func = callee_idx;
      next.locals.assign(st.end() - callee.params, st.end());
      next.locals.resize(callee.params + callee.locals, 0);
      next.labels.push_back({LabelKind::Func, 0, 0, 0});
      st.resize(st.size() - callee.params);
      ++l.pc;
      c.frames.push_back(std::move(next));  // invalidates f, l, st
      break;
    }
    case Opcode::Return:
      if (const char* t = detail::return_from_function(c, p)) return {Advance::Trapped, t};
      break;
  }
  if (r.kind != Advance::Stepped) return r;
  ++c.step_index;
  return r;
}

/// Completes the primitive call the config is stopped at: consumes the
/// arguments, pushes `result` and advances the step index.
inline void complete_primitive(ProgramConfig& c, const Program& p, Value result) {
  Frame& f = c.frames.back();
  Label& l = f.labels.back();
  const auto call = detail::u32(p.functions[f.func].seqs[l.seq][l.pc].imm);
  f.stack.resize(f.stack.size() - p.primitive(call).arity);
  f.stack.push_back(result);
  ++l.pc;
  ++c.step_index;
}

/// One small step. `range` maps (call index, args) to the input range and is
/// only consulted at input primitive calls.
template <class RangeFn>
StepOutcome step(const ProgramConfig& config, const Program& program, RangeFn&& range) {
  if (auto call = pending_primitive(config, program)) {
    if (program.primitive(call->call_index).kind == PrimKind::In) {
      ValueSet r = range(call->call_index, call->args);
      return InputChoice{call->call_index, std::move(call->args), std::move(r)};
    }
    return OutputCall{call->call_index, std::move(call->args)};
  }
  ProgramConfig next = config;
  const AdvanceResult res = advance(next, program);
  switch (res.kind) {
    case Advance::Stepped:
      return Next{std::move(next)};
    case Advance::Halted:
      return Halted{};
    case Advance::Trapped:
      return Trapped{res.trap};
    case Advance::Primitive:
      break;
  }
  return Trapped{trap::kStackUnderflow};  // unreachable: pending_primitive covers it
}

/// Step using the primitives' base ranges (no environment).
inline StepOutcome step(const ProgramConfig& config, const Program& program) {
  return step(config, program, [&](std::uint32_t call, const std::vector<Value>&) {
    return program.primitive(call).base_range;
  });
}

/// Resolves the input choice the config is stopped at with `value`.
inline ProgramConfig resolve_input(const ProgramConfig& config, const Program& program, Value value,
                                   const ValueSet& range) {
  auto call = pending_primitive(config, program);
  if (!call || program.primitive(call->call_index).kind != PrimKind::In)
    throw std::logic_error("resolve_input: config is not at an input primitive");
  if (!contains(range, value))
    throw ValueOutOfRange("value " + std::to_string(value) + " not in range of " +
                          std::string(program.primitive(call->call_index).name));
  ProgramConfig next = config;
  complete_primitive(next, program, value);
  return next;
}

inline ProgramConfig resolve_input(const ProgramConfig& config, const Program& program, Value value) {
  auto call = pending_primitive(config, program);
  if (!call) throw std::logic_error("resolve_input: config is not at a primitive call");
  return resolve_input(config, program, value, program.primitive(call->call_index).base_range);
}

struct PrimitiveCrossing {
  PrimKind kind = PrimKind::In;
  std::uint32_t call_index = 0;
  std::vector<Value> args;
  Value value = 0;
  std::uint64_t step_index = 0;  // index of the config before the call

  friend bool operator==(const PrimitiveCrossing&, const PrimitiveCrossing&) = default;
};

enum class RunStop : std::uint8_t { MaxSteps, Halted, Trapped };

struct RunResult {
  ProgramConfig config;
  std::vector<PrimitiveCrossing> trace;
  RunStop stop = RunStop::MaxSteps;
  std::string trap;
};

/// Executes up to `max_steps` base steps. `host` resolves primitives:
///   ValueSet host.input_range(call, args)
///   Value    host.choose(call, args, range)
///   Value    host.output(call, args)
template <class Host>
RunResult run_steps(ProgramConfig config, const Program& program, Host&& host,
                    std::uint64_t max_steps) {
  RunResult out;
  for (std::uint64_t i = 0; i < max_steps; ++i) {
    const AdvanceResult res = advance(config, program);
    if (res.kind == Advance::Stepped) continue;
    if (res.kind == Advance::Halted) {
      out.stop = RunStop::Halted;
      break;
    }
    if (res.kind == Advance::Trapped) {
      out.stop = RunStop::Trapped;
      out.trap = res.trap;
      break;
    }
    auto call = *pending_primitive(config, program);
    PrimitiveCrossing crossing;
    crossing.call_index = call.call_index;
    crossing.step_index = config.step_index;
    crossing.kind = program.primitive(call.call_index).kind;
    if (crossing.kind == PrimKind::In) {
      const ValueSet range = host.input_range(call.call_index, call.args);
      crossing.value = host.choose(call.call_index, call.args, range);
      if (!contains(range, crossing.value))
        throw ValueOutOfRange("input resolver returned a value outside the range");
    } else {
      crossing.value = host.output(call.call_index, call.args);
    }
    complete_primitive(config, program, crossing.value);
    crossing.args = std::move(call.args);
    out.trace.push_back(std::move(crossing));
  }
  out.config = std::move(config);
  return out;
}

}  // namespace mvdb
