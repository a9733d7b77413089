#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvdb/primitives.hpp"

namespace mvdb {

enum class Opcode : std::uint8_t {
  Const,
  Add,
  Sub,
  Mul,
  DivS,
  Eq,
  Ne,
  LtS,
  GtS,
  And,
  Or,
  Drop,
  Nop,
  LocalGet,
  LocalSet,
  LocalTee,
  GlobalGet,
  GlobalSet,
  Load,
  Store,
  Block,
  Loop,
  If,
  Br,
  BrIf,
  Call,
  Return,
};

/// One instruction. Structured instructions reference nested bodies by
/// sequence index within the owning function: `imm` is the body (then-arm for
/// `if`), `alt` the else-arm or -1.
struct Instruction {
  Opcode op = Opcode::Nop;
  std::int32_t imm = 0;
  std::int32_t alt = -1;

  friend bool operator==(const Instruction&, const Instruction&) = default;
};

using Sequence = std::vector<Instruction>;

struct Function {
  std::uint32_t params = 0;
  std::uint32_t locals = 0;
  std::uint32_t results = 0;  // 0 or 1
  /// seqs[0] is the function body; nested blocks live at higher indices.
  std::vector<Sequence> seqs{Sequence{}};

  friend bool operator==(const Function&, const Function&) = default;
};

struct Import {
  std::string name;
  PrimId prim = PrimId::Delay;

  friend bool operator==(const Import&, const Import&) = default;
};

inline constexpr std::uint32_t kDefaultMemorySize = 4096;

struct Program {
  std::vector<Import> imports;      // call indices 0..P-1
  std::vector<Function> functions;  // call indices P..; functions[0] is the entry
  std::vector<Value> globals;
  std::uint32_t memory_size = kDefaultMemorySize;

  std::uint32_t import_count() const { return static_cast<std::uint32_t>(imports.size()); }
  bool is_primitive(std::uint32_t call_index) const { return call_index < imports.size(); }
  const PrimitiveInfo& primitive(std::uint32_t call_index) const {
    return primitive_info(imports.at(call_index).prim);
  }
  const Function& function_at_call(std::uint32_t call_index) const {
    return functions.at(call_index - import_count());
  }
  /// Call index of the call-index-space name, or -1.
  std::int64_t import_index(std::string_view name) const {
    for (std::size_t i = 0; i < imports.size(); ++i) {
      if (imports[i].name == name) return static_cast<std::int64_t>(i);
    }
    return -1;
  }

  friend bool operator==(const Program&, const Program&) = default;
};

struct ValidationError {
  std::uint32_t func = 0;
  std::uint32_t seq = 0;
  std::uint32_t index = 0;
  std::string message;

  std::string to_string() const {
    return "func " + std::to_string(func) + " seq " + std::to_string(seq) + " instr " +
           std::to_string(index) + ": " + message;
  }
};

namespace detail {

inline void validate_sequence(const Program& program, std::uint32_t func_idx, std::uint32_t seq_idx,
                              std::uint32_t depth, std::vector<bool>& seen,
                              std::vector<ValidationError>& errors) {
  const Function& fn = program.functions[func_idx];
  if (seen[seq_idx]) {
    errors.push_back({func_idx, seq_idx, 0, "body referenced more than once"});
    return;
  }
  seen[seq_idx] = true;
  const auto& seq = fn.seqs[seq_idx];
  const auto total_locals = fn.params + fn.locals;
  const auto callees = program.import_count() + program.functions.size();
  auto err = [&](std::uint32_t i, std::string msg) {
    errors.push_back({func_idx, seq_idx, i, std::move(msg)});
  };
  auto body_ok = [&](std::int32_t idx) {
    return idx > 0 && static_cast<std::size_t>(idx) < fn.seqs.size();
  };
  for (std::uint32_t i = 0; i < seq.size(); ++i) {
    const Instruction& ins = seq[i];
    switch (ins.op) {
      case Opcode::LocalGet:
      case Opcode::LocalSet:
      case Opcode::LocalTee:
        if (ins.imm < 0 || static_cast<std::uint32_t>(ins.imm) >= total_locals)
          err(i, "local index out of range");
        break;
      case Opcode::GlobalGet:
      case Opcode::GlobalSet:
        if (ins.imm < 0 || static_cast<std::size_t>(ins.imm) >= program.globals.size())
          err(i, "global index out of range");
        break;
      case Opcode::Load:
      case Opcode::Store:
        if (ins.imm < 0) err(i, "negative memory offset");
        break;
      case Opcode::Br:
      case Opcode::BrIf:
        if (ins.imm < 0 || static_cast<std::uint32_t>(ins.imm) >= depth)
          err(i, "label out of range");
        break;
      case Opcode::Call:
        if (ins.imm < 0 || static_cast<std::size_t>(ins.imm) >= callees) err(i, "unknown callee");
        break;
      case Opcode::Block:
      case Opcode::Loop:
        if (!body_ok(ins.imm)) {
          err(i, "invalid block body");
        } else {
          validate_sequence(program, func_idx, static_cast<std::uint32_t>(ins.imm), depth + 1, seen,
                            errors);
        }
        break;
      case Opcode::If:
        if (!body_ok(ins.imm) || (ins.alt != -1 && !body_ok(ins.alt))) {
          err(i, "invalid if body");
        } else {
          validate_sequence(program, func_idx, static_cast<std::uint32_t>(ins.imm), depth + 1, seen,
                            errors);
          if (ins.alt != -1)
            validate_sequence(program, func_idx, static_cast<std::uint32_t>(ins.alt), depth + 1,
                              seen, errors);
        }
        break;
      default:
        break;
    }
  }
}

}  // namespace detail

/// Static checks standing in for Wasm validation. Never throws; an empty
/// result means the program is valid.
inline std::vector<ValidationError> validate_program(const Program& program) {
  std::vector<ValidationError> errors;
  if (program.functions.empty()) {
    errors.push_back({0, 0, 0, "program has no entry function"});
    return errors;
  }
  if (program.memory_size == 0) errors.push_back({0, 0, 0, "memory size must be positive"});
  for (std::uint32_t f = 0; f < program.functions.size(); ++f) {
    const Function& fn = program.functions[f];
    if (fn.results > 1) errors.push_back({f, 0, 0, "functions return at most one value"});
    if (fn.seqs.empty()) {
      errors.push_back({f, 0, 0, "function has no body"});
      continue;
    }
    std::vector<bool> seen(fn.seqs.size(), false);
    detail::validate_sequence(program, f, 0, 1, seen, errors);
  }
  return errors;
}

}  // namespace mvdb
