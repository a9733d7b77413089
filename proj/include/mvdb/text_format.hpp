#pragma once

#include <charconv>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mvdb/environment.hpp"
#include "mvdb/program.hpp"

namespace mvdb {

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

namespace detail {

inline std::vector<std::string_view> split_words(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::string_view strip_comment(std::string_view line) {
  const auto semi = line.find(';');
  return semi == std::string_view::npos ? line : line.substr(0, semi);
}

template <class Int>
std::optional<Int> parse_int(std::string_view s) {
  Int v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::vector<std::string_view> lines_of(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto nl = text.find('\n', start);
    if (nl == std::string_view::npos) {
      if (start < text.size()) out.push_back(text.substr(start));
      break;
    }
    out.push_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  return out;
}

struct Mnemonic {
  std::string_view text;
  Opcode op;
  bool immediate;
};

inline constexpr Mnemonic kMnemonics[] = {
    {"i32.const", Opcode::Const, true},   {"i32.add", Opcode::Add, false},
    {"i32.sub", Opcode::Sub, false},      {"i32.mul", Opcode::Mul, false},
    {"i32.div_s", Opcode::DivS, false},   {"i32.eq", Opcode::Eq, false},
    {"i32.ne", Opcode::Ne, false},        {"i32.lt_s", Opcode::LtS, false},
    {"i32.gt_s", Opcode::GtS, false},     {"i32.and", Opcode::And, false},
    {"i32.or", Opcode::Or, false},        {"drop", Opcode::Drop, false},
    {"nop", Opcode::Nop, false},          {"local.get", Opcode::LocalGet, true},
    {"local.set", Opcode::LocalSet, true}, {"local.tee", Opcode::LocalTee, true},
    {"global.get", Opcode::GlobalGet, true}, {"global.set", Opcode::GlobalSet, true},
    {"i32.load", Opcode::Load, true},     {"i32.store", Opcode::Store, true},
    {"block", Opcode::Block, false},      {"loop", Opcode::Loop, false},
    {"if", Opcode::If, false},            {"br", Opcode::Br, true},
    {"br_if", Opcode::BrIf, true},        {"call", Opcode::Call, true},
    {"return", Opcode::Return, false},
};

inline std::string_view mnemonic_of(Opcode op) {
  for (const auto& m : kMnemonics) {
    if (m.op == op) return m.text;
  }
  return "?";
}

}  // namespace detail

/// Parses the line-oriented assembly format and validates the result.
inline Program load_program_text(std::string_view text) {
  using detail::parse_int;
  Program program;
  enum class Section { Prims, Globals, Funcs } section = Section::Prims;
  // open constructs of the function being parsed: (seq, instruction owning it)
  struct Open {
    std::uint32_t seq;
    std::optional<std::size_t> owner_seq;  // seq holding the block/loop/if
    std::size_t owner_index = 0;
    bool is_if = false;
    bool in_else = false;
  };
  std::vector<Open> open;
  Function* fn = nullptr;
  std::map<std::tuple<std::uint32_t, std::uint32_t, std::uint32_t>, std::size_t> line_of;
  std::size_t fn_line = 0;

  const auto lines = detail::lines_of(text);
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const std::size_t line_no = ln + 1;
    const auto words = detail::split_words(detail::strip_comment(lines[ln]));
    if (words.empty()) continue;
    auto fail = [&](const std::string& what) { throw ParseError(line_no, what); };
    auto int_arg = [&](std::size_t i) -> std::int32_t {
      if (i >= words.size()) fail("missing operand for '" + std::string(words[0]) + "'");
      auto v = parse_int<std::int32_t>(words[i]);
      if (!v) fail("expected an integer, got '" + std::string(words[i]) + "'");
      return *v;
    };
    auto expect_words = [&](std::size_t n) {
      if (words.size() > n) fail("unexpected token '" + std::string(words[n]) + "'");
    };

    if (!fn) {
      if (words[0] == "prim") {
        if (section != Section::Prims) fail("primitive declarations must come first");
        if (words.size() != 4) fail("expected: prim in|out <name> <arity>");
        auto id = find_primitive(words[2]);
        if (!id) fail("unknown primitive '" + std::string(words[2]) + "'");
        const PrimitiveInfo& info = primitive_info(*id);
        if ((words[1] == "in") != (info.kind == PrimKind::In) || (words[1] != "in" && words[1] != "out"))
          fail("primitive '" + std::string(words[2]) + "' is declared with the wrong kind");
        if (int_arg(3) != static_cast<std::int32_t>(info.arity))
          fail("primitive '" + std::string(words[2]) + "' takes " + std::to_string(info.arity) +
               " arguments");
        program.imports.push_back({std::string(words[2]), *id});
      } else if (words[0] == "memory") {
        if (section == Section::Funcs) fail("memory must be declared before functions");
        expect_words(2);
        const auto size = int_arg(1);
        if (size <= 0) fail("memory size must be positive");
        program.memory_size = static_cast<std::uint32_t>(size);
      } else if (words[0] == "global") {
        if (section == Section::Funcs) fail("globals must be declared before functions");
        section = Section::Globals;
        expect_words(2);
        program.globals.push_back(int_arg(1));
      } else if (words[0] == "func") {
        section = Section::Funcs;
        if (words.size() < 3 || words.size() > 4) fail("expected: func <params> <locals> [results]");
        Function f;
        const auto params = int_arg(1), locals = int_arg(2);
        const auto results = words.size() == 4 ? int_arg(3) : 0;
        if (params < 0 || locals < 0 || results < 0 || results > 1) fail("bad function signature");
        f.params = static_cast<std::uint32_t>(params);
        f.locals = static_cast<std::uint32_t>(locals);
        f.results = static_cast<std::uint32_t>(results);
        program.functions.push_back(std::move(f));
        fn = &program.functions.back();
        fn_line = line_no;
        open.assign(1, Open{0, std::nullopt, 0, false, false});
      } else {
        fail("unexpected '" + std::string(words[0]) + "' outside a function");
      }
      continue;
    }

    const auto func_idx = static_cast<std::uint32_t>(program.functions.size() - 1);
    Open& top = open.back();
    if (words[0] == "end") {
      expect_words(1);
      open.pop_back();
      if (open.empty()) fn = nullptr;
      continue;
    }
    if (words[0] == "else") {
      expect_words(1);
      if (!top.is_if || top.in_else) fail("'else' without a matching 'if'");
      const auto else_seq = static_cast<std::uint32_t>(fn->seqs.size());
      fn->seqs.emplace_back();
      fn->seqs[*top.owner_seq][top.owner_index].alt = static_cast<std::int32_t>(else_seq);
      top.seq = else_seq;
      top.in_else = true;
      continue;
    }
    const detail::Mnemonic* m = nullptr;
    for (const auto& cand : detail::kMnemonics) {
      if (cand.text == words[0]) m = &cand;
    }
    if (!m) fail("unknown mnemonic '" + std::string(words[0]) + "'");
    Instruction ins;
    ins.op = m->op;
    if (m->immediate) {
      ins.imm = int_arg(1);
      expect_words(2);
    } else {
      expect_words(1);
    }
    const std::uint32_t seq = top.seq;
    const auto index = static_cast<std::uint32_t>(fn->seqs[seq].size());
    line_of[{func_idx, seq, index}] = line_no;
    if (m->op == Opcode::Block || m->op == Opcode::Loop || m->op == Opcode::If) {
      const auto body = static_cast<std::uint32_t>(fn->seqs.size());
      ins.imm = static_cast<std::int32_t>(body);
      fn->seqs[seq].push_back(ins);
      fn->seqs.emplace_back();
      open.push_back(Open{body, seq, index, m->op == Opcode::If, false});
    } else {
      fn->seqs[seq].push_back(ins);
    }
  }
  if (fn) throw ParseError(fn_line, "function is missing its closing 'end'");
  if (program.functions.empty()) throw ParseError(lines.size(), "program has no functions");

  if (auto errors = validate_program(program); !errors.empty()) {
    const auto& e = errors.front();
    auto it = line_of.find({e.func, e.seq, e.index});
    throw ParseError(it == line_of.end() ? 0 : it->second, e.message);
  }
  return program;
}

/// Inverse of load_program_text (modulo comments and layout).
inline std::string format_program(const Program& program) {
  std::ostringstream out;
  for (const auto& imp : program.imports) {
    const auto& info = primitive_info(imp.prim);
    out << "prim " << (info.kind == PrimKind::In ? "in" : "out") << ' ' << imp.name << ' '
        << info.arity << '\n';
  }
  if (program.memory_size != kDefaultMemorySize) out << "memory " << program.memory_size << '\n';
  for (Value g : program.globals) out << "global " << g << '\n';
  for (const auto& fn : program.functions) {
    out << "func " << fn.params << ' ' << fn.locals;
    if (fn.results) out << ' ' << fn.results;
    out << '\n';
    auto emit = [&](auto&& self, std::uint32_t seq, int indent) -> void {
      const std::string pad(static_cast<std::size_t>(indent) * 2, ' ');
      for (const auto& ins : fn.seqs[seq]) {
        out << pad << detail::mnemonic_of(ins.op);
        switch (ins.op) {
          case Opcode::Block:
          case Opcode::Loop:
            out << '\n';
            self(self, static_cast<std::uint32_t>(ins.imm), indent + 1);
            out << pad << "end\n";
            break;
          case Opcode::If:
            out << '\n';
            self(self, static_cast<std::uint32_t>(ins.imm), indent + 1);
            if (ins.alt != -1) {
              out << pad << "else\n";
              self(self, static_cast<std::uint32_t>(ins.alt), indent + 1);
            }
            out << pad << "end\n";
            break;
          case Opcode::Const: case Opcode::LocalGet: case Opcode::LocalSet: case Opcode::LocalTee:
          case Opcode::GlobalGet: case Opcode::GlobalSet: case Opcode::Load: case Opcode::Store:
          case Opcode::Br: case Opcode::BrIf: case Opcode::Call:
            out << ' ' << ins.imm << '\n';
            break;
          default:
            out << '\n';
        }
      }
    };
    emit(emit, 0, 1);
    out << "end\n";
  }
  return out.str();
}

/// Parses an environment setup file. Conflicting dependency rules are
/// accepted (the later one wins); their warnings go to `warnings`.
inline Environment load_env_text(std::string_view text, std::vector<std::string>* warnings = nullptr) {
  using detail::parse_int;
  Environment env;
  const auto lines = detail::lines_of(text);
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const std::size_t line_no = ln + 1;
    const std::string_view body = detail::strip_comment(lines[ln]);
    auto words = detail::split_words(body);
    if (words.empty()) continue;
    auto fail = [&](const std::string& what) { throw ParseError(line_no, what); };
    auto int_at = [&](std::size_t i) -> int {
      if (i >= words.size()) fail("missing value");
      auto v = parse_int<int>(words[i]);
      if (!v) fail("expected an integer, got '" + std::string(words[i]) + "'");
      return *v;
    };
    if (words[0] == "pin") {
      if (words.size() != 3) fail("expected: pin <id> <0|1>");
      const int level = int_at(2);
      if (level != 0 && level != 1) fail("pin level must be 0 or 1");
      env.pins[int_at(1)] = level;
    } else if (words[0] == "motor") {
      if (words.size() != 3) fail("expected: motor <id> <angle>");
      env.encoders[int_at(1)] = int_at(2);
    } else if (words[0] == "sensor") {
      if (words.size() < 4) fail("expected: sensor <id> fixed <v> | sensor <id> script <v>...");
      const std::string id(words[1]);
      const bool is_color = id == "color";
      if (!is_color && !parse_int<int>(id)) fail("sensor id must be 'color' or a pin number");
      const ValueSet& range = primitive_info(is_color ? PrimId::ColorSensor : PrimId::DigitalRead).base_range;
      SensorSource src;
      if (words[2] == "fixed") {
        if (words.size() != 4) fail("a fixed sensor takes exactly one value");
        src.kind = SensorSource::Kind::Fixed;
      } else if (words[2] == "script") {
        src.kind = SensorSource::Kind::Script;
      } else {
        fail("sensor source must be 'fixed' or 'script'");
      }
      for (std::size_t i = 3; i < words.size(); ++i) {
        const int v = int_at(i);
        if (!contains(range, v)) fail("sensor value " + std::to_string(v) + " is outside the sensor's range");
        src.values.push_back(v);
      }
      env.sensors[id] = std::move(src);
    } else if (words[0] == "rule") {
      // rule pin <n> <x> => prim <name> (<args>) = <c>
      const auto open_paren = body.find('(');
      const auto close_paren = body.find(')');
      if (open_paren == std::string_view::npos || close_paren == std::string_view::npos ||
          close_paren < open_paren)
        fail("expected: rule pin <n> <x> => prim <name> (<args>) = <c>");
      const auto head = detail::split_words(body.substr(0, open_paren));
      std::string args_text(body.substr(open_paren + 1, close_paren - open_paren - 1));
      for (char& ch : args_text) {
        if (ch == ',') ch = ' ';
      }
      const auto tail = detail::split_words(body.substr(close_paren + 1));
      if (head.size() != 7 || head[1] != "pin" || head[4] != "=>" || head[5] != "prim" ||
          tail.size() != 2 || tail[0] != "=")
        fail("expected: rule pin <n> <x> => prim <name> (<args>) = <c>");
      words = head;
      DependencyRule rule;
      rule.pin = int_at(2);
      rule.level = int_at(3);
      if (rule.level != 0 && rule.level != 1) fail("pin level must be 0 or 1");
      auto prim = find_primitive(head[6]);
      if (!prim) fail("unknown primitive '" + std::string(head[6]) + "'");
      rule.prim = *prim;
      for (auto a : detail::split_words(args_text)) {
        if (a == "*" || a == "_") {
          rule.args.emplace_back();
        } else if (auto v = parse_int<Value>(a)) {
          rule.args.emplace_back(*v);
        } else {
          fail("bad rule argument '" + std::string(a) + "'");
        }
      }
      auto forced = parse_int<Value>(tail[1]);
      if (!forced) fail("bad forced value '" + std::string(tail[1]) + "'");
      rule.forced = *forced;
      try {
        if (auto w = register_dependency(env, std::move(rule)); w && warnings)
          warnings->push_back("line " + std::to_string(line_no) + ": " + *w);
      } catch (const PrimitiveError& e) {
        fail(e.what());
      }
    } else {
      fail("unknown directive '" + std::string(words[0]) + "'");
    }
  }
  return env;
}

}  // namespace mvdb
