#pragma once

// Shared fixtures and oracles for the unit and acceptance suites. The
// oracles below only use the base machine and the environment model, never
// the debugger, so they can judge it independently.

#include <fstream>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mvdb/mvdb.hpp"

namespace mvdb::testing {

inline std::shared_ptr<const Program> parse(std::string_view text) {
  return std::make_shared<const Program>(load_program_text(text));
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

#ifdef MVDB_PROGRAMS_DIR
inline std::string program_path(const std::string& name) { return std::string(MVDB_PROGRAMS_DIR) + "/" + name; }
#endif

// ---- random programs --------------------------------------------------------

struct GenOptions {
  std::size_t max_instructions = 40;
  int max_input_sites = 2;
  bool outputs = true;
  bool loops = true;
};

/// Generates a valid single-function program over digital_read (range 2),
/// digital_write, rotate and delay. Stack heights are tracked so most
/// generated code runs; the occasional trap is intended.
class ProgramGenerator {
 public:
  explicit ProgramGenerator(std::uint64_t seed, GenOptions opt = {}) : rng_(seed), opt_(opt) {}

  /// Retries until the program fits the instruction budget.
  Program next() {
    for (;;) {
      Program p = attempt();
      std::size_t n = 0;
      for (const auto& s : p.functions[0].seqs) n += s.size();
      if (n <= opt_.max_instructions) return p;
    }
  }

 private:
  Program attempt() {
    Program p;
    p.imports = {{"digital_read", PrimId::DigitalRead},
                 {"digital_write", PrimId::DigitalWrite},
                 {"rotate", PrimId::Rotate},
                 {"delay", PrimId::Delay}};
    p.globals = {pick(-3, 3), pick(-3, 3)};
    p.memory_size = 64;
    Function f;
    f.params = 0;
    f.locals = 2;
    f.seqs.emplace_back();
    budget_ = opt_.max_instructions;
    inputs_left_ = opt_.max_input_sites;
    depth_ = 0;
    fn_ = &f;
    body(0, 0, 8, 30);  // the top level uses most of the budget
    p.functions.push_back(std::move(f));
    return p;
  }

  int pick(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  bool chance(int percent) { return pick(0, 99) < percent; }

  void emit(std::uint32_t seq, Opcode op, std::int32_t imm = 0, std::int32_t alt = -1) {
    fn_->seqs[seq].push_back({op, imm, alt});
    if (budget_ > 0) --budget_;
  }

  // Fills sequence `seq`; `h` is the stack height on entry.
  void body(std::uint32_t seq, int h, int lo = 1, int hi = 10) {
    const auto target = static_cast<std::size_t>(pick(lo, hi));
    for (std::size_t n = 0; n < target && budget_ > 0; ++n) h = instruction(seq, h);
  }

  int instruction(std::uint32_t seq, int h) {
    const int r = pick(0, 99);
    if (r < 14) {
      emit(seq, Opcode::Const, pick(-2, 5));
      return h + 1;
    }
    if (r < 20) {
      emit(seq, Opcode::LocalGet, pick(0, 1));
      return h + 1;
    }
    if (r < 24) {
      emit(seq, Opcode::GlobalGet, pick(0, 1));
      return h + 1;
    }
    if (r < 40 && h >= 2) {
      static constexpr Opcode ops[] = {Opcode::Add, Opcode::Sub, Opcode::Mul, Opcode::DivS, Opcode::Eq,
                                       Opcode::Ne,  Opcode::LtS, Opcode::GtS, Opcode::And, Opcode::Or};
      emit(seq, ops[pick(0, 9)]);
      return h - 1;
    }
    if (r < 48 && h >= 1) {
      const int which = pick(0, 3);
      if (which == 0) emit(seq, Opcode::LocalSet, pick(0, 1));
      if (which == 1) emit(seq, Opcode::LocalTee, pick(0, 1));
      if (which == 2) emit(seq, Opcode::GlobalSet, pick(0, 1));
      if (which == 3) emit(seq, Opcode::Drop);
      return which == 1 ? h : h - 1;
    }
    if (r < 52) {
      emit(seq, Opcode::Const, pick(0, 15) * 4);
      if (chance(50)) {
        emit(seq, Opcode::Load, pick(0, 1) * 4);
        return h + 1;
      }
      emit(seq, Opcode::Const, pick(0, 300));
      emit(seq, Opcode::Store, 0);
      return h;
    }
    if (r < 62 && inputs_left_ > 0) {
      --inputs_left_;
      emit(seq, Opcode::Const, pick(2, 3));
      emit(seq, Opcode::Call, 0);
      return h + 1;
    }
    if (r < 72 && opt_.outputs) {
      const int which = pick(0, 2);
      if (which == 0) {
        emit(seq, Opcode::Const, pick(12, 13));
        if (h >= 1 && chance(50)) {
          emit(seq, Opcode::LocalTee, 0);
        } else {
          emit(seq, Opcode::Const, pick(0, 1));
        }
        emit(seq, Opcode::Call, 1);
      } else if (which == 1) {
        emit(seq, Opcode::Const, pick(0, 1));
        emit(seq, Opcode::Const, pick(-90, 90));
        emit(seq, Opcode::Call, 2);
      } else {
        emit(seq, Opcode::Const, pick(1, 100));
        emit(seq, Opcode::Call, 3);
      }
      emit(seq, Opcode::Drop);
      return h;
    }
    if (r < 84 && depth_ < 3 && budget_ > 3) {
      const int kind = pick(0, 2);
      if (kind == 2 && h < 1) return h;
      if (kind == 1 && !opt_.loops) return h;
      const auto inner = static_cast<std::uint32_t>(fn_->seqs.size());
      fn_->seqs.emplace_back();
      const Opcode op = kind == 0 ? Opcode::Block : kind == 1 ? Opcode::Loop : Opcode::If;
      std::int32_t alt = -1;
      emit(seq, op, static_cast<std::int32_t>(inner));
      const std::size_t at = fn_->seqs[seq].size() - 1;
      const int inner_h = kind == 2 ? h - 1 : h;
      ++depth_;
      body(inner, 0);
      if (kind == 1) {
        // keep loops finite-ish: exit on a counter in local 1
        emit(inner, Opcode::LocalGet, 1);
        emit(inner, Opcode::Const, 1);
        emit(inner, Opcode::Add);
        emit(inner, Opcode::LocalTee, 1);
        emit(inner, Opcode::Const, pick(2, 3));
        emit(inner, Opcode::LtS);
        emit(inner, Opcode::BrIf, 0);
      } else if (chance(30)) {
        emit(inner, Opcode::Const, pick(0, 1));
        emit(inner, Opcode::BrIf, pick(0, depth_ - 1));
      }
      if (kind == 2 && chance(50)) {
        alt = static_cast<std::int32_t>(fn_->seqs.size());
        fn_->seqs.emplace_back();
        body(static_cast<std::uint32_t>(alt), 0);
        fn_->seqs[seq][at].alt = alt;
      }
      --depth_;
      return inner_h;
    }
    if (r < 86) {
      emit(seq, Opcode::Nop);
      return h;
    }
    if (r < 88 && h >= 1) {
      emit(seq, Opcode::Return);
      return h;
    }
    emit(seq, Opcode::Const, pick(0, 3));
    return h + 1;
  }

  std::mt19937_64 rng_;
  GenOptions opt_;
  std::size_t budget_ = 0;
  int inputs_left_ = 0;
  int depth_ = 0;
  Function* fn_ = nullptr;
};

inline std::size_t instruction_count(const Program& p) {
  std::size_t n = 0;
  for (const auto& f : p.functions)
    for (const auto& s : f.seqs) n += s.size();
  return n;
}

// ---- random configurations -------------------------------------------------

/// Arbitrary (not necessarily reachable) configuration for codec round trips.
inline ProgramConfig random_config(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> small(0, 4);
  std::uniform_int_distribution<Value> any(INT32_MIN, INT32_MAX);
  std::uniform_int_distribution<int> byte(0, 255), coin(0, 3);
  ProgramConfig c;
  c.step_index = rng() >> (rng() % 64);
  for (int i = small(rng); i > 0; --i) c.globals.push_back(any(rng));
  const int mem = small(rng) * 37;
  int b = 0;
  for (int i = 0; i < mem; ++i) {
    if (coin(rng) == 0) b = byte(rng);  // long runs are the common case
    c.memory.push_back(static_cast<std::uint8_t>(b));
  }
  for (int f = small(rng); f > 0; --f) {
    Frame fr;
    fr.func = static_cast<std::uint32_t>(small(rng));
    for (int i = small(rng); i > 0; --i) fr.locals.push_back(any(rng));
    for (int i = small(rng); i > 0; --i) fr.stack.push_back(any(rng));
    for (int i = small(rng) + 1; i > 0; --i)
      fr.labels.push_back({static_cast<LabelKind>(small(rng) % 4), static_cast<std::uint32_t>(small(rng)),
                           static_cast<std::uint32_t>(rng() % 1000), static_cast<std::uint32_t>(small(rng))});
    c.frames.push_back(std::move(fr));
  }
  return c;
}

// ---- base-semantics tree oracle -----------------------------------------------

struct OracleEdge {
  EdgeLabel::Kind kind = EdgeLabel::Kind::Plain;
  Value value = 0;
  std::uint32_t call = 0;
  std::vector<Value> args;
};

struct OracleNode {
  ProgramConfig config;
  Environment env;
  std::optional<std::size_t> parent;
  OracleEdge edge;
  std::vector<ExternalEffect> trace;  // straight-line external trace
  std::vector<std::size_t> children;
};

/// Every execution of `program` from `env` up to `max_depth` steps, built
/// from step/resolve_input and the environment model only.
struct BaseTree {
  std::vector<OracleNode> nodes;
  std::map<std::pair<std::uint64_t, std::uint64_t>, std::vector<std::size_t>> by_digest;  // (depth, digest)

  bool contains(const ProgramConfig& c) const {
    auto it = by_digest.find({c.step_index, config_digest(c)});
    if (it == by_digest.end()) return false;
    for (std::size_t i : it->second) {
      if (nodes[i].config == c) return true;
    }
    return false;
  }

  std::vector<std::size_t> leaves() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (nodes[i].children.empty()) out.push_back(i);
    }
    return out;
  }

  std::vector<std::size_t> path_to(std::size_t i) const {
    std::vector<std::size_t> path;
    for (std::optional<std::size_t> at = i; at; at = nodes[*at].parent) path.push_back(*at);
    return {path.rbegin(), path.rend()};
  }
};

inline BaseTree enumerate_tree(const Program& program, const Environment& env, std::uint64_t max_depth,
                               std::size_t max_nodes = 200000) {
  BaseTree t;
  OracleNode root;
  root.config = initial_config(program);
  root.env = env;
  t.nodes.push_back(std::move(root));
  for (std::size_t i = 0; i < t.nodes.size(); ++i) {
    if (t.nodes.size() > max_nodes) throw std::runtime_error("oracle tree too large");
    t.by_digest[{t.nodes[i].config.step_index, config_digest(t.nodes[i].config)}].push_back(i);
    if (t.nodes[i].config.step_index >= max_depth) continue;
    const Environment here_env = t.nodes[i].env;  // copy: add() may reallocate nodes
    StepOutcome out = step(t.nodes[i].config, program, [&](std::uint32_t call, const std::vector<Value>& args) {
      return input_range(here_env, program.imports[call].prim, args);
    });
    auto add = [&](ProgramConfig c, Environment e, OracleEdge edge, std::vector<ExternalEffect> trace) {
      OracleNode n{std::move(c), std::move(e), i, std::move(edge), std::move(trace), {}};
      t.nodes[i].children.push_back(t.nodes.size());
      t.nodes.push_back(std::move(n));
    };
    if (auto* next = std::get_if<Next>(&out)) {
      add(next->config, here_env, {}, t.nodes[i].trace);
    } else if (auto* in = std::get_if<InputChoice>(&out)) {
      for (Value v : in->range) {
        add(resolve_input(t.nodes[i].config, program, v, in->range), here_env,
            {EdgeLabel::Kind::Input, v, in->prim, in->args}, t.nodes[i].trace);
      }
    } else if (auto* o = std::get_if<OutputCall>(&out)) {
      Environment e = here_env;
      const PrimId prim = program.imports[o->prim].prim;
      OutputResult r = perform_output(e, prim, o->args);
      ProgramConfig c = t.nodes[i].config;
      complete_primitive(c, program, r.ret);
      auto trace = t.nodes[i].trace;
      trace.push_back({EffectKind::Applied, o->prim, prim, o->args, r.ret});
      add(std::move(c), std::move(e), {EdgeLabel::Kind::Output, r.ret, o->prim, o->args}, std::move(trace));
    }
  }
  return t;
}

/// The environment and external trace of the straight-line run that follows
/// the input labels along a multiverse path.
struct StraightLine {
  ProgramConfig config;
  Environment env;
  std::vector<ExternalEffect> trace;
};

inline StraightLine straight_line(const Program& program, Environment env, const std::vector<EdgeLabel>& path) {
  StraightLine s{initial_config(program), std::move(env), {}};
  for (const EdgeLabel& e : path) {
    if (auto call = pending_primitive(s.config, program)) {
      const PrimId prim = program.imports[call->call_index].prim;
      if (primitive_info(prim).kind == PrimKind::In) {
        if (e.kind != EdgeLabel::Kind::Input) throw std::logic_error("path disagrees with program");
        s.config = resolve_input(s.config, program, e.value, input_range(s.env, prim, call->args));
      } else {
        OutputResult r = perform_output(s.env, prim, call->args);
        s.trace.push_back({EffectKind::Applied, call->call_index, prim, call->args, r.ret});
        complete_primitive(s.config, program, r.ret);
      }
    } else if (advance(s.config, program).kind != Advance::Stepped) {
      throw std::logic_error("path runs past the end of the program");
    }
  }
  return s;
}

inline std::vector<EdgeLabel> edges_to(const MultiverseTree& tree, NodeId target) {
  std::vector<EdgeLabel> out;
  for (NodeId id : tree.path_from(tree.root(), target)) out.push_back(tree.node(id).edge);
  return out;
}

/// Drives `session` down the oracle path to node `i` with explicit mocks
/// (register-mock + step), restoring the mock table afterwards.
inline bool drive_path(Session& s, const BaseTree& t, std::size_t i) {
  for (std::size_t n : t.path_to(i)) {
    if (!t.nodes[n].parent) continue;
    const OracleEdge& e = t.nodes[n].edge;
    if (e.kind == EdgeLabel::Kind::Input) {
      s.mock(e.call, e.args, e.value);
      s.step();
      s.unmock(e.call, e.args);
    } else {
      s.step();
    }
    if (s.debugger().current() != t.nodes[n].config) return false;
  }
  return true;
}

}  // namespace mvdb::testing
