// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <string>

#include "test_util.hpp"

using namespace mvdb;
namespace t = mvdb::testing;

namespace {

// ---- pinned parameters and tolerances ----------------------------------------

constexpr int kPrograms = 200;
constexpr std::uint64_t kTreeDepth = 30;
constexpr int kSessions = 200;  // one per program
constexpr int kMaxDispatches = 60;
constexpr std::size_t kAllowedViolations = 0;

constexpr int kReversalCases = 1000;

constexpr int kJumpPrograms = 40;
constexpr std::uint64_t kJumpDepth = 10;
constexpr std::size_t kJumpMaxNodes = 80;

constexpr std::uint64_t kBenchInstructions = 200000;
constexpr std::size_t kBenchReps = 10;
constexpr double kMinR2 = 0.9;
constexpr double kReferenceOverhead = 85.0;  // hardware figure at interval 1, reported only

constexpr int kCodecCases = 10000;

// ---- reporting ---------------------------------------------------------------

int failures = 0;

void report(const char* name, bool ok, const std::string& detail) {
  std::printf("%s %s: %s\n", ok ? "PASS" : "FAIL", name, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

template <class F>
void guarded(const char* name, F&& body) {
  try {
    body();
  } catch (const std::exception& e) {
    report(name, false, std::string("exception: ") + e.what());
  }
}

// ---- random environments -----------------------------------------------------

Environment random_env(std::mt19937_64& rng) {
  Environment env;
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  for (int pin : {2, 3, 12, 13})
    if (pick(0, 2) == 0) env.pins[pin] = pick(0, 1);
  if (pick(0, 2) == 0) env.encoders[pick(0, 1)] = pick(-180, 180);
  // a rule ties an output pin to an input, so ranges shrink at run time
  if (pick(0, 1) == 0) {
    DependencyRule r;
    r.pin = pick(12, 13);
    r.level = pick(0, 1);
    r.args = {pick(0, 3) == 0 ? std::nullopt : std::optional<Value>(pick(2, 3))};
    r.forced = pick(0, 1);
    register_dependency(env, r);
  }
  return env;
}

// ---- snapshot policy: no primitive between the last snapshot and current -----

bool segment_is_primitive_free(const Debugger& d) {
  ProgramConfig c = d.snapshots().back().config;
  const ProgramConfig& cur = d.current();
  if (c.step_index > cur.step_index) return false;
  while (c.step_index < cur.step_index) {
    if (pending_primitive(c, d.program())) return false;
    if (advance(c, d.program()).kind != Advance::Stepped) return false;
  }
  return c == cur;
}

// ---- soundness / completeness / compensation ---------------------------------

struct SessionTally {
  std::size_t sessions = 0;
  std::size_t dispatches = 0;
  std::size_t visited = 0;
  std::size_t soundness = 0;
  std::size_t compensation = 0;
  std::size_t replays_checked = 0;
  std::size_t policy = 0;
  std::size_t paths = 0;
  std::size_t completeness = 0;
  std::size_t tree_nodes = 0;
  std::vector<std::string> first_errors;

  void note(std::string what) {
    if (first_errors.size() < 3) first_errors.push_back(std::move(what));
  }
};

void random_session(const std::shared_ptr<const Program>& program, const Environment& env, const t::BaseTree& base,
                    std::mt19937_64& rng, SessionTally& tally) {
  SessionOptions opts;
  opts.seed = rng();
  if (rng() % 2) opts.checkpoint_interval = 1 + rng() % 7;
  Session s(program, env, opts);
  auto pick = [&](std::size_t n) { return static_cast<std::size_t>(rng() % n); };

  auto check = [&](const char* op) {
    ++tally.visited;
    const Debugger& d = s.debugger();
    if (!base.contains(d.current())) {
      ++tally.soundness;
      tally.note(std::string("config outside the base tree after ") + op);
    }
    if (!segment_is_primitive_free(d)) {
      ++tally.policy;
      tally.note(std::string("primitive after the last snapshot after ") + op);
    }
  };

  const int dispatches = 1 + static_cast<int>(pick(kMaxDispatches));
  for (int i = 0; i < dispatches; ++i) {
    const Debugger& d = s.debugger();
    const std::uint64_t depth = s.tree().current().depth;
    std::size_t op = pick(10);
    if (op < 5 && depth >= kTreeDepth) op = 5;  // stay inside the enumerated tree
    const char* name = "step";
    if (op < 5) {
      s.step();
    } else if (op < 7) {
      name = "stepback";
      ++tally.replays_checked;
      if (!segment_is_primitive_free(d)) {
        ++tally.policy;
        tally.note("step-back replay segment contains a primitive");
      }
      s.step_back();
    } else if (op == 7) {
      name = "mock";
      if (auto in = d.pending_input(); in && pick(4)) {
        const Value v = pick(5) == 0 ? 7 : static_cast<Value>(pick(2));  // occasionally out of range
        s.mock(in->first.call_index, in->first.args, v);
      } else {
        s.mock(0, {static_cast<Value>(2 + pick(2))}, static_cast<Value>(pick(2)));
      }
    } else if (op == 8) {
      name = "unmock";
      if (d.mocks().empty()) {
        s.unmock(0, {2});
      } else {
        auto it = d.mocks().begin();
        std::advance(it, static_cast<std::ptrdiff_t>(pick(d.mocks().size())));
        const MockKey key = it->first;
        s.unmock(key.first, key.second);
      }
    } else {
      name = "jump";
      const auto ids = s.tree().ids();
      s.jump(ids[pick(ids.size())]);
    }
    ++tally.dispatches;
    check(name);
  }

  // every node the session ever created is a base-tree state
  for (NodeId id : s.tree().ids()) {
    const TreeNode& n = s.tree().node(id);
    ++tally.tree_nodes;
    if (!base.by_digest.contains({n.depth, n.digest})) {
      ++tally.soundness;
      tally.note("tree node " + std::to_string(id.value) + " has no base-tree counterpart");
    }
  }

  const auto line = t::straight_line(*program, env, t::edges_to(s.tree(), s.tree().cursor()));
  const Debugger& d = s.debugger();
  if (!(d.environment() == line.env) || serialize_external(d.environment()) != serialize_external(line.env)) {
    ++tally.compensation;
    tally.note("environment differs from the straight-line run");
  }
  if (reduce_effects(d.effects()) != line.trace) {
    ++tally.compensation;
    tally.note("reduced external trace differs from the straight-line trace");
  }
  ++tally.sessions;
}

void completeness(const std::shared_ptr<const Program>& program, const Environment& env, const t::BaseTree& base,
                  SessionTally& tally) {
  for (std::size_t leaf : base.leaves()) {
    Session s(program, env);
    ++tally.paths;
    if (!t::drive_path(s, base, leaf)) {
      ++tally.completeness;
      tally.note("driver diverged on path to oracle node " + std::to_string(leaf));
    }
  }
}

std::string tally_errors(const SessionTally& t) {
  std::string out;
  for (const auto& e : t.first_errors) out += "; " + e;
  return out;
}

void soundness_suite() {
  SessionTally tally;
  std::size_t oracle_nodes = 0;
  bool crashed = false;
  std::string crash;
  try {
    t::ProgramGenerator gen(2024);
    std::mt19937_64 rng(77);
    for (int i = 0; i < kPrograms; ++i) {
      auto program = std::make_shared<const Program>(gen.next());
      const Environment env = random_env(rng);
      const t::BaseTree base = t::enumerate_tree(*program, env, kTreeDepth);
      oracle_nodes += base.nodes.size();
      random_session(program, env, base, rng, tally);
      completeness(program, env, base, tally);
    }
  } catch (const std::exception& e) {
    crashed = true;
    crash = e.what();
  }
  const std::string suffix = crashed ? "; exception: " + crash : tally_errors(tally);
  report("soundness", !crashed && tally.sessions >= static_cast<std::size_t>(kSessions) &&
                          tally.soundness <= kAllowedViolations,
         std::to_string(kPrograms) + " programs, " + std::to_string(oracle_nodes) + " oracle nodes, " +
             std::to_string(tally.sessions) + " sessions, " + std::to_string(tally.dispatches) + " dispatches, " +
             std::to_string(tally.visited + tally.tree_nodes) + " states checked, " +
             std::to_string(tally.soundness) + " violations" + suffix);
  report("completeness", !crashed && tally.completeness <= kAllowedViolations,
         std::to_string(tally.paths) + " paths driven, " + std::to_string(tally.completeness) + " failures");
  report("compensation-soundness", !crashed && tally.compensation <= kAllowedViolations,
         std::to_string(tally.sessions) + " sessions, " + std::to_string(tally.compensation) + " violations");
  report("snapshot-policy", !crashed && tally.policy <= kAllowedViolations && tally.replays_checked > 0,
         std::to_string(tally.replays_checked) + " step-back replays and " + std::to_string(tally.visited) +
             " post-dispatch states checked, " + std::to_string(tally.policy) + " violations");
}

// ---- reversal exactness --------------------------------------------------------

void reversal_suite() {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> id(0, 7), level(0, 1), angle(-100000, 100000), coin(0, 1);
  std::size_t cases = 0, bad = 0;
  for (PrimId p : {PrimId::DigitalWrite, PrimId::Rotate, PrimId::Delay}) {
    for (int i = 0; i < kReversalCases; ++i) {
      Environment env;
      for (int k = 0; k < 5; ++k) {
        if (coin(rng)) env.pins[id(rng)] = level(rng);
        if (coin(rng)) env.encoders[id(rng)] = angle(rng);
      }
      const std::vector<Value> args =
          p == PrimId::Delay ? std::vector<Value>{angle(rng)} : std::vector<Value>{id(rng), angle(rng)};
      const auto r = call_output(env, p, args);
      const Environment back = apply_compensation(r.env, r.comp);
      ++cases;
      if (!(back == env) || serialize_external(back) != serialize_external(env)) ++bad;
    }
  }
  report("reversal-exactness", bad == 0,
         std::to_string(cases) + " cases over 3 output primitives, " + std::to_string(bad) + " mismatches");
}

// ---- jump correctness ----------------------------------------------------------

constexpr std::string_view kFork = R"(
prim in digital_read 1
prim in color_sensor 0
prim out rotate 2
func 0 0
  i32.const 5
  call 0
  call 1
  call 2
  drop
end
)";

std::string fork_fixture() {
  Session s(t::parse(kFork), Environment{});
  auto steps = [&](int n) {
    for (int i = 0; i < n; ++i) s.step();
    return s.tree().cursor();
  };
  const NodeId k1 = steps(1);
  s.mock(0, {5}, 1);
  s.mock(1, {}, 2);
  const NodeId k5 = steps(4);
  s.jump(k1);
  s.mock(0, {5}, 0);
  s.mock(1, {}, 3);
  const NodeId k4b = steps(3);
  s.jump(k5);
  const MockTable mocks = s.debugger().mocks();
  s.jump(k4b);
  const auto& j = s.last_jump();
  const auto& env = s.debugger().environment();
  std::string err;
  if (s.tree().cursor() != k4b) err += " cursor";
  if (j.join != k1) err += " join";
  if (j.reverse_steps != 4 || j.forward_steps != 3)
    err += " steps(" + std::to_string(j.reverse_steps) + "+" + std::to_string(j.forward_steps) + ")";
  if (env.angle(0) != 3 || env.encoders.contains(1)) err += " environment";
  if (s.debugger().mocks() != mocks) err += " mocks";
  if (config_digest(s.debugger().current()) != s.tree().node(k4b).digest) err += " digest";
  return err;
}

void jump_suite() {
  std::size_t trees = 0, pairs = 0, bad = 0;
  std::string first;
  t::ProgramGenerator gen(99, {.max_instructions = 20});
  std::mt19937_64 rng(3);
  for (int attempts = 0; trees < static_cast<std::size_t>(kJumpPrograms) && attempts < 5000; ++attempts) {
    auto program = std::make_shared<const Program>(gen.next());
    const Environment env = random_env(rng);
    const t::BaseTree base = t::enumerate_tree(*program, env, kJumpDepth);
    if (base.nodes.size() > kJumpMaxNodes || base.leaves().size() < 2) continue;
    // realise the whole oracle tree inside one session
    Session s(program, env);
    for (std::size_t leaf : base.leaves()) {
      s.jump(s.tree().root());
      if (!t::drive_path(s, base, leaf)) {
        ++bad;
        if (first.empty()) first = "could not realise the oracle tree";
      }
    }
    if (s.tree().size() != base.nodes.size()) {
      ++bad;
      if (first.empty()) first = "session tree size differs from oracle";
    }
    ++trees;
    const auto ids = s.tree().ids();
    const MockTable mocks = s.debugger().mocks();
    for (NodeId a : ids) {
      for (NodeId b : ids) {
        s.jump(a);
        s.jump(b);
        ++pairs;
        const auto line = t::straight_line(*program, env, t::edges_to(s.tree(), b));
        const Debugger& d = s.debugger();
        const bool ok = s.tree().cursor() == b && config_digest(d.current()) == s.tree().node(b).digest &&
                        config_equal(d.current(), line.config) && d.environment() == line.env &&
                        serialize_external(d.environment()) == serialize_external(line.env) &&
                        reduce_effects(d.effects()) == line.trace && d.mocks() == mocks;
        if (!ok) {
          ++bad;
          if (first.empty()) first = "pair " + std::to_string(a.value) + "->" + std::to_string(b.value);
        }
      }
    }
    if (s.tree().size() != ids.size()) {
      ++bad;
      if (first.empty()) first = "jumping created nodes";
    }
  }
  const std::string fixture = fork_fixture();
  const bool ok = bad == 0 && fixture.empty() && trees == static_cast<std::size_t>(kJumpPrograms);
  report("jump-correctness", ok,
         std::to_string(trees) + " exhaustive trees, " + std::to_string(pairs) + " ordered pairs, " +
             std::to_string(bad) + " failures; branch fixture " + (fixture.empty() ? "ok" : "failed:" + fixture) +
             (first.empty() ? "" : "; first: " + first));
}

// ---- benchmark shape -------------------------------------------------------------

void bench_suite() {
  const auto program = t::parse(t::read_text(t::program_path("prime_check.masm")));
  const std::vector<bench::Interval> intervals{1, 5, 10, 50, 100, std::nullopt};
  const auto rows = bench::forward(program, {kBenchInstructions}, intervals, kBenchReps);
  bool monotone = true;
  std::string means;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i > 0 && rows[i].mean_seconds > rows[i - 1].mean_seconds) monotone = false;
    char buf[96];
    std::snprintf(buf, sizeof buf, "%s%s=%.3gms", i ? " " : "", bench::interval_name(rows[i].interval).c_str(),
                  rows[i].mean_seconds * 1e3);
    means += buf;
  }
  char overhead[160];
  std::snprintf(overhead, sizeof overhead, "; overhead at interval 1: %.1fx (hardware reference ~%.0fx, not asserted)",
                rows.front().overhead, kReferenceOverhead);

  std::vector<std::uint64_t> distances;
  for (std::uint64_t d = 0; d <= 30000; d += 1000) distances.push_back(d);
  const auto back = bench::step_back(program, distances, kBenchReps);
  const auto fit = bench::fit(back);
  char line[160];
  std::snprintf(line, sizeof line, "; step-back slope %.3g ns/instruction, R2 %.4f", fit.slope * 1e9, fit.r2);
  report("benchmark-shape", monotone && fit.slope > 0 && fit.r2 >= kMinR2,
         std::string(monotone ? "forward time non-increasing: " : "forward time NOT monotone: ") + means +
             overhead + line);
}

// ---- codec round trips -------------------------------------------------------------

protocol::Request random_request(std::mt19937_64& rng) {
  using namespace protocol;
  std::uniform_int_distribution<Value> any(INT32_MIN, INT32_MAX);
  auto values = [&] {
    std::vector<Value> v(rng() % 4);
    for (auto& x : v) x = any(rng);
    return v;
  };
  switch (rng() % 10) {
    case 0: return req::Play{};
    case 1: return req::Pause{};
    case 2: return req::Step{};
    case 3: return req::StepBack{};
    case 4: return req::Mock{static_cast<std::uint32_t>(rng() % 100), values(), any(rng)};
    case 5: return req::Unmock{static_cast<std::uint32_t>(rng() % 100), values()};
    case 6: return req::Jump{rng() >> (rng() % 64)};
    case 7:
      return req::ExploreRange{rng() % 1000, rng() % 2 ? std::nullopt : std::optional(values())};
    case 8: return req::Snapshot{};
    default: {
      std::string env = "pin " + std::to_string(rng() % 20) + " " + std::to_string(rng() % 2) + "\n";
      env.push_back(static_cast<char>(1 + rng() % 127));  // any ASCII, control characters included
      return req::LoadEnv{env};
    }
  }
}

Event random_event(std::mt19937_64& rng) {
  std::uniform_int_distribution<Value> any(INT32_MIN, INT32_MAX);
  const NodeId n{rng() % 100000};
  switch (rng() % 5) {
    case 0: return event::Stepped{n, rng() % 1000, "step-forwards", Location{0, 1, 2}, rng() % 2 == 0};
    case 1: return event::Diagnostic{"MockOutOfRange", "value " + std::to_string(any(rng)), {}};
    case 2:
      return event::TreeNodeAdded{n, NodeId{rng() % 10}, rng() % 50, EdgeLabel::input(any(rng)), std::nullopt};
    case 3: return event::Halted{n};
    default: return event::Trapped{n, "unreachable"};
  }
}

void codec_suite() {
  std::mt19937_64 rng(11);
  std::size_t config_bad = 0, rle_bad = 0, wire_bad = 0, crashes = 0, mutants = 0;
  std::string first_crash;
  auto crashed = [&](const std::exception& e) {
    if (crashes++ == 0) first_crash = std::string("; first: ") + e.what();
  };
  for (int i = 0; i < kCodecCases; ++i) {
    try {
      const ProgramConfig c = t::random_config(rng);
      const auto bytes = encode_config(c);
      if (decode_config(bytes) != c) ++config_bad;
      // corrupted input must be rejected cleanly, never crash
      auto mutated = bytes;
      mutated[rng() % mutated.size()] ^= static_cast<std::uint8_t>(1 + rng() % 255);
      if (rng() % 3 == 0) mutated.resize(rng() % mutated.size());
      ++mutants;
      try {
        (void)decode_config(mutated);
      } catch (const DecodeError&) {
      }
    } catch (const std::exception& e) {
      crashed(e);
    }

    try {
      std::vector<std::uint8_t> raw(rng() % 300);
      std::uint8_t b = 0;
      for (auto& x : raw) {
        if (rng() % 4 == 0) b = static_cast<std::uint8_t>(rng());
        x = b;
      }
      const auto runs = protocol::rle_encode(raw);
      if (protocol::rle_decode(runs) != raw) ++rle_bad;
    } catch (const std::exception& e) {
      crashed(e);
    }

    try {
      const auto r = random_request(rng);
      const auto d = protocol::decode_request(protocol::encode_request(r));
      if (!d.request || !(*d.request == r)) ++wire_bad;
      const Event e = random_event(rng);
      if (!(protocol::decode_event(protocol::encode_event(e)) == e)) ++wire_bad;
      std::string line = protocol::encode_request(r);
      line[rng() % line.size()] = static_cast<char>(rng() % 256);
      ++mutants;
      const auto m = protocol::decode_request(line);
      if (m.request.has_value() == m.error.has_value()) ++wire_bad;
    } catch (const std::exception& e) {
      crashed(e);
    }
  }
  report("codec-round-trips", config_bad + rle_bad + wire_bad + crashes == 0,
         std::to_string(kCodecCases) + " cases each: config " + std::to_string(config_bad) + ", rle " +
             std::to_string(rle_bad) + ", wire " + std::to_string(wire_bad) + " mismatches; " +
             std::to_string(mutants) + " corrupted inputs, " + std::to_string(crashes) + " crashes" + first_crash);
}

}  // namespace

int main() {
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  guarded("soundness", soundness_suite);
  guarded("reversal-exactness", reversal_suite);
  guarded("jump-correctness", jump_suite);
  guarded("benchmark-shape", bench_suite);
  guarded("codec-round-trips", codec_suite);
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  std::printf("%d criteria failed (%.1fs)\n", failures, secs);
  return failures == 0 ? 0 : 1;
}
