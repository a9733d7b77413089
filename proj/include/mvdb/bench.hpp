#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mvdb/debugger.hpp"
#include "mvdb/snapshot_payload.hpp"

namespace mvdb::bench {

/// Snapshot interval; nullopt is "never".
using Interval = std::optional<std::uint64_t>;

inline std::string interval_name(Interval i) { return i ? std::to_string(*i) : "inf"; }

inline Interval parse_interval(const std::string& s) {
  if (s == "inf" || s == "never") return std::nullopt;
  std::size_t used = 0;
  const unsigned long long v = std::stoull(s, &used);
  if (used != s.size() || v == 0) throw std::invalid_argument("bad snapshot interval '" + s + "'");
  return v;
}

/// Throws unless no call instruction targets a primitive.
inline void require_primitive_free(const Program& p) {
  for (const auto& fn : p.functions) {
    for (const auto& seq : fn.seqs) {
      for (const auto& ins : seq) {
        if (ins.op == Opcode::Call && p.is_primitive(static_cast<std::uint32_t>(ins.imm)))
          throw std::invalid_argument("benchmark programs must not call primitives");
      }
    }
  }
}

struct ForwardRow {
  std::uint64_t instructions = 0;
  Interval interval;
  double mean_seconds = 0;
  double overhead = 0;  // relative to interval "never"
};

namespace detail {

using Clock = std::chrono::steady_clock;

// keeps payload construction observable to the optimizer
inline volatile std::size_t keep = 0;

// Runs `n` steps, snapshotting every `interval` steps. Each snapshot is also
// turned into a wire payload, which is what a frontend would receive.
inline double timed_forward(const std::shared_ptr<const Program>& program, std::uint64_t n, Interval interval,
                            std::size_t& sink) {
  Debugger dbg(program, Environment{});
  const auto start = Clock::now();
  for (std::uint64_t i = 1; i <= n; ++i) {
    if (!dbg.step().forward) throw std::runtime_error("benchmark program stopped after " + std::to_string(i - 1) + " steps");
    if (interval && i % *interval == 0) {
      dbg.take_interval_snapshot();
      sink += protocol::make_payload(dbg.current(), dbg.environment()).memory.size();
    }
  }
  return std::chrono::duration<double>(Clock::now() - start).count();
}

}  // namespace detail

/// Mean forward execution time for every (count, interval) pair. Repetitions
/// are interleaved across intervals so drift affects all intervals alike.
inline std::vector<ForwardRow> forward(const std::shared_ptr<const Program>& program,
                                       const std::vector<std::uint64_t>& counts,
                                       const std::vector<Interval>& intervals, unsigned reps) {
  require_primitive_free(*program);
  if (reps == 0) throw std::invalid_argument("need at least one repetition");
  std::vector<ForwardRow> rows;
  std::size_t sink = 0;
  for (std::uint64_t n : counts) {
    std::vector<double> total(intervals.size(), 0.0);
    double never_total = 0;
    detail::timed_forward(program, n, std::nullopt, sink);  // warm-up
    for (unsigned r = 0; r < reps; ++r) {
      for (std::size_t k = 0; k < intervals.size(); ++k) total[k] += detail::timed_forward(program, n, intervals[k], sink);
      never_total += detail::timed_forward(program, n, std::nullopt, sink);
    }
    for (std::size_t k = 0; k < intervals.size(); ++k) {
      const double mean = total[k] / reps;
      // the "never" row is its own baseline
      const double base = intervals[k] ? never_total / reps : mean;
      rows.push_back({n, intervals[k], mean, base > 0 ? mean / base : 1.0});
    }
  }
  detail::keep = sink;
  return rows;
}

struct StepBackRow {
  std::uint64_t distance = 0;  // instructions re-executed by the step back
  double mean_seconds = 0;
};

/// Mean time of one step back that must replay `distance` instructions.
/// Repetitions are interleaved across distances, as in forward().
inline std::vector<StepBackRow> step_back(const std::shared_ptr<const Program>& program,
                                          const std::vector<std::uint64_t>& distances, unsigned reps) {
  require_primitive_free(*program);
  if (reps == 0) throw std::invalid_argument("need at least one repetition");
  std::vector<Debugger> bases;
  for (std::uint64_t d : distances) {
    Debugger& base = bases.emplace_back(program, Environment{});
    for (std::uint64_t i = 0; i <= d; ++i) {
      if (!base.step().forward) throw std::runtime_error("benchmark program stopped early");
    }
  }
  std::vector<double> total(distances.size(), 0.0);
  for (unsigned r = 0; r <= reps; ++r) {
    for (std::size_t k = 0; k < distances.size(); ++k) {
      Debugger dbg = bases[k];
      const auto start = detail::Clock::now();
      const DispatchResult res = dbg.step_back();
      const double t = std::chrono::duration<double>(detail::Clock::now() - start).count();
      if (res.replayed != distances[k]) throw std::logic_error("step back replayed an unexpected number of steps");
      if (r > 0) total[k] += t;  // the first round warms caches
    }
  }
  std::vector<StepBackRow> rows;
  for (std::size_t k = 0; k < distances.size(); ++k) rows.push_back({distances[k], total[k] / reps});
  return rows;
}

struct LinearFit {
  double slope = 0;
  double intercept = 0;
  double r2 = 0;
};

/// Ordinary least squares y = slope * x + intercept.
inline LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("need at least two points");
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0) throw std::invalid_argument("x values are all equal");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ss_res = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = y[i] - (f.slope * x[i] + f.intercept);
    ss_res += e * e;
  }
  f.r2 = syy == 0 ? 1.0 : 1.0 - ss_res / syy;
  return f;
}

inline LinearFit fit(const std::vector<StepBackRow>& rows) {
  std::vector<double> x, y;
  for (const auto& r : rows) {
    x.push_back(static_cast<double>(r.distance));
    y.push_back(r.mean_seconds);
  }
  return fit_line(x, y);
}

inline void write_csv(std::ostream& out, const std::vector<ForwardRow>& rows) {
  out << "instructions,interval,mean-time,overhead\n";
  for (const auto& r : rows)
    out << r.instructions << ',' << interval_name(r.interval) << ',' << r.mean_seconds << ',' << r.overhead << '\n';
}

inline void write_csv(std::ostream& out, const std::vector<StepBackRow>& rows) {
  out << "replayed-instructions,mean-step-back-time\n";
  for (const auto& r : rows) out << r.distance << ',' << r.mean_seconds << '\n';
}

}  // namespace mvdb::bench
