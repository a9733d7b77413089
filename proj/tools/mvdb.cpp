#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "mvdb/mvdb.hpp"
#include "mvdb/server.hpp"

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::shared_ptr<const mvdb::Program> load_program(const std::string& path) {
  try {
    return std::make_shared<const mvdb::Program>(mvdb::load_program_text(read_file(path)));
  } catch (const mvdb::ParseError& e) {
    throw UsageError(path + ": " + e.what());
  }
}

mvdb::Environment load_env(const std::string& path) {
  if (path.empty()) return {};
  try {
    std::vector<std::string> warnings;
    mvdb::Environment env = mvdb::load_env_text(read_file(path), &warnings);
    for (const auto& w : warnings) std::cerr << "mvdb: warning: " << path << ": " << w << '\n';
    return env;
  } catch (const mvdb::ParseError& e) {
    throw UsageError(path + ": " + e.what());
  }
}

std::string format_args(const std::vector<mvdb::Value>& args) {
  std::string s = "(";
  for (std::size_t i = 0; i < args.size(); ++i) s += (i ? ", " : "") + std::to_string(args[i]);
  return s + ")";
}

std::string join_values(const std::vector<mvdb::Value>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + std::to_string(v[i]);
  return s;
}

int cmd_run(const std::string& prog_path, const std::string& env_path, std::uint64_t max_steps, std::uint64_t seed) {
  auto program = load_program(prog_path);
  mvdb::Environment env = load_env(env_path);
  mvdb::LiveHost host(*program, env, seed);
  mvdb::RunResult r = mvdb::run_steps(mvdb::initial_config(*program), *program, host, max_steps);
  std::size_t effect_no = 0;
  for (const auto& c : r.trace) {
    const auto& info = program->primitive(c.call_index);
    if (c.kind == mvdb::PrimKind::In) {
      std::cout << "step " << c.step_index << ": " << info.name << format_args(c.args) << " read " << c.value << '\n';
    } else {
      ++effect_no;
      std::cout << "step " << c.step_index << ": " << info.name << format_args(c.args) << " -> " << c.value << '\n';
    }
  }
  std::cout << "effects: " << effect_no << '\n';
  switch (r.stop) {
    case mvdb::RunStop::Halted: std::cout << "halted after " << r.config.step_index << " steps\n"; break;
    case mvdb::RunStop::MaxSteps: std::cout << "stopped after " << r.config.step_index << " steps\n"; break;
    case mvdb::RunStop::Trapped:
      std::cout << "trapped after " << r.config.step_index << " steps: " << r.trap << '\n';
      break;
  }
  std::cout << "globals: " << join_values(r.config.globals) << '\n';
  std::cout << "pins:";
  for (const auto& [pin, level] : env.pins) std::cout << ' ' << pin << '=' << level;
  std::cout << "\nmotors:";
  for (const auto& [motor, angle] : env.encoders) std::cout << ' ' << motor << '=' << angle;
  std::cout << '\n';
  return r.stop == mvdb::RunStop::Trapped ? 1 : 0;
}

int cmd_debug(const std::string& prog_path, const std::string& env_path, std::uint16_t port, bool use_stdio,
              std::uint64_t seed, const std::string& interval) {
  auto program = load_program(prog_path);
  mvdb::SessionOptions options;
  options.seed = seed;
  options.checkpoint_interval = mvdb::bench::parse_interval(interval);
  mvdb::Session session(program, load_env(env_path), options);
  if (use_stdio) {
    mvdb::protocol::serve_stdio(session, std::cin, std::cout);
    return 0;
  }
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  mvdb::protocol::Dispatcher dispatcher(session);
  mvdb::protocol::TcpServer server(dispatcher, port);
  server.start();
  std::cout << "listening on 127.0.0.1:" << server.port() << " (JSON lines; WebSocket at ws://127.0.0.1:"
            << server.port() << "/debug)" << std::endl;
  std::thread worker([&] { dispatcher.run(); });
  int sig = 0;
  sigwait(&signals, &sig);
  server.stop();
  dispatcher.stop();
  worker.join();
  return 0;
}

std::vector<mvdb::bench::Interval> parse_intervals(const std::vector<std::string>& raw) {
  std::vector<mvdb::bench::Interval> out;
  for (const auto& s : raw) {
    try {
      out.push_back(mvdb::bench::parse_interval(s));
    } catch (const std::exception&) {
      throw UsageError("bad snapshot interval '" + s + "'");
    }
  }
  return out;
}

void write_csv_to(const std::string& path, const auto& rows) {
  if (path.empty() || path == "-") {
    mvdb::bench::write_csv(std::cout, rows);
    return;
  }
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write '" + path + "'");
  mvdb::bench::write_csv(out, rows);
}

int cmd_bench_forward(const std::string& prog_path, const std::vector<std::uint64_t>& counts,
                      const std::vector<std::string>& intervals, unsigned reps, const std::string& csv) {
  auto program = load_program(prog_path);
  const auto rows = mvdb::bench::forward(program, counts, parse_intervals(intervals), reps);
  write_csv_to(csv, rows);
  if (!csv.empty() && csv != "-") {
    for (const auto& r : rows)
      std::cout << r.instructions << " instructions, interval " << mvdb::bench::interval_name(r.interval) << ": "
                << r.mean_seconds * 1e3 << " ms, overhead " << r.overhead << "x\n";
  }
  return 0;
}

int cmd_bench_stepback(const std::string& prog_path, const std::vector<std::uint64_t>& distances, unsigned reps,
                       const std::string& csv) {
  auto program = load_program(prog_path);
  const auto rows = mvdb::bench::step_back(program, distances, reps);
  write_csv_to(csv, rows);
  const auto fit = mvdb::bench::fit(rows);
  std::cerr << "slope " << fit.slope * 1e9 << " ns/instruction, intercept " << fit.intercept * 1e6
            << " us, r2 " << fit.r2 << '\n';
  return 0;
}

std::vector<std::uint64_t> default_distances() {
  std::vector<std::uint64_t> d;
  for (std::uint64_t k = 0; k <= 30000; k += 1000) d.push_back(k);
  return d;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multiverse debugger for a small stack machine with simulated I/O"};
  app.require_subcommand(1);

  std::string program, env;
  std::uint64_t seed = 0;

  auto* run = app.add_subcommand("run", "execute a program with live inputs");
  std::uint64_t max_steps = 100000;
  run->add_option("program", program, "program file")->required();
  run->add_option("--env", env, "environment file");
  run->add_option("--max-steps", max_steps, "step budget");
  run->add_option("--seed", seed, "seed for sampled inputs");

  auto* debug = app.add_subcommand("debug", "serve a debugging session");
  std::uint16_t port = mvdb::protocol::kDefaultPort;
  bool use_stdio = false;
  std::string interval = "inf";
  debug->add_option("program", program, "program file")->required();
  debug->add_option("--env", env, "environment file");
  debug->add_option("--port", port, "TCP port");
  debug->add_flag("--stdio", use_stdio, "speak the protocol on standard streams");
  debug->add_option("--seed", seed, "seed for sampled inputs");
  debug->add_option("--interval", interval, "extra snapshot every N steps, or inf");

  auto* bf = app.add_subcommand("bench-forward", "forward execution time per snapshot interval");
  std::vector<std::uint64_t> counts{10000, 20000, 30000};
  std::vector<std::string> intervals{"1", "5", "10", "50", "100", "inf"};
  unsigned reps = 10;
  std::string csv;
  bf->add_option("program", program, "primitive-free program")->required();
  bf->add_option("--counts", counts, "instruction counts")->delimiter(',');
  bf->add_option("--intervals", intervals, "snapshot intervals")->delimiter(',');
  bf->add_option("--reps", reps, "repetitions")->check(CLI::Range(1u, 100000u));
  bf->add_option("--csv", csv, "output file (default stdout)");

  auto* bs = app.add_subcommand("bench-stepback", "step-back time per replay distance");
  std::vector<std::uint64_t> distances = default_distances();
  bs->add_option("program", program, "primitive-free program")->required();
  bs->add_option("--distances", distances, "replay distances")->delimiter(',');
  bs->add_option("--reps", reps, "repetitions")->check(CLI::Range(1u, 100000u));
  bs->add_option("--csv", csv, "output file (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(program, env, max_steps, seed);
    if (*debug) return cmd_debug(program, env, port, use_stdio, seed, interval);
    if (*bf) return cmd_bench_forward(program, counts, intervals, reps, csv);
    if (*bs) return cmd_bench_stepback(program, distances, reps, csv);
  } catch (const UsageError& e) {
    std::cerr << "mvdb: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "mvdb: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
