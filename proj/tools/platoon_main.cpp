// Command-line front end: closed-loop runs, three-mode comparisons, and the
// two halves of the TCP runtime (agent / coordinator). The in-process and
// TCP paths share AgentCore, so a `run --runtime tcp` spawns one child
// process per agent, plays coordinator itself, and produces the exact same
// CSV a `--runtime inproc` run would.

#include <sys/wait.h>
#include <unistd.h>

#include <csignal>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "platoon/harness.hpp"
#include "platoon/plot.hpp"

namespace {

using namespace platoon;

// Overrides accepted by `run`, `agent`, and `coordinator`. Every entry is
// optional; scenario values win when a flag is absent. Agent processes must
// see the same effective config as the coordinator, so `run --runtime tcp`
// forwards whatever was set here to its children verbatim.
struct Overrides {
  std::optional<std::string> mode;
  std::optional<std::string> runtime;
  std::optional<std::string> discretization;
  std::optional<int> steps;
  std::optional<int> np;
  std::optional<int> nu;
  std::optional<double> mu;
  std::optional<double> delta;
  std::optional<int> delay_rounds;
};

void add_override_flags(CLI::App& cmd, Overrides& o, bool with_runtime) {
  cmd.add_option("--mode", o.mode, "bargaining | centralized | decentralized")
      ->check(CLI::IsMember({"bargaining", "centralized", "decentralized"}));
  if (with_runtime)
    cmd.add_option("--runtime", o.runtime, "inproc | tcp")
        ->check(CLI::IsMember({"inproc", "tcp"}));
  cmd.add_option("--discretization", o.discretization, "zoh | tustin")
      ->check(CLI::IsMember({"zoh", "tustin"}));
  cmd.add_option("--steps", o.steps, "closed-loop steps");
  cmd.add_option("--np", o.np, "prediction horizon");
  cmd.add_option("--nu", o.nu, "control horizon");
  cmd.add_option("--mu", o.mu, "aspiration decay rate");
  cmd.add_option("--delta", o.delta, "synchronization threshold (m/s)");
  cmd.add_option("--delay-rounds", o.delay_rounds,
                 "inject this many rounds of message delay");
}

ScenarioConfig load_with_overrides(const std::string& path,
                                   const Overrides& o) {
  ScenarioConfig cfg = load_scenario(path);
  if (o.mode) {
    if (*o.mode == "bargaining") cfg.mode = Mode::kBargaining;
    else if (*o.mode == "centralized") cfg.mode = Mode::kCentralized;
    else cfg.mode = Mode::kDecentralized;
  }
  if (o.runtime)
    cfg.runtime = (*o.runtime == "tcp") ? Runtime::kTcp : Runtime::kInProc;
  if (o.discretization)
    cfg.discretization = (*o.discretization == "zoh")
                             ? DiscretizationMethod::kZoh
                             : DiscretizationMethod::kTustin;
  if (o.steps) cfg.steps = *o.steps;
  if (o.np) cfg.horizon.Np = *o.np;
  if (o.nu) cfg.horizon.Nu = *o.nu;
  if (o.mu) cfg.game.mu = *o.mu;
  if (o.delta) cfg.game.delta_sync = *o.delta;
  if (o.delay_rounds) cfg.delay_rounds = *o.delay_rounds;

  // Flags bypass the file parser's checks, so repeat them here.
  if (cfg.steps < 1) throw ConfigError("steps must be >= 1");
  if (cfg.horizon.Np < 1 || cfg.horizon.Nu < 1 ||
      cfg.horizon.Nu > cfg.horizon.Np)
    throw ConfigError("horizon wants 1 <= nu <= np");
  if (cfg.delay_rounds < 0) throw ConfigError("delay rounds must be >= 0");
  validate(cfg.game, static_cast<int>(cfg.agents.size()));
  return cfg;
}

// `host:port`, `:port`, or bare `port`; host defaults to loopback. The TCP
// star always binds loopback, so anything else is almost certainly a typo.
std::pair<std::string, uint16_t> parse_addr(const std::string& addr) {
  std::string host = "127.0.0.1";
  std::string port_str = addr;
  if (const auto colon = addr.rfind(':'); colon != std::string::npos) {
    if (colon > 0) host = addr.substr(0, colon);
    port_str = addr.substr(colon + 1);
  }
  int port = 0;
  try {
    size_t used = 0;
    port = std::stoi(port_str, &used);
    if (used != port_str.size()) throw std::invalid_argument(port_str);
  } catch (const std::exception&) {
    throw ConfigError("address '" + addr + "': port must be a number");
  }
  if (port < 0 || port > 65535)
    throw ConfigError("address '" + addr + "': port out of range");
  return {host, static_cast<uint16_t>(port)};
}

void write_outputs(const TrajectoryLog& log, const ScenarioConfig& cfg,
                   const std::string& dir) {
  std::filesystem::create_directories(dir);
  export_csv(log, dir + "/trajectory.csv");
  const Metrics m = compute_metrics(log, cfg);
  std::ofstream mf(dir + "/metrics.txt", std::ios::binary);
  if (!mf) throw Error("cannot write '" + dir + "/metrics.txt'");
  mf << metrics_text(m);
  export_plots(log, dir, &cfg.ref);
  std::cout << "wrote " << dir << "/trajectory.csv ("
            << log.rows.size() << " rows)\n"
            << metrics_text(m);
}

// ---------------------------------------------------------------------------
// run --runtime tcp: spawn one agent process per vehicle, coordinate here.
// ---------------------------------------------------------------------------

std::vector<std::string> override_argv(const Overrides& o) {
  std::vector<std::string> args;
  auto push = [&args](const char* flag, const std::string& v) {
    args.emplace_back(flag);
    args.push_back(v);
  };
  if (o.mode) push("--mode", *o.mode);
  if (o.discretization) push("--discretization", *o.discretization);
  if (o.steps) push("--steps", std::to_string(*o.steps));
  if (o.np) push("--np", std::to_string(*o.np));
  if (o.nu) push("--nu", std::to_string(*o.nu));
  if (o.mu) push("--mu", std::to_string(*o.mu));
  if (o.delta) push("--delta", std::to_string(*o.delta));
  if (o.delay_rounds) push("--delay-rounds", std::to_string(*o.delay_rounds));
  return args;
}

pid_t spawn_agent(uint16_t port, int id, const std::string& scenario,
                  const std::vector<std::string>& extra) {
  std::vector<std::string> args = {
      "/proc/self/exe", "agent",
      "--connect",      "127.0.0.1:" + std::to_string(port),
      "--id",           std::to_string(id),
      "--scenario",     scenario};
  args.insert(args.end(), extra.begin(), extra.end());
  std::vector<char*> argv;
  argv.reserve(args.size() + 1);
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);

  const pid_t pid = ::fork();
  if (pid < 0) throw TransportError(std::string("fork: ") + strerror(errno));
  if (pid == 0) {
    ::execv(argv[0], argv.data());
    // Only reachable when exec itself failed.
    std::perror("execv");
    ::_exit(4);
  }
  return pid;
}

TrajectoryLog run_tcp_spawned(const ScenarioConfig& cfg,
                              const std::string& scenario_path,
                              const Overrides& o) {
  const int n = static_cast<int>(cfg.agents.size());
  TcpCoordinator coord(cfg.topology, cfg.port,
                       {cfg.timeout_s, cfg.delay_rounds});
  const auto extra = override_argv(o);
  std::vector<pid_t> kids;
  kids.reserve(n);
  for (int id = 0; id < n; ++id)
    kids.push_back(spawn_agent(coord.port(), id, scenario_path, extra));

  TrajectoryLog log;
  try {
    coord.accept_agents();
    log = run_tcp_coordinator(cfg, coord);
  } catch (...) {
    // The run is already lost; don't leave orphans negotiating with nobody.
    for (pid_t p : kids) ::kill(p, SIGKILL);
    for (pid_t p : kids) ::waitpid(p, nullptr, 0);
    throw;
  }
  for (pid_t p : kids) {
    int status = 0;
    ::waitpid(p, &status, 0);
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
      throw TransportError("agent process " + std::to_string(p) +
                           " exited abnormally");
  }
  return log;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

void cmd_run(const std::string& scenario, const std::string& out,
             const Overrides& o) {
  ScenarioConfig cfg = load_with_overrides(scenario, o);
  TrajectoryLog log = cfg.runtime == Runtime::kTcp
                          ? run_tcp_spawned(cfg, scenario, o)
                          : run_closed_loop(cfg);
  write_outputs(log, cfg, out);
}

void cmd_compare(const std::string& scenario, const std::string& out) {
  Overrides o;
  o.runtime = "inproc";  // the comparison is about modes, not transports
  std::ostringstream table;
  table << "mode           sync_time  rounds_to_agreement  "
           "max_speed_violation  total_cost\n";
  for (const char* mode : {"bargaining", "centralized", "decentralized"}) {
    o.mode = mode;
    ScenarioConfig cfg = load_with_overrides(scenario, o);
    const TrajectoryLog log = run_closed_loop(cfg);
    write_outputs(log, cfg, out + "/" + mode);
    const Metrics m = compute_metrics(log, cfg);
    double cost = 0.0;
    for (double c : m.total_cost) cost += c;
    table << std::left << std::setw(15) << mode << std::setw(11)
          << (m.sync_time_steps ? std::to_string(*m.sync_time_steps) : "none")
          << std::setw(21)
          << (m.rounds_to_agreement ? std::to_string(*m.rounds_to_agreement)
                                    : "none")
          << std::setw(21) << format_double(m.max_speed_violation)
          << format_double(cost) << "\n";
  }
  std::ofstream tf(out + "/metrics.txt", std::ios::binary);
  if (!tf) throw Error("cannot write '" + out + "/metrics.txt'");
  tf << table.str();
  std::cout << table.str();
}

void cmd_agent(const std::string& scenario, const std::string& connect,
               int id, const Overrides& o) {
  ScenarioConfig cfg = load_with_overrides(scenario, o);
  if (id < 0 || id >= static_cast<int>(cfg.agents.size()))
    throw ConfigError("agent id " + std::to_string(id) +
                      " not in this scenario");
  const auto [host, port] = parse_addr(connect);
  if (port == 0) throw ConfigError("--connect needs an explicit port");
  run_tcp_agent(cfg, id, host, port);
}

void cmd_coordinator(const std::string& scenario, const std::string& listen,
                     const std::string& out, const Overrides& o) {
  ScenarioConfig cfg = load_with_overrides(scenario, o);
  const auto [host, port] = parse_addr(listen);
  (void)host;  // the coordinator always binds loopback
  TcpCoordinator coord(cfg.topology, port, {cfg.timeout_s, cfg.delay_rounds});
  std::cout << "listening on 127.0.0.1:" << coord.port() << std::endl;
  coord.accept_agents();
  const TrajectoryLog log = run_tcp_coordinator(cfg, coord);
  if (!out.empty()) {
    write_outputs(log, cfg, out);
  } else {
    const Metrics m = compute_metrics(log, cfg);
    std::cout << metrics_text(m);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cooperative platoon bargaining simulator"};
  app.require_subcommand(1);

  std::string scenario, out, connect, listen;
  int agent_id = -1;
  Overrides o;

  CLI::App* run = app.add_subcommand("run", "one closed-loop run");
  run->add_option("--scenario", scenario, "scenario file")->required();
  run->add_option("--out", out, "output directory")->required();
  add_override_flags(*run, o, /*with_runtime=*/true);

  CLI::App* compare =
      app.add_subcommand("compare", "all three modes, joint metrics table");
  compare->add_option("--scenario", scenario, "scenario file")->required();
  compare->add_option("--out", out, "output directory")->required();

  CLI::App* agent = app.add_subcommand("agent", "TCP agent process");
  agent->add_option("--connect", connect, "coordinator host:port")->required();
  agent->add_option("--id", agent_id, "agent id")->required();
  agent->add_option("--scenario", scenario, "scenario file")->required();
  add_override_flags(*agent, o, /*with_runtime=*/false);

  CLI::App* coord = app.add_subcommand("coordinator", "TCP barrier process");
  coord->add_option("--listen", listen, "bind host:port (0 = ephemeral)")
      ->required();
  coord->add_option("--scenario", scenario, "scenario file")->required();
  coord->add_option("--out", out, "output directory (optional)");
  add_override_flags(*coord, o, /*with_runtime=*/false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // bad flags are config errors
  }

  try {
    if (run->parsed()) cmd_run(scenario, out, o);
    else if (compare->parsed()) cmd_compare(scenario, out);
    else if (agent->parsed()) cmd_agent(scenario, connect, agent_id, o);
    else cmd_coordinator(scenario, listen, out, o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const SolverError& e) {
    std::cerr << "solver error: " << e.what() << "\n";
    return 3;
  } catch (const DecodeError& e) {
    std::cerr << "transport error: " << e.what() << "\n";
    return 4;
  } catch (const TransportError& e) {
    std::cerr << "transport error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
