#pragma once

// Scenario files: a flat text format that turns the benchmark parameter
// tables into reviewable fixtures instead of constants buried in code.
//
//   # global keys first
//   steps 600
//   T 0.1
//   np 10
//   nu 5
//   mode bargaining            # bargaining | centralized | decentralized
//   runtime inproc             # inproc | tcp
//   discretization zoh         # zoh | tustin
//   mu 0.3
//   delta 0.01
//   margin 50
//   v_ref 1.0                  # constant reference, m/s
//   v_ref_at 200 2.0           # optional later breakpoints (step, value)
//   topology chain             # or a file path, or inline edge/leader lines
//
//   agent 0
//   a1 -1
//   a2 -2
//   b -3
//   x0 1 -0.2
//   u_max 10
//
// Keys inside an `agent` block override that agent's defaults; everything
// else must appear before the first block. Errors carry file:line context.

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "platoon/bargaining.hpp"
#include "platoon/costs.hpp"
#include "platoon/dynamics.hpp"
#include "platoon/topology.hpp"

namespace platoon {

enum class Mode { kBargaining, kCentralized, kDecentralized };
enum class Runtime { kInProc, kTcp };

inline std::string_view mode_name(Mode m) {
  switch (m) {
    case Mode::kBargaining: return "bargaining";
    case Mode::kCentralized: return "centralized";
    case Mode::kDecentralized: return "decentralized";
  }
  return "?";
}

inline std::string_view runtime_name(Runtime r) {
  return r == Runtime::kInProc ? "inproc" : "tcp";
}

struct AgentSpec {
  int id = 0;
  VehicleParams params;
  VehicleState x0;
  double u_max = 10.0;  // symmetric actuation box
  double q_uu = 0.1;
  Eigen::Vector2d q_xx{1.0, 1.0};  // diagonal of the state weight
  double lambda_v = 1.0;
  double rho = 10.0;
};

struct ScenarioConfig {
  std::vector<AgentSpec> agents;
  Topology topology;
  HorizonSpec horizon;
  double T = 0.1;
  int steps = 100;
  Mode mode = Mode::kBargaining;
  Runtime runtime = Runtime::kInProc;
  DiscretizationMethod discretization = DiscretizationMethod::kZoh;
  GameConfig game;
  ReferenceProfile ref = ReferenceProfile::constant(1.0);
  unsigned seed = 1;
  bool early_exit = true;

  // tcp runtime knobs
  uint16_t port = 0;  // 0: pick an ephemeral port
  double timeout_s = 2.0;
  int delay_rounds = 0;
};

namespace scenario_detail {

struct Line {
  int number = 0;
  std::vector<std::string> tokens;
};

[[noreturn]] inline void fail(const std::string& where, int line,
                              const std::string& what) {
  throw ConfigError(where + ":" + std::to_string(line) + ": " + what);
}

inline double num(const std::string& where, const Line& ln, size_t idx) {
  if (idx >= ln.tokens.size())
    fail(where, ln.number, "'" + ln.tokens[0] + "' is missing a value");
  double v = 0.0;
  if (!parse_double(ln.tokens[idx], v))
    fail(where, ln.number, "bad number '" + ln.tokens[idx] + "'");
  return v;
}

inline int integer(const std::string& where, const Line& ln, size_t idx) {
  const double v = num(where, ln, idx);
  const int i = static_cast<int>(v);
  if (static_cast<double>(i) != v)
    fail(where, ln.number, "'" + ln.tokens[0] + "' wants an integer, got '" +
                               ln.tokens[idx] + "'");
  return i;
}

inline void want_args(const std::string& where, const Line& ln, size_t n) {
  if (ln.tokens.size() != n + 1)
    fail(where, ln.number,
         "'" + ln.tokens[0] + "' takes " + std::to_string(n) + " value" +
             (n == 1 ? "" : "s") + ", got " +
             std::to_string(ln.tokens.size() - 1));
}

}  // namespace scenario_detail

/// Parses scenario text. `where` names the source for error messages;
/// `dir` is the directory used to resolve a `topology <path>` reference.
inline ScenarioConfig parse_scenario_lines(const std::vector<std::string>& raw,
                                           const std::string& where,
                                           const std::string& dir = ".") {
  using scenario_detail::fail;
  using scenario_detail::integer;
  using scenario_detail::num;
  using scenario_detail::want_args;
  using scenario_detail::Line;

  std::vector<Line> lines;
  for (size_t i = 0; i < raw.size(); ++i) {
    std::string text = raw[i];
    if (const auto hash = text.find('#'); hash != std::string::npos)
      text.erase(hash);
    Line ln;
    ln.number = static_cast<int>(i) + 1;
    std::istringstream iss(text);
    std::string tok;
    while (iss >> tok) ln.tokens.push_back(tok);
    if (!ln.tokens.empty()) lines.push_back(std::move(ln));
  }

  ScenarioConfig cfg;
  cfg.game.beta_init_margin = 1.0;

  std::map<int, AgentSpec> agents;
  AgentSpec* current = nullptr;
  std::set<std::string> seen_global;
  std::set<std::string> seen_agent;
  std::vector<std::pair<int, double>> breakpoints;
  std::optional<double> v_ref_base;
  std::string topology_ref;  // "chain" or a path
  std::vector<std::string> topo_lines;
  int topo_first_line = 0;

  const auto once = [&](const Line& ln) {
    auto& seen = current ? seen_agent : seen_global;
    if (!seen.insert(ln.tokens[0]).second)
      fail(where, ln.number, "duplicate key '" + ln.tokens[0] + "'");
  };
  const auto global_only = [&](const Line& ln) {
    if (current)
      fail(where, ln.number,
           "'" + ln.tokens[0] + "' must appear before the agent blocks");
    once(ln);
  };
  const auto agent_only = [&](const Line& ln) -> AgentSpec& {
    if (!current)
      fail(where, ln.number,
           "'" + ln.tokens[0] + "' belongs inside an agent block");
    once(ln);
    return *current;
  };

  for (const Line& ln : lines) {
    const std::string& key = ln.tokens[0];
    if (key == "agent") {
      want_args(where, ln, 1);
      const int id = integer(where, ln, 1);
      if (id < 0) fail(where, ln.number, "agent id must be non-negative");
      if (agents.count(id))
        fail(where, ln.number,
             "agent " + std::to_string(id) + " defined twice");
      current = &agents.emplace(id, AgentSpec{}).first->second;
      current->id = id;
      seen_agent.clear();
    } else if (key == "steps") {
      global_only(ln);
      want_args(where, ln, 1);
      cfg.steps = integer(where, ln, 1);
      if (cfg.steps < 1) fail(where, ln.number, "steps must be >= 1");
    } else if (key == "T") {
      global_only(ln);
      want_args(where, ln, 1);
      cfg.T = num(where, ln, 1);
      if (!(cfg.T > 0.0)) fail(where, ln.number, "T must be positive");
    } else if (key == "np") {
      global_only(ln);
      want_args(where, ln, 1);
      cfg.horizon.Np = integer(where, ln, 1);
    } else if (key == "nu") {
      global_only(ln);
      want_args(where, ln, 1);
      cfg.horizon.Nu = integer(where, ln, 1);
    } else if (key == "mode") {
      global_only(ln);
      want_args(where, ln, 1);
      const std::string& v = ln.tokens[1];
      if (v == "bargaining") cfg.mode = Mode::kBargaining;
      else if (v == "centralized") cfg.mode = Mode::kCentralized;
      else if (v == "decentralized") cfg.mode = Mode::kDecentralized;
      else fail(where, ln.number, "unknown mode '" + v + "'");
    } else if (key == "runtime") {
      global_only(ln);
      want_args(where, ln, 1);
      const std::string& v = ln.tokens[1];
      if (v == "inproc") cfg.runtime = Runtime::kInProc;
      else if (v == "tcp") cfg.runtime = Runtime::kTcp;
      else fail(where, ln.number, "unknown runtime '" + v + "'");
    } else if (key == "discretization") {
      global_only(ln);
      want_args(where, ln, 1);
      const std::string& v = ln.tokens[1];
      if (v == "zoh") cfg.discretization = DiscretizationMethod::kZoh;
      else if (v == "tustin") cfg.discretization = DiscretizationMethod::kTustin;
      else fail(where, ln.number, "unknown discretization '" + v + "'");
    } else if (key == "mu") {
      global_only(ln);
      want_args(where, ln, 1);
      cfg.game.mu = num(where, ln, 1);
    } else if (key == "delta") {
      global_only(ln);
      want_args(where, ln, 1);
      cfg.game.delta_sync = num(where, ln, 1);
    } else if (key == "margin") {
      global_only(ln);
      want_args(where, ln, 1);
      cfg.game.beta_init_margin = num(where, ln, 1);
    } else if (key == "spacing_gain") {
      global_only(ln);
      want_args(where, ln, 1);
      cfg.game.spacing_gain = num(where, ln, 1);
    } else if (key == "full_scope") {
      global_only(ln);
      want_args(where, ln, 1);
      cfg.game.full_scope = integer(where, ln, 1) != 0;
    } else if (key == "lambda") {
      global_only(ln);
      if (ln.tokens.size() < 2)
        fail(where, ln.number, "lambda needs one weight per agent");
      cfg.game.lambda.clear();
      double sum = 0.0;
      for (size_t i = 1; i < ln.tokens.size(); ++i) {
        const double w = num(where, ln, i);
        if (!(w > 0.0)) fail(where, ln.number, "lambda weights must be positive");
        cfg.game.lambda.push_back(w);
        sum += w;
      }
      for (double& w : cfg.game.lambda) w /= sum;  // stored normalized
    } else if (key == "seed") {
      global_only(ln);
      want_args(where, ln, 1);
      cfg.seed = static_cast<unsigned>(integer(where, ln, 1));
    } else if (key == "early_exit") {
      global_only(ln);
      want_args(where, ln, 1);
      cfg.early_exit = integer(where, ln, 1) != 0;
    } else if (key == "v_ref") {
      global_only(ln);
      want_args(where, ln, 1);
      v_ref_base = num(where, ln, 1);
    } else if (key == "v_ref_at") {
      if (current)
        fail(where, ln.number, "'v_ref_at' must appear before agent blocks");
      want_args(where, ln, 2);
      breakpoints.emplace_back(integer(where, ln, 1), num(where, ln, 2));
    } else if (key == "d_ref") {
      global_only(ln);
      want_args(where, ln, 1);
      cfg.ref.d_ref = num(where, ln, 1);
    } else if (key == "port") {
      global_only(ln);
      want_args(where, ln, 1);
      cfg.port = static_cast<uint16_t>(integer(where, ln, 1));
    } else if (key == "timeout") {
      global_only(ln);
      want_args(where, ln, 1);
      cfg.timeout_s = num(where, ln, 1);
    } else if (key == "delay_rounds") {
      global_only(ln);
      want_args(where, ln, 1);
      cfg.delay_rounds = integer(where, ln, 1);
    } else if (key == "topology") {
      global_only(ln);
      want_args(where, ln, 1);
      topology_ref = ln.tokens[1];
    } else if (key == "edge" || key == "leader") {
      if (current)
        fail(where, ln.number,
             "'" + key + "' must appear before the agent blocks");
      std::string joined = key;
      for (size_t i = 1; i < ln.tokens.size(); ++i)
        joined += " " + ln.tokens[i];
      if (topo_lines.empty()) topo_first_line = ln.number;
      topo_lines.push_back(joined);
    } else if (key == "a1") {
      want_args(where, ln, 1);
      agent_only(ln).params.a1 = num(where, ln, 1);
    } else if (key == "a2") {
      want_args(where, ln, 1);
      agent_only(ln).params.a2 = num(where, ln, 1);
    } else if (key == "b") {
      want_args(where, ln, 1);
      agent_only(ln).params.b = num(where, ln, 1);
    } else if (key == "x0") {
      want_args(where, ln, 2);
      AgentSpec& a = agent_only(ln);
      a.x0.d = num(where, ln, 1);
      a.x0.v = num(where, ln, 2);
    } else if (key == "u_max") {
      want_args(where, ln, 1);
      AgentSpec& a = agent_only(ln);
      a.u_max = num(where, ln, 1);
      if (!(a.u_max > 0.0)) fail(where, ln.number, "u_max must be positive");
    } else if (key == "q_uu") {
      want_args(where, ln, 1);
      agent_only(ln).q_uu = num(where, ln, 1);
    } else if (key == "q_xx") {
      want_args(where, ln, 2);
      AgentSpec& a = agent_only(ln);
      a.q_xx(0) = num(where, ln, 1);
      a.q_xx(1) = num(where, ln, 2);
    } else if (key == "lambda_v") {
      want_args(where, ln, 1);
      agent_only(ln).lambda_v = num(where, ln, 1);
    } else if (key == "rho") {
      want_args(where, ln, 1);
      agent_only(ln).rho = num(where, ln, 1);
    } else {
      fail(where, ln.number, "unknown key '" + key + "'");
    }
  }

  if (agents.empty()) fail(where, 0, "scenario defines no agents");
  const int n = static_cast<int>(agents.size());
  for (int id = 0; id < n; ++id)
    if (!agents.count(id))
      fail(where, 0, "agent ids must be 0.." + std::to_string(n - 1) +
                         " with no gaps; missing " + std::to_string(id));
  cfg.agents.reserve(n);
  for (auto& [id, spec] : agents) cfg.agents.push_back(std::move(spec));

  // Topology: explicit reference, inline lines, or the default chain.
  if (!topology_ref.empty() && !topo_lines.empty())
    fail(where, topo_first_line,
         "give either 'topology' or inline edge/leader lines, not both");
  if (topology_ref == "chain") {
    cfg.topology = chain_topology(n);
  } else if (!topology_ref.empty()) {
    cfg.topology = load_topology(dir + "/" + topology_ref);
  } else if (!topo_lines.empty()) {
    std::vector<std::string> full;
    full.push_back("agent " + std::to_string(n));
    for (auto& l : topo_lines) full.push_back(std::move(l));
    cfg.topology = parse_topology_lines(full, where);
  } else {
    cfg.topology = chain_topology(n);
  }
  if (cfg.topology.n_agents != n)
    fail(where, 0, "topology describes " +
                       std::to_string(cfg.topology.n_agents) +
                       " agents, scenario defines " + std::to_string(n));

  if (v_ref_base) cfg.ref.breakpoints = {{0, *v_ref_base}};
  for (const auto& bp : breakpoints) {
    if (!v_ref_base && cfg.ref.breakpoints.size() == 1 &&
        cfg.ref.breakpoints[0].first == 0 && bp.first == 0)
      cfg.ref.breakpoints.clear();  // explicit breakpoint at 0 replaces default
    cfg.ref.breakpoints.push_back(bp);
  }
  std::sort(cfg.ref.breakpoints.begin(), cfg.ref.breakpoints.end());

  if (cfg.horizon.Np < 1 || cfg.horizon.Nu < 1 ||
      cfg.horizon.Nu > cfg.horizon.Np)
    fail(where, 0, "horizon wants 1 <= nu <= np");
  validate(cfg.game, n);
  return cfg;
}

inline ScenarioConfig load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario file '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  std::string dir = ".";
  if (const auto slash = path.find_last_of('/'); slash != std::string::npos)
    dir = path.substr(0, slash);
  return parse_scenario_lines(lines, path, dir);
}

/// Instantiates the per-agent solver contexts a scenario describes:
/// discretized model, prediction operator, weights, box, and who each agent
/// listens to (lowest-numbered in-neighbor; the reference when none).
inline std::vector<AgentContext> build_agents(const ScenarioConfig& cfg) {
  const int n = static_cast<int>(cfg.agents.size());
  std::vector<AgentContext> out;
  out.reserve(n);
  for (const AgentSpec& spec : cfg.agents) {
    AgentContext a;
    a.id = spec.id;
    const ContinuousModel cm = make_continuous_model(spec.params);
    a.model = cfg.discretization == DiscretizationMethod::kZoh
                  ? discretize_zoh(cm, cfg.T)
                  : discretize_tustin(cm, cfg.T);
    a.po = build_prediction(a.model, cfg.horizon);
    a.weights = CostWeights::defaults(cfg.horizon.Nu);
    a.weights.Q_uu = spec.q_uu *
                     Eigen::MatrixXd::Identity(cfg.horizon.Nu, cfg.horizon.Nu);
    a.weights.Q_xx = spec.q_xx.asDiagonal();
    a.weights.lambda_v = spec.lambda_v;
    a.weights.rho_speed = spec.rho;
    a.box = BoxConstraint::symmetric(cfg.horizon.Nu, spec.u_max);

    const auto in = cfg.topology.in_neighbors(spec.id);
    a.source = in.empty() ? -1 : in.front();
    if (cfg.game.full_scope) {
      for (int r = 0; r < n; ++r) a.scope.push_back(r);
    } else {
      a.scope = in;
      a.scope.push_back(spec.id);
      std::sort(a.scope.begin(), a.scope.end());
    }
    out.push_back(std::move(a));
  }
  return out;
}

}  // namespace platoon
