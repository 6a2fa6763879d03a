#pragma once

// Closed-loop execution. One agent's round protocol lives in AgentCore and
// is shared verbatim by the in-process driver and the TCP agent process, so
// the two runtimes produce the same trajectories down to the last bit: both
// feed the core the same messages, and the wire format round-trips doubles
// exactly.

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "platoon/bargaining.hpp"
#include "platoon/baselines.hpp"
#include "platoon/network.hpp"
#include "platoon/scenario.hpp"

namespace platoon {

struct LogRow {
  int k = 0;
  double t = 0.0;
  int agent = 0;
  double d = 0.0, v = 0.0, y = 0.0, u = 0.0;
  double psi = 0.0, kappa = 0.0, beta = 0.0;
  bool coop = true;

  bool operator==(const LogRow&) const = default;
};

struct TrajectoryLog {
  std::string mode;
  std::string runtime;
  double T = 0.1;
  int n_agents = 0;
  std::vector<LogRow> rows;  // step-major, agent-minor

  int steps() const {
    return n_agents == 0 ? 0 : static_cast<int>(rows.size()) / n_agents;
  }
  const LogRow& at(int k, int agent) const {
    return rows[static_cast<size_t>(k) * n_agents + agent];
  }
};

/// One agent's view of the protocol: produce the two broadcasts, then fold
/// the received ones into a solve, a commit row, and a state update.
class AgentCore {
 public:
  AgentCore(const ScenarioConfig& cfg, int id)
      : cfg_(cfg), agents_(build_agents(cfg)), id_(id) {
    x_ = cfg.agents[id].x0;
    st_ = init_bargain(agents_[id], x_, cfg.game.beta_init_margin);
  }

  RoundMessage state_message(int k) const {
    return {MsgKind::kState, id_, k, {x_.d, x_.v, st_.beta}};
  }

  RoundMessage plan_message(int k) const {
    std::vector<double> p(st_.plan.data(), st_.plan.data() + st_.plan.size());
    return {MsgKind::kPlan, id_, k, std::move(p)};
  }

  /// Solves this round against exactly the received messages, applies the
  /// first action, and returns the commit row.
  RoundMessage commit_round(int k, const std::vector<RoundMessage>& states,
                            const std::vector<RoundMessage>& plans) {
    const int n = static_cast<int>(agents_.size());
    Snapshot snap;
    snap.k = k;
    snap.x.resize(n);
    snap.beta.assign(n, 0.0);
    snap.plan.resize(n);
    snap.visible.assign(n, 0);
    for (int r = 0; r < n; ++r)
      snap.plan[r] = Eigen::VectorXd::Zero(agents_[r].po.Nu);
    snap.x[id_] = x_;
    snap.beta[id_] = st_.beta;
    snap.plan[id_] = st_.plan;
    snap.visible[id_] = 1;
    for (const RoundMessage& m : states) {
      expect(m, MsgKind::kState, k);
      snap.x[m.agent_id] = VehicleState{m.payload[0], m.payload[1]};
      snap.beta[m.agent_id] = m.payload[2];
      snap.visible[m.agent_id] = 1;
    }
    for (const RoundMessage& m : plans) {
      expect(m, MsgKind::kPlan, k);
      const auto& src = agents_[m.agent_id];
      if (static_cast<int>(m.payload.size()) != src.po.Nu)
        throw TransportError("agent " + std::to_string(m.agent_id) +
                             " sent a plan of length " +
                             std::to_string(m.payload.size()) + ", expected " +
                             std::to_string(src.po.Nu));
      snap.plan[m.agent_id] =
          Eigen::Map<const Eigen::VectorXd>(m.payload.data(), src.po.Nu);
    }

    ControlPlan plan;
    double kappa = 0.0;
    bool coop = true;
    if (cfg_.mode == Mode::kBargaining) {
      const StepResult r =
          distributed_step(agents_, id_, snap, cfg_.game, cfg_.ref);
      plan = r.plan;
      kappa = r.kappa;
      coop = r.cooperated;
    } else if (cfg_.mode == Mode::kDecentralized) {
      const AgentMpcResult r =
          decentralized_mpc_step(agents_, id_, snap, cfg_.game, cfg_.ref);
      plan = r.plan;
      kappa = r.kappa;
    } else {
      throw ConfigError("centralized mode is a joint solve; it has no "
                        "per-agent protocol");
    }

    const auto& me = agents_[id_];
    const LiftedCost lc = lift_local_cost(me.weights, me.po, x_);
    const double psi = local_cost(lc, plan);
    const double beta_next = update_disagreement(st_.beta, psi, cfg_.game.mu);
    const double u0 = plan(0);
    const double y = output(me.model, x_, u0);

    RoundMessage commit{MsgKind::kCommit, id_, k,
                        {x_.d, x_.v, y, u0, psi, kappa, beta_next,
                         coop ? 1.0 : 0.0}};
    x_ = step(me.model, x_, u0, {}, k);
    st_.plan = plan;
    st_.psi_last = psi;
    st_.beta = beta_next;
    st_.cooperated = coop;
    return commit;
  }

  int in_degree() const {
    return static_cast<int>(cfg_.topology.in_neighbors(id_).size());
  }

 private:
  static void expect(const RoundMessage& m, MsgKind kind, int k) {
    if (m.kind != kind)
      throw TransportError("inbox holds a " + std::string(kind_name(m.kind)) +
                           " where a " + std::string(kind_name(kind)) +
                           " belongs");
    check_payload_size(m);
    (void)k;  // delayed delivery legitimately carries an older step
  }

  ScenarioConfig cfg_;
  std::vector<AgentContext> agents_;
  int id_ = 0;
  VehicleState x_;
  BargainState st_;
};

inline LogRow row_from_commit(const RoundMessage& m, double T) {
  LogRow r;
  r.k = m.k;
  r.t = m.k * T;
  r.agent = m.agent_id;
  r.d = m.payload[kCommitD];
  r.v = m.payload[kCommitV];
  r.y = m.payload[kCommitY];
  r.u = m.payload[kCommitU];
  r.psi = m.payload[kCommitPsi];
  r.kappa = m.payload[kCommitKappa];
  r.beta = m.payload[kCommitBeta];
  r.coop = m.payload[kCommitCoop] != 0.0;
  return r;
}

namespace harness_detail {

/// Synchronization error of one committed step, from the y column.
inline double commit_sync_error(const std::vector<LogRow>& step_rows,
                                const Topology& topo,
                                const ReferenceProfile& ref, int k) {
  std::vector<double> y(step_rows.size());
  for (const LogRow& r : step_rows) y[r.agent] = r.y;
  return sync_error(y, topo, ref, k);
}

}  // namespace harness_detail

/// In-process closed loop for the two per-agent modes, message-for-message
/// identical to the TCP runtime.
inline TrajectoryLog run_rounds_inproc(const ScenarioConfig& cfg) {
  const int n = static_cast<int>(cfg.agents.size());
  std::vector<AgentCore> cores;
  cores.reserve(n);
  for (int i = 0; i < n; ++i) cores.emplace_back(cfg, i);
  InProcTransport bus(cfg.topology, cfg.delay_rounds);

  TrajectoryLog log;
  log.mode = std::string(mode_name(cfg.mode));
  log.runtime = "inproc";
  log.T = cfg.T;
  log.n_agents = n;

  int below = 0;
  for (int k = 0; k < cfg.steps; ++k) {
    std::vector<std::vector<RoundMessage>> out_s(n), out_p(n);
    for (int i = 0; i < n; ++i) out_s[i] = {cores[i].state_message(k)};
    const auto in_s = bus.exchange(out_s, k);
    for (int i = 0; i < n; ++i) out_p[i] = {cores[i].plan_message(k)};
    const auto in_p = bus.exchange(out_p, k);

    std::vector<LogRow> step_rows;
    step_rows.reserve(n);
    for (int i = 0; i < n; ++i) {
      try {
        step_rows.push_back(
            row_from_commit(cores[i].commit_round(k, in_s[i], in_p[i]), cfg.T));
      } catch (const SolverError& e) {
        throw SolverError("step " + std::to_string(k) + ", agent " +
                          std::to_string(i) + ": " + e.what());
      }
    }
    log.rows.insert(log.rows.end(), step_rows.begin(), step_rows.end());

    const double e = harness_detail::commit_sync_error(step_rows,
                                                       cfg.topology, cfg.ref, k);
    below = e < cfg.game.delta_sync ? below + 1 : 0;
    if (cfg.early_exit && below >= 10) break;
  }
  return log;
}

/// In-process closed loop for the joint mode: one stacked minimization per
/// step, with the same logging and early-exit rules.
inline TrajectoryLog run_centralized_inproc(const ScenarioConfig& cfg) {
  const int n = static_cast<int>(cfg.agents.size());
  const std::vector<AgentContext> agents = build_agents(cfg);
  std::vector<VehicleState> x(n);
  std::vector<BargainState> st(n);
  for (int i = 0; i < n; ++i) {
    x[i] = cfg.agents[i].x0;
    st[i] = init_bargain(agents[i], x[i], cfg.game.beta_init_margin);
  }

  TrajectoryLog log;
  log.mode = std::string(mode_name(cfg.mode));
  log.runtime = "inproc";
  log.T = cfg.T;
  log.n_agents = n;

  int below = 0;
  for (int k = 0; k < cfg.steps; ++k) {
    Snapshot snap;
    snap.k = k;
    snap.x = x;
    for (int i = 0; i < n; ++i) {
      snap.beta.push_back(st[i].beta);
      snap.plan.push_back(st[i].plan);
    }
    MpcResult res;
    try {
      res = centralized_mpc_step(agents, snap, cfg.game, cfg.ref);
    } catch (const SolverError& e) {
      throw SolverError("step " + std::to_string(k) + ": " + e.what());
    }

    std::vector<LogRow> step_rows;
    for (int i = 0; i < n; ++i) {
      const LiftedCost lc = lift_local_cost(agents[i].weights, agents[i].po,
                                            x[i]);
      const double psi = local_cost(lc, res.plans[i]);
      const double beta_next =
          update_disagreement(st[i].beta, psi, cfg.game.mu);
      const double u0 = res.plans[i](0);
      LogRow r;
      r.k = k;
      r.t = k * cfg.T;
      r.agent = i;
      r.d = x[i].d;
      r.v = x[i].v;
      r.y = output(agents[i].model, x[i], u0);
      r.u = u0;
      r.psi = psi;
      r.kappa = res.kappa[i];
      r.beta = beta_next;
      r.coop = true;
      step_rows.push_back(r);

      x[i] = step(agents[i].model, x[i], u0, {}, k);
      st[i].plan = res.plans[i];
      st[i].psi_last = psi;
      st[i].beta = beta_next;
    }
    log.rows.insert(log.rows.end(), step_rows.begin(), step_rows.end());

    const double e = harness_detail::commit_sync_error(step_rows,
                                                       cfg.topology, cfg.ref, k);
    below = e < cfg.game.delta_sync ? below + 1 : 0;
    if (cfg.early_exit && below >= 10) break;
  }
  return log;
}

/// Single-process closed loop in any mode. The TCP runtime is a process
/// orchestration concern and lives with the CLI; see run_tcp_agent and
/// run_tcp_coordinator for its halves.
inline TrajectoryLog run_closed_loop(const ScenarioConfig& cfg) {
  if (cfg.runtime == Runtime::kTcp)
    throw ConfigError(
        "the tcp runtime spans processes; drive it through the CLI");
  if (cfg.mode == Mode::kCentralized) return run_centralized_inproc(cfg);
  if (cfg.game.full_scope && cfg.mode == Mode::kBargaining)
    throw ConfigError(
        "full_scope bargaining needs information the message protocol never "
        "delivers; use mode centralized for the joint comparison");
  return run_rounds_inproc(cfg);
}

/// Agent half of the TCP runtime: same core, messages over the star.
/// Runs the fixed step count (there is no early-exit control channel).
inline void run_tcp_agent(const ScenarioConfig& cfg, int id,
                          const std::string& host, uint16_t port) {
  AgentCore core(cfg, id);
  TcpAgentChannel ch(host, port, id, core.in_degree(),
                     {cfg.timeout_s, cfg.delay_rounds});
  for (int k = 0; k < cfg.steps; ++k) {
    const auto states = ch.exchange(core.state_message(k));
    const auto plans = ch.exchange(core.plan_message(k));
    ch.exchange(core.commit_round(k, states, plans));
  }
}

/// Coordinator half: enforce the barrier, forward along edges, and collect
/// the commit rows into the canonical log.
inline TrajectoryLog run_tcp_coordinator(const ScenarioConfig& cfg,
                                         TcpCoordinator& coord) {
  TrajectoryLog log;
  log.mode = std::string(mode_name(cfg.mode));
  log.runtime = "tcp";
  log.T = cfg.T;
  log.n_agents = static_cast<int>(cfg.agents.size());
  for (int k = 0; k < cfg.steps; ++k) {
    coord.run_phase(MsgKind::kState, k);
    coord.run_phase(MsgKind::kPlan, k);
    for (const RoundMessage& m : coord.run_phase(MsgKind::kCommit, k))
      log.rows.push_back(row_from_commit(m, cfg.T));
  }
  return log;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct Metrics {
  std::optional<int> sync_time_steps;  // first step of a 10-step window below
                                       // the threshold
  std::vector<double> total_cost;      // per agent, summed realized psi
  double max_speed_violation = 0.0;    // above the comfort limit, m/s
  std::optional<int> rounds_to_agreement;  // first step every agent agreed
};

inline Metrics compute_metrics(const TrajectoryLog& log,
                               const ScenarioConfig& cfg) {
  Metrics m;
  const int steps = log.steps();
  const int n = log.n_agents;
  m.total_cost.assign(n, 0.0);

  int below = 0;
  for (int k = 0; k < steps; ++k) {
    std::vector<LogRow> step_rows(log.rows.begin() + k * n,
                                  log.rows.begin() + (k + 1) * n);
    const double e = harness_detail::commit_sync_error(step_rows,
                                                       cfg.topology, cfg.ref, k);
    below = e < cfg.game.delta_sync ? below + 1 : 0;
    if (below >= 10 && !m.sync_time_steps) m.sync_time_steps = k - 9;

    bool all_coop = true;
    for (const LogRow& r : step_rows) {
      m.total_cost[r.agent] += r.psi;
      m.max_speed_violation =
          std::max(m.max_speed_violation, r.v - kSpeedLimit);
      all_coop = all_coop && r.coop;
    }
    if (all_coop && !m.rounds_to_agreement) m.rounds_to_agreement = k;
  }
  m.max_speed_violation = std::max(m.max_speed_violation, 0.0);
  return m;
}

inline std::string metrics_text(const Metrics& m) {
  std::ostringstream os;
  os << "sync_time_steps ";
  if (m.sync_time_steps) os << *m.sync_time_steps; else os << "none";
  os << "\nrounds_to_agreement ";
  if (m.rounds_to_agreement) os << *m.rounds_to_agreement; else os << "none";
  os << "\nmax_speed_violation " << format_double(m.max_speed_violation);
  os << "\ntotal_cost";
  for (double c : m.total_cost) os << " " << format_double(c);
  os << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

inline constexpr const char* kCsvHeader = "k,t,agent,d,v,y,u,psi,kappa,beta,coop";

inline void export_csv(const TrajectoryLog& log, const std::string& path) {
  std::ofstream out(path, std::ios::binary);  // no platform newline games
  if (!out) throw Error("cannot write '" + path + "'");
  out << kCsvHeader << "\n";
  for (const LogRow& r : log.rows) {
    out << r.k << ',' << format_double(r.t) << ',' << r.agent << ','
        << format_double(r.d) << ',' << format_double(r.v) << ','
        << format_double(r.y) << ',' << format_double(r.u) << ','
        << format_double(r.psi) << ',' << format_double(r.kappa) << ','
        << format_double(r.beta) << ',' << (r.coop ? 1 : 0) << "\n";
  }
  if (!out.flush()) throw Error("short write to '" + path + "'");
}

inline TrajectoryLog import_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader)
    throw Error(path + ": not a trajectory CSV (bad header)");
  TrajectoryLog log;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream iss(line);
    std::string tok;
    while (std::getline(iss, tok, ',')) f.push_back(tok);
    if (f.size() != 11)
      throw Error(path + ":" + std::to_string(lineno) + ": expected 11 fields");
    const auto fld = [&](int i) {
      double v = 0.0;
      if (!parse_double(f[i], v))
        throw Error(path + ":" + std::to_string(lineno) + ": bad number '" +
                    f[i] + "'");
      return v;
    };
    LogRow r;
    r.k = static_cast<int>(fld(0));
    r.t = fld(1);
    r.agent = static_cast<int>(fld(2));
    r.d = fld(3);
    r.v = fld(4);
    r.y = fld(5);
    r.u = fld(6);
    r.psi = fld(7);
    r.kappa = fld(8);
    r.beta = fld(9);
    r.coop = fld(10) != 0.0;
    log.rows.push_back(r);
    log.n_agents = std::max(log.n_agents, r.agent + 1);
  }
  if (log.rows.size() > static_cast<size_t>(log.n_agents))
    log.T = log.rows[log.n_agents].t;  // t of the first k=1 row
  return log;
}

}  // namespace platoon
