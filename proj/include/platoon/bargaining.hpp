#pragma once

// The game layer. Each control step is one negotiation round: agents
// exchange states and disagreement points, each solves a log-barrier
// bargaining problem over its own plan with the neighbours' plans frozen,
// commits the first action, and contracts its disagreement point toward the
// realized cost. Failure to find common ground is a first-class outcome:
// the agent keeps its previous plan and reports its disagreement value.

#include <cmath>
#include <map>
#include <optional>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "platoon/common.hpp"
#include "platoon/costs.hpp"
#include "platoon/dynamics.hpp"
#include "platoon/prediction.hpp"
#include "platoon/solver.hpp"
#include "platoon/topology.hpp"

namespace platoon {

struct GameConfig {
  double mu = 0.3;                 // disagreement-point contraction rate
  std::vector<double> lambda;      // per-agent weights; empty means 1/N
  double delta_sync = 0.01;        // synchronization threshold, m/s
  double beta_init_margin = 1.0;   // initial allowance above the standalone cost
  bool full_scope = false;         // negotiate against every agent, not only
                                   // the in-neighborhood
  double spacing_gain = 0.5;       // spacing weight in the tracked output
};

inline void validate(GameConfig& cfg, int n_agents) {
  if (!(cfg.mu >= 0.0 && cfg.mu <= 1.0))
    throw ConfigError("mu must lie in [0,1]");
  if (!(cfg.delta_sync > 0.0))
    throw ConfigError("delta_sync must be positive");
  if (!(cfg.beta_init_margin >= 0.0))
    throw ConfigError("beta_init_margin must be non-negative");
  if (cfg.lambda.empty())
    cfg.lambda.assign(n_agents, 1.0 / n_agents);
  if (static_cast<int>(cfg.lambda.size()) != n_agents)
    throw ConfigError("lambda weight count does not match agent count");
  double sum = 0.0;
  for (double l : cfg.lambda) {
    if (!(l > 0.0)) throw ConfigError("lambda weights must be positive");
    sum += l;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw ConfigError("lambda weights must sum to 1");
}

/// Everything immutable an agent carries through a run.
struct AgentContext {
  int id = 0;
  DiscreteModel model;
  PredictionOperator po;
  CostWeights weights;
  BoxConstraint box;
  int source = -1;         // tracked in-neighbor; -1: track the reference
  std::vector<int> scope;  // constraint owners: in-neighborhood + self
};

/// Round-start view of the world: one entry per agent, as broadcast.
struct Snapshot {
  int k = 0;
  std::vector<VehicleState> x;
  std::vector<double> beta;
  std::vector<ControlPlan> plan;
  // Which entries the solving agent actually possesses. Empty means the full
  // world is visible; the networked runtime restricts this to one hop, and
  // the in-process round must match it or the two runtimes drift apart.
  std::vector<char> visible;

  bool sees(int id) const {
    return visible.empty() || visible[static_cast<size_t>(id)];
  }
};

struct BargainState {
  double beta = 0.0;
  double zeta = 0.0;      // best local cost attainable anywhere in the box
  double psi_last = 0.0;  // local cost realized by the committed plan
  bool cooperated = true;
  ControlPlan plan;
};

/// Negotiation result tuple: realized cost per agent when it cooperated,
/// its disagreement value when it did not.
struct GameOutcome {
  std::vector<double> xi;
  std::vector<bool> cooperation_mask;
};

/// Row vector mapping a state to the output this agent negotiates over:
/// followers weigh spacing into the tracked quantity, the reference-fed
/// agent synchronizes on plain speed.
inline Eigen::RowVector2d tracked_output_row(const AgentContext& agent,
                                             double spacing_gain) {
  if (agent.source >= 0) return {spacing_gain, 1.0};
  return {0.0, 1.0};
}

/// Column layout of a stacked decision vector: which agents' plans are free
/// variables and where each block starts. Agents not present are frozen at
/// their snapshot plans.
struct VariableLayout {
  std::map<int, int> offset;
  int total = 0;

  static VariableLayout single(const AgentContext& agent) {
    VariableLayout l;
    l.offset[agent.id] = 0;
    l.total = agent.po.Nu;
    return l;
  }

  static VariableLayout joint(const std::vector<AgentContext>& agents) {
    VariableLayout l;
    for (const auto& a : agents) {
      l.offset[a.id] = l.total;
      l.total += a.po.Nu;
    }
    return l;
  }

  bool is_free(int id) const { return offset.count(id) > 0; }
};

/// Builds agent r's global cost as a function of the stacked decision
/// vector described by `layout`. Plans outside the layout are folded into
/// the constant parts from the snapshot, so the same builder serves the
/// per-agent distributed solve (one free block) and the joint centralized
/// one (all blocks free).
inline GlobalCostEvaluator build_agent_cost(
    const std::vector<AgentContext>& agents, int r,
    const VariableLayout& layout, const Snapshot& snap,
    const ReferenceProfile& ref, const GameConfig& cfg) {
  const AgentContext& ar = agents[r];
  const int Np = ar.po.Np;

  GlobalCostEvaluator ev;
  ev.lambda_v = ar.weights.lambda_v;
  ev.rho = ar.weights.rho_speed;
  ev.H = Eigen::MatrixXd::Zero(layout.total, layout.total);
  ev.F = Eigen::RowVectorXd::Zero(layout.total);
  ev.Zm = Eigen::MatrixXd::Zero(Np, layout.total);
  ev.Sm = Eigen::MatrixXd::Zero(Np, layout.total);

  // Own tracked output and speed trajectories.
  const Eigen::RowVector2d wrow = tracked_output_row(ar, cfg.spacing_gain);
  Eigen::MatrixXd Wm, Vm;
  Eigen::VectorXd w0, v0;
  state_row_map(ar.po, snap.x[r], wrow, Wm, w0);
  state_row_map(ar.po, snap.x[r], Eigen::RowVector2d{0.0, 1.0}, Vm, v0);

  const LiftedCost lc = lift_local_cost(ar.weights, ar.po, snap.x[r]);

  Eigen::VectorXd own_w, own_s;
  if (layout.is_free(r)) {
    const int col = layout.offset.at(r);
    own_w = w0;
    own_s = v0;
    ev.Zm.middleCols(col, ar.po.Nu) = Wm;
    ev.Sm.middleCols(col, ar.po.Nu) = Vm;
    ev.H.block(col, col, ar.po.Nu, ar.po.Nu) = lc.H;
    ev.F.segment(col, ar.po.Nu) = lc.F;
    ev.c0 += lc.c0;
  } else {
    own_w = w0 + Wm * snap.plan[r];
    own_s = v0 + Vm * snap.plan[r];
    ev.c0 += local_cost(lc, snap.plan[r]);
  }
  ev.s0 = own_s;

  // Tracking target: the source's predicted tracked output, or the
  // reference profile when this agent is fed directly. A source beyond the
  // visible set (a neighbor's own neighbor, two hops away) also falls back
  // to the reference — the platoon's common goal is the best stand-in an
  // agent has for information it never receives.
  Eigen::VectorXd target = Eigen::VectorXd::Zero(Np);
  if (ar.source >= 0 &&
      (layout.is_free(ar.source) || snap.sees(ar.source))) {
    const AgentContext& as = agents[ar.source];
    const Eigen::RowVector2d srow = tracked_output_row(as, cfg.spacing_gain);
    Eigen::MatrixXd Tm;
    Eigen::VectorXd t0;
    state_row_map(as.po, snap.x[ar.source], srow, Tm, t0);
    if (layout.is_free(ar.source)) {
      target = t0;
      ev.Zm.middleCols(layout.offset.at(ar.source), as.po.Nu) -= Tm;
    } else {
      target = t0 + Tm * snap.plan[ar.source];
    }
  } else {
    for (int t = 0; t < Np; ++t) target(t) = ref.v_ref(snap.k + 1 + t);
  }
  ev.z0 = target - own_w;
  return ev;
}

/// Fresh negotiation state: zero plan, disagreement point one margin above
/// the cost that plan realizes, and the box-wide worst local cost as the
/// utopia value.
inline BargainState init_bargain(const AgentContext& agent,
                                 const VehicleState& x0, double margin) {
  BargainState st;
  st.plan = Eigen::VectorXd::Zero(agent.po.Nu);
  const LiftedCost lc = lift_local_cost(agent.weights, agent.po, x0);
  st.psi_last = local_cost(lc, st.plan);
  st.beta = st.psi_last + margin;
  st.zeta = utopia_point(lc, agent.box);
  st.cooperated = true;
  return st;
}

/// Disagreement-point update: contract toward the realized cost after a
/// round at rate mu, or jump up to it when the realized cost overshoots.
inline double update_disagreement(double beta, double psi_new, double mu) {
  if (beta >= psi_new) return beta - mu * (beta - psi_new);
  return psi_new;
}

struct StepResult {
  ControlPlan plan;
  bool cooperated = false;
  double kappa = 0.0;  // realized global cost of the returned plan
};

/// One agent's move in a round: negotiate its own plan against the frozen
/// snapshot. Infeasibility of the joint constraint set is not an error —
/// the agent simply declines and keeps its previous plan.
inline StepResult distributed_step(const std::vector<AgentContext>& agents,
                                   int i, const Snapshot& snap,
                                   const GameConfig& cfg,
                                   const ReferenceProfile& ref) {
  const AgentContext& ai = agents[i];
  const VariableLayout layout = VariableLayout::single(ai);

  std::vector<double> betas;
  std::vector<CostFn> kappas;
  GlobalCostEvaluator own;
  for (int r : ai.scope) {
    GlobalCostEvaluator ev = build_agent_cost(agents, r, layout, snap, ref,
                                              cfg);
    if (r == i) own = ev;
    betas.push_back(snap.beta[r]);
    kappas.push_back(ev.as_cost_fn());
  }

  StepResult res;
  res.plan = snap.plan[i];
  const auto start = find_feasible(betas, kappas, ai.box, snap.plan[i]);
  if (!start) {
    res.cooperated = false;
    res.kappa = own.value(snap.plan[i]);
    return res;
  }
  const std::vector<double> ones(betas.size(), 1.0);
  const SolveReport rep =
      maximize_nash_product(betas, kappas, ones, ai.box, *start);
  res.plan = rep.plan;
  res.cooperated = true;
  res.kappa = own.value(rep.plan);
  return res;
}

struct CentralizedBargainResult {
  std::vector<ControlPlan> plans;
  bool cooperated = false;
  std::vector<double> kappa;
};

/// Joint weighted bargaining over the stacked control vector. One solve for
/// the whole platoon; infeasibility means nobody moves.
inline CentralizedBargainResult centralized_bargain_step(
    const std::vector<AgentContext>& agents, const Snapshot& snap,
    const GameConfig& cfg, const ReferenceProfile& ref) {
  const int n = static_cast<int>(agents.size());
  const VariableLayout layout = VariableLayout::joint(agents);

  std::vector<GlobalCostEvaluator> evals;
  std::vector<double> betas;
  std::vector<CostFn> kappas;
  for (int r = 0; r < n; ++r) {
    evals.push_back(build_agent_cost(agents, r, layout, snap, ref, cfg));
    betas.push_back(snap.beta[r]);
    kappas.push_back(evals.back().as_cost_fn());
  }

  // Stack the per-agent boxes to match the layout.
  Eigen::VectorXd lo(layout.total), hi(layout.total);
  for (const auto& a : agents) {
    const int col = layout.offset.at(a.id);
    lo.segment(col, a.po.Nu) = a.box.lower;
    hi.segment(col, a.po.Nu) = a.box.upper;
  }
  const BoxConstraint box{lo, hi};

  Eigen::VectorXd warm(layout.total);
  for (const auto& a : agents)
    warm.segment(layout.offset.at(a.id), a.po.Nu) = snap.plan[a.id];

  CentralizedBargainResult res;
  res.plans = snap.plan;
  res.kappa.resize(n);
  const auto start = find_feasible(betas, kappas, box, warm);
  if (!start) {
    for (int r = 0; r < n; ++r) res.kappa[r] = evals[r].value(warm);
    return res;
  }
  const SolveReport rep =
      maximize_nash_product(betas, kappas, cfg.lambda, box, *start);
  res.cooperated = true;
  for (const auto& a : agents)
    res.plans[a.id] = rep.plan.segment(layout.offset.at(a.id), a.po.Nu);
  for (int r = 0; r < n; ++r) res.kappa[r] = evals[r].value(rep.plan);
  return res;
}

struct RoundResult {
  std::vector<ControlPlan> plans;
  std::vector<double> psi;    // realized local cost per agent
  std::vector<double> kappa;  // realized global cost per agent
  GameOutcome outcome;
};

/// One full negotiation round over a consistent snapshot: simultaneous
/// per-agent solves (each reads only the snapshot, so they may run in
/// parallel), then a sequential commit that refreshes plans and contracts
/// the disagreement points against the realized costs.
inline RoundResult bargaining_round(const std::vector<AgentContext>& agents,
                                    std::vector<BargainState>& states,
                                    const Snapshot& snap,
                                    const GameConfig& cfg,
                                    const ReferenceProfile& ref) {
  const int n = static_cast<int>(agents.size());

  // Each agent solves against what it would actually have received over the
  // wire: its own data plus its in-neighborhood, nothing further.
  std::vector<Snapshot> local(n, snap);
  for (int i = 0; i < n; ++i) {
    local[i].visible.assign(n, 0);
    for (int r : agents[i].scope) local[i].visible[r] = 1;
  }

  std::vector<StepResult> moves(n);
  std::vector<std::thread> workers;
  workers.reserve(n);
  for (int i = 0; i < n; ++i)
    workers.emplace_back([&, i] {
      moves[i] = distributed_step(agents, i, local[i], cfg, ref);
    });
  for (auto& w : workers) w.join();

  RoundResult res;
  res.plans.resize(n);
  res.psi.resize(n);
  res.kappa.resize(n);
  res.outcome.xi.resize(n);
  res.outcome.cooperation_mask.resize(n);
  for (int i = 0; i < n; ++i) {
    BargainState& st = states[i];
    st.plan = moves[i].plan;
    st.cooperated = moves[i].cooperated;
    const LiftedCost lc =
        lift_local_cost(agents[i].weights, agents[i].po, snap.x[i]);
    st.psi_last = local_cost(lc, st.plan);
    st.beta = update_disagreement(st.beta, st.psi_last, cfg.mu);
    res.plans[i] = st.plan;
    res.psi[i] = st.psi_last;
    res.kappa[i] = moves[i].kappa;
    res.outcome.cooperation_mask[i] = st.cooperated;
    res.outcome.xi[i] = st.cooperated ? st.psi_last : st.beta;
  }
  return res;
}

/// Network synchronization error: the largest output disagreement across
/// any communication edge, and — when a leader is designated — the largest
/// deviation from the reference among the leader and its direct listeners.
inline double sync_error(const std::vector<double>& y, const Topology& topo,
                         const ReferenceProfile& ref, int k) {
  double e = 0.0;
  for (const auto& [from, to] : topo.edges)
    e = std::max(e, std::abs(y[from] - y[to]));
  if (topo.leader >= 0) {
    const double vr = ref.v_ref(k);
    e = std::max(e, std::abs(y[topo.leader] - vr));
    for (const auto& [from, to] : topo.edges)
      if (from == topo.leader) e = std::max(e, std::abs(y[to] - vr));
  }
  return e;
}

}  // namespace platoon
