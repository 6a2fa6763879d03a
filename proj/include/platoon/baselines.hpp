#pragma once

// MPC comparison baselines: the same global costs the game negotiates over,
// minimized outright. Centralized stacks every agent into one program;
// decentralized lets each agent optimize alone against frozen neighbor
// plans. No disagreement points, no barrier, no negotiation.

#include <vector>

#include <Eigen/Dense>

#include "platoon/bargaining.hpp"
#include "platoon/costs.hpp"
#include "platoon/solver.hpp"

namespace platoon {

struct IrlsOptions {
  int passes = 5;
  double weight_floor = 1e-3;  // keeps the majorizer bounded at kinks
};

/// Minimizes the sum of the given global costs over the box by iterative
/// quadratic majorization: each pass replaces |z_t| with z_t^2/(2 w_t) +
/// w_t/2 at the current residuals and the speed penalty with its active-set
/// quadratic, then solves the resulting box QP exactly.
inline SolveReport minimize_global_cost(
    const std::vector<GlobalCostEvaluator>& parts, const BoxConstraint& box,
    const Eigen::VectorXd& warm, IrlsOptions opt = {}) {
  const int n = static_cast<int>(warm.size());
  Eigen::VectorXd u = box.clamp(warm);
  SolveReport rep;
  for (int pass = 0; pass < opt.passes; ++pass) {
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd f = Eigen::VectorXd::Zero(n);
    for (const auto& ev : parts) {
      // Quadratic part, rewritten from u'Hu + 2Fu into 0.5 u'H'u + f'u.
      H += 2.0 * ev.H;
      f += 2.0 * ev.F.transpose();
      // Reweighted tracking term.
      if (ev.z0.size() > 0 && ev.lambda_v != 0.0) {
        const Eigen::VectorXd z = ev.z0 - ev.Zm * u;
        for (int t = 0; t < z.size(); ++t) {
          const double w = std::max(std::sqrt(z(t) * z(t) + ev.eps * ev.eps),
                                    opt.weight_floor);
          const double c = ev.lambda_v / (2.0 * w);
          H += 2.0 * c * ev.Zm.row(t).transpose() * ev.Zm.row(t);
          f -= 2.0 * c * ev.z0(t) * ev.Zm.row(t).transpose();
        }
      }
      // Speed-limit penalty, quadratic on the currently violating steps.
      if (ev.rho != 0.0 && ev.s0.size() > 0) {
        const Eigen::VectorXd s = ev.s0 + ev.Sm * u;
        for (int t = 0; t < s.size(); ++t) {
          if (s(t) <= ev.vmax) continue;
          H += 2.0 * ev.rho * ev.Sm.row(t).transpose() * ev.Sm.row(t);
          f += 2.0 * ev.rho * (ev.s0(t) - ev.vmax) *
               ev.Sm.row(t).transpose();
        }
      }
    }
    rep = minimize_box_qp(H, f, box, kDefaultTol, kDefaultMaxIter, &u);
    u = rep.plan;
  }
  rep.objective = 0.0;
  for (const auto& ev : parts) rep.objective += ev.value(u);
  return rep;
}

struct MpcResult {
  std::vector<ControlPlan> plans;
  std::vector<double> kappa;  // realized global cost per agent
};

/// One joint minimization of the platoon-wide cost over the stacked plans.
inline MpcResult centralized_mpc_step(const std::vector<AgentContext>& agents,
                                      const Snapshot& snap,
                                      const GameConfig& cfg,
                                      const ReferenceProfile& ref) {
  const int n = static_cast<int>(agents.size());
  const VariableLayout layout = VariableLayout::joint(agents);
  std::vector<GlobalCostEvaluator> parts;
  parts.reserve(n);
  for (int r = 0; r < n; ++r)
    parts.push_back(build_agent_cost(agents, r, layout, snap, ref, cfg));

  Eigen::VectorXd lo(layout.total), hi(layout.total), warm(layout.total);
  for (const auto& a : agents) {
    const int col = layout.offset.at(a.id);
    lo.segment(col, a.po.Nu) = a.box.lower;
    hi.segment(col, a.po.Nu) = a.box.upper;
    warm.segment(col, a.po.Nu) = snap.plan[a.id];
  }
  const SolveReport rep =
      minimize_global_cost(parts, BoxConstraint{lo, hi}, warm);

  MpcResult res;
  res.plans.resize(n);
  res.kappa.resize(n);
  for (const auto& a : agents)
    res.plans[a.id] = rep.plan.segment(layout.offset.at(a.id), a.po.Nu);
  for (int r = 0; r < n; ++r) res.kappa[r] = parts[r].value(rep.plan);
  return res;
}

struct AgentMpcResult {
  ControlPlan plan;
  double kappa = 0.0;
};

/// Agent i minimizes its own global cost with every neighbor plan frozen at
/// the snapshot.
inline AgentMpcResult decentralized_mpc_step(
    const std::vector<AgentContext>& agents, int i, const Snapshot& snap,
    const GameConfig& cfg, const ReferenceProfile& ref) {
  const AgentContext& ai = agents[i];
  const GlobalCostEvaluator ev = build_agent_cost(
      agents, i, VariableLayout::single(ai), snap, ref, cfg);
  const SolveReport rep =
      minimize_global_cost({ev}, ai.box, snap.plan[i]);
  return {rep.plan, ev.value(rep.plan)};
}

}  // namespace platoon
