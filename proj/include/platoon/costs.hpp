#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "platoon/common.hpp"
#include "platoon/prediction.hpp"
#include "platoon/solver.hpp"

namespace platoon {

/// Weights of the local (profit/energy) cost. Q_uu acts on the compressed
/// plan; Q_xx acts on every predicted state; Q_xu is a per-step cross
/// pattern whose column blk(t) pairs the state at step t with the control
/// applied there.
struct CostWeights {
  Eigen::MatrixXd Q_uu;   // Nu x Nu, positive definite
  Eigen::MatrixXd Q_xu;   // 2 x Nu
  Eigen::Matrix2d Q_xx;   // positive semidefinite
  double lambda_v = 1.0;  // tracking weight in the global cost
  double rho_speed = 10.0;  // soft speed-limit penalty weight

  static CostWeights defaults(int Nu) {
    CostWeights w;
    w.Q_uu = 0.1 * Eigen::MatrixXd::Identity(Nu, Nu);
    w.Q_xu = Eigen::MatrixXd::Zero(2, Nu);
    w.Q_xx = Eigen::Matrix2d::Identity();
    return w;
  }
};

/// Local cost lifted onto the plan: psi(u) = u'Hu + 2 F u + c0. F and c0
/// depend on the current state, so this is rebuilt every control step.
struct LiftedCost {
  Eigen::MatrixXd H;
  Eigen::RowVectorXd F;
  double c0 = 0.0;
};

/// Leader speed profile (piecewise constant over step indices) plus the
/// predefined inter-vehicle spacing convention. Reported reference values
/// are hard-clamped into [0, kSpeedLimit].
struct ReferenceProfile {
  std::vector<std::pair<int, double>> breakpoints{{0, 1.0}};
  double d_ref = 5.0;  // m; the spacing baked into each agent's d state

  double v_ref(int k) const {
    double v = breakpoints.empty() ? 0.0 : breakpoints.front().second;
    for (const auto& [step, value] : breakpoints) {
      if (step <= k)
        v = value;
      else
        break;
    }
    return std::clamp(v, 0.0, kSpeedLimit);
  }

  static ReferenceProfile constant(double v, double d_ref = 5.0) {
    ReferenceProfile r;
    r.breakpoints = {{0, v}};
    r.d_ref = d_ref;
    return r;
  }
};

/// Substitutes the stacked predictor into the per-step quadratic terms.
/// With x_t the predicted state at horizon position t (x_0 = current):
///   psi(u) = u'Q_uu u
///          + 2 sum_{t=0}^{Np-1} x_t' Q_xu[:,blk(t)] u[blk(t)]
///          + sum_{t=1}^{Np} x_t' Q_xx x_t
inline LiftedCost lift_local_cost(const CostWeights& w,
                                  const PredictionOperator& po,
                                  const VehicleState& x0) {
  const int Nu = po.Nu;
  if (w.Q_uu.rows() != Nu || w.Q_uu.cols() != Nu || w.Q_xu.cols() != Nu)
    throw InvalidParameterError("cost weight dimensions do not match Nu");
  LiftedCost lc;
  lc.H = 0.5 * (w.Q_uu + w.Q_uu.transpose());
  lc.F = Eigen::RowVectorXd::Zero(Nu);
  lc.c0 = 0.0;

  const Eigen::Vector2d x = x0.vec();
  for (int t = 0; t <= po.Np; ++t) {
    // affine pieces of x_t: x_t = S x + G u
    Eigen::Matrix2d S = Eigen::Matrix2d::Identity();
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(2, Nu);
    if (t > 0) {
      S = po.A_bar.middleRows(2 * (t - 1), 2);
      G = po.B_bar.middleRows(2 * (t - 1), 2);
    }
    if (t >= 1) {  // state cost on the predicted trajectory
      const Eigen::Vector2d Sx = S * x;
      lc.H += G.transpose() * w.Q_xx * G;
      lc.F += Sx.transpose() * w.Q_xx * G;
      lc.c0 += Sx.dot(w.Q_xx * Sx);
    }
    if (t < po.Np) {  // cross term at the step where u[blk(t)] is applied
      const int c = po.control_index(t);
      const Eigen::Vector2d q = w.Q_xu.col(c);
      lc.F(c) += (S * x).dot(q);
      const Eigen::MatrixXd M = G.transpose() * q * Eigen::RowVectorXd::Unit(Nu, c);
      lc.H += M + M.transpose();
    }
  }
  lc.H = 0.5 * (lc.H + lc.H.transpose()).eval();  // keep exactly symmetric
  return lc;
}

inline double local_cost(const LiftedCost& lc, const ControlPlan& plan) {
  return plan.dot(lc.H * plan) + 2.0 * lc.F.dot(plan) + lc.c0;
}

/// Global cost evaluator
///   kappa(u) = lambda_v * sum_t |z_t|   with z = z0 - Zm u   (tracking)
///            + u'Hu + 2 F u + c0                              (local quad)
///            + rho * sum_t max(0, s_t - vmax)^2, s = s0 + Sm u (comfort)
/// value() is exact; smooth_value()/gradient() replace |z| with
/// sqrt(z^2 + eps^2) so line searches see a consistent differentiable pair.
struct GlobalCostEvaluator {
  double lambda_v = 1.0;
  Eigen::VectorXd z0;
  Eigen::MatrixXd Zm;
  Eigen::MatrixXd H;
  Eigen::RowVectorXd F;
  double c0 = 0.0;
  Eigen::VectorXd s0;
  Eigen::MatrixXd Sm;
  double rho = 0.0;
  double vmax = kSpeedLimit;
  double eps = 1e-6;

  double quad(const Eigen::VectorXd& u) const {
    double v = c0;
    if (H.size() > 0) v += u.dot(H * u);
    if (F.size() > 0) v += 2.0 * F.dot(u);
    return v;
  }

  double penalty(const Eigen::VectorXd& u) const {
    if (rho == 0.0 || s0.size() == 0) return 0.0;
    const Eigen::VectorXd s = s0 + Sm * u;
    double p = 0.0;
    for (int t = 0; t < s.size(); ++t) {
      const double over = s(t) - vmax;
      if (over > 0.0) p += over * over;
    }
    return rho * p;
  }

  double value(const Eigen::VectorXd& u) const {
    double v = quad(u) + penalty(u);
    if (z0.size() > 0) v += lambda_v * (z0 - Zm * u).cwiseAbs().sum();
    return v;
  }

  double smooth_value(const Eigen::VectorXd& u) const {
    double v = quad(u) + penalty(u);
    if (z0.size() > 0) {
      const Eigen::VectorXd z = z0 - Zm * u;
      for (int t = 0; t < z.size(); ++t)
        v += lambda_v * std::sqrt(z(t) * z(t) + eps * eps);
    }
    return v;
  }

  Eigen::VectorXd gradient(const Eigen::VectorXd& u) const {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(u.size());
    if (H.size() > 0) g += 2.0 * (H * u);
    if (F.size() > 0) g += 2.0 * F.transpose();
    if (z0.size() > 0) {
      const Eigen::VectorXd z = z0 - Zm * u;
      Eigen::VectorXd s(z.size());
      for (int t = 0; t < z.size(); ++t)
        s(t) = z(t) / std::sqrt(z(t) * z(t) + eps * eps);
      g -= lambda_v * (Zm.transpose() * s);
    }
    if (rho != 0.0 && s0.size() > 0) {
      const Eigen::VectorXd s = s0 + Sm * u;
      Eigen::VectorXd over = (s.array() - vmax).cwiseMax(0.0).matrix();
      g += 2.0 * rho * (Sm.transpose() * over);
    }
    return g;
  }

  /// Copies *this into the closures, so the CostFn owns its data.
  CostFn as_cost_fn() const {
    return {[ev = *this](const Eigen::VectorXd& u) { return ev.smooth_value(u); },
            [ev = *this](const Eigen::VectorXd& u) { return ev.gradient(u); }};
  }
};

/// Builds the single-agent evaluator for a fixed tracking target over the
/// horizon. `target` has Np entries aligned with the predicted outputs.
inline GlobalCostEvaluator make_global_evaluator(
    const LiftedCost& lc, const PredictionOperator& po, const VehicleState& x,
    const Eigen::VectorXd& target, double lambda_v, double rho_speed) {
  if (target.size() != po.Np)
    throw InvalidParameterError("target length does not match Np");
  GlobalCostEvaluator ev;
  ev.lambda_v = lambda_v;
  ev.rho = rho_speed;
  ev.H = lc.H;
  ev.F = lc.F;
  ev.c0 = lc.c0;
  Eigen::MatrixXd M;
  Eigen::VectorXd m0;
  state_row_map(po, x, po.C, M, m0);
  if (po.d != 0.0)
    for (int t = 0; t < po.Np; ++t) M(t, po.control_index(t)) += po.d;
  ev.s0 = m0;
  ev.Sm = M;
  ev.z0 = target - m0;
  ev.Zm = M;
  return ev;
}

/// Global cost of a plan against the reference profile from step k:
/// tracking + lifted local quadratic + soft speed-limit penalty.
inline double global_cost(const LiftedCost& lc, const PredictionOperator& po,
                          const VehicleState& x, const ControlPlan& plan,
                          const ReferenceProfile& ref, int k,
                          double lambda_v, double rho_speed) {
  Eigen::VectorXd target(po.Np);
  for (int t = 0; t < po.Np; ++t) target(t) = ref.v_ref(k + 1 + t);
  return make_global_evaluator(lc, po, x, target, lambda_v, rho_speed)
      .value(plan);
}

/// Utopia point: exact maximum of the (convex) lifted cost over the box by
/// vertex enumeration. 2^Nu vertices, so refuse beyond Nu = 12.
inline double utopia_point(const LiftedCost& lc, const BoxConstraint& box) {
  const int n = box.size();
  if (n > 12)
    throw InvalidParameterError(
        "utopia vertex enumeration limited to 12 decision variables");
  if (lc.H.rows() != n)
    throw InvalidParameterError("box does not match the lifted cost");
  double best = -std::numeric_limits<double>::infinity();
  Eigen::VectorXd u(n);
  for (long mask = 0; mask < (1L << n); ++mask) {
    for (int i = 0; i < n; ++i)
      u(i) = (mask >> i) & 1 ? box.upper(i) : box.lower(i);
    best = std::max(best, local_cost(lc, u));
  }
  return best;
}

}  // namespace platoon
