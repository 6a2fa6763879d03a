#pragma once

#include <Eigen/Dense>
#include <algorithm>

#include "platoon/common.hpp"
#include "platoon/dynamics.hpp"

namespace platoon {

/// Prediction horizon of Np sampled steps driven by a compressed plan of Nu
/// decisions. Controls beyond position Nu-1 are blocked (held constant).
struct HorizonSpec {
  int Np = 10;
  int Nu = 5;
};

/// Compressed decision vector, one entry per free control move (length Nu).
using ControlPlan = Eigen::VectorXd;

/// Stacked affine predictor over one horizon:
///   X = A_bar x0 + B_bar u,  X = [x(k+1); ...; x(k+Np)].
/// Rebuilding is cheap; it depends only on the discrete model and horizon.
struct PredictionOperator {
  int Np = 0;
  int Nu = 0;
  Eigen::MatrixXd A_bar;   // (2 Np) x 2
  Eigen::MatrixXd B_bar;   // (2 Np) x Nu
  Eigen::RowVector2d C;    // measurement row from the model
  double d = 0.0;          // feedthrough from the model

  /// Move-blocking map: plan entry applied at horizon step j.
  int control_index(int j) const { return std::min(j, Nu - 1); }
};

inline PredictionOperator build_prediction(const DiscreteModel& dm,
                                           const HorizonSpec& h) {
  if (h.Nu < 1 || h.Nu > h.Np)
    throw InvalidParameterError("horizon must satisfy 1 <= Nu <= Np");
  PredictionOperator po;
  po.Np = h.Np;
  po.Nu = h.Nu;
  po.C = dm.C;
  po.d = dm.d;
  po.A_bar.resize(2 * h.Np, 2);
  po.B_bar = Eigen::MatrixXd::Zero(2 * h.Np, h.Nu);

  Eigen::Matrix2d Apow = dm.A_k;                     // A_k^(t+1)
  Eigen::MatrixXd Brow = Eigen::MatrixXd::Zero(2, h.Nu);
  for (int t = 0; t < h.Np; ++t) {
    if (t > 0) {
      Apow = dm.A_k * Apow;
      Brow = dm.A_k * Brow;
    }
    Brow.col(po.control_index(t)) += dm.b_k;
    po.A_bar.middleRows<2>(2 * t) = (t == 0) ? Eigen::Matrix2d(dm.A_k) : Apow;
    po.B_bar.middleRows(2 * t, 2) = Brow;
  }
  return po;
}

/// Predicted states as an Np x 2 matrix; row t is x(k+1+t).
inline Eigen::MatrixXd predict_states(const PredictionOperator& po,
                                      const VehicleState& x0,
                                      const ControlPlan& plan) {
  if (plan.size() != po.Nu)
    throw InvalidParameterError("plan length does not match Nu");
  const Eigen::VectorXd stacked = po.A_bar * x0.vec() + po.B_bar * plan;
  Eigen::MatrixXd out(po.Np, 2);
  for (int t = 0; t < po.Np; ++t) {
    out(t, 0) = stacked(2 * t);
    out(t, 1) = stacked(2 * t + 1);
  }
  return out;
}

/// Affine map of a scalar state functional w·x over the horizon:
///   w·x(k+1+t) = (M plan + m0)(t).
/// The costs and game layers use this for speed tracking (w = C) and for
/// the spacing-coupled synchronization output.
inline void state_row_map(const PredictionOperator& po,
                          const VehicleState& x0,
                          const Eigen::RowVector2d& w, Eigen::MatrixXd& M,
                          Eigen::VectorXd& m0) {
  M.resize(po.Np, po.Nu);
  m0.resize(po.Np);
  for (int t = 0; t < po.Np; ++t) {
    M.row(t) = w * po.B_bar.middleRows(2 * t, 2);
    m0(t) = w * (po.A_bar.middleRows(2 * t, 2) * x0.vec());
  }
}

/// Predicted measured outputs over the horizon, feedthrough included; the
/// control paired with step t is the (blocked) plan entry applied there.
inline Eigen::VectorXd predict_outputs(const PredictionOperator& po,
                                       const VehicleState& x0,
                                       const ControlPlan& plan) {
  Eigen::MatrixXd M;
  Eigen::VectorXd m0;
  state_row_map(po, x0, po.C, M, m0);
  Eigen::VectorXd y = M * plan + m0;
  if (po.d != 0.0)
    for (int t = 0; t < po.Np; ++t) y(t) += po.d * plan(po.control_index(t));
  return y;
}

}  // namespace platoon
