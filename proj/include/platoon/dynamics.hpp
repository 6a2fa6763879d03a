#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>
#include <cmath>
#include <numbers>
#include <vector>

#include "platoon/common.hpp"

namespace platoon {

/// Scalar coefficients of the longitudinal dynamics
///   d' = v
///   v' = a1*d + a2*v + b*(u + f)
/// where d is the spacing state (position minus the predefined distance)
/// and v the speed.
struct VehicleParams {
  double a1 = 0.0;
  double a2 = 0.0;
  double b = 1.0;
};

/// State-space form x' = A x + b_vec (u + f), y = C x + d u.
struct ContinuousModel {
  Eigen::Matrix2d A;
  Eigen::Vector2d b_vec;
  Eigen::RowVector2d C;
  double d = 0.0;  // feedthrough
};

struct VehicleState {
  double d = 0.0;  // spacing state (m)
  double v = 0.0;  // speed (m/s)

  Eigen::Vector2d vec() const { return {d, v}; }
  static VehicleState from(const Eigen::Vector2d& x) { return {x(0), x(1)}; }
};

enum class DiscretizationMethod { kZoh, kTustin };

/// Sampled model x(k+1) = A_k x(k) + b_k (u(k) + f(k)), y = C x + d u.
struct DiscreteModel {
  Eigen::Matrix2d A_k;
  Eigen::Vector2d b_k;
  Eigen::RowVector2d C;
  double d = 0.0;
  double T = 0.1;
  DiscretizationMethod method = DiscretizationMethod::kZoh;
};

/// Additive input disturbance. "zero" is the identity of the input channel;
/// "sinusoid" is a bounded time-based wave evaluated at t = k*T; "table" is
/// a per-step lookup (zero beyond the end).
struct DisturbanceModel {
  enum class Kind { kZero, kSinusoid, kTable };
  Kind kind = Kind::kZero;
  double amplitude = 0.0;
  double frequency = 0.0;  // Hz
  double phase = 0.0;      // rad
  std::vector<double> table;

  double eval(const VehicleState&, int k, double T) const {
    switch (kind) {
      case Kind::kZero:
        return 0.0;
      case Kind::kSinusoid:
        return amplitude *
               std::sin(2.0 * std::numbers::pi * frequency * k * T + phase);
      case Kind::kTable:
        return (k >= 0 && k < static_cast<int>(table.size())) ? table[k] : 0.0;
    }
    return 0.0;
  }
};

/// Builds the canonical continuous model from scalar coefficients.
/// Throws InvalidParameterError on non-finite values or b == 0.
inline ContinuousModel make_continuous_model(const VehicleParams& p) {
  if (!std::isfinite(p.a1) || !std::isfinite(p.a2) || !std::isfinite(p.b))
    throw InvalidParameterError("vehicle parameters must be finite");
  if (p.b == 0.0)
    throw InvalidParameterError("input gain b must be nonzero");
  ContinuousModel m;
  m.A << 0.0, 1.0, p.a1, p.a2;
  m.b_vec << 0.0, p.b;
  m.C << 0.0, 1.0;  // output is the speed
  m.d = 0.0;
  return m;
}

/// Zero-order-hold discretization. A_k = expm(A T); b_k comes from the
/// augmented matrix [[A, b],[0, 0]] so singular A needs no special casing.
inline DiscreteModel discretize_zoh(const ContinuousModel& m, double T) {
  if (!(T > 0.0) || !std::isfinite(T))
    throw InvalidParameterError("sample time must be positive and finite");
  Eigen::Matrix3d aug = Eigen::Matrix3d::Zero();
  aug.topLeftCorner<2, 2>() = m.A;
  aug.topRightCorner<2, 1>() = m.b_vec;
  const Eigen::Matrix3d e = (aug * T).exp();
  DiscreteModel dm;
  dm.A_k = e.topLeftCorner<2, 2>();
  dm.b_k = e.topRightCorner<2, 1>();
  dm.C = m.C;
  dm.d = m.d;
  dm.T = T;
  dm.method = DiscretizationMethod::kZoh;
  if (!dm.A_k.allFinite() || !dm.b_k.allFinite())
    throw DiscretizationError("matrix exponential overflowed");
  return dm;
}

/// Tustin (bilinear) discretization:
///   A_k = (I - A T/2)^-1 (I + A T/2),  b_k = (I - A T/2)^-1 b_vec T.
/// Throws DiscretizationError when (I - A T/2) is singular.
inline DiscreteModel discretize_tustin(const ContinuousModel& m, double T) {
  if (!(T > 0.0) || !std::isfinite(T))
    throw InvalidParameterError("sample time must be positive and finite");
  const Eigen::Matrix2d lhs =
      Eigen::Matrix2d::Identity() - 0.5 * T * m.A;
  const double det = lhs.determinant();
  if (std::abs(det) < 1e-14)
    throw DiscretizationError(
        "Tustin pencil (I - A*T/2) is singular at this sample time");
  const Eigen::Matrix2d inv = lhs.inverse();
  DiscreteModel dm;
  dm.A_k = inv * (Eigen::Matrix2d::Identity() + 0.5 * T * m.A);
  dm.b_k = inv * m.b_vec * T;
  dm.C = m.C;
  dm.d = m.d;
  dm.T = T;
  dm.method = DiscretizationMethod::kTustin;
  return dm;
}

/// One sampled-time step under control u and disturbance f.
inline VehicleState step(const DiscreteModel& dm, const VehicleState& x,
                         double u, const DisturbanceModel& f, int k) {
  const Eigen::Vector2d next =
      dm.A_k * x.vec() + dm.b_k * (u + f.eval(x, k, dm.T));
  return VehicleState::from(next);
}

/// Measured output y = C x + d u (speed under the default C).
inline double output(const DiscreteModel& dm, const VehicleState& x,
                     double u) {
  return dm.C * x.vec() + dm.d * u;
}

}  // namespace platoon
