#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "platoon/common.hpp"

namespace platoon {

/// Per-agent decision space: a box, component-wise lower/upper bounds.
struct BoxConstraint {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  /// Symmetric box [-u_max, u_max]^n.
  static BoxConstraint symmetric(int n, double u_max) {
    BoxConstraint b;
    b.lower = Eigen::VectorXd::Constant(n, -u_max);
    b.upper = Eigen::VectorXd::Constant(n, u_max);
    return b;
  }

  int size() const { return static_cast<int>(lower.size()); }

  Eigen::VectorXd clamp(const Eigen::VectorXd& u) const {
    return u.cwiseMax(lower).cwiseMin(upper);
  }

  Eigen::VectorXd center() const { return 0.5 * (lower + upper); }

  bool contains(const Eigen::VectorXd& u, double tol = 0.0) const {
    return (u.array() >= lower.array() - tol).all() &&
           (u.array() <= upper.array() + tol).all();
  }
};

/// Differentiable scalar objective handed to the solvers. The game layer
/// passes smoothed global costs; tests pass synthetic quadratics.
struct CostFn {
  std::function<double(const Eigen::VectorXd&)> value;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> grad;
};

enum class SolveStatus { kConverged, kMaxIter, kInfeasible };

struct SolveReport {
  Eigen::VectorXd plan;
  SolveStatus status = SolveStatus::kMaxIter;
  int iterations = 0;
  double objective = 0.0;
  double kkt_residual = 0.0;
};

/// Optional per-iterate recording for the property tests.
struct SolveTrace {
  std::vector<Eigen::VectorXd> iterates;
  std::vector<double> objectives;
};

inline constexpr double kFeasibilityEps = 1e-6;
inline constexpr double kDefaultTol = 1e-6;
inline constexpr int kDefaultMaxIter = 2000;

namespace detail {

/// Projected-gradient norm, the box-KKT residual at unit step.
inline double projected_gradient_norm(const Eigen::VectorXd& u,
                                      const Eigen::VectorXd& ascent_dir,
                                      const BoxConstraint& box) {
  return (box.clamp(u + ascent_dir) - u).norm();
}

}  // namespace detail

/// Phase-1 search: drive sum_r max(0, kappa_r(u) - beta_r + eps)^2 to zero
/// with projected gradient descent, trying `init` first and the box center
/// second. Returns the first point with every margin beta_r - kappa_r >= eps,
/// or nullopt when both starts stall above zero.
inline std::optional<Eigen::VectorXd> find_feasible(
    const std::vector<double>& betas, const std::vector<CostFn>& kappas,
    const BoxConstraint& box, const Eigen::VectorXd& init,
    double eps = kFeasibilityEps, int max_iter = kDefaultMaxIter) {
  if (betas.size() != kappas.size())
    throw SolverError("one beta per cost evaluator required");
  const auto violation = [&](const Eigen::VectorXd& u) {
    double s = 0.0;
    for (size_t r = 0; r < kappas.size(); ++r) {
      const double h = kappas[r].value(u) - betas[r] + eps;
      if (h > 0.0) s += h * h;
    }
    return s;
  };
  const auto violation_grad = [&](const Eigen::VectorXd& u) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(u.size());
    for (size_t r = 0; r < kappas.size(); ++r) {
      const double h = kappas[r].value(u) - betas[r] + eps;
      if (h > 0.0) g += 2.0 * h * kappas[r].grad(u);
    }
    return g;
  };

  for (const Eigen::VectorXd& start : {box.clamp(init), box.center()}) {
    Eigen::VectorXd u = start;
    double phi = violation(u);
    if (phi == 0.0) return u;
    double alpha = 1.0;
    for (int it = 0; it < max_iter; ++it) {
      const Eigen::VectorXd g = violation_grad(u);
      bool moved = false;
      // backtracking on the projection arc
      for (int ls = 0; ls < 40; ++ls) {
        const Eigen::VectorXd cand = box.clamp(u - alpha * g);
        const double cphi = violation(cand);
        if (cphi < phi) {
          u = cand;
          phi = cphi;
          moved = true;
          alpha *= 2.0;
          break;
        }
        alpha *= 0.5;
      }
      if (phi == 0.0) return u;
      if (!moved) break;  // stalled above zero
    }
  }
  return std::nullopt;
}

/// Maximizes sum_r lambda_r log(beta_r - kappa_r(u)) over the box with
/// projected gradient ascent and Armijo backtracking. `init` must be
/// strictly feasible (every beta_r - kappa_r(init) > 0).
inline SolveReport maximize_nash_product(
    const std::vector<double>& betas, const std::vector<CostFn>& kappas,
    const std::vector<double>& lambdas, const BoxConstraint& box,
    const Eigen::VectorXd& init, double tol = kDefaultTol,
    int max_iter = kDefaultMaxIter, SolveTrace* trace = nullptr) {
  if (betas.size() != kappas.size() || lambdas.size() != kappas.size())
    throw SolverError("betas, kappas and lambdas must align");
  const double neg_inf = -std::numeric_limits<double>::infinity();
  const auto objective = [&](const Eigen::VectorXd& u) {
    double s = 0.0;
    for (size_t r = 0; r < kappas.size(); ++r) {
      const double surplus = betas[r] - kappas[r].value(u);
      if (surplus <= 0.0) return neg_inf;
      s += lambdas[r] * std::log(surplus);
    }
    return s;
  };
  const auto gradient = [&](const Eigen::VectorXd& u) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(u.size());
    for (size_t r = 0; r < kappas.size(); ++r) {
      const double surplus = betas[r] - kappas[r].value(u);
      g -= lambdas[r] / surplus * kappas[r].grad(u);
    }
    return g;
  };

  SolveReport rep;
  Eigen::VectorXd u = box.clamp(init);
  double f = objective(u);
  if (f == neg_inf)
    throw SolverError("maximize_nash_product requires a feasible start");
  if (trace) {
    trace->iterates.push_back(u);
    trace->objectives.push_back(f);
  }

  double alpha = 1.0;
  Eigen::VectorXd prev_u, prev_g;
  int it = 0;
  for (; it < max_iter; ++it) {
    const Eigen::VectorXd g = gradient(u);
    rep.kkt_residual = detail::projected_gradient_norm(u, g, box);
    if (rep.kkt_residual < tol) {
      rep.status = SolveStatus::kConverged;
      break;
    }
    // Barzilai–Borwein spectral trial step; Armijo below safeguards it.
    // Plain doubled steps crawl on ill-conditioned lifts, this does not.
    if (prev_u.size() > 0) {
      const Eigen::VectorXd s = u - prev_u;
      const double sy = s.dot(prev_g - g);  // >= 0 for concave objectives
      if (sy > 0.0) alpha = std::clamp(s.squaredNorm() / sy, 1e-12, 1e12);
    }
    prev_u = u;
    prev_g = g;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      const Eigen::VectorXd cand = box.clamp(u + alpha * g);
      const Eigen::VectorXd d = cand - u;
      if (d.norm() == 0.0) break;
      const double fc = objective(cand);
      if (fc > neg_inf && fc >= f + 1e-4 * g.dot(d)) {
        u = cand;
        f = fc;
        accepted = true;
        alpha = std::min(alpha * 2.0, 1e8);
        break;
      }
      alpha *= 0.5;
    }
    if (trace && accepted) {
      trace->iterates.push_back(u);
      trace->objectives.push_back(f);
    }
    if (!accepted) {
      // no ascent step exists at representable step sizes
      rep.status = SolveStatus::kConverged;
      rep.kkt_residual = detail::projected_gradient_norm(u, gradient(u), box);
      break;
    }
  }
  if (it == max_iter) rep.status = SolveStatus::kMaxIter;
  rep.plan = u;
  rep.iterations = it;
  rep.objective = f;
  return rep;
}

/// Minimizes 0.5 u'Hu + f'u over the box (H positive definite) with
/// projected gradient steps and an exact line search along each projected
/// direction. Terminates on the component-wise KKT residual.
inline SolveReport minimize_box_qp(const Eigen::MatrixXd& H,
                                   const Eigen::VectorXd& f,
                                   const BoxConstraint& box,
                                   double tol = kDefaultTol,
                                   int max_iter = kDefaultMaxIter,
                                   const Eigen::VectorXd* warm = nullptr) {
  const int n = static_cast<int>(f.size());
  if (H.rows() != n || H.cols() != n || box.size() != n)
    throw SolverError("box-QP dimensions disagree");
  const double L = H.operatorNorm();  // largest eigenvalue (H symmetric PSD)
  if (!(L > 0.0)) throw SolverError("box-QP needs a nonzero quadratic term");

  const auto kkt = [&](const Eigen::VectorXd& u, const Eigen::VectorXd& g) {
    double worst = 0.0;
    for (int i = 0; i < n; ++i) {
      double v;
      if (u(i) <= box.lower(i) + 1e-15)
        v = std::max(0.0, -g(i));  // gradient must push outward (down)
      else if (u(i) >= box.upper(i) - 1e-15)
        v = std::max(0.0, g(i));
      else
        v = std::abs(g(i));
      worst = std::max(worst, v);
    }
    return worst;
  };

  SolveReport rep;
  Eigen::VectorXd u =
      warm != nullptr ? box.clamp(*warm) : box.clamp(Eigen::VectorXd::Zero(n));
  int it = 0;
  for (; it < max_iter; ++it) {
    const Eigen::VectorXd g = H * u + f;
    rep.kkt_residual = kkt(u, g);
    if (rep.kkt_residual < tol) {
      rep.status = SolveStatus::kConverged;
      break;
    }
    const Eigen::VectorXd d = box.clamp(u - g / L) - u;
    const double dHd = d.dot(H * d);
    double t = 1.0;
    if (dHd > 0.0) t = std::min(1.0, -g.dot(d) / dHd);
    if (t <= 0.0 || d.norm() == 0.0) {
      rep.status = SolveStatus::kConverged;
      break;
    }
    u += t * d;
  }
  if (it == max_iter) rep.status = SolveStatus::kMaxIter;
  rep.plan = u;
  rep.iterations = it;
  rep.objective = 0.5 * u.dot(H * u) + f.dot(u);
  return rep;
}

}  // namespace platoon
