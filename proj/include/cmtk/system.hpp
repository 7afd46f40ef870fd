#pragma once

// Autonomous ODE definitions: right-hand side f, analytic Jacobian Df, and
// the guards the rest of the toolkit relies on (equilibrium threshold,
// escape region). Includes the two built-in benchmark systems and a
// finite-difference Jacobian validator.

#include "cmtk/core.hpp"

#include <cmath>
#include <utility>

namespace cmtk {

/// Callback signatures use Eigen::Ref so both plain vectors and mapped views
/// into larger state blocks bind without copies.
using RhsFn = std::function<void(const Eigen::Ref<const Vector>&, Eigen::Ref<Vector>)>;
using JacFn = std::function<void(const Eigen::Ref<const Vector>&, Eigen::Ref<Matrix>)>;

/// An autonomous vector field x' = f(x) on R^n with analytic Jacobian.
/// `rhs` and `jac` write into caller-provided storage so hot loops stay
/// allocation-free. Instances are treated as immutable once built.
struct SystemDef {
  int n = 0;
  std::string name;
  RhsFn rhs;  ///< dy = f(x)
  JacFn jac;  ///< J = Df(x)
  /// Points with ||f(x)|| at or below this are treated as equilibria and
  /// rejected by every construction that divides by ||f||.
  double fmin_threshold = 1e-6;
  /// Trajectories leaving ||x||_inf > escape_radius abort with an escape error.
  double escape_radius = 1e6;
  /// Differentiability class of f recorded for reporting (-1 = smooth).
  int smoothness = -1;
};

[[nodiscard]] inline Vector eval_rhs(const SystemDef& sys, const Vector& x) {
  if (x.size() != sys.n) throw error(errc::config, "eval_rhs: dimension mismatch");
  Vector out(sys.n);
  sys.rhs(x, out);
  return out;
}

[[nodiscard]] inline Matrix eval_jacobian(const SystemDef& sys, const Vector& x) {
  if (x.size() != sys.n) throw error(errc::config, "eval_jacobian: dimension mismatch");
  Matrix out(sys.n, sys.n);
  sys.jac(x, out);
  return out;
}

/// True when x is within the equilibrium guard band of the vector field.
[[nodiscard]] inline bool near_equilibrium(const SystemDef& sys, const Vector& x) {
  return eval_rhs(sys, x).norm() <= sys.fmin_threshold;
}

inline void require_not_equilibrium(const SystemDef& sys, const Vector& x, const char* where) {
  if (near_equilibrium(sys, x))
    throw error(errc::equilibrium,
                std::string(where) + ": ||f(x)|| below equilibrium threshold; the point must be "
                                     "excluded from the working set");
}

/// Rough time scale of the linearized dynamics at x, used to size
/// finite-difference steps and warm-up horizons.
[[nodiscard]] inline double characteristic_time(const SystemDef& sys, const Vector& x) {
  const double rate = spectral_norm(eval_jacobian(sys, x));
  if (!(rate > 1e-12)) return 1.0;
  return std::min(1e3, std::max(1e-3, 1.0 / rate));
}

// ---------------------------------------------------------------------------
// Built-in benchmark systems
// ---------------------------------------------------------------------------

/// Planar system with the unit circle as an exponentially stable limit cycle:
///   x' = -y + x (1 - x^2 - y^2)
///   y' =  x + y (1 - x^2 - y^2)
/// In polar coordinates r' = r(1-r^2), theta' = 1, so the cycle has period
/// 2*pi and nontrivial Floquet exponent -2. Basin: the plane minus the origin.
[[nodiscard]] inline SystemDef circle_system() {
  SystemDef sys;
  sys.n = 2;
  sys.name = "circle";
  sys.rhs = [](const Eigen::Ref<const Vector>& x, Eigen::Ref<Vector> dy) {
    const double s = 1.0 - x[0] * x[0] - x[1] * x[1];
    dy[0] = -x[1] + x[0] * s;
    dy[1] = x[0] + x[1] * s;
  };
  sys.jac = [](const Eigen::Ref<const Vector>& x, Eigen::Ref<Matrix> j) {
    const double s = 1.0 - x[0] * x[0] - x[1] * x[1];
    j(0, 0) = s - 2.0 * x[0] * x[0];
    j(0, 1) = -1.0 - 2.0 * x[0] * x[1];
    j(1, 0) = 1.0 - 2.0 * x[0] * x[1];
    j(1, 1) = s - 2.0 * x[1] * x[1];
  };
  return sys;
}

/// Van der Pol oscillator in Lienard-free form:
///   x' = y
///   y' = mu (1 - x^2) y - x
[[nodiscard]] inline SystemDef vanderpol_system(double mu = 1.0) {
  SystemDef sys;
  sys.n = 2;
  sys.name = "vdp";
  sys.rhs = [mu](const Eigen::Ref<const Vector>& x, Eigen::Ref<Vector> dy) {
    dy[0] = x[1];
    dy[1] = mu * (1.0 - x[0] * x[0]) * x[1] - x[0];
  };
  sys.jac = [mu](const Eigen::Ref<const Vector>& x, Eigen::Ref<Matrix> j) {
    j(0, 0) = 0.0;
    j(0, 1) = 1.0;
    j(1, 0) = -2.0 * mu * x[0] * x[1] - 1.0;
    j(1, 1) = mu * (1.0 - x[0] * x[0]);
  };
  return sys;
}

// ---------------------------------------------------------------------------
// Jacobian validation
// ---------------------------------------------------------------------------

/// Central finite-difference Jacobian with one Richardson extrapolation level;
/// the independent reference used to validate analytic Jacobians.
[[nodiscard]] inline Matrix fd_jacobian(const SystemDef& sys, const Vector& x, double h = 1e-4) {
  Matrix out(sys.n, sys.n);
  Vector xp = x, fp(sys.n), fm(sys.n);
  auto central = [&](double step, Eigen::Index col) {
    xp = x;
    xp[col] = x[col] + step;
    sys.rhs(xp, fp);
    xp[col] = x[col] - step;
    sys.rhs(xp, fm);
    return Vector((fp - fm) / (2.0 * step));
  };
  for (Eigen::Index col = 0; col < sys.n; ++col) {
    const double scale = std::max(1.0, std::abs(x[col]));
    const Vector d1 = central(h * scale, col);
    const Vector d2 = central(0.5 * h * scale, col);
    out.col(col) = (4.0 * d2 - d1) / 3.0;
  }
  return out;
}

/// Largest relative deviation between the analytic and the finite-difference
/// Jacobian over the given points.
[[nodiscard]] inline double jacobian_deviation(const SystemDef& sys,
                                               const std::vector<Vector>& points) {
  double worst = 0.0;
  for (const auto& x : points) {
    const Matrix a = eval_jacobian(sys, x);
    const Matrix b = fd_jacobian(sys, x);
    const double denom = std::max(1.0, a.norm());
    worst = std::max(worst, (a - b).norm() / denom);
  }
  return worst;
}

}  // namespace cmtk
