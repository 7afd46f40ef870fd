#pragma once

// Orthogonal projection perpendicular to the vector field, orthonormal bases
// of the perpendicular hyperplane, metric fields M(x) with orbital
// derivatives, and the matrix differential operator
//
//   LM(x) = M'(x) + Df^T M + M Df
//           - M f f^T (Df + Df^T) / ||f||^2 - (Df + Df^T) f f^T M / ||f||^2 .

#include "cmtk/core.hpp"
#include "cmtk/flow.hpp"
#include "cmtk/system.hpp"

#include <cmath>

namespace cmtk {

/// Orthogonal projector onto the hyperplane perpendicular to v:
/// P = I - v v^T / ||v||^2. Symmetric, idempotent, P v = 0.
[[nodiscard]] inline Matrix projector(const Vector& v, double min_norm = 1e-6) {
  const double n2 = v.squaredNorm();
  if (!(n2 > min_norm * min_norm))
    throw error(errc::equilibrium, "projector: direction norm below the equilibrium threshold");
  const Eigen::Index n = v.size();
  Matrix p = Matrix::Identity(n, n);
  p.noalias() -= (v * v.transpose()) / n2;
  return mirror_upper(p);
}

/// Projector perpendicular to f(x).
[[nodiscard]] inline Matrix flow_projector(const SystemDef& sys, const Vector& x) {
  return projector(eval_rhs(sys, x), sys.fmin_threshold);
}

/// Deterministic orthonormal basis of the hyperplane {w : w^T v = 0} as the
/// trailing n-1 columns of the Householder reflector mapping v onto the first
/// coordinate axis.
[[nodiscard]] inline Matrix perp_basis(const Vector& v, double min_norm = 1e-12) {
  const Eigen::Index n = v.size();
  if (n < 2) throw error(errc::config, "perp_basis: dimension must be at least 2");
  const double nrm = v.norm();
  if (!(nrm > min_norm)) throw error(errc::config, "perp_basis: zero direction");
  Vector u = v / nrm;
  const double s = u[0] >= 0.0 ? 1.0 : -1.0;
  u[0] += s;  // u = v/||v|| + sign(v_0) e_1 never cancels
  const Matrix h = Matrix::Identity(n, n) - (2.0 / u.squaredNorm()) * (u * u.transpose());
  return h.rightCols(n - 1);
}

// ---------------------------------------------------------------------------
// Metric fields
// ---------------------------------------------------------------------------

/// A field of symmetric matrices x -> M(x) together with its orbital
/// derivative x -> M'(x) = d/dt M(S_t x)|_{t=0}. `kind` is a short tag used in
/// reports ("identity", "constant", "rank-one", "analytic", "integral").
struct MetricField {
  int n = 0;
  std::string kind;
  std::function<Matrix(const Vector&)> eval;
  std::function<Matrix(const Vector&)> orbital;
};

[[nodiscard]] inline MetricField identity_metric(int n) {
  MetricField m;
  m.n = n;
  m.kind = "identity";
  m.eval = [n](const Vector&) { return Matrix::Identity(n, n); };
  m.orbital = [n](const Vector&) { return Matrix::Zero(n, n); };
  return m;
}

[[nodiscard]] inline MetricField constant_metric(const Matrix& mat) {
  if (mat.rows() != mat.cols()) throw error(errc::config, "constant_metric: matrix must be square");
  if (asymmetry_norm(mat) > 1e-12 * std::max(1.0, mat.norm()))
    throw error(errc::config, "constant_metric: matrix must be symmetric");
  MetricField m;
  m.n = static_cast<int>(mat.rows());
  m.kind = "constant";
  const Matrix stored = mirror_upper(mat);
  m.eval = [stored](const Vector&) { return stored; };
  const Matrix zero = Matrix::Zero(mat.rows(), mat.cols());
  m.orbital = [zero](const Vector&) { return zero; };
  return m;
}

/// The rank-one field c0 f(x) f(x)^T with its exact orbital derivative
/// c0 [ (Df f) f^T + f (Df f)^T ].
[[nodiscard]] inline MetricField rank_one_metric(const SystemDef& sys, double c0) {
  MetricField m;
  m.n = sys.n;
  m.kind = "rank-one";
  SystemDef s = sys;
  m.eval = [s, c0](const Vector& x) {
    const Vector f = eval_rhs(s, x);
    return Matrix(mirror_upper(c0 * (f * f.transpose())));
  };
  m.orbital = [s, c0](const Vector& x) {
    const Vector f = eval_rhs(s, x);
    const Vector df = eval_jacobian(s, x) * f;
    Matrix out = c0 * (df * f.transpose());
    out += c0 * (f * df.transpose());
    return Matrix(mirror_upper(out));
  };
  return m;
}

/// Orbital derivative of a matrix-valued field along the flow, with an error
/// estimate from the Richardson correction term.
struct OrbitalDerivative {
  Matrix value;
  double error_estimate = 0.0;  ///< ||D(h/2) - D(h)||_F / 3, the applied correction size
};

/// Orbital derivative of an arbitrary matrix-valued field along the flow by
/// central differences with one Richardson extrapolation level:
/// D(h) = [F(S_h x) - F(S_-h x)]/(2h), returned value (4 D(h/2) - D(h))/3.
[[nodiscard]] inline OrbitalDerivative orbital_derivative_estimated(
    const SystemDef& sys, const std::function<Matrix(const Vector&)>& field, const Vector& x,
    double h = 0.0, const ode::StepControl& ctrl = {1e-12}) {
  if (h <= 0.0) h = 1e-3 * characteristic_time(sys, x);
  auto central = [&](double step) {
    const Vector xp = flow_point(sys, x, step, ctrl);
    const Vector xm = flow_point(sys, x, -step, ctrl);
    return Matrix((field(xp) - field(xm)) / (2.0 * step));
  };
  const Matrix d1 = central(h);
  const Matrix d2 = central(0.5 * h);
  OrbitalDerivative out;
  out.value = (4.0 * d2 - d1) / 3.0;
  out.error_estimate = (d2 - d1).norm() / 3.0;
  return out;
}

[[nodiscard]] inline Matrix orbital_derivative(const SystemDef& sys,
                                               const std::function<Matrix(const Vector&)>& field,
                                               const Vector& x, double h = 0.0,
                                               const ode::StepControl& ctrl = {1e-12}) {
  return orbital_derivative_estimated(sys, field, x, h, ctrl).value;
}

/// A user-supplied analytic metric; when no orbital derivative is given it is
/// obtained by flow-based finite differences.
[[nodiscard]] inline MetricField analytic_metric(const SystemDef& sys,
                                                 std::function<Matrix(const Vector&)> eval,
                                                 std::function<Matrix(const Vector&)> orbital = {}) {
  MetricField m;
  m.n = sys.n;
  m.kind = "analytic";
  m.eval = std::move(eval);
  if (orbital) {
    m.orbital = std::move(orbital);
  } else {
    SystemDef s = sys;
    auto ev = m.eval;
    m.orbital = [s, ev](const Vector& x) { return orbital_derivative(s, ev, x); };
  }
  return m;
}

// ---------------------------------------------------------------------------
// The matrix differential operator
// ---------------------------------------------------------------------------

struct OperatorResult {
  Matrix lm;         ///< symmetrized value of the operator
  double asymmetry;  ///< Frobenius asymmetry of the raw value before symmetrizing
};

/// Evaluate LM(x) for a metric field. Throws an equilibrium error when
/// ||f(x)|| is at or below the system threshold.
[[nodiscard]] inline OperatorResult apply_L(const SystemDef& sys, const MetricField& metric,
                                            const Vector& x) {
  if (x.size() != sys.n) throw error(errc::config, "apply_L: dimension mismatch");
  if (metric.n != sys.n) throw error(errc::config, "apply_L: metric dimension mismatch");
  const Vector f = eval_rhs(sys, x);
  const double n2 = f.squaredNorm();
  if (!(n2 > sys.fmin_threshold * sys.fmin_threshold))
    throw error(errc::equilibrium, "apply_L: point is numerically an equilibrium");
  const Matrix a = eval_jacobian(sys, x);
  const Matrix m = metric.eval(x);
  const Matrix mp = metric.orbital(x);
  const Matrix s = a.transpose() + a;
  const Matrix w = (m * (f * (f.transpose() * s))) / n2;
  Matrix raw = mp;
  raw.noalias() += a.transpose() * m;
  raw.noalias() += m * a;
  raw -= w;
  raw -= w.transpose();
  OperatorResult out;
  out.asymmetry = asymmetry_norm(raw);
  out.lm = mirror_upper(symmetric_part(raw));
  return out;
}

}  // namespace cmtk
