#pragma once

// Periodic orbit location by a Poincare-section shooting method and Floquet
// analysis of the resulting monodromy matrix.
//
// Pipeline: relax the guess along the flow so it lands near the attracting
// orbit, estimate the first return to the section through the relaxed point,
// then run Newton on (p, T) for
//
//   S_T p - p = 0,   n^T (p - x_section) = 0,
//
// using the monodromy matrix as the Jacobian of the flow map.

#include "cmtk/core.hpp"
#include "cmtk/flow.hpp"
#include "cmtk/system.hpp"

#include <cmath>
#include <complex>
#include <limits>

namespace cmtk {

struct OrbitOptions {
  double tol = 1e-10;             ///< residual target ||S_T p - p||
  double warmup = -1.0;           ///< relax time; <0 selects 50 characteristic times
  double max_return_time = -1.0;  ///< section search budget; <0 selects 1000 characteristic times
  int max_newton = 30;
  int n_samples = 128;            ///< orbit points stored in the record
  ode::StepControl step{1e-12};   ///< integrator control for orbit work
};

struct FloquetData {
  Eigen::VectorXcd multipliers;  ///< eigenvalues of the monodromy matrix
  Eigen::VectorXcd exponents;    ///< log(multiplier)/T, principal branch
  int trivial_index = -1;        ///< position of the multiplier representing the flow direction
  double nontrivial_max_real = 0.0;  ///< largest Re(exponent) among nontrivial ones
};

struct PeriodicOrbitRecord {
  Vector anchor;
  double period = 0.0;
  double residual = 0.0;  ///< ||S_T p - p|| at the accepted solution
  Matrix monodromy;
  FloquetData floquet;
  std::vector<std::pair<double, Vector>> samples;  ///< (t, S_t anchor), t in [0, T)
};

namespace detail {

struct JointFlowValue {
  Vector endpoint;
  Matrix phi;
  double est_error = 0.0;
};

/// One integration of [x; vec(Phi)] over [0, t].
[[nodiscard]] inline JointFlowValue flow_with_transition(const SystemDef& sys, const Vector& x,
                                                         double t, const ode::StepControl& ctrl) {
  const int n = sys.n;
  Vector y(n + n * n);
  y.head(n) = x;
  Eigen::Map<Matrix>(y.data() + n, n, n).setIdentity();
  JointMatrixRhs<JacobianGenerator> rhs(&sys, JacobianGenerator{&sys});
  const auto stats = ode::integrate(rhs, y, 0.0, t, ctrl, TrajectoryEscape{n, sys.escape_radius});
  if (stats.status != ode::outcome::success)
    throw error(errc::integration, std::string("variational flow failed (") +
                                       ode::outcome_name(stats.status) + ") at t=" +
                                       std::to_string(stats.t_reached));
  JointFlowValue out;
  out.endpoint = y.head(n);
  out.phi = Eigen::Map<Matrix>(y.data() + n, n, n);
  out.est_error = stats.est_error;
  return out;
}

}  // namespace detail

/// Floquet multipliers/exponents of a monodromy matrix. The trivial
/// multiplier (flow direction, multiplier 1) is identified as the eigenvalue
/// closest to 1; when several lie within 1e-8 of 1 the one whose eigenvector
/// is most parallel to f(anchor) wins.
[[nodiscard]] inline FloquetData floquet_exponents(const Matrix& monodromy, double period,
                                                   const Vector& f_anchor) {
  if (monodromy.rows() != monodromy.cols())
    throw error(errc::config, "floquet_exponents: monodromy must be square");
  if (!(period > 0.0)) throw error(errc::config, "floquet_exponents: period must be positive");
  Eigen::EigenSolver<Matrix> es(monodromy);
  if (es.info() != Eigen::Success)
    throw error(errc::integration, "floquet_exponents: eigensolver failed");
  FloquetData out;
  out.multipliers = es.eigenvalues();
  const Eigen::Index n = out.multipliers.size();
  out.exponents.resize(n);
  for (Eigen::Index i = 0; i < n; ++i)
    out.exponents[i] = std::log(out.multipliers[i]) / period;  // principal branch: |Im| minimal

  std::vector<Eigen::Index> near_one;
  double best_dist = std::numeric_limits<double>::infinity();
  Eigen::Index best = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double d = std::abs(out.multipliers[i] - std::complex<double>(1.0, 0.0));
    if (d < best_dist) {
      best_dist = d;
      best = i;
    }
    if (d <= 1e-8) near_one.push_back(i);
  }
  if (near_one.size() > 1 && f_anchor.size() == n) {
    // tie-break by eigenvector alignment with the flow direction
    double best_cos = -1.0;
    const double fn = f_anchor.norm();
    for (const Eigen::Index i : near_one) {
      const Eigen::VectorXcd v = es.eigenvectors().col(i);
      const double c = std::abs(v.dot(f_anchor.cast<std::complex<double>>())) / (v.norm() * fn);
      if (c > best_cos) {
        best_cos = c;
        best = i;
      }
    }
  }
  out.trivial_index = static_cast<int>(best);
  double max_re = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < n; ++i)
    if (i != best) max_re = std::max(max_re, out.exponents[i].real());
  out.nontrivial_max_real = max_re;
  return out;
}

/// Locate an exponentially stable periodic orbit from a guess in its basin.
[[nodiscard]] inline PeriodicOrbitRecord find_periodic_orbit(const SystemDef& sys,
                                                             const Vector& guess,
                                                             const OrbitOptions& opts = {}) {
  if (guess.size() != sys.n) throw error(errc::config, "find_periodic_orbit: dimension mismatch");
  if (sys.n < 2)
    throw error(errc::config, "find_periodic_orbit: periodic orbits need dimension >= 2");
  require_not_equilibrium(sys, guess, "find_periodic_orbit");

  const double tau = characteristic_time(sys, guess);
  const double warmup = opts.warmup >= 0.0 ? opts.warmup : 50.0 * tau;

  // 1. relax onto the attractor
  Vector x_sec = guess;
  if (warmup > 0.0) {
    FlowResult relax = flow(sys, guess, warmup, opts.step);
    if (relax.status == ode::outcome::escape)
      throw error(errc::no_orbit,
                  "find_periodic_orbit: trajectory escaped during warm-up; the guess does not "
                  "approach a bounded attractor");
    if (relax.status != ode::outcome::success)
      throw error(errc::integration, std::string("find_periodic_orbit: warm-up failed (") +
                                         ode::outcome_name(relax.status) + ")");
    x_sec = std::move(relax.endpoint);
  }
  if (near_equilibrium(sys, x_sec))
    throw error(errc::equilibrium,
                "find_periodic_orbit: trajectory converged to an equilibrium, not an orbit");

  // 2. first return to the section through x_sec with normal f(x_sec)
  const Vector f_sec = eval_rhs(sys, x_sec);
  const Vector normal = f_sec / f_sec.norm();
  const double budget = opts.max_return_time > 0.0 ? opts.max_return_time : 1000.0 * tau;
  const double dt = 0.25 * characteristic_time(sys, x_sec);
  double t_prev = 0.0, g_prev = 0.0;
  Vector x_prev = x_sec;
  double t_bracket = -1.0;
  Vector x_bracket;
  bool left_start = false;
  for (double t = dt; t <= budget + 0.5 * dt; t += dt) {
    const Vector xt = flow_point(sys, x_prev, dt, opts.step);
    const double g = normal.dot(xt - x_sec);
    if (g < -1e-10) left_start = true;  // passed to the back side of the section
    if (left_start && g_prev < 0.0 && g >= 0.0) {
      t_bracket = t_prev;
      x_bracket = x_prev;
      break;
    }
    t_prev = t;
    g_prev = g;
    x_prev = xt;
  }
  if (t_bracket < 0.0)
    throw error(errc::no_orbit,
                "find_periodic_orbit: no return to the Poincare section within the time budget");
  // bisect the bracketing interval [t_bracket, t_bracket + dt]
  double lo = 0.0, hi = dt;
  for (int i = 0; i < 80 && (hi - lo) > 1e-13 * std::max(1.0, t_bracket); ++i) {
    const double mid = 0.5 * (lo + hi);
    const double g = normal.dot(flow_point(sys, x_bracket, mid, opts.step) - x_sec);
    (g < 0.0 ? lo : hi) = mid;
  }
  double period = t_bracket + 0.5 * (lo + hi);
  Vector p = x_sec;

  // 3. Newton on (p, T)
  const double t_estimate = period;
  const int n = sys.n;
  double residual = std::numeric_limits<double>::infinity();
  Matrix monodromy;
  bool converged = false;
  for (int it = 0; it < opts.max_newton; ++it) {
    const auto jf = detail::flow_with_transition(sys, p, period, opts.step);
    const Vector fdyn = jf.endpoint - p;
    residual = fdyn.norm();
    monodromy = jf.phi;
    if (residual <= opts.tol) {
      converged = true;
      break;
    }
    Matrix jac(n + 1, n + 1);
    jac.topLeftCorner(n, n) = jf.phi - Matrix::Identity(n, n);
    jac.topRightCorner(n, 1) = eval_rhs(sys, jf.endpoint);
    jac.bottomLeftCorner(1, n) = normal.transpose();
    jac(n, n) = 0.0;
    Vector rhs(n + 1);
    rhs.head(n) = -fdyn;
    rhs[n] = -normal.dot(p - x_sec);
    const Vector dz = jac.partialPivLu().solve(rhs);
    p += dz.head(n);
    period += dz[n];
    if (!(period > 0.2 * t_estimate) || !(period < 5.0 * t_estimate))
      throw error(errc::no_orbit, "find_periodic_orbit: Newton left the period trust region");
    if (near_equilibrium(sys, p))
      throw error(errc::equilibrium, "find_periodic_orbit: Newton iterate hit an equilibrium");
  }
  if (!converged)
    throw error(errc::no_orbit, "find_periodic_orbit: Newton did not reach the residual target");

  PeriodicOrbitRecord rec;
  rec.anchor = p;
  rec.period = period;
  rec.residual = residual;
  rec.monodromy = monodromy;
  rec.floquet = floquet_exponents(monodromy, period, eval_rhs(sys, p));
  log_info("find_periodic_orbit: period %.12g, closure residual %.3g", rec.period, rec.residual);

  const int ns = std::max(2, opts.n_samples);
  std::vector<double> times(static_cast<std::size_t>(ns));
  for (int i = 0; i < ns; ++i) times[static_cast<std::size_t>(i)] = period * i / ns;
  flow_samples(sys, p, times,
               [&](double t, const Vector& xt) { rec.samples.emplace_back(t, xt); }, opts.step);
  return rec;
}

}  // namespace cmtk
