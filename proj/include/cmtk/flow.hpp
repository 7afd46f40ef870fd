#pragma once

// Trajectory and variational-equation integration on top of the adaptive
// RK5(4) core: the flow map S_t, fundamental matrices Phi(t1,t0;x) of the
// first variation phi' = Df(S_t x) phi, and the auxiliary linear system
// psi' = G(x) psi for a user-chosen matrix generator G (used for the
// flow-normalized variational system).

#include "cmtk/core.hpp"
#include "cmtk/integrate.hpp"
#include "cmtk/system.hpp"

#include <cmath>

namespace cmtk {

struct FlowResult {
  Vector endpoint;
  double t = 0.0;          ///< time actually reached
  double est_error = 0.0;  ///< accumulated local error estimate
  long steps = 0;
  ode::outcome status = ode::outcome::success;
  std::vector<std::pair<double, Vector>> partial;  ///< trail on failure
};

namespace detail {

/// RHS functor for the plain trajectory y' = f(y).
struct TrajectoryRhs {
  const SystemDef* sys;
  void operator()(const Vector& y, Vector& dy) const { sys->rhs(y, dy); }
};

/// RHS functor for the joint system [x; vec(K)]' = [f(x); G(x) K], with the
/// generator G(x) supplied as a callable writing into preallocated storage.
/// vec() is column-major.
template <class Generator>
struct JointMatrixRhs {
  const SystemDef* sys;
  Generator gen;  // void(const Eigen::Ref<const Vector>& x, Matrix& G)
  mutable Matrix g;

  explicit JointMatrixRhs(const SystemDef* s, Generator g_fn)
      : sys(s), gen(std::move(g_fn)), g(s->n, s->n) {}

  void operator()(const Vector& y, Vector& dy) const {
    const int n = sys->n;
    const Eigen::Map<const Vector> x(y.data(), n);
    const Eigen::Map<const Matrix> k(y.data() + n, n, n);
    Eigen::Map<Vector> dx(dy.data(), n);
    Eigen::Map<Matrix> dk(dy.data() + n, n, n);
    sys->rhs(x, dx);
    gen(x, g);
    dk.noalias() = g * k;
  }
};

struct JacobianGenerator {
  const SystemDef* sys;
  void operator()(const Eigen::Ref<const Vector>& x, Matrix& g) const { sys->jac(x, g); }
};

/// Escape guard looking only at the trajectory block of (possibly joint)
/// state vectors.
struct TrajectoryEscape {
  int n;
  double radius;
  bool operator()(const Vector& y) const {
    return y.head(n).lpNorm<Eigen::Infinity>() > radius;
  }
};

}  // namespace detail

/// Integrate the flow map: endpoint ~ S_t x. Negative t integrates backward
/// (useful for diagnostics; the orbit machinery only moves forward).
[[nodiscard]] inline FlowResult flow(const SystemDef& sys, const Vector& x, double t,
                                     const ode::StepControl& ctrl = {}) {
  if (x.size() != sys.n) throw error(errc::config, "flow: dimension mismatch");
  FlowResult out;
  Vector y = x;
  detail::TrajectoryRhs rhs{&sys};
  ode::StepControl c = ctrl;
  c.record_trail = true;
  const auto stats =
      ode::integrate(rhs, y, 0.0, t, c, detail::TrajectoryEscape{sys.n, sys.escape_radius});
  out.endpoint = std::move(y);
  out.t = stats.t_reached;
  out.est_error = stats.est_error;
  out.steps = stats.steps_accepted;
  out.status = stats.status;
  out.partial = stats.trail;
  return out;
}

/// flow() that throws on any non-success outcome.
[[nodiscard]] inline Vector flow_point(const SystemDef& sys, const Vector& x, double t,
                                       const ode::StepControl& ctrl = {}) {
  FlowResult r = flow(sys, x, t, ctrl);
  if (r.status != ode::outcome::success)
    throw error(errc::integration, std::string("flow failed (") + ode::outcome_name(r.status) +
                                       ") at t=" + std::to_string(r.t));
  return std::move(r.endpoint);
}

/// Sample the trajectory through x at the given ascending times (all >= 0);
/// invokes sink(t, x_t) at each. Throws on integration failure.
inline void flow_samples(const SystemDef& sys, const Vector& x, const std::vector<double>& times,
                         const std::function<void(double, const Vector&)>& sink,
                         const ode::StepControl& ctrl = {}) {
  if (x.size() != sys.n) throw error(errc::config, "flow_samples: dimension mismatch");
  if (times.empty()) return;
  Vector y = x;
  detail::TrajectoryRhs rhs{&sys};
  const double t_end = times.back();
  const auto stats = ode::integrate(rhs, y, 0.0, t_end, ctrl,
                                    detail::TrajectoryEscape{sys.n, sys.escape_radius}, &times,
                                    &sink);
  if (stats.status != ode::outcome::success)
    throw error(errc::integration, std::string("flow_samples failed (") +
                                       ode::outcome_name(stats.status) + ") at t=" +
                                       std::to_string(stats.t_reached));
}

// ---------------------------------------------------------------------------
// Fundamental matrices
// ---------------------------------------------------------------------------

/// Fundamental matrix of the first variation along the trajectory through the
/// base point: Phi maps tangent vectors at time t0 to tangent vectors at time
/// t1 along t -> S_t(base).
struct TransitionMatrix {
  Matrix phi;
  Vector base;
  double t0 = 0.0;
  double t1 = 0.0;
  double est_error = 0.0;
};

/// Integrate the joint system [x; vec(Phi)] from (S_{t0} base, I) to t1.
[[nodiscard]] inline TransitionMatrix transition_matrix(const SystemDef& sys, const Vector& base,
                                                        double t0, double t1,
                                                        const ode::StepControl& ctrl = {}) {
  if (base.size() != sys.n) throw error(errc::config, "transition_matrix: dimension mismatch");
  const int n = sys.n;
  TransitionMatrix out;
  out.base = base;
  out.t0 = t0;
  out.t1 = t1;

  Vector start = base;
  double est = 0.0;
  if (t0 != 0.0) {
    FlowResult warm = flow(sys, base, t0, ctrl);
    if (warm.status != ode::outcome::success)
      throw error(errc::integration, "transition_matrix: could not reach the anchor time t0");
    start = std::move(warm.endpoint);
    est += warm.est_error;
  }

  Vector y(n + n * n);
  y.head(n) = start;
  Eigen::Map<Matrix>(y.data() + n, n, n).setIdentity();
  detail::JointMatrixRhs<detail::JacobianGenerator> rhs(&sys, detail::JacobianGenerator{&sys});
  const auto stats =
      ode::integrate(rhs, y, t0, t1, ctrl, detail::TrajectoryEscape{n, sys.escape_radius});
  if (stats.status != ode::outcome::success)
    throw error(errc::integration, std::string("transition_matrix failed (") +
                                       ode::outcome_name(stats.status) + ") at t=" +
                                       std::to_string(stats.t_reached));
  out.phi = Eigen::Map<Matrix>(y.data() + n, n, n);
  out.est_error = est + stats.est_error;
  return out;
}

/// Sample (t, x_t, Phi(t,0;x)) along the trajectory at the given ascending
/// times (t >= 0), integrating the joint system once.
inline void transition_samples(const SystemDef& sys, const Vector& x,
                               const std::vector<double>& times,
                               const std::function<void(double, const Vector&, const Matrix&)>& sink,
                               const ode::StepControl& ctrl = {}) {
  if (x.size() != sys.n) throw error(errc::config, "transition_samples: dimension mismatch");
  if (times.empty()) return;
  const int n = sys.n;
  Vector y(n + n * n);
  y.head(n) = x;
  Eigen::Map<Matrix>(y.data() + n, n, n).setIdentity();
  detail::JointMatrixRhs<detail::JacobianGenerator> rhs(&sys, detail::JacobianGenerator{&sys});
  const std::function<void(double, const Vector&)> on_stop = [&](double t, const Vector& state) {
    sink(t, Vector(state.head(n)), Matrix(Eigen::Map<const Matrix>(state.data() + n, n, n)));
  };
  const auto stats = ode::integrate(rhs, y, 0.0, times.back(), ctrl,
                                    detail::TrajectoryEscape{n, sys.escape_radius}, &times,
                                    &on_stop);
  if (stats.status != ode::outcome::success)
    throw error(errc::integration, std::string("transition_samples failed (") +
                                       ode::outcome_name(stats.status) + ") at t=" +
                                       std::to_string(stats.t_reached));
}

/// Generator of the flow-normalized variational system
///   G(x) = Df(x) - f(x) f(x)^T (Df(x)^T + Df(x)) / ||f(x)||^2 .
/// Demands ||f(x)|| above the equilibrium threshold.
struct NormalizedGenerator {
  const SystemDef* sys;
  mutable Vector f;
  mutable Matrix a;

  explicit NormalizedGenerator(const SystemDef* s) : sys(s), f(s->n), a(s->n, s->n) {}

  void operator()(const Eigen::Ref<const Vector>& x, Matrix& g) const {
    sys->rhs(x, f);
    const double n2 = f.squaredNorm();
    if (n2 <= sys->fmin_threshold * sys->fmin_threshold)
      throw error(errc::equilibrium,
                  "normalized variational system: trajectory passed an equilibrium");
    sys->jac(x, a);
    g.noalias() = f * (f.transpose() * (a.transpose() + a));
    g = a - g / n2;
  }
};

/// Sample (t, x_t, Psi(t;x)) of the flow-normalized variational system with
/// Psi(0) = I at the given ascending times.
inline void normalized_variational_samples(
    const SystemDef& sys, const Vector& x, const std::vector<double>& times,
    const std::function<void(double, const Vector&, const Matrix&)>& sink,
    const ode::StepControl& ctrl = {}) {
  if (x.size() != sys.n) throw error(errc::config, "normalized_variational_samples: dimension mismatch");
  if (times.empty()) return;
  const int n = sys.n;
  Vector y(n + n * n);
  y.head(n) = x;
  Eigen::Map<Matrix>(y.data() + n, n, n).setIdentity();
  detail::JointMatrixRhs<NormalizedGenerator> rhs(&sys, NormalizedGenerator(&sys));
  const std::function<void(double, const Vector&)> on_stop = [&](double t, const Vector& state) {
    sink(t, Vector(state.head(n)), Matrix(Eigen::Map<const Matrix>(state.data() + n, n, n)));
  };
  const auto stats = ode::integrate(rhs, y, 0.0, times.back(), ctrl,
                                    detail::TrajectoryEscape{n, sys.escape_radius}, &times,
                                    &on_stop);
  if (stats.status != ode::outcome::success)
    throw error(errc::integration, std::string("normalized_variational_samples failed (") +
                                       ode::outcome_name(stats.status) + ") at t=" +
                                       std::to_string(stats.t_reached));
}

}  // namespace cmtk
