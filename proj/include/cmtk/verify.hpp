#pragma once

// Verification of the contraction properties of a metric field:
//   * contraction measure L_M(x) via a reduced symmetric generalized
//     eigenproblem on the hyperplane perpendicular to f(x),
//   * PDE residual ||LM(x) + P^T B P(x)||_F,
//   * region certification with per-sample verdicts,
//   * exponential-decay fits of projected variational solutions,
//   * conservation identities along trajectories,
//   * an integral-inequality (Gronwall) checker on sampled data,
//   * uniqueness-by-convergence comparison of two constructions,
//   * the synchronized-pair contraction experiment.

#include "cmtk/core.hpp"
#include "cmtk/flow.hpp"
#include "cmtk/metric.hpp"
#include "cmtk/orbit.hpp"
#include "cmtk/projection.hpp"
#include "cmtk/system.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace cmtk {

// ---------------------------------------------------------------------------
// Contraction measure
// ---------------------------------------------------------------------------

struct ContractionSample {
  Vector x;
  double l_value = 0.0;      ///< L_M(x) = max over {v^T f = 0, v^T M v = 1} of (1/2) v^T (LM) v
  Vector v_argmax;           ///< maximizer, normalized v^T M v = 1
  double min_eig_m = 0.0;    ///< smallest eigenvalue of M(x)
  double residual_norm = std::numeric_limits<double>::quiet_NaN();  ///< ||LM + C||_F when B given
  double asymmetry = 0.0;    ///< pre-symmetrization asymmetry of LM
  double v_f_abs = 0.0;      ///< |v^T f|, reported constraint slack
  double v_m_v = 0.0;        ///< v^T M v, should be 1
};

/// The linear-algebra core: max over {v^T f = 0, v^T m v = 1} of
/// (1/2) v^T lm v. With Q an orthonormal basis of the hyperplane
/// perpendicular to f, this is half the largest eigenvalue of the pencil
/// (Q^T lm Q, Q^T m Q), a symmetric problem with positive definite
/// right-hand side solved by Cholesky congruence.
[[nodiscard]] inline ContractionSample pencil_measure(const Matrix& lm, const Matrix& m,
                                                      const Vector& f) {
  const Matrix q = perp_basis(f);
  const Matrix m_r = q.transpose() * m * q;
  const Matrix l_r = q.transpose() * lm * q;

  Eigen::LLT<Matrix> llt(m_r);
  if (llt.info() != Eigen::Success)
    throw error(errc::metric_not_positive,
                "pencil_measure: metric is not positive definite perpendicular to f");
  Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> pencil(l_r, m_r,
                                                          Eigen::ComputeEigenvectors | Eigen::Ax_lBx);
  if (pencil.info() != Eigen::Success)
    throw error(errc::metric_not_positive, "pencil_measure: pencil reduction failed");
  const Eigen::Index top = pencil.eigenvalues().size() - 1;  // ascending order

  ContractionSample out;
  out.l_value = 0.5 * pencil.eigenvalues()[top];
  out.v_argmax = q * pencil.eigenvectors().col(top);  // w^T (Q^T m Q) w = 1 carries over
  Eigen::SelfAdjointEigenSolver<Matrix> es_m(m, Eigen::EigenvaluesOnly);
  out.min_eig_m = es_m.eigenvalues().minCoeff();
  out.v_f_abs = std::abs(out.v_argmax.dot(f));
  out.v_m_v = out.v_argmax.dot(m * out.v_argmax);
  return out;
}

/// Contraction measure L_M(x) of a metric field at a state-space point.
/// Pass B to also record the PDE residual at x.
[[nodiscard]] inline ContractionSample contraction_measure(const SystemDef& sys,
                                                           const MetricField& metric,
                                                           const Vector& x,
                                                           const BField* b = nullptr) {
  if (x.size() != sys.n) throw error(errc::config, "contraction_measure: dimension mismatch");
  const Vector f = eval_rhs(sys, x);
  if (!(f.norm() > sys.fmin_threshold))
    throw error(errc::equilibrium, "contraction_measure: point is numerically an equilibrium");

  const Matrix m = metric.eval(x);
  const OperatorResult op = apply_L(sys, metric, x);
  ContractionSample out = pencil_measure(op.lm, m, f);
  out.x = x;
  out.asymmetry = op.asymmetry;
  if (b != nullptr) out.residual_norm = (op.lm + rhs_C(sys, *b, x)).norm();
  return out;
}

/// PDE residual of the construction target LM = -C.
struct ResidualSample {
  Vector x;
  double residual = 0.0;  ///< ||LM(x) + C(x)||_F
  double asymmetry = 0.0;
  Matrix lm, c;
};

[[nodiscard]] inline ResidualSample pde_residual(const SystemDef& sys, const MetricField& metric,
                                                 const BField& b, const Vector& x) {
  const OperatorResult op = apply_L(sys, metric, x);
  ResidualSample out;
  out.x = x;
  out.lm = op.lm;
  out.c = rhs_C(sys, b, x);
  out.asymmetry = op.asymmetry;
  out.residual = (out.lm + out.c).norm();
  return out;
}

// ---------------------------------------------------------------------------
// Region samplers
// ---------------------------------------------------------------------------

/// Deterministic polar grid on the annulus rmin <= r <= rmax (planar systems).
[[nodiscard]] inline std::vector<Vector> annulus_grid(double rmin, double rmax, int nr, int ntheta) {
  if (!(0.0 < rmin && rmin <= rmax) || nr < 1 || ntheta < 1)
    throw error(errc::config, "annulus_grid: need 0 < rmin <= rmax and positive counts");
  std::vector<Vector> pts;
  pts.reserve(static_cast<std::size_t>(nr) * static_cast<std::size_t>(ntheta));
  for (int i = 0; i < nr; ++i) {
    const double r = nr == 1 ? rmin : rmin + (rmax - rmin) * i / (nr - 1.0);
    for (int j = 0; j < ntheta; ++j) {
      const double th = 2.0 * M_PI * j / ntheta;
      Vector p(2);
      p << r * std::cos(th), r * std::sin(th);
      pts.push_back(std::move(p));
    }
  }
  return pts;
}

/// Seeded uniform random points on the annulus (area-uniform in radius^2).
[[nodiscard]] inline std::vector<Vector> annulus_random(double rmin, double rmax, int count,
                                                        std::uint64_t seed) {
  if (!(0.0 < rmin && rmin <= rmax) || count < 1)
    throw error(errc::config, "annulus_random: need 0 < rmin <= rmax and a positive count");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Vector> pts;
  pts.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const double r = std::sqrt(rmin * rmin + (rmax * rmax - rmin * rmin) * unit(rng));
    const double th = 2.0 * M_PI * unit(rng);
    Vector p(2);
    p << r * std::cos(th), r * std::sin(th);
    pts.push_back(std::move(p));
  }
  return pts;
}

/// Points on and around a computed orbit: for each of n_phases orbit points,
/// the point itself plus offsets at n_rings radii up to `radius` along
/// directions perpendicular to the flow. Perpendicular directions are
/// deterministic for planar systems (the two normals) and seeded-random unit
/// vectors in the perpendicular hyperplane otherwise.
[[nodiscard]] inline std::vector<Vector> tube_points(const SystemDef& sys,
                                                     const PeriodicOrbitRecord& orbit,
                                                     double radius, int n_phases, int n_rings = 2,
                                                     int n_dirs = 2, std::uint64_t seed = 42) {
  if (!(radius >= 0.0) || n_phases < 1 || n_rings < 0 || n_dirs < 1)
    throw error(errc::config, "tube_points: invalid sampler parameters");
  std::vector<double> times(static_cast<std::size_t>(n_phases));
  for (int i = 0; i < n_phases; ++i)
    times[static_cast<std::size_t>(i)] = orbit.period * i / n_phases;
  std::vector<Vector> phase_pts;
  flow_samples(sys, orbit.anchor, times,
               [&](double, const Vector& xt) { phase_pts.push_back(xt); });
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Vector> pts;
  for (const auto& p : phase_pts) {
    pts.push_back(p);
    if (radius <= 0.0 || n_rings == 0) continue;
    const Matrix q = perp_basis(eval_rhs(sys, p));
    const Eigen::Index k = q.cols();
    for (int d = 0; d < n_dirs; ++d) {
      Vector dir(k);
      if (k == 1) {
        if (d >= 2) break;  // only two normal directions exist in the plane
        dir << (d == 0 ? 1.0 : -1.0);
      } else {
        for (Eigen::Index i = 0; i < k; ++i) dir[i] = gauss(rng);
        const double nn = dir.norm();
        if (nn == 0.0) continue;
        dir /= nn;
      }
      for (int ring = 1; ring <= n_rings; ++ring) {
        const double rho = radius * ring / n_rings;
        pts.push_back(p + rho * (q * dir));
      }
    }
  }
  return pts;
}

// ---------------------------------------------------------------------------
// Region certification
// ---------------------------------------------------------------------------

struct CertifyOptions {
  const BField* b = nullptr;       ///< enables the residual condition
  double residual_tol = 1e-3;
  int jobs = 1;
  const PeriodicOrbitRecord* orbit = nullptr;  ///< enables the Floquet cross-check
  double floquet_slack = 1e-3;
};

struct CertificationReport {
  std::vector<ContractionSample> samples;
  std::vector<Vector> excluded;  ///< near-equilibrium points skipped (with warning)
  std::string set_descriptor;
  double nu_certified = 0.0;     ///< -max L over samples
  double lambda_max_m = 0.0;     ///< largest eigenvalue of M over samples
  double lambda_min_b = 1.0;     ///< smallest eigenvalue of B over samples (1 for identity)
  double proposition_bound = 0.0;  ///< lambda_min_b / (2 lambda_max_m)
  double max_residual = std::numeric_limits<double>::quiet_NaN();
  double floquet_nu = std::numeric_limits<double>::quiet_NaN();  ///< -max Re nontrivial exponent
  double lipschitz_estimate = 0.0;  ///< heuristic variation bound of L_M between samples
  double margin_radius = 0.0;       ///< heuristic radius nu_certified / lipschitz_estimate
  bool posdef_pass = false;
  bool contraction_pass = false;
  bool residual_pass = true;     ///< true when not checked
  bool floquet_consistent = true;  ///< true when no orbit given
  bool pass = false;
};

/// Evaluate the contraction conditions at every sample point. Near-equilibrium
/// points are excluded (recorded, logged) rather than failing the whole run.
[[nodiscard]] inline CertificationReport certify_region(const SystemDef& sys,
                                                        const MetricField& metric,
                                                        const std::vector<Vector>& points,
                                                        const CertifyOptions& opts = {}) {
  if (points.empty()) throw error(errc::config, "certify_region: no sample points");
  CertificationReport rep;
  std::vector<int> ok(points.size(), 0);
  std::vector<ContractionSample> buf(points.size());
  parallel_for(points.size(), opts.jobs, [&](std::size_t i) {
    try {
      buf[i] = contraction_measure(sys, metric, points[i], opts.b);
      ok[i] = 1;
    } catch (const error& e) {
      if (e.code() != errc::equilibrium) throw;
      ok[i] = 0;  // excluded below
    }
  });
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (ok[i])
      rep.samples.push_back(std::move(buf[i]));
    else
      rep.excluded.push_back(points[i]);
  }
  if (!rep.excluded.empty())
    log_info("certify_region: excluded %zu near-equilibrium sample(s)", rep.excluded.size());
  if (rep.samples.empty())
    throw error(errc::config, "certify_region: every sample point was an equilibrium");

  double max_l = -std::numeric_limits<double>::infinity();
  double min_eig = std::numeric_limits<double>::infinity();
  double max_res = 0.0;
  double lam_max_m = 0.0;
  for (const auto& s : rep.samples) {
    max_l = std::max(max_l, s.l_value);
    min_eig = std::min(min_eig, s.min_eig_m);
    if (!std::isnan(s.residual_norm)) max_res = std::max(max_res, s.residual_norm);
    Eigen::SelfAdjointEigenSolver<Matrix> es(metric.eval(s.x), Eigen::EigenvaluesOnly);
    lam_max_m = std::max(lam_max_m, es.eigenvalues().maxCoeff());
  }
  rep.nu_certified = -max_l;
  rep.lambda_max_m = lam_max_m;
  if (opts.b != nullptr && !opts.b->identity) {
    double lam_min_b = std::numeric_limits<double>::infinity();
    for (const auto& s : rep.samples) {
      Eigen::SelfAdjointEigenSolver<Matrix> es(opts.b->eval(s.x), Eigen::EigenvaluesOnly);
      lam_min_b = std::min(lam_min_b, es.eigenvalues().minCoeff());
    }
    rep.lambda_min_b = lam_min_b;
  }
  rep.proposition_bound = rep.lambda_min_b / (2.0 * rep.lambda_max_m);

  // heuristic Lipschitz estimate of L_M from consecutive sample pairs
  double lip = 0.0;
  for (std::size_t i = 1; i < rep.samples.size(); ++i) {
    const double dx = (rep.samples[i].x - rep.samples[i - 1].x).norm();
    if (dx > 1e-12)
      lip = std::max(lip, std::abs(rep.samples[i].l_value - rep.samples[i - 1].l_value) / dx);
  }
  rep.lipschitz_estimate = lip;
  rep.margin_radius = lip > 0.0 ? rep.nu_certified / lip : std::numeric_limits<double>::infinity();

  rep.posdef_pass = min_eig > 0.0;
  rep.contraction_pass = rep.nu_certified > 0.0;
  if (opts.b != nullptr) {
    rep.max_residual = max_res;
    rep.residual_pass = max_res <= opts.residual_tol;
  }
  if (opts.orbit != nullptr) {
    rep.floquet_nu = -opts.orbit->floquet.nontrivial_max_real;
    rep.floquet_consistent =
        opts.orbit->floquet.nontrivial_max_real <= -rep.nu_certified + opts.floquet_slack;
  }
  rep.pass = rep.posdef_pass && rep.contraction_pass && rep.residual_pass;
  return rep;
}

// ---------------------------------------------------------------------------
// Decay fits
// ---------------------------------------------------------------------------

enum class VariationalKind {
  plain,       ///< Phi' = Df(S_t x) Phi
  normalized,  ///< Psi' = [Df - f f^T (Df^T + Df)/||f||^2] Psi
};

struct DecayFitOptions {
  double horizon = 6.0;
  int n_samples = 48;
  double warmup = -1.0;  ///< <0 selects 0.2 * horizon
  VariationalKind kind = VariationalKind::plain;
  ode::StepControl step{};
};

struct DecayFit {
  double rate = 0.0;       ///< kappa in ||P K(t)|| ~ prefactor * e^{-kappa t}
  double prefactor = 0.0;
  double r2 = 0.0;
  double horizon = 0.0;
  int n_used = 0;
  double sup_unprojected = 0.0;  ///< sup_t ||K(t)|| (boundedness diagnostic)
  std::vector<double> times;     ///< full (t, ||P K||) series for plotting
  std::vector<double> norms;
};

/// Fit the exponential decay rate of ||P_{S_t x} K(t)|| for the plain or the
/// flow-normalized variational matrix K along the trajectory through x.
[[nodiscard]] inline DecayFit decay_fit(const SystemDef& sys, const Vector& x,
                                        const DecayFitOptions& opts = {}) {
  if (!(opts.horizon > 0.0) || opts.n_samples < 4)
    throw error(errc::config, "decay_fit: need a positive horizon and at least 4 samples");
  const double warmup = opts.warmup >= 0.0 ? opts.warmup : 0.2 * opts.horizon;
  if (warmup >= opts.horizon)
    throw error(errc::config, "decay_fit: warm-up must be shorter than the horizon");
  std::vector<double> times(static_cast<std::size_t>(opts.n_samples));
  for (int i = 0; i < opts.n_samples; ++i)
    times[static_cast<std::size_t>(i)] = opts.horizon * (i + 1) / opts.n_samples;

  DecayFit fit;
  fit.horizon = opts.horizon;
  std::vector<double> fit_t, fit_log;
  const auto sink = [&](double t, const Vector& xt, const Matrix& k) {
    const Matrix p = flow_projector(sys, xt);
    const double pn = spectral_norm(p * k);
    fit.sup_unprojected = std::max(fit.sup_unprojected, spectral_norm(k));
    fit.times.push_back(t);
    fit.norms.push_back(pn);
    if (t >= warmup && pn > 0.0) {
      fit_t.push_back(t);
      fit_log.push_back(std::log(pn));
    }
  };
  if (opts.kind == VariationalKind::plain)
    transition_samples(sys, x, times, sink, opts.step);
  else
    normalized_variational_samples(sys, x, times, sink, opts.step);

  if (fit_t.size() < 4)
    throw error(errc::no_decay, "decay_fit: too few usable samples past the warm-up");
  const LineFit line = fit_line(fit_t, fit_log);
  fit.rate = -line.slope;
  fit.prefactor = std::exp(line.intercept);
  fit.r2 = line.r2;
  fit.n_used = static_cast<int>(fit_t.size());
  if (!(fit.rate > 0.0))
    throw error(errc::no_decay, "decay_fit: projected variational solutions do not decay");
  return fit;
}

/// Rate bookkeeping for a nominal contraction rate nu and splitting parameter
/// eps in (0, nu/2): mu0 = nu - eps, rho0 = nu - 2 eps, kappa = rho0/(1+eps),
/// kappa0 = kappa/2.
struct RateChain {
  double nu = 0.0, eps = 0.0, mu0 = 0.0, rho0 = 0.0, kappa = 0.0, kappa0 = 0.0;
};

[[nodiscard]] inline RateChain rate_chain(double nu, double eps) {
  if (!(nu > 0.0) || !(eps > 0.0) || !(eps < nu / 2.0))
    throw error(errc::config, "rate_chain: require nu > 0 and 0 < eps < nu/2");
  RateChain rc;
  rc.nu = nu;
  rc.eps = eps;
  rc.mu0 = nu - eps;
  rc.rho0 = nu - 2.0 * eps;
  rc.kappa = (nu - 2.0 * eps) / (1.0 + eps);
  rc.kappa0 = 0.5 * rc.kappa;
  return rc;
}

/// Identities of the flow-normalized variational system: the initial
/// decomposition I = f f^T/||f||^2 + P, the exactly-known solution
/// t -> f(S_t x)/||f(S_t x)||^2, and the decay of ||P Psi||.
struct NormalizedSystemReport {
  double decomposition_error = 0.0;  ///< ||f f^T/||f||^2 + P - I||_F at x
  double tracking_error = 0.0;       ///< max_t ||Psi(t) f(x)/||f(x)||^2 - f(S_t x)/||f(S_t x)||^2||
  DecayFit fit;                      ///< decay of ||P Psi||
};

[[nodiscard]] inline NormalizedSystemReport psi_decay_check(const SystemDef& sys, const Vector& x,
                                                            DecayFitOptions opts = {}) {
  opts.kind = VariationalKind::normalized;
  NormalizedSystemReport rep;
  const Vector f0 = eval_rhs(sys, x);
  const Matrix p0 = flow_projector(sys, x);
  rep.decomposition_error =
      ((f0 * f0.transpose()) / f0.squaredNorm() + p0 - Matrix::Identity(sys.n, sys.n)).norm();

  const Vector phi0 = f0 / f0.squaredNorm();
  std::vector<double> times(static_cast<std::size_t>(opts.n_samples));
  for (int i = 0; i < opts.n_samples; ++i)
    times[static_cast<std::size_t>(i)] = opts.horizon * (i + 1) / opts.n_samples;
  double track = 0.0;
  normalized_variational_samples(
      sys, x, times,
      [&](double, const Vector& xt, const Matrix& psi) {
        const Vector ft = eval_rhs(sys, xt);
        track = std::max(track, (psi * phi0 - ft / ft.squaredNorm()).norm());
      },
      opts.step);
  rep.tracking_error = track;
  rep.fit = decay_fit(sys, x, opts);
  return rep;
}

// ---------------------------------------------------------------------------
// Conservation identities along trajectories
// ---------------------------------------------------------------------------

struct ConservationOptions {
  double horizon = 10.0;
  int n_checkpoints = 8;     ///< interior times where the derivative identity is checked
  double fd_h = 1e-3;        ///< finite-difference step for d/dt
  std::uint64_t seed = 7;    ///< seeds the two tangent directions
  double c0 = 1.0;           ///< expected value of phi0^T M phi0
  ode::StepControl step{};
};

struct ConservationReport {
  /// max over checkpoints of |d/dt[(P phi1)^T M (P phi2)] - (P phi1)^T LM (P phi2)|
  double max_identity_gap = 0.0;
  /// max over the grid of |phi0^T M phi0 - c0| with phi0 = f/||f||^2
  double max_phi0_gap = 0.0;
  std::vector<double> phi0_values;  ///< the sampled phi0^T M phi0 series
  std::vector<double> phi0_times;
};

/// Check d/dt[phi1^T P^T M P phi2](t) = [phi1^T P^T (LM) P phi2](t) along the
/// trajectory through x for two random tangent solutions phi_i(t) = Phi(t) w_i,
/// and that phi0^T M phi0 stays equal to c0 for the constructed metric.
[[nodiscard]] inline ConservationReport conservation_checks(const SystemDef& sys,
                                                            const MetricField& metric,
                                                            const Vector& x,
                                                            const ConservationOptions& opts = {}) {
  if (x.size() != sys.n) throw error(errc::config, "conservation_checks: dimension mismatch");
  const int n = sys.n;
  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vector w1(n), w2(n);
  for (int i = 0; i < n; ++i) {
    w1[i] = gauss(rng);
    w2[i] = gauss(rng);
  }
  w1.normalize();
  w2.normalize();

  // checkpoint times, interior to avoid the endpoints of the horizon
  std::vector<double> checkpoints(static_cast<std::size_t>(opts.n_checkpoints));
  for (int i = 0; i < opts.n_checkpoints; ++i)
    checkpoints[static_cast<std::size_t>(i)] =
        opts.horizon * (i + 1) / (opts.n_checkpoints + 1.0);

  // FD cluster: t -h, -h/2, +h/2, +h around each checkpoint, plus the center
  const double h = opts.fd_h;
  std::vector<double> all_times;
  for (const double t : checkpoints)
    for (const double dt : {-h, -0.5 * h, 0.0, 0.5 * h, h}) all_times.push_back(t + dt);
  std::sort(all_times.begin(), all_times.end());

  struct Snapshot {
    Vector xt;
    Matrix phi;
  };
  std::vector<Snapshot> snaps;
  transition_samples(sys, x, all_times,
                     [&](double, const Vector& xt, const Matrix& phi) {
                       snaps.push_back({xt, phi});
                     },
                     opts.step);
  if (snaps.size() != all_times.size())
    throw error(errc::integration, "conservation_checks: lost sample times");

  auto g_of = [&](const Snapshot& s) {
    const Matrix p = flow_projector(sys, s.xt);
    const Vector u1 = p * (s.phi * w1);
    const Vector u2 = p * (s.phi * w2);
    return u1.dot(metric.eval(s.xt) * u2);
  };

  ConservationReport rep;
  for (int c = 0; c < opts.n_checkpoints; ++c) {
    const std::size_t base = static_cast<std::size_t>(c) * 5;
    const double g_m1 = g_of(snaps[base + 0]);   // t - h
    const double g_m2 = g_of(snaps[base + 1]);   // t - h/2
    const Snapshot& mid = snaps[base + 2];       // t
    const double g_p2 = g_of(snaps[base + 3]);   // t + h/2
    const double g_p1 = g_of(snaps[base + 4]);   // t + h
    const double d1 = (g_p1 - g_m1) / (2.0 * h);
    const double d2 = (g_p2 - g_m2) / h;
    const double lhs = (4.0 * d2 - d1) / 3.0;

    const Matrix p = flow_projector(sys, mid.xt);
    const Vector u1 = p * (mid.phi * w1);
    const Vector u2 = p * (mid.phi * w2);
    const OperatorResult op = apply_L(sys, metric, mid.xt);
    const double rhs = u1.dot(op.lm * u2);
    rep.max_identity_gap = std::max(rep.max_identity_gap, std::abs(lhs - rhs));
  }

  // phi0^T M phi0 along the trajectory
  const int grid = 21;
  std::vector<double> times(grid);
  for (int i = 0; i < grid; ++i) times[static_cast<std::size_t>(i)] = opts.horizon * i / (grid - 1.0);
  flow_samples(sys, x, times,
               [&](double t, const Vector& xt) {
                 const Vector ft = eval_rhs(sys, xt);
                 const Vector phi0 = ft / ft.squaredNorm();
                 const double val = phi0.dot(metric.eval(xt) * phi0);
                 rep.phi0_times.push_back(t);
                 rep.phi0_values.push_back(val);
                 rep.max_phi0_gap = std::max(rep.max_phi0_gap, std::abs(val - opts.c0));
               },
               opts.step);
  return rep;
}

// ---------------------------------------------------------------------------
// Integral-inequality (Gronwall) checker
// ---------------------------------------------------------------------------

struct GronwallReport {
  bool conclusion_ok = false;
  double max_hypothesis_slack = 0.0;   ///< max of r - (a + K int b r), <= 0 when hypothesis holds
  double max_conclusion_slack = 0.0;   ///< max of r - bound, <= 0 when conclusion holds
  std::vector<double> bound;           ///< the conclusion bound per grid point
};

/// Verify on sampled data (ascending grid theta, nonnegative K, a, b) that the
/// hypothesis r <= a + K * int_0^theta b r  implies the conclusion
/// r <= a + K * int_0^theta a b * exp(int_0^theta K b). Integrals use the
/// trapezoid rule on the given grid; `tol` absorbs quadrature slack. A
/// violated hypothesis raises a hypothesis error.
[[nodiscard]] inline GronwallReport gronwall_check(const std::vector<double>& theta,
                                                   const std::vector<double>& r,
                                                   const std::vector<double>& a,
                                                   const std::vector<double>& bigk,
                                                   const std::vector<double>& b,
                                                   double tol = 1e-9) {
  const std::size_t m = theta.size();
  if (m < 2 || r.size() != m || a.size() != m || bigk.size() != m || b.size() != m)
    throw error(errc::config, "gronwall_check: need equally sized arrays with >= 2 samples");
  for (std::size_t i = 0; i + 1 < m; ++i)
    if (!(theta[i] < theta[i + 1]))
      throw error(errc::config, "gronwall_check: grid must be strictly ascending");
  for (std::size_t i = 0; i < m; ++i)
    if (r[i] < 0.0 || a[i] < 0.0 || bigk[i] < 0.0 || b[i] < 0.0)
      throw error(errc::config, "gronwall_check: all sampled functions must be nonnegative");

  auto cumtrapz = [&](auto&& fvals) {
    std::vector<double> out(m, 0.0);
    for (std::size_t i = 1; i < m; ++i)
      out[i] = out[i - 1] + 0.5 * (theta[i] - theta[i - 1]) * (fvals(i) + fvals(i - 1));
    return out;
  };
  const auto int_br = cumtrapz([&](std::size_t i) { return b[i] * r[i]; });
  const auto int_ab = cumtrapz([&](std::size_t i) { return a[i] * b[i]; });
  const auto int_kb = cumtrapz([&](std::size_t i) { return bigk[i] * b[i]; });

  GronwallReport rep;
  rep.bound.resize(m);
  double hyp_slack = -std::numeric_limits<double>::infinity();
  double con_slack = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < m; ++i) {
    const double hyp_rhs = a[i] + bigk[i] * int_br[i];
    hyp_slack = std::max(hyp_slack, r[i] - hyp_rhs);
    rep.bound[i] = a[i] + bigk[i] * int_ab[i] * std::exp(int_kb[i]);
    con_slack = std::max(con_slack, r[i] - rep.bound[i]);
  }
  rep.max_hypothesis_slack = hyp_slack;
  rep.max_conclusion_slack = con_slack;
  const double scale = 1.0 + *std::max_element(r.begin(), r.end());
  if (hyp_slack > tol * scale)
    throw error(errc::hypothesis,
                "gronwall_check: the sampled data violates the integral-inequality hypothesis");
  rep.conclusion_ok = con_slack <= tol * scale;
  return rep;
}

// ---------------------------------------------------------------------------
// Uniqueness by convergence
// ---------------------------------------------------------------------------

struct UniquenessReport {
  double max_difference = 0.0;       ///< max ||M_a - M_b||_F over the points
  double max_declared_bound = 0.0;   ///< max of the summed declared error bounds
  std::vector<double> differences;
  std::vector<double> declared;
  bool within_declared = false;
};

/// Compare two constructions of the metric at the given points; their
/// difference should be bounded by the sum of the declared error bounds
/// (truncation tail + integration estimate) of the two records.
[[nodiscard]] inline UniquenessReport uniqueness_convergence(const IntegralMetric& ma,
                                                             const IntegralMetric& mb,
                                                             const std::vector<Vector>& points) {
  if (points.empty()) throw error(errc::config, "uniqueness_convergence: no points");
  UniquenessReport rep;
  for (const auto& x : points) {
    const MetricEvalRecord ra = ma.evaluate(x);
    const MetricEvalRecord rb = mb.evaluate(x);
    const double diff = (ra.m - rb.m).norm();
    const double declared = ra.declared_error() + rb.declared_error();
    rep.differences.push_back(diff);
    rep.declared.push_back(declared);
    rep.max_difference = std::max(rep.max_difference, diff);
    rep.max_declared_bound = std::max(rep.max_declared_bound, declared);
  }
  rep.within_declared = true;
  for (std::size_t i = 0; i < rep.differences.size(); ++i)
    if (rep.differences[i] > rep.declared[i]) rep.within_declared = false;
  return rep;
}

// ---------------------------------------------------------------------------
// Synchronized-pair contraction experiment
// ---------------------------------------------------------------------------

struct SyncOptions {
  double eta_mag = 1e-3;   ///< size of the perpendicular initial offset
  double k = 0.1;          ///< margin parameter in the reference rate 2(1-k) nu
  double nu = 0.0;         ///< reference contraction rate (0: no reference recorded)
  double theta_max = 2.0;
  int n_steps = 81;
  double warmup_frac = 0.2;  ///< fraction of theta discarded before the rate fit
  ode::StepControl step{1e-12};
  Vector eta_dir;          ///< optional explicit offset direction (perpendicular part is used)
};

struct SyncExperiment {
  std::vector<double> theta;
  std::vector<double> t_sync;      ///< time reparametrization T(theta), T(0) = 0
  std::vector<double> a_values;    ///< synchronized M-distance A(theta)
  std::vector<double> q_residual;  ///< |Q(T(theta), theta)| after the root solve
  double fitted_rate = 0.0;        ///< decay rate of A^2 from the tail fit
  double reference_rate = 0.0;     ///< 2 (1-k) nu when nu was provided
  double tdot_initial = 0.0;       ///< (T(theta_1) - T(0))/theta_1, should be ~1
  bool degenerate = false;         ///< eta = 0: distances at the noise floor, no fit
};

/// Track a trajectory pair x(theta) = S_theta p (on the orbit) and
/// y(theta) = S_{T(theta)}(p + eta), with T(theta) defined by the phase
/// condition Q = (y - x)^T f(x) = 0, and record the synchronized M-distance
/// A(theta) = sqrt((y-x)^T M(x) (y-x)). For a contraction metric with rate nu
/// the squared distance decays like e^{-2(1-k) nu theta} for small eta.
[[nodiscard]] inline SyncExperiment sync_contraction_experiment(const SystemDef& sys,
                                                                const MetricField& metric,
                                                                const PeriodicOrbitRecord& orbit,
                                                                const SyncOptions& opts = {}) {
  if (!(opts.k > 0.0 && opts.k < 1.0))
    throw error(errc::config, "sync_contraction_experiment: k must lie in (0,1)");
  if (!(opts.theta_max > 0.0) || opts.n_steps < 8)
    throw error(errc::config, "sync_contraction_experiment: need theta_max > 0 and >= 8 steps");
  const Vector& p = orbit.anchor;
  const Vector fp = eval_rhs(sys, p);

  Vector eta;
  if (opts.eta_dir.size() == 0) {
    eta = opts.eta_mag * perp_basis(fp).col(0);
  } else {
    if (opts.eta_dir.size() != sys.n)
      throw error(errc::config, "sync_contraction_experiment: eta_dir dimension mismatch");
    Vector dir = opts.eta_dir - fp * (fp.dot(opts.eta_dir) / fp.squaredNorm());
    const double nn = dir.norm();
    if (!(nn > 0.0))
      throw error(errc::config,
                  "sync_contraction_experiment: eta_dir has no perpendicular component");
    eta = opts.eta_mag * dir / nn;
  }

  SyncExperiment out;
  out.reference_rate = opts.nu > 0.0 ? 2.0 * (1.0 - opts.k) * opts.nu : 0.0;
  const double dtheta = opts.theta_max / (opts.n_steps - 1);

  Vector x_on = p;       // S_theta p
  Vector y_off = p + eta;  // S_T (p + eta)
  double t_cur = 0.0;
  for (int step_i = 0; step_i < opts.n_steps; ++step_i) {
    const double theta = step_i * dtheta;
    if (step_i > 0) {
      x_on = flow_point(sys, x_on, dtheta, opts.step);
      y_off = flow_point(sys, y_off, dtheta, opts.step);
      t_cur += dtheta;
    }
    const Vector fx = eval_rhs(sys, x_on);
    // Newton in T on Q(T) = (y(T) - x)^T f(x); dQ/dT = f(y)^T f(x)
    double q = (y_off - x_on).dot(fx);
    bool converged = std::abs(q) <= 1e-14 * std::max(1.0, fx.norm());
    for (int it = 0; it < 12 && !converged; ++it) {
      const double dq = eval_rhs(sys, y_off).dot(fx);
      if (!(std::abs(dq) > 1e-12 * fx.squaredNorm()))
        throw error(errc::perturbation,
                    "sync_contraction_experiment: phase condition is degenerate; the "
                    "perturbation is too large for time synchronization");
      const double dt = -q / dq;
      if (std::abs(dt) > 10.0 * dtheta + 1.0)
        throw error(errc::perturbation,
                    "sync_contraction_experiment: synchronization step diverged; the "
                    "perturbation is too large");
      y_off = flow_point(sys, y_off, dt, opts.step);
      t_cur += dt;
      q = (y_off - x_on).dot(fx);
      converged = std::abs(q) <= 1e-14 * std::max(1.0, fx.norm());
    }
    if (!converged)
      throw error(errc::perturbation,
                  "sync_contraction_experiment: time synchronization did not converge");
    const Vector diff = y_off - x_on;
    const double a2 = diff.dot(metric.eval(x_on) * diff);
    out.theta.push_back(theta);
    out.t_sync.push_back(t_cur);
    out.a_values.push_back(std::sqrt(std::max(0.0, a2)));
    out.q_residual.push_back(std::abs(q));
  }
  if (out.theta.size() >= 2 && out.theta[1] > 0.0)
    out.tdot_initial = (out.t_sync[1] - out.t_sync[0]) / (out.theta[1] - out.theta[0]);

  // rate fit on log A^2 past the warm-up prefix
  const double a_floor = 1e-13 * (1.0 + p.norm());
  if (*std::max_element(out.a_values.begin(), out.a_values.end()) <= a_floor) {
    out.degenerate = true;  // eta = 0 (or below the noise floor): nothing to fit
    return out;
  }
  std::vector<double> ft, fl;
  for (std::size_t i = 0; i < out.theta.size(); ++i) {
    if (out.theta[i] >= opts.warmup_frac * opts.theta_max && out.a_values[i] > a_floor) {
      ft.push_back(out.theta[i]);
      fl.push_back(2.0 * std::log(out.a_values[i]));
    }
  }
  if (ft.size() < 4)
    throw error(errc::perturbation,
                "sync_contraction_experiment: too few usable samples for the rate fit");
  out.fitted_rate = -fit_line(ft, fl).slope;
  return out;
}

}  // namespace cmtk
