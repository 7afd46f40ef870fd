#include <cmtk/verify.hpp>

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "oracles.hpp"

using namespace cmtk;

namespace {

Vector pt(double x, double y) {
  Vector p(2);
  p << x, y;
  return p;
}

}  // namespace

TEST_CASE("pencil reduction agrees with brute-force maximization") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 12; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 4);  // dims 2..5
    const Matrix m = testutil::random_spd(n, rng, 0.3);
    const Matrix lm = testutil::random_symmetric(n, rng, 0.5);
    const Vector f = testutil::random_unit(n, rng);
    const ContractionSample got = pencil_measure(lm, m, f);
    const double ref = testutil::brute_force_measure(lm, m, f, 100000, 99 + trial);
    REQUIRE(got.l_value >= ref - 1e-12);       // the solver can only do better
    REQUIRE(got.l_value == Catch::Approx(ref).margin(1e-3));
    REQUIRE(got.v_f_abs < 1e-10);
    REQUIRE(got.v_m_v == Catch::Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("contraction measure of the flat metric at the reference point") {
  const SystemDef sys = circle_system();
  const ContractionSample s = contraction_measure(sys, identity_metric(2), pt(1.0, 0.0));
  REQUIRE(s.l_value == Catch::Approx(-2.0).margin(1e-10));
  REQUIRE(s.min_eig_m == Catch::Approx(1.0).epsilon(1e-12));
  // the maximizer is the radial direction (up to sign)
  REQUIRE(std::abs(s.v_argmax[0]) == Catch::Approx(1.0).epsilon(1e-9));
  REQUIRE(std::abs(s.v_argmax[1]) < 1e-9);
  REQUIRE(s.v_f_abs < 1e-12);
  REQUIRE(s.v_m_v == Catch::Approx(1.0).epsilon(1e-12));
  REQUIRE(std::isnan(s.residual_norm));  // no weight field given
}

TEST_CASE("contraction measure rejects indefinite metrics and equilibria") {
  const SystemDef sys = circle_system();
  Matrix bad(2, 2);
  bad << -1.0, 0.0, 0.0, 1.0;  // negative in the direction perpendicular to f at (1,0)
  try {
    (void)contraction_measure(sys, constant_metric(bad), pt(1.0, 0.0));
    FAIL("expected a definiteness error");
  } catch (const error& e) {
    REQUIRE(e.code() == errc::metric_not_positive);
  }
  REQUIRE_THROWS_AS(contraction_measure(sys, identity_metric(2), Vector::Zero(2)), error);
}

TEST_CASE("annulus grid sampler") {
  const auto pts = annulus_grid(0.6, 1.4, 5, 8);
  REQUIRE(pts.size() == 40);
  for (const auto& p : pts) {
    REQUIRE(p.norm() >= 0.6 - 1e-12);
    REQUIRE(p.norm() <= 1.4 + 1e-12);
  }
  REQUIRE_THROWS_AS(annulus_grid(0.0, 1.0, 2, 2), error);
  REQUIRE_THROWS_AS(annulus_grid(1.0, 0.5, 2, 2), error);
}

TEST_CASE("random annulus sampler is seeded and in range") {
  const auto a = annulus_random(0.5, 2.0, 64, 7);
  const auto b = annulus_random(0.5, 2.0, 64, 7);
  const auto c = annulus_random(0.5, 2.0, 64, 8);
  REQUIRE(a.size() == 64);
  bool identical = true, differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    identical = identical && (a[i] - b[i]).norm() == 0.0;
    differs = differs || (a[i] - c[i]).norm() > 0.0;
    REQUIRE(a[i].norm() >= 0.5 - 1e-12);
    REQUIRE(a[i].norm() <= 2.0 + 1e-12);
  }
  REQUIRE(identical);
  REQUIRE(differs);
}

TEST_CASE("tube sampler produces the orbit point plus perpendicular offsets") {
  const SystemDef sys = circle_system();
  const PeriodicOrbitRecord orbit = find_periodic_orbit(sys, pt(1.2, 0.0));
  const auto pts = tube_points(sys, orbit, 0.05, 8, 2, 2);
  REQUIRE(pts.size() == 8 * (1 + 2 * 2));
  int on_orbit = 0;
  for (const auto& p : pts) {
    const double r = p.norm();
    REQUIRE(r >= 1.0 - 0.05 - 1e-6);
    REQUIRE(r <= 1.0 + 0.05 + 1e-6);
    if (std::abs(r - 1.0) < 1e-9) ++on_orbit;
  }
  REQUIRE(on_orbit == 8);
  REQUIRE_THROWS_AS(tube_points(sys, orbit, -1.0, 8), error);
}

TEST_CASE("region certification with the flat metric on a thin tube") {
  const SystemDef sys = circle_system();
  const PeriodicOrbitRecord orbit = find_periodic_orbit(sys, pt(1.2, 0.0));
  const auto pts = tube_points(sys, orbit, 0.01, 16, 2, 2);
  CertifyOptions opts;
  opts.orbit = &orbit;
  const CertificationReport rep = certify_region(sys, identity_metric(2), pts, opts);
  REQUIRE(rep.posdef_pass);
  REQUIRE(rep.contraction_pass);
  REQUIRE(rep.residual_pass);  // vacuous: no weight field handed in
  REQUIRE(std::isnan(rep.max_residual));
  REQUIRE(rep.pass);
  REQUIRE(rep.nu_certified == Catch::Approx(2.0).margin(0.1));
  REQUIRE(rep.floquet_nu == Catch::Approx(2.0).margin(1e-8));
  REQUIRE(rep.floquet_consistent);
  REQUIRE(rep.lambda_max_m == Catch::Approx(1.0).epsilon(1e-12));
  REQUIRE(rep.proposition_bound == Catch::Approx(0.5).epsilon(1e-12));
  REQUIRE(rep.excluded.empty());
  REQUIRE(rep.samples.size() == pts.size());
}

TEST_CASE("region certification excludes equilibrium sample points") {
  const SystemDef sys = circle_system();
  std::vector<Vector> pts{pt(1.0, 0.0), Vector::Zero(2), pt(0.0, 1.0)};
  const CertificationReport rep = certify_region(sys, identity_metric(2), pts);
  REQUIRE(rep.samples.size() == 2);
  REQUIRE(rep.excluded.size() == 1);
  REQUIRE(rep.excluded[0].norm() == 0.0);
}

TEST_CASE("certification is deterministic across thread counts") {
  const SystemDef sys = circle_system();
  const auto pts = annulus_grid(0.8, 1.2, 4, 8);
  CertifyOptions serial, parallel;
  serial.jobs = 1;
  parallel.jobs = 4;
  const CertificationReport a = certify_region(sys, identity_metric(2), pts, serial);
  const CertificationReport b = certify_region(sys, identity_metric(2), pts, parallel);
  REQUIRE(a.samples.size() == b.samples.size());
  REQUIRE(a.nu_certified == b.nu_certified);
  for (std::size_t i = 0; i < a.samples.size(); ++i)
    REQUIRE(a.samples[i].l_value == b.samples[i].l_value);
}

TEST_CASE("projected variational decay on and off the cycle") {
  const SystemDef sys = circle_system();
  DecayFitOptions opts;
  opts.horizon = 6.0;
  opts.step.tol = 1e-12;
  const DecayFit on = decay_fit(sys, pt(1.0, 0.0), opts);
  REQUIRE(on.rate == Catch::Approx(2.0).margin(1e-6));
  REQUIRE(on.r2 > 0.999999);
  REQUIRE(on.sup_unprojected <= 1.0 + 1e-9);  // the full matrix stays bounded here

  const DecayFit off = decay_fit(sys, pt(1.3, 0.0), opts);
  REQUIRE(off.rate == Catch::Approx(2.0).margin(0.1));

  opts.kind = VariationalKind::normalized;
  const DecayFit normalized = decay_fit(sys, pt(1.0, 0.0), opts);
  REQUIRE(normalized.rate == Catch::Approx(2.0).margin(1e-6));
}

TEST_CASE("decay fit reports growth as a failure") {
  SystemDef expanding;
  expanding.n = 2;
  expanding.name = "source";
  expanding.rhs = [](const Eigen::Ref<const Vector>& x, Eigen::Ref<Vector> dy) { dy = x; };
  expanding.jac = [](const Eigen::Ref<const Vector>&, Eigen::Ref<Matrix> j) { j.setIdentity(); };
  DecayFitOptions opts;
  opts.horizon = 3.0;
  try {
    (void)decay_fit(expanding, pt(1.0, 0.0), opts);
    FAIL("expected a decay failure");
  } catch (const error& e) {
    REQUIRE(e.code() == errc::no_decay);
  }
  REQUIRE_THROWS_AS(decay_fit(circle_system(), pt(1.0, 0.0), DecayFitOptions{-1.0}), error);
}

TEST_CASE("rate bookkeeping") {
  const RateChain rc = rate_chain(2.0, 0.1);
  REQUIRE(rc.mu0 == Catch::Approx(1.9));
  REQUIRE(rc.rho0 == Catch::Approx(1.8));
  REQUIRE(rc.kappa == Catch::Approx(1.8 / 1.1));
  REQUIRE(rc.kappa0 == Catch::Approx(0.9 / 1.1));
  REQUIRE_THROWS_AS(rate_chain(-1.0, 0.1), error);
  REQUIRE_THROWS_AS(rate_chain(2.0, 0.0), error);
  REQUIRE_THROWS_AS(rate_chain(2.0, 1.0), error);  // eps >= nu/2
}

TEST_CASE("normalized variational identities") {
  const SystemDef sys = circle_system();
  DecayFitOptions opts;
  opts.horizon = 6.0;
  opts.step.tol = 1e-12;
  const NormalizedSystemReport rep = psi_decay_check(sys, pt(1.2, 0.3), opts);
  REQUIRE(rep.decomposition_error < 1e-13);
  REQUIRE(rep.tracking_error < 1e-8);
  REQUIRE(rep.fit.rate > 1.5);
}

TEST_CASE("derivative identity holds along trajectories for any metric field") {
  const SystemDef sys = circle_system();
  ConservationOptions opts;
  opts.horizon = 5.0;
  opts.n_checkpoints = 4;
  opts.step.tol = 1e-12;
  // flat metric: the identity is a property of the operator, not the construction
  const ConservationReport flat = conservation_checks(sys, identity_metric(2), pt(1.2, 0.0), opts);
  REQUIRE(flat.max_identity_gap < 1e-6);
  REQUIRE(flat.phi0_values.size() == 21);

  // constructed metric: additionally the flow-direction normalization is conserved
  const auto metric = build_metric(sys, identity_b(2), 1.0, pt(1.0, 0.0));
  const ConservationReport built =
      conservation_checks(sys, integral_metric_field(metric), pt(1.2, 0.0), opts);
  REQUIRE(built.max_identity_gap < 1e-5);
  REQUIRE(built.max_phi0_gap < 1e-6);
}

TEST_CASE("integral-inequality checker validates and bounds") {
  std::vector<double> theta, r, a, bigk, b;
  for (int i = 0; i <= 40; ++i) {
    const double th = 2.0 * i / 40.0;
    theta.push_back(th);
    r.push_back(std::exp(th));
    a.push_back(1.0);
    bigk.push_back(1.0);
    b.push_back(1.0);
  }
  const GronwallReport rep = gronwall_check(theta, r, a, bigk, b, 1e-9);
  REQUIRE(rep.conclusion_ok);
  REQUIRE(rep.max_hypothesis_slack <= 0.0);  // trapezoid overestimates the convex integrand
  REQUIRE(rep.bound.size() == theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) REQUIRE(rep.bound[i] >= r[i] - 1e-9);

  SECTION("violated hypothesis raises") {
    std::vector<double> r_bad(theta.size(), 5.0);
    std::vector<double> k_zero(theta.size(), 0.0);
    try {
      (void)gronwall_check(theta, r_bad, a, k_zero, b, 1e-9);
      FAIL("expected a hypothesis error");
    } catch (const error& e) {
      REQUIRE(e.code() == errc::hypothesis);
    }
  }
  SECTION("input validation") {
    REQUIRE_THROWS_AS(gronwall_check({0.0}, {0.0}, {0.0}, {0.0}, {0.0}), error);
    REQUIRE_THROWS_AS(gronwall_check({0.0, 0.0}, {0.0, 0.0}, {0.0, 0.0}, {0.0, 0.0}, {0.0, 0.0}),
                      error);  // grid not ascending
    REQUIRE_THROWS_AS(
        gronwall_check({0.0, 1.0}, {-1.0, 0.0}, {0.0, 0.0}, {0.0, 0.0}, {0.0, 0.0}),
        error);  // negative sample
  }
  SECTION("zero gain makes the bound sharp") {
    std::vector<double> k_zero(theta.size(), 0.0);
    std::vector<double> r_below(theta.size(), 0.5);
    const GronwallReport sharp = gronwall_check(theta, r_below, a, k_zero, b, 1e-9);
    REQUIRE(sharp.conclusion_ok);
    for (double v : sharp.bound) REQUIRE(v == Catch::Approx(1.0));
  }
}

TEST_CASE("independent constructions agree within their declared bounds") {
  const SystemDef sys = circle_system();
  QuadratureConfig coarse, fine;
  coarse.t_max = 8.0;
  coarse.rel_tail_tol = 1e-5;
  fine.t_max = 16.0;
  fine.rel_tail_tol = 1e-8;
  const auto ma = build_metric(sys, identity_b(2), 1.0, pt(1.0, 0.0), coarse);
  const auto mb = build_metric(sys, identity_b(2), 1.0, pt(1.0, 0.0), fine);
  const std::vector<Vector> pts{pt(1.0, 0.0), pt(0.0, 0.8), pt(-1.2, 0.2)};
  const UniquenessReport rep = uniqueness_convergence(*ma, *mb, pts);
  REQUIRE(rep.within_declared);
  REQUIRE(rep.max_difference < 1e-5);
  REQUIRE(rep.differences.size() == pts.size());

  // identical configurations are bitwise identical
  const auto mc = build_metric(sys, identity_b(2), 1.0, pt(1.0, 0.0), coarse);
  const UniquenessReport same = uniqueness_convergence(*ma, *mc, pts);
  REQUIRE(same.max_difference == 0.0);
}

TEST_CASE("synchronized-pair experiment on the benchmark cycle") {
  const SystemDef sys = circle_system();
  const PeriodicOrbitRecord orbit = find_periodic_orbit(sys, pt(1.2, 0.0));
  SyncOptions opts;
  opts.eta_mag = 1e-3;
  opts.k = 0.1;
  opts.nu = 2.0;
  opts.theta_max = 2.0;
  const SyncExperiment exp = sync_contraction_experiment(sys, identity_metric(2), orbit, opts);
  REQUIRE(exp.theta.size() == static_cast<std::size_t>(opts.n_steps));
  REQUIRE(exp.reference_rate == Catch::Approx(2.0 * 0.9 * 2.0));
  // the transverse deviation contracts at twice the Floquet rate in A^2
  REQUIRE(exp.fitted_rate > 3.5);
  REQUIRE(exp.fitted_rate >= exp.reference_rate - 0.5);
  REQUIRE(exp.tdot_initial == Catch::Approx(1.0).margin(0.05));
  REQUIRE_FALSE(exp.degenerate);
  for (double q : exp.q_residual) REQUIRE(q <= 1e-10);
  // A(0) equals the M-length of the initial offset
  REQUIRE(exp.a_values[0] == Catch::Approx(1e-3).epsilon(1e-6));
}

TEST_CASE("synchronized-pair experiment degenerates gracefully at zero offset") {
  const SystemDef sys = circle_system();
  const PeriodicOrbitRecord orbit = find_periodic_orbit(sys, pt(1.2, 0.0));
  SyncOptions opts;
  opts.eta_mag = 0.0;
  opts.n_steps = 17;
  opts.theta_max = 0.5;
  const SyncExperiment exp = sync_contraction_experiment(sys, identity_metric(2), orbit, opts);
  REQUIRE(exp.degenerate);
  REQUIRE(exp.fitted_rate == 0.0);
}

TEST_CASE("synchronized-pair experiment validates its options") {
  const SystemDef sys = circle_system();
  const PeriodicOrbitRecord orbit = find_periodic_orbit(sys, pt(1.2, 0.0));
  SyncOptions bad_k;
  bad_k.k = 1.5;
  REQUIRE_THROWS_AS(sync_contraction_experiment(sys, identity_metric(2), orbit, bad_k), error);
  SyncOptions parallel_dir;
  parallel_dir.eta_dir = eval_rhs(sys, orbit.anchor);  // no perpendicular component
  REQUIRE_THROWS_AS(sync_contraction_experiment(sys, identity_metric(2), orbit, parallel_dir),
                    error);
}
