#include <cmtk/flow.hpp>

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "oracles.hpp"

using namespace cmtk;
using testutil::circle_flow;
using testutil::circle_transition;

TEST_CASE("flow matches the closed-form trajectory") {
  const SystemDef sys = circle_system();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> rad(0.4, 1.8);
  std::uniform_real_distribution<double> ang(0.0, 2.0 * M_PI);
  for (int i = 0; i < 8; ++i) {
    Vector x0(2);
    const double r0 = rad(rng), th0 = ang(rng);
    x0 << r0 * std::cos(th0), r0 * std::sin(th0);
    for (double t : {0.25, 1.0, 3.0}) {
      const Vector got = flow_point(sys, x0, t, ode::StepControl{1e-12});
      REQUIRE((got - circle_flow(x0, t)).norm() < 1e-9);
    }
  }
}

TEST_CASE("flow integrates backward as the inverse of forward") {
  const SystemDef sys = circle_system();
  Vector x0(2);
  x0 << 1.3, -0.2;
  const Vector fwd = flow_point(sys, x0, 0.8, ode::StepControl{1e-12});
  const Vector back = flow_point(sys, fwd, -0.8, ode::StepControl{1e-12});
  REQUIRE((back - x0).norm() < 1e-9);
}

TEST_CASE("flow reports escape as an error through flow_point") {
  SystemDef sys = circle_system();
  sys.escape_radius = 1.2;  // the relaxing trajectory stays inside, growth escapes
  Vector far(2);
  far << 4.0, 0.0;  // moves inward ... but the first step starts outside the region
  const FlowResult r = flow(sys, far, 5.0);
  REQUIRE(r.status == ode::outcome::escape);
  REQUIRE_THROWS_AS(flow_point(sys, far, 5.0), error);
  try {
    (void)flow_point(sys, far, 5.0);
  } catch (const error& e) {
    REQUIRE(e.code() == errc::integration);
  }
}

TEST_CASE("flow_samples visits the requested times in order") {
  const SystemDef sys = circle_system();
  Vector x0(2);
  x0 << 0.7, 0.0;
  const std::vector<double> times{0.0, 0.5, 1.5, 2.5};
  std::vector<double> seen;
  flow_samples(sys, x0, times,
               [&](double t, const Vector& xt) {
                 seen.push_back(t);
                 REQUIRE((xt - circle_flow(x0, t)).norm() < 1e-8);
               },
               ode::StepControl{1e-12});
  REQUIRE(seen.size() == times.size());
  for (std::size_t i = 0; i < times.size(); ++i)
    REQUIRE(seen[i] == Catch::Approx(times[i]).margin(1e-12));
}

TEST_CASE("transition matrix matches the closed form") {
  const SystemDef sys = circle_system();
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> rad(0.5, 1.6);
  std::uniform_real_distribution<double> ang(0.0, 2.0 * M_PI);
  for (int i = 0; i < 6; ++i) {
    Vector x0(2);
    const double r0 = rad(rng), th0 = ang(rng);
    x0 << r0 * std::cos(th0), r0 * std::sin(th0);
    for (double t : {0.5, 2.0}) {
      const TransitionMatrix tm = transition_matrix(sys, x0, 0.0, t, ode::StepControl{1e-12});
      REQUIRE((tm.phi - circle_transition(x0, t)).norm() < 1e-8);
    }
  }
}

TEST_CASE("transition matrices compose along the trajectory") {
  // two-parameter consistency: Phi(t+s, 0) = Phi(t+s, s) Phi(s, 0)
  const SystemDef sys = circle_system();
  Vector x0(2);
  x0 << 1.4, 0.3;
  const double s = 0.7, t = 1.1;
  const ode::StepControl ctrl{1e-12};
  const Matrix full = transition_matrix(sys, x0, 0.0, s + t, ctrl).phi;
  const Matrix first = transition_matrix(sys, x0, 0.0, s, ctrl).phi;
  const Matrix second = transition_matrix(sys, x0, s, s + t, ctrl).phi;
  REQUIRE((full - second * first).norm() < 1e-8);
}

TEST_CASE("transition matrices propagate the flow direction") {
  // Phi(t,0;x) f(x) = f(S_t x)
  const SystemDef sys = circle_system();
  Vector x0(2);
  x0 << 0.8, -0.6;
  const Vector f0 = eval_rhs(sys, x0);
  const std::vector<double> times{0.5, 1.0, 2.0, 4.0};
  transition_samples(sys, x0, times,
                     [&](double, const Vector& xt, const Matrix& phi) {
                       REQUIRE((phi * f0 - eval_rhs(sys, xt)).norm() < 1e-8);
                     },
                     ode::StepControl{1e-12});
}

TEST_CASE("transition matrix at time zero is the identity") {
  const SystemDef sys = circle_system();
  Vector x0(2);
  x0 << 1.1, 0.2;
  bool saw_zero = false;
  transition_samples(sys, x0, {0.0, 1.0},
                     [&](double t, const Vector& xt, const Matrix& phi) {
                       if (t == 0.0) {
                         saw_zero = true;
                         REQUIRE((phi - Matrix::Identity(2, 2)).norm() == 0.0);
                         REQUIRE((xt - x0).norm() == 0.0);
                       }
                     });
  REQUIRE(saw_zero);
}

TEST_CASE("normalized variational system starts at the identity and tracks f/||f||^2") {
  const SystemDef sys = circle_system();
  Vector x0(2);
  x0 << 1.25, 0.0;
  const Vector f0 = eval_rhs(sys, x0);
  const Vector phi0 = f0 / f0.squaredNorm();
  bool saw_zero = false;
  normalized_variational_samples(
      sys, x0, {0.0, 0.5, 1.0, 2.0, 3.0},
      [&](double t, const Vector& xt, const Matrix& psi) {
        if (t == 0.0) {
          saw_zero = true;
          REQUIRE((psi - Matrix::Identity(2, 2)).norm() == 0.0);
          return;
        }
        // the field-scaled direction is an exact solution of the normalized system
        const Vector ft = eval_rhs(sys, xt);
        REQUIRE((psi * phi0 - ft / ft.squaredNorm()).norm() < 1e-8);
      },
      ode::StepControl{1e-12});
  REQUIRE(saw_zero);
}

TEST_CASE("normalized variational system refuses trajectories into equilibria") {
  // a linear sink: every trajectory ends at the origin where f vanishes
  SystemDef sink;
  sink.n = 2;
  sink.name = "sink";
  sink.rhs = [](const Eigen::Ref<const Vector>& x, Eigen::Ref<Vector> dy) { dy = -x; };
  sink.jac = [](const Eigen::Ref<const Vector>&, Eigen::Ref<Matrix> j) {
    j.setIdentity();
    j *= -1.0;
  };
  Vector x0(2);
  x0 << 1e-4, 0.0;
  REQUIRE_THROWS_AS(normalized_variational_samples(sink, x0, {0.0, 20.0},
                                                   [](double, const Vector&, const Matrix&) {}),
                    error);
}

TEST_CASE("flow helpers reject dimension mismatches") {
  const SystemDef sys = circle_system();
  Vector bad(3);
  bad << 1.0, 2.0, 3.0;
  REQUIRE_THROWS_AS(flow(sys, bad, 1.0), error);
  REQUIRE_THROWS_AS(transition_matrix(sys, bad, 0.0, 1.0), error);
}
