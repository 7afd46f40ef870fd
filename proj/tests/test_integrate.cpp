#include <cmtk/integrate.hpp>

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <vector>

using namespace cmtk;

namespace {

const auto never_escapes = [](const Vector&) { return false; };

}  // namespace

TEST_CASE("scalar exponential decay matches the closed form") {
  auto rhs = [](const Vector& y, Vector& dy) { dy[0] = -y[0]; };
  for (double tol : {1e-6, 1e-10, 1e-12}) {
    Vector y(1);
    y << 1.0;
    ode::StepControl ctrl;
    ctrl.tol = tol;
    const auto stats = ode::integrate(rhs, y, 0.0, 2.0, ctrl, never_escapes);
    REQUIRE(stats.status == ode::outcome::success);
    REQUIRE(std::abs(y[0] - std::exp(-2.0)) < 50.0 * tol);
  }
}

TEST_CASE("harmonic oscillator closes after a full turn") {
  auto rhs = [](const Vector& y, Vector& dy) {
    dy[0] = y[1];
    dy[1] = -y[0];
  };
  Vector y(2);
  y << 1.0, 0.0;
  ode::StepControl ctrl;
  ctrl.tol = 1e-11;
  const auto stats = ode::integrate(rhs, y, 0.0, 2.0 * M_PI, ctrl, never_escapes);
  REQUIRE(stats.status == ode::outcome::success);
  REQUIRE(std::abs(y[0] - 1.0) < 1e-9);
  REQUIRE(std::abs(y[1]) < 1e-9);
  // the accumulated estimate respects the per-unit-step accounting:
  // est_error <= tol * (1 + sup ||y||), and sup ||y|| = 1 on this circle
  REQUIRE(stats.est_error <= ctrl.tol * (1.0 + 1.0 + 1e-9));
  REQUIRE(stats.steps_accepted > 0);
}

TEST_CASE("tightening the tolerance tightens the endpoint error") {
  auto rhs = [](const Vector& y, Vector& dy) {
    dy[0] = y[1];
    dy[1] = -y[0];
  };
  auto endpoint_error = [&](double tol) {
    Vector y(2);
    y << 1.0, 0.0;
    ode::StepControl ctrl;
    ctrl.tol = tol;
    const auto stats = ode::integrate(rhs, y, 0.0, 2.0 * M_PI, ctrl, never_escapes);
    REQUIRE(stats.status == ode::outcome::success);
    return std::hypot(y[0] - 1.0, y[1]);
  };
  const double coarse = endpoint_error(1e-6);
  const double fine = endpoint_error(1e-12);
  REQUIRE(coarse < 1e-4);
  REQUIRE(fine < 1e-9);
  REQUIRE(fine < coarse);
}

TEST_CASE("stop times are hit exactly and in order") {
  auto rhs = [](const Vector& y, Vector& dy) { dy[0] = -y[0]; };
  Vector y(1);
  y << 1.0;
  const std::vector<double> stops{0.0, 0.3, 0.5, 1.2, 2.0};
  std::vector<double> seen_t;
  std::vector<double> seen_y;
  const std::function<void(double, const Vector&)> on_stop = [&](double t, const Vector& yt) {
    seen_t.push_back(t);
    seen_y.push_back(yt[0]);
  };
  ode::StepControl ctrl;
  ctrl.tol = 1e-12;
  const auto stats = ode::integrate(rhs, y, 0.0, 2.0, ctrl, never_escapes, &stops, &on_stop);
  REQUIRE(stats.status == ode::outcome::success);
  REQUIRE(seen_t.size() == stops.size());
  for (std::size_t i = 0; i < stops.size(); ++i) {
    REQUIRE(seen_t[i] == Catch::Approx(stops[i]).margin(1e-12));
    REQUIRE(seen_y[i] == Catch::Approx(std::exp(-stops[i])).epsilon(1e-9));
  }
}

TEST_CASE("escape guard aborts growing trajectories") {
  auto rhs = [](const Vector& y, Vector& dy) { dy[0] = y[0]; };
  Vector y(1);
  y << 1.0;
  ode::StepControl ctrl;
  ctrl.tol = 1e-10;
  ctrl.record_trail = true;
  const auto stats = ode::integrate(rhs, y, 0.0, 10.0, ctrl,
                                    [](const Vector& v) { return std::abs(v[0]) > 10.0; });
  REQUIRE(stats.status == ode::outcome::escape);
  REQUIRE(stats.t_reached < 10.0);
  REQUIRE(stats.t_reached > std::log(10.0) - 0.5);  // escape happens near t = ln 10
  REQUIRE_FALSE(stats.trail.empty());
}

TEST_CASE("step budget exhaustion is reported") {
  auto rhs = [](const Vector& y, Vector& dy) {
    dy[0] = y[1];
    dy[1] = -y[0];
  };
  Vector y(2);
  y << 1.0, 0.0;
  ode::StepControl ctrl;
  ctrl.tol = 1e-13;
  ctrl.max_steps = 3;
  const auto stats = ode::integrate(rhs, y, 0.0, 100.0, ctrl, never_escapes);
  REQUIRE(stats.status == ode::outcome::max_steps);
}

TEST_CASE("non-finite right-hand sides drive the step size to underflow") {
  auto rhs = [](const Vector& y, Vector& dy) {
    dy[0] = y[0] > 0.5 ? std::numeric_limits<double>::quiet_NaN() : 1.0;
  };
  Vector y(1);
  y << 0.0;
  ode::StepControl ctrl;
  ctrl.tol = 1e-10;
  const auto stats = ode::integrate(rhs, y, 0.0, 2.0, ctrl, never_escapes);
  REQUIRE(stats.status == ode::outcome::step_underflow);
  REQUIRE(stats.t_reached < 2.0);
}

TEST_CASE("backward integration works") {
  auto rhs = [](const Vector& y, Vector& dy) { dy[0] = -y[0]; };
  Vector y(1);
  y << 1.0;
  ode::StepControl ctrl;
  ctrl.tol = 1e-12;
  const auto stats = ode::integrate(rhs, y, 0.0, -1.0, ctrl, never_escapes);
  REQUIRE(stats.status == ode::outcome::success);
  REQUIRE(y[0] == Catch::Approx(std::exp(1.0)).epsilon(1e-10));
  REQUIRE(stats.t_reached == Catch::Approx(-1.0).margin(1e-12));
}

TEST_CASE("zero span returns immediately") {
  auto rhs = [](const Vector& y, Vector& dy) { dy[0] = -y[0]; };
  Vector y(1);
  y << 3.0;
  const auto stats = ode::integrate(rhs, y, 1.0, 1.0, ode::StepControl{}, never_escapes);
  REQUIRE(stats.status == ode::outcome::success);
  REQUIRE(stats.steps_accepted == 0);
  REQUIRE(y[0] == 3.0);
}
