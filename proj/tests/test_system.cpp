#include <cmtk/polynomial.hpp>
#include <cmtk/system.hpp>

#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <sstream>

#include "oracles.hpp"

using namespace cmtk;

TEST_CASE("built-in Jacobians agree with finite differences") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> coord(-2.0, 2.0);
  std::vector<Vector> pts;
  for (int i = 0; i < 25; ++i) {
    Vector p(2);
    p << coord(rng), coord(rng);
    pts.push_back(p);
  }
  REQUIRE(jacobian_deviation(circle_system(), pts) < 1e-9);
  REQUIRE(jacobian_deviation(vanderpol_system(1.0), pts) < 1e-9);
  REQUIRE(jacobian_deviation(vanderpol_system(3.5), pts) < 1e-9);
}

TEST_CASE("equilibrium guard bands") {
  const SystemDef sys = circle_system();
  Vector origin = Vector::Zero(2);
  REQUIRE(near_equilibrium(sys, origin));
  Vector on(2);
  on << 1.0, 0.0;
  REQUIRE_FALSE(near_equilibrium(sys, on));
  REQUIRE_THROWS_AS(require_not_equilibrium(sys, origin, "test"), error);
  try {
    require_not_equilibrium(sys, origin, "test");
  } catch (const error& e) {
    REQUIRE(e.code() == errc::equilibrium);
  }
  REQUIRE_NOTHROW(require_not_equilibrium(sys, on, "test"));
}

TEST_CASE("characteristic time is positive and bounded") {
  const SystemDef sys = vanderpol_system(1.0);
  Vector x(2);
  x << 2.0, 0.0;
  const double tau = characteristic_time(sys, x);
  REQUIRE(tau > 1e-3);
  REQUIRE(tau <= 1e3);
}

TEST_CASE("dimension mismatches are rejected") {
  const SystemDef sys = circle_system();
  Vector bad(3);
  bad << 1.0, 2.0, 3.0;
  REQUIRE_THROWS_AS(eval_rhs(sys, bad), error);
  REQUIRE_THROWS_AS(eval_jacobian(sys, bad), error);
}

TEST_CASE("polynomial evaluation and exact differentiation") {
  // p(x, y) = 3 x^2 y - 2 y^3 + 5
  Polynomial p{{3.0, {2, 1}}, {-2.0, {0, 3}}, {5.0, {0, 0}}};
  Vector x(2);
  x << 2.0, -1.0;
  REQUIRE(eval_polynomial(p, x) == Catch::Approx(3.0 * 4.0 * (-1.0) + 2.0 + 5.0));

  const Polynomial dpdx = differentiate(p, 0);  // 6 x y
  const Polynomial dpdy = differentiate(p, 1);  // 3 x^2 - 6 y^2
  REQUIRE(eval_polynomial(dpdx, x) == Catch::Approx(6.0 * 2.0 * (-1.0)));
  REQUIRE(eval_polynomial(dpdy, x) == Catch::Approx(3.0 * 4.0 - 6.0));
}

namespace {

// the planar benchmark system written in the monomial exchange format
const char* kCirclePolyText =
    "2\n"
    "1 1 0\n"
    "-1 0 1\n"
    "-1 3 0\n"
    "-1 1 2\n"
    "\n"
    "1 0 1\n"
    "1 1 0\n"
    "-1 2 1\n"
    "-1 0 3\n";

}  // namespace

TEST_CASE("polynomial systems parse and reproduce the analytic dynamics") {
  std::istringstream in(kCirclePolyText);
  const PolynomialSystem ps = parse_polynomial_text(in, "inline");
  REQUIRE(ps.n == 2);
  REQUIRE(ps.equations.size() == 2);

  const SystemDef poly = make_polynomial_system(ps, "poly-circle");
  const SystemDef exact = circle_system();
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> coord(-1.5, 1.5);
  for (int i = 0; i < 20; ++i) {
    Vector x(2);
    x << coord(rng), coord(rng);
    REQUIRE((eval_rhs(poly, x) - eval_rhs(exact, x)).norm() < 1e-13);
    REQUIRE((eval_jacobian(poly, x) - eval_jacobian(exact, x)).norm() < 1e-13);
  }
}

TEST_CASE("polynomial parser rejects malformed input") {
  auto parse = [](const std::string& text) {
    std::istringstream in(text);
    return parse_polynomial_text(in, "inline");
  };
  REQUIRE_THROWS_AS(parse(""), error);                       // empty
  REQUIRE_THROWS_AS(parse("0\n"), error);                    // bad dimension
  REQUIRE_THROWS_AS(parse("x\n"), error);                    // non-numeric dimension
  REQUIRE_THROWS_AS(parse("2\n1 1 0\n"), error);             // one equation, need two
  REQUIRE_THROWS_AS(parse("2\n1 1\n\n1 0 1\n"), error);      // exponent count mismatch
  REQUIRE_THROWS_AS(parse("2\n1 1 -1\n\n1 0 1\n"), error);   // negative exponent
  REQUIRE_THROWS_AS(parse("2\nq 1 0\n\n1 0 1\n"), error);    // non-numeric coefficient
  try {
    parse("0\n");
  } catch (const error& e) {
    REQUIRE(e.code() == errc::config);
  }
}

TEST_CASE("polynomial parser honors an explicit equation count") {
  // 2 variables, 4 equations: the layout used by matrix-entry grids
  const std::string text =
      "2\n"
      "1 0 0\n\n"
      "0 0 0\n\n"
      "0 0 0\n\n"
      "2 1 1\n";
  std::istringstream in(text);
  const PolynomialSystem ps = parse_polynomial_text(in, "inline", 4);
  REQUIRE(ps.n == 2);
  REQUIRE(ps.equations.size() == 4);
  std::istringstream again(text);
  REQUIRE_THROWS_AS(parse_polynomial_text(again, "inline"), error);  // default wants n == 2
}
