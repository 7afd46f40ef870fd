#include <cmtk/report.hpp>

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdlib>
#include <limits>
#include <random>

#include "oracles.hpp"

using namespace cmtk;

TEST_CASE("number formatting round-trips doubles exactly") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> mant(-1.0, 1.0);
  std::uniform_int_distribution<int> expo(-300, 300);
  for (int i = 0; i < 500; ++i) {
    const double v = std::ldexp(mant(rng), expo(rng));
    const std::string s = format_number(v);
    const double back = std::strtod(s.c_str(), nullptr);
    REQUIRE(back == v);
  }
  REQUIRE(format_number(0.0) == "0");
  REQUIRE(format_number(0.1) == "0.10000000000000001");
  REQUIRE(format_number(std::numeric_limits<double>::quiet_NaN()) == "null");
  REQUIRE(format_number(std::numeric_limits<double>::infinity()) == "null");
  REQUIRE(format_number(-std::numeric_limits<double>::infinity()) == "null");
}

TEST_CASE("report rendering is deterministic and order-preserving") {
  Json j = Json::object();
  j["beta"] = 1.5;
  j["alpha"] = Json::array({1.0, 2.0, 3.0});
  Json nested = Json::object();
  nested["flag"] = true;
  nested["text"] = "line \"quoted\"";
  nested["missing"] = nullptr;
  j["inner"] = nested;
  j["rows"] = Json::array({Json::array({1.0, 2.0}), Json::array({3.0, 4.0})});

  const std::string a = report_to_string(j);
  const std::string b = report_to_string(j);
  REQUIRE(a == b);
  REQUIRE(a.back() == '\n');
  // insertion order is preserved, not alphabetical
  REQUIRE(a.find("\"beta\"") < a.find("\"alpha\""));
  REQUIRE(a.find("\"inner\"") < a.find("\"rows\""));
  // scalar arrays are compact single-line rows
  REQUIRE(a.find("[1, 2, 3]") != std::string::npos);
  REQUIRE(a.find("\\\"quoted\\\"") != std::string::npos);
  REQUIRE(a.find("null") != std::string::npos);
}

TEST_CASE("non-finite numbers render as null inside trees") {
  Json j = Json::object();
  j["bad"] = std::numeric_limits<double>::quiet_NaN();
  j["inf"] = std::numeric_limits<double>::infinity();
  j["ok"] = 2.0;
  const std::string s = report_to_string(j);
  REQUIRE(s.find("\"bad\": null") != std::string::npos);
  REQUIRE(s.find("\"inf\": null") != std::string::npos);
  REQUIRE(s.find("\"ok\": 2") != std::string::npos);
}

TEST_CASE("csv tables format rows with full precision") {
  const std::string csv = csv_table({"a", "b"}, {{1.0, 0.1}, {std::nan(""), -2.0}});
  REQUIRE(csv == "a,b\n1,0.10000000000000001\nnan,-2\n");
  REQUIRE_THROWS_AS(csv_table({"a"}, {{1.0, 2.0}}), error);
}

TEST_CASE("vector and matrix conversion shapes") {
  Vector v(3);
  v << 1.0, -2.0, 0.5;
  const Json jv = json_vector(v);
  REQUIRE(jv.is_array());
  REQUIRE(jv.size() == 3);
  REQUIRE(jv[2].get<double>() == 0.5);

  Matrix m(2, 3);
  m << 1, 2, 3, 4, 5, 6;
  const Json jm = json_matrix(m);
  REQUIRE(jm.size() == 2);
  REQUIRE(jm[1].size() == 3);
  REQUIRE(jm[1][2].get<double>() == 6.0);

  Eigen::VectorXcd c(2);
  c << std::complex<double>(1.0, -2.0), std::complex<double>(0.0, 3.0);
  const Json jc = json_complex_vector(c);
  REQUIRE(jc[0]["re"].get<double>() == 1.0);
  REQUIRE(jc[0]["im"].get<double>() == -2.0);
  REQUIRE(jc[1]["im"].get<double>() == 3.0);
}

TEST_CASE("report envelope carries tool identity and configuration") {
  Json cfg = Json::object();
  cfg["system"] = "circle";
  cfg["tol"] = 1e-10;
  const Json env = report_envelope("orbit", cfg);
  REQUIRE(env["tool"] == "cmtk");
  REQUIRE(env["version"].get<std::string>() == std::string(version_string));
  REQUIRE(env["command"] == "orbit");
  REQUIRE(env["config"]["system"] == "circle");
  auto it = env.begin();
  REQUIRE(it.key() == "tool");  // envelope keys come first and in order
}

TEST_CASE("structured results serialize with stable keys") {
  const SystemDef sys = circle_system();
  Vector anchor(2);
  anchor << 1.2, 0.0;
  const PeriodicOrbitRecord orbit = find_periodic_orbit(sys, anchor);
  const Json jo = to_json(orbit, /*include_samples=*/false);
  REQUIRE(jo.contains("anchor"));
  REQUIRE(jo.contains("period"));
  REQUIRE(jo.contains("closure_residual"));
  REQUIRE(jo.contains("monodromy"));
  REQUIRE(jo["floquet"].contains("nontrivial_max_real"));
  REQUIRE_FALSE(jo.contains("samples"));
  REQUIRE(to_json(orbit).contains("samples"));

  Vector on(2);
  on << 1.0, 0.0;
  const auto metric = build_metric(sys, identity_b(2), 1.0, on);
  const Json jm = to_json(metric->anchor_record());
  for (const char* key : {"x", "m", "min_eig", "max_eig", "condition_number", "tail_bound",
                          "integration_error", "declared_error", "horizon", "decay_fit",
                          "normalization_gap", "kernel_residual"})
    REQUIRE(jm.contains(key));
  REQUIRE_FALSE(to_json(metric->anchor_record(), false).contains("m"));

  const ContractionSample cs = contraction_measure(sys, identity_metric(2), on);
  const Json jcs = to_json(cs);
  REQUIRE(jcs.contains("l_value"));
  // the unchecked residual is NaN, which renders as null
  REQUIRE(std::isnan(jcs["residual"].get<double>()));
  REQUIRE(report_to_string(jcs).find("\"residual\": null") != std::string::npos);

  CertifyOptions copts;
  copts.orbit = &orbit;
  const CertificationReport rep =
      certify_region(sys, identity_metric(2), tube_points(sys, orbit, 0.01, 8), copts);
  const Json jr = to_json(rep, /*include_samples=*/false);
  for (const char* key : {"set_descriptor", "n_samples", "nu_certified", "lambda_max_m",
                          "lower_bound_rate", "floquet_nu", "verdict", "posdef_pass"})
    REQUIRE(jr.contains(key));
  REQUIRE(jr["verdict"] == "pass");

  const std::string once = report_to_string(jr);
  const std::string twice = report_to_string(to_json(rep, false));
  REQUIRE(once == twice);
}

TEST_CASE("file writer emits bytes unchanged") {
  Json j = Json::object();
  j["value"] = 0.30000000000000004;
  const std::string path = "report_roundtrip_test.json";
  write_report(path, j);
  const std::string content = testutil::slurp(path);
  REQUIRE(content == report_to_string(j));
  REQUIRE(content.find("0.30000000000000004") != std::string::npos);
  std::remove(path.c_str());
}
