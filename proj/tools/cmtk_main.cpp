// cmtk: construct and verify contraction metrics for exponentially stable
// periodic orbits of autonomous ODEs.
//
// Subcommands:
//   orbit   locate a periodic orbit, its period, monodromy and Floquet data
//   build   construct the integral contraction metric on a point set
//   verify  run verification checks and write a structured report
//
// Reports are JSON trees with 17-significant-digit numbers, embedding the
// resolved configuration and tool version; grids can additionally be written
// as CSV. Output is byte-stable for a fixed configuration and seed.
//
// Exit codes: 0 success, 2 configuration error, 3 no orbit found,
// 4 equilibrium encountered, 5 integration/decay/perturbation failure,
// 6 certification or hypothesis failure.

#include <cmtk/cmtk.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace cmtk;

[[nodiscard]] int exit_code_for(errc c) {
  switch (c) {
    case errc::config: return 2;
    case errc::no_orbit: return 3;
    case errc::equilibrium: return 4;
    case errc::integration:
    case errc::no_decay:
    case errc::perturbation: return 5;
    case errc::metric_not_positive:
    case errc::hypothesis:
    case errc::certification: return 6;
  }
  return 1;
}

// ---------------------------------------------------------------------------
// Shared options
// ---------------------------------------------------------------------------

struct CommonOpts {
  std::string system = "circle";
  double mu = 1.0;
  std::string poly_file;
  std::vector<double> guess;
  double tol = 1e-10;        // integrator tolerance for orbit/flow work
  double orbit_tol = 1e-10;  // closure tolerance of the orbit solver
  std::string out;
  int jobs = 1;
  std::uint64_t seed = 2024;
};

struct MetricOpts {
  std::string metric = "integral";  // "integral" or "identity"
  double c0 = 1.0;
  double tmax = 15.0;
  double tail_tol = 1e-6;
  std::string b_file;  // weight field definition; empty = identity
  std::vector<double> x0;
};

struct RegionOpts {
  std::string region;       // "annulus:..." / "annulus-random:..." / "tube:..."
  std::string points_file;  // CSV of coordinates, one point per row
};

void add_common_flags(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--system", o.system, "built-in system: circle or vdp")
      ->capture_default_str();
  cmd->add_option("--mu", o.mu, "van der Pol parameter (with --system vdp)")
      ->capture_default_str();
  cmd->add_option("--poly-file", o.poly_file,
                  "polynomial system definition file (overrides --system)");
  cmd->add_option("--guess", o.guess,
                  "initial point for the orbit search (comma separated)")
      ->delimiter(',');
  cmd->add_option("--tol", o.tol, "integrator relative tolerance")->capture_default_str();
  cmd->add_option("--orbit-tol", o.orbit_tol, "orbit closure tolerance")->capture_default_str();
  cmd->add_option("--out", o.out, "write the JSON report here (default: stdout)");
  cmd->add_option("--jobs", o.jobs, "worker threads for point sweeps")->capture_default_str();
  cmd->add_option("--seed", o.seed, "seed for randomized samplers")->capture_default_str();
}

void add_metric_flags(CLI::App* cmd, MetricOpts& o) {
  cmd->add_option("--metric", o.metric, "metric to use: integral or identity")
      ->capture_default_str();
  cmd->add_option("--c0", o.c0, "weight of the rank-one flow-direction term")
      ->capture_default_str();
  cmd->add_option("--tmax", o.tmax, "initial quadrature horizon")->capture_default_str();
  cmd->add_option("--tail-tol", o.tail_tol, "relative truncation-tail tolerance")
      ->capture_default_str();
  cmd->add_option("--B", o.b_file, "weight field file (default: identity)");
  cmd->add_option("--x0", o.x0, "metric anchor point (comma separated)")->delimiter(',');
}

void add_region_flags(CLI::App* cmd, RegionOpts& o) {
  cmd->add_option("--region", o.region,
                  "sample region: annulus:rmin,rmax[,nr,ntheta] | "
                  "annulus-random:rmin,rmax,count | tube:radius[,phases[,rings[,dirs]]] "
                  "(radius may be 'auto'; default tube:auto)");
  cmd->add_option("--points-file", o.points_file, "CSV file of sample points (overrides --region)");
}

[[nodiscard]] SystemDef resolve_system(const CommonOpts& o) {
  if (!o.poly_file.empty())
    return make_polynomial_system(parse_polynomial_file(o.poly_file), "poly");
  if (o.system == "circle") return circle_system();
  if (o.system == "vdp") return vanderpol_system(o.mu);
  throw error(errc::config, "unknown system '" + o.system + "' (expected circle or vdp)");
}

[[nodiscard]] Vector resolve_guess(const SystemDef& sys, const CommonOpts& o) {
  if (!o.guess.empty()) {
    if (static_cast<int>(o.guess.size()) != sys.n)
      throw error(errc::config, "--guess needs exactly " + std::to_string(sys.n) + " numbers");
    Vector g(sys.n);
    for (int i = 0; i < sys.n; ++i) g[i] = o.guess[static_cast<std::size_t>(i)];
    return g;
  }
  if (sys.name == "circle") {
    Vector g(2);
    g << 1.2, 0.0;
    return g;
  }
  if (sys.name == "vdp") {
    Vector g(2);
    g << 2.0, 0.0;
    return g;
  }
  throw error(errc::config, "custom systems need an explicit --guess");
}

// ---------------------------------------------------------------------------
// File parsing: B field, CSV points, CSV columns
// ---------------------------------------------------------------------------

[[nodiscard]] std::vector<std::string> read_data_lines(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw error(errc::config, "cannot open file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(f, line)) {
    const auto pos = line.find_first_not_of(" \t\r");
    if (pos == std::string::npos) {
      lines.emplace_back();  // keep blank lines (block separators)
      continue;
    }
    if (line[pos] == '#') continue;
    lines.push_back(line);
  }
  return lines;
}

/// Weight field file: first non-comment line is the kind.
///   constant:   next line n, then n rows of n entries
///   polynomial: next line n, then n*n equation blocks (row-major) in the
///               polynomial monomial format "coeff e1 ... en"
[[nodiscard]] BField parse_b_file(const std::string& path) {
  const auto lines = read_data_lines(path);
  std::size_t i = 0;
  while (i < lines.size() && lines[i].empty()) ++i;
  if (i >= lines.size()) throw error(errc::config, path + ": empty weight field file");
  std::string kind = lines[i];
  kind.erase(0, kind.find_first_not_of(" \t"));
  kind.erase(kind.find_last_not_of(" \t\r") + 1);
  ++i;
  while (i < lines.size() && lines[i].empty()) ++i;
  if (i >= lines.size()) throw error(errc::config, path + ": missing dimension line");
  int n = 0;
  {
    std::istringstream ss(lines[i]);
    if (!(ss >> n) || n <= 0) throw error(errc::config, path + ": bad dimension line");
  }
  ++i;
  if (kind == "constant") {
    Matrix m(n, n);
    for (int r = 0; r < n; ++r) {
      while (i < lines.size() && lines[i].empty()) ++i;
      if (i >= lines.size()) throw error(errc::config, path + ": missing matrix row");
      std::istringstream ss(lines[i]);
      for (int c = 0; c < n; ++c)
        if (!(ss >> m(r, c))) throw error(errc::config, path + ": bad matrix row");
      ++i;
    }
    return constant_b(m);
  }
  if (kind == "polynomial") {
    std::string body;
    body += std::to_string(n) + "\n";
    for (; i < lines.size(); ++i) body += lines[i] + "\n";
    // reuse the polynomial parser with n*n equations, row-major entries
    std::istringstream body_in(body);
    const PolynomialSystem ps = parse_polynomial_text(body_in, path, n * n);
    std::vector<std::vector<Polynomial>> grid(static_cast<std::size_t>(n));
    for (int r = 0; r < n; ++r) {
      grid[static_cast<std::size_t>(r)].resize(static_cast<std::size_t>(n));
      for (int c = 0; c < n; ++c)
        grid[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] =
            ps.equations[static_cast<std::size_t>(r * n + c)];
    }
    return polynomial_b(n, grid);
  }
  throw error(errc::config, path + ": unknown weight field kind '" + kind +
                                "' (expected constant or polynomial)");
}

[[nodiscard]] std::vector<std::vector<double>> read_csv_rows(const std::string& path,
                                                             std::vector<std::string>* header) {
  std::ifstream f(path);
  if (!f) throw error(errc::config, "cannot open file: " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  bool first = true;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.empty()) continue;
    if (first) {
      first = false;
      char* end = nullptr;
      std::strtod(cells[0].c_str(), &end);
      const bool numeric = end != cells[0].c_str();
      if (!numeric) {  // header row
        if (header) *header = cells;
        continue;
      }
    }
    std::vector<double> row;
    row.reserve(cells.size());
    for (const auto& c : cells) {
      char* end = nullptr;
      const double v = std::strtod(c.c_str(), &end);
      if (end == c.c_str()) throw error(errc::config, path + ": non-numeric CSV cell '" + c + "'");
      row.push_back(v);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

[[nodiscard]] std::vector<Vector> read_points_file(const std::string& path, int n) {
  const auto rows = read_csv_rows(path, nullptr);
  std::vector<Vector> pts;
  for (const auto& row : rows) {
    if (static_cast<int>(row.size()) != n)
      throw error(errc::config, path + ": each row needs " + std::to_string(n) + " coordinates");
    Vector p(n);
    for (int i = 0; i < n; ++i) p[i] = row[static_cast<std::size_t>(i)];
    pts.push_back(std::move(p));
  }
  if (pts.empty()) throw error(errc::config, path + ": no points");
  return pts;
}

// ---------------------------------------------------------------------------
// Region resolution
// ---------------------------------------------------------------------------

[[nodiscard]] std::vector<double> split_params(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    if (cell == "auto") {
      out.push_back(-1.0);
      continue;
    }
    char* end = nullptr;
    const double v = std::strtod(cell.c_str(), &end);
    if (end == cell.c_str()) throw error(errc::config, "bad region parameter '" + cell + "'");
    out.push_back(v);
  }
  return out;
}

[[nodiscard]] double orbit_scale(const PeriodicOrbitRecord& orbit) {
  double s = 0.0;
  for (const auto& [t, x] : orbit.samples) s = std::max(s, x.norm());
  return s > 0.0 ? s : 1.0;
}

struct ResolvedRegion {
  std::vector<Vector> points;
  std::string descriptor;
};

[[nodiscard]] ResolvedRegion resolve_region(const SystemDef& sys, const RegionOpts& ro,
                                            const PeriodicOrbitRecord* orbit,
                                            std::uint64_t seed) {
  ResolvedRegion out;
  if (!ro.points_file.empty()) {
    out.points = read_points_file(ro.points_file, sys.n);
    out.descriptor = "points-file:" + ro.points_file;
    return out;
  }
  std::string spec = ro.region.empty() ? "tube:auto" : ro.region;
  const auto colon = spec.find(':');
  const std::string kind = colon == std::string::npos ? spec : spec.substr(0, colon);
  const std::vector<double> p =
      colon == std::string::npos ? std::vector<double>{} : split_params(spec.substr(colon + 1));

  if (kind == "annulus") {
    if (sys.n != 2) throw error(errc::config, "annulus regions require a planar system");
    if (p.size() < 2) throw error(errc::config, "annulus region needs rmin,rmax");
    const int nr = p.size() > 2 ? static_cast<int>(p[2]) : 10;
    const int ntheta = p.size() > 3 ? static_cast<int>(p[3]) : 10;
    out.points = annulus_grid(p[0], p[1], nr, ntheta);
    out.descriptor = "annulus:" + std::to_string(p[0]) + "," + std::to_string(p[1]) + "," +
                     std::to_string(nr) + "," + std::to_string(ntheta);
    return out;
  }
  if (kind == "annulus-random") {
    if (sys.n != 2) throw error(errc::config, "annulus regions require a planar system");
    if (p.size() < 3) throw error(errc::config, "annulus-random region needs rmin,rmax,count");
    out.points = annulus_random(p[0], p[1], static_cast<int>(p[2]), seed);
    out.descriptor = "annulus-random:" + std::to_string(p[0]) + "," + std::to_string(p[1]) + "," +
                     std::to_string(static_cast<int>(p[2])) + ";seed=" + std::to_string(seed);
    return out;
  }
  if (kind == "tube") {
    if (orbit == nullptr)
      throw error(errc::config, "tube regions need a periodic orbit (orbit search failed?)");
    double radius = p.empty() ? -1.0 : p[0];
    if (radius < 0.0) radius = 0.01 * orbit_scale(*orbit);
    const int phases = p.size() > 1 ? static_cast<int>(p[1]) : 16;
    const int rings = p.size() > 2 ? static_cast<int>(p[2]) : 2;
    const int dirs = p.size() > 3 ? static_cast<int>(p[3]) : 2;
    out.points = tube_points(sys, *orbit, radius, phases, rings, dirs, seed);
    out.descriptor = "tube:" + format_number(radius) + "," + std::to_string(phases) + "," +
                     std::to_string(rings) + "," + std::to_string(dirs);
    return out;
  }
  throw error(errc::config, "unknown region kind '" + kind + "'");
}

// ---------------------------------------------------------------------------
// Config echo + output
// ---------------------------------------------------------------------------

[[nodiscard]] Json common_config(const SystemDef& sys, const CommonOpts& o) {
  Json j = Json::object();
  j["system"] = sys.name;
  if (sys.name == "vdp") j["mu"] = o.mu;
  if (!o.poly_file.empty()) j["poly_file"] = o.poly_file;
  j["tol"] = o.tol;
  j["orbit_tol"] = o.orbit_tol;
  j["jobs"] = o.jobs;
  j["seed"] = static_cast<std::uint64_t>(o.seed);
  return j;
}

void deliver_report(const Json& report, const std::string& out_path) {
  const std::string text = report_to_string(report);
  if (out_path.empty()) {
    std::fputs(text.c_str(), stdout);
  } else {
    write_text_file(out_path, text);
  }
}

[[nodiscard]] PeriodicOrbitRecord find_orbit_for(const SystemDef& sys, const CommonOpts& o) {
  OrbitOptions opt;
  opt.tol = o.orbit_tol;
  opt.step.tol = o.tol;
  return find_periodic_orbit(sys, resolve_guess(sys, o), opt);
}

// ---------------------------------------------------------------------------
// orbit subcommand
// ---------------------------------------------------------------------------

struct OrbitCmd {
  CommonOpts common;
  int samples = 128;
};

[[nodiscard]] int run_orbit(const OrbitCmd& cmd) {
  const SystemDef sys = resolve_system(cmd.common);
  OrbitOptions opt;
  opt.tol = cmd.common.orbit_tol;
  opt.step.tol = cmd.common.tol;
  opt.n_samples = cmd.samples;
  const Vector guess = resolve_guess(sys, cmd.common);
  const PeriodicOrbitRecord orbit = find_periodic_orbit(sys, guess, opt);

  Json config = common_config(sys, cmd.common);
  config["guess"] = json_vector(guess);
  config["samples"] = cmd.samples;
  Json report = report_envelope("orbit", std::move(config));
  report["orbit"] = to_json(orbit);

  // multiplicative consistency of multipliers and exponents
  double consistency = 0.0;
  for (Eigen::Index i = 0; i < orbit.floquet.multipliers.size(); ++i) {
    const std::complex<double> back = std::exp(orbit.floquet.exponents[i] * orbit.period);
    consistency = std::max(consistency, std::abs(back - orbit.floquet.multipliers[i]));
  }
  report["multiplier_exponent_gap"] = consistency;
  deliver_report(report, cmd.common.out);
  if (!cmd.common.out.empty())
    std::printf("orbit: period=%.12g nontrivial_max_real=%.12g residual=%.3g\n", orbit.period,
                orbit.floquet.nontrivial_max_real, orbit.residual);
  return 0;
}

// ---------------------------------------------------------------------------
// build subcommand
// ---------------------------------------------------------------------------

struct BuildCmd {
  CommonOpts common;
  MetricOpts metric;
  RegionOpts region;
  std::string csv_out;
};

[[nodiscard]] Vector resolve_anchor(const SystemDef& sys, const MetricOpts& mo,
                                    const PeriodicOrbitRecord* orbit) {
  if (!mo.x0.empty()) {
    if (static_cast<int>(mo.x0.size()) != sys.n)
      throw error(errc::config, "--x0 needs exactly " + std::to_string(sys.n) + " numbers");
    Vector x(sys.n);
    for (int i = 0; i < sys.n; ++i) x[i] = mo.x0[static_cast<std::size_t>(i)];
    return x;
  }
  if (orbit != nullptr) return orbit->anchor;
  throw error(errc::config, "no anchor point: give --x0 or a system with a findable orbit");
}

[[nodiscard]] std::shared_ptr<const IntegralMetric> construct_metric(const SystemDef& sys,
                                                                     const CommonOpts& co,
                                                                     const MetricOpts& mo,
                                                                     const Vector& anchor) {
  const BField b = mo.b_file.empty() ? identity_b(sys.n) : parse_b_file(mo.b_file);
  QuadratureConfig cfg;
  cfg.t_max = mo.tmax;
  cfg.rel_tail_tol = mo.tail_tol;
  cfg.step.tol = co.tol;
  return build_metric(sys, b, mo.c0, anchor, cfg);
}

[[nodiscard]] Json metric_config(const MetricOpts& mo) {
  Json j = Json::object();
  j["metric"] = mo.metric;
  j["c0"] = mo.c0;
  j["tmax"] = mo.tmax;
  j["tail_tol"] = mo.tail_tol;
  j["B"] = mo.b_file.empty() ? "identity" : mo.b_file;
  return j;
}

[[nodiscard]] int run_build(const BuildCmd& cmd) {
  const SystemDef sys = resolve_system(cmd.common);
  std::optional<PeriodicOrbitRecord> orbit;
  const bool need_orbit = cmd.metric.x0.empty() ||
                          (cmd.region.points_file.empty() &&
                           (cmd.region.region.empty() || cmd.region.region.rfind("tube", 0) == 0));
  if (need_orbit) orbit = find_orbit_for(sys, cmd.common);
  const Vector anchor = resolve_anchor(sys, cmd.metric, orbit ? &*orbit : nullptr);
  const auto metric = construct_metric(sys, cmd.common, cmd.metric, anchor);
  const ResolvedRegion region =
      resolve_region(sys, cmd.region, orbit ? &*orbit : nullptr, cmd.common.seed);

  std::vector<MetricEvalRecord> records(region.points.size());
  parallel_for(region.points.size(), cmd.common.jobs,
               [&](std::size_t i) { records[i] = metric->evaluate(region.points[i]); });

  Json config = common_config(sys, cmd.common);
  config["anchor"] = json_vector(anchor);
  const Json mc = metric_config(cmd.metric);
  for (const auto& [k, v] : mc.items()) config[k] = v;
  config["region"] = region.descriptor;
  Json report = report_envelope("build", std::move(config));
  Json points = Json::array();
  for (const auto& rec : records) points.push_back(to_json(rec));
  report["n_points"] = static_cast<std::int64_t>(records.size());
  report["points"] = std::move(points);

  if (!cmd.csv_out.empty()) {
    std::vector<std::string> header;
    for (int i = 0; i < sys.n; ++i) header.push_back("x" + std::to_string(i));
    for (int r = 0; r < sys.n; ++r)
      for (int c = 0; c < sys.n; ++c)
        header.push_back("m" + std::to_string(r) + std::to_string(c));
    header.insert(header.end(), {"min_eig", "max_eig", "condition_number", "tail_bound",
                                 "integration_error", "declared_error", "horizon"});
    std::vector<std::vector<double>> rows;
    for (const auto& rec : records) {
      std::vector<double> row;
      for (int i = 0; i < sys.n; ++i) row.push_back(rec.x[i]);
      for (int r = 0; r < sys.n; ++r)
        for (int c = 0; c < sys.n; ++c) row.push_back(rec.m(r, c));
      Eigen::SelfAdjointEigenSolver<Matrix> es(rec.m, Eigen::EigenvaluesOnly);
      const double lo = es.eigenvalues().minCoeff();
      const double hi = es.eigenvalues().maxCoeff();
      row.insert(row.end(), {lo, hi, lo > 0 ? hi / lo : std::numeric_limits<double>::quiet_NaN(),
                             rec.tail_bound, rec.est_error, rec.declared_error(), rec.t_max});
      rows.push_back(std::move(row));
    }
    write_text_file(cmd.csv_out, csv_table(header, rows));
  }
  deliver_report(report, cmd.common.out);
  if (!cmd.common.out.empty())
    std::printf("build: %zu point(s), anchor declared error %.3g\n", records.size(),
                metric->anchor_record().declared_error());
  return 0;
}

// ---------------------------------------------------------------------------
// verify subcommand
// ---------------------------------------------------------------------------

struct VerifyCmd {
  CommonOpts common;
  MetricOpts metric;
  RegionOpts region;
  std::vector<std::string> checks;
  bool all = false;
  std::string input;  // gronwall CSV
  double residual_tol = 1e-3;
  double conservation_tol = 1e-5;
  double eta = 1e-3;
  double k_margin = 0.1;
  double theta_max = 2.0;
  double decay_horizon = 6.0;
  std::string plot_prefix;
};

[[nodiscard]] bool explicitly_requested(const VerifyCmd& cmd, const std::string& name) {
  for (const auto& c : cmd.checks)
    if (c == name) return true;
  return false;
}

[[nodiscard]] bool wants(const VerifyCmd& cmd, const std::string& name) {
  if (cmd.all) return true;
  for (const auto& c : cmd.checks)
    if (c == name || c == "all") return true;
  return false;
}

[[nodiscard]] int run_verify(const VerifyCmd& cmd) {
  const SystemDef sys = resolve_system(cmd.common);
  const bool gronwall_only =
      !cmd.all && cmd.checks.size() == 1 && cmd.checks[0] == "gronwall";

  Json config = common_config(sys, cmd.common);
  {
    Json checks = Json::array();
    if (cmd.all) checks.push_back("all");
    for (const auto& c : cmd.checks) checks.push_back(c);
    config["checks"] = std::move(checks);
    const Json mc = metric_config(cmd.metric);
    for (const auto& [k, v] : mc.items()) config[k] = v;
    config["residual_tol"] = cmd.residual_tol;
    config["conservation_tol"] = cmd.conservation_tol;
    config["eta"] = cmd.eta;
    config["k"] = cmd.k_margin;
    config["theta_max"] = cmd.theta_max;
    config["decay_horizon"] = cmd.decay_horizon;
    if (!cmd.input.empty()) config["input"] = cmd.input;
  }
  Json report = report_envelope("verify", Json());  // config attached below
  Json results = Json::object();
  bool all_pass = true;
  auto record = [&](const std::string& name, Json body, bool pass) {
    body["pass"] = pass;
    results[name] = std::move(body);
    all_pass = all_pass && pass;
  };

  // --- data-only check: integral inequality on a CSV sample --------------
  if (wants(cmd, "gronwall")) {
    if (cmd.input.empty()) {
      if (!cmd.all)
        throw error(errc::config, "--check gronwall needs --input with columns theta,r,a,K,b");
    } else {
      std::vector<std::string> header;
      const auto rows = read_csv_rows(cmd.input, &header);
      std::vector<double> th, r, a, bigk, b;
      for (const auto& row : rows) {
        if (row.size() < 5)
          throw error(errc::config, cmd.input + ": need columns theta,r,a,K,b");
        th.push_back(row[0]);
        r.push_back(row[1]);
        a.push_back(row[2]);
        bigk.push_back(row[3]);
        b.push_back(row[4]);
      }
      const GronwallReport gw = gronwall_check(th, r, a, bigk, b);
      record("gronwall", to_json(gw), gw.conclusion_ok);
    }
  }

  if (gronwall_only) {
    report["config"] = std::move(config);
    report["results"] = std::move(results);
    report["verdict"] = all_pass ? "pass" : "fail";
    deliver_report(report, cmd.common.out);
    if (!cmd.common.out.empty()) std::printf("verify: %s\n", all_pass ? "pass" : "fail");
    return all_pass ? 0 : 6;
  }

  // --- dynamical checks ---------------------------------------------------
  const PeriodicOrbitRecord orbit = find_orbit_for(sys, cmd.common);
  const ResolvedRegion region = resolve_region(sys, cmd.region, &orbit, cmd.common.seed);
  config["region"] = region.descriptor;
  config["n_points"] = static_cast<std::int64_t>(region.points.size());

  if (wants(cmd, "orbit")) {
    double gap = 0.0;
    for (Eigen::Index i = 0; i < orbit.floquet.multipliers.size(); ++i)
      gap = std::max(gap, std::abs(std::exp(orbit.floquet.exponents[i] * orbit.period) -
                                   orbit.floquet.multipliers[i]));
    Json body = to_json(orbit, /*include_samples=*/false);
    body["multiplier_exponent_gap"] = gap;
    const bool pass = orbit.residual <= 100.0 * cmd.common.orbit_tol && gap <= 1e-8 &&
                      orbit.floquet.nontrivial_max_real < 0.0;
    record("orbit", std::move(body), pass);
  }

  if (wants(cmd, "jacobian")) {
    std::vector<Vector> pts(region.points.begin(),
                            region.points.begin() +
                                std::min<std::size_t>(region.points.size(), 20));
    const double dev = jacobian_deviation(sys, pts);
    Json body = Json::object();
    body["max_relative_deviation"] = dev;
    body["n_points"] = static_cast<std::int64_t>(pts.size());
    record("jacobian", std::move(body), dev <= 1e-6);
  }

  // metric field used by the remaining checks
  std::shared_ptr<const IntegralMetric> built;
  MetricField field;
  if (cmd.metric.metric == "identity") {
    field = identity_metric(sys.n);
  } else if (cmd.metric.metric == "integral") {
    const Vector anchor = resolve_anchor(sys, cmd.metric, &orbit);
    built = construct_metric(sys, cmd.common, cmd.metric, anchor);
    field = integral_metric_field(built);
  } else {
    throw error(errc::config, "unknown metric '" + cmd.metric.metric + "'");
  }
  const BField b = cmd.metric.b_file.empty() ? identity_b(sys.n) : parse_b_file(cmd.metric.b_file);

  if (wants(cmd, "metric") && built) {
    const MetricEvalRecord& rec = built->anchor_record();
    Json body = to_json(rec);
    const bool pass = rec.normalization_gap <= 1e-6 &&
                      rec.kernel_residual <= std::max(1e-8, rec.declared_error());
    record("metric", std::move(body), pass);
  }

  // The PDE residual only characterizes the constructed metric; check it for
  // other metric fields only when asked for by name.
  const bool run_residual =
      explicitly_requested(cmd, "residual") || (wants(cmd, "residual") && built != nullptr);
  std::optional<CertificationReport> cert;
  if (wants(cmd, "contraction") || run_residual) {
    CertifyOptions copt;
    if (run_residual) copt.b = &b;
    copt.residual_tol = cmd.residual_tol;
    copt.jobs = cmd.common.jobs;
    copt.orbit = &orbit;
    cert = certify_region(sys, field, region.points, copt);
    cert->set_descriptor = region.descriptor;
  }
  if (wants(cmd, "contraction")) {
    Json body = to_json(*cert, /*include_samples=*/true);
    const bool pass = cert->posdef_pass && cert->contraction_pass && cert->floquet_consistent;
    record("contraction", std::move(body), pass);
  }
  if (run_residual) {
    Json body = Json::object();
    body["max_residual"] = cert->max_residual;
    body["tolerance"] = cmd.residual_tol;
    body["n_points"] = static_cast<std::int64_t>(cert->samples.size());
    record("residual", std::move(body), cert->residual_pass);
  }

  const Vector off_orbit = 1.05 * orbit.anchor;

  if (wants(cmd, "decay")) {
    DecayFitOptions dopt;
    dopt.horizon = cmd.decay_horizon;
    dopt.step.tol = cmd.common.tol;
    const DecayFit on = decay_fit(sys, orbit.anchor, dopt);
    const DecayFit off = decay_fit(sys, off_orbit, dopt);
    Json body = Json::object();
    body["on_orbit"] = to_json(on);
    body["off_orbit"] = to_json(off);
    const double kappa = std::min(on.rate, off.rate);
    const double eps = std::min(0.1, kappa / 4.0);
    body["rate_chain"] = to_json(rate_chain(kappa, eps));
    record("decay", std::move(body), on.rate > 0.0 && off.rate > 0.0);
    if (!cmd.plot_prefix.empty()) {
      std::vector<std::vector<double>> rows;
      for (std::size_t i = 0; i < on.times.size(); ++i)
        rows.push_back({on.times[i], on.norms[i]});
      write_text_file(cmd.plot_prefix + "-decay.csv", csv_table({"t", "projected_norm"}, rows));
    }
  }

  if (wants(cmd, "normalized-decay")) {
    DecayFitOptions dopt;
    dopt.horizon = cmd.decay_horizon;
    dopt.step.tol = cmd.common.tol;
    const NormalizedSystemReport rep = psi_decay_check(sys, off_orbit, dopt);
    const bool pass = rep.decomposition_error <= 1e-12 && rep.tracking_error <= 1e-6 &&
                      rep.fit.rate > 0.0;
    record("normalized-decay", to_json(rep), pass);
  }

  if (wants(cmd, "conservation")) {
    ConservationOptions copt;
    copt.c0 = cmd.metric.c0;
    copt.step.tol = cmd.common.tol;
    const ConservationReport rep = conservation_checks(sys, field, off_orbit, copt);
    const bool phi0_applies = cmd.metric.metric == "integral";
    const bool pass = rep.max_identity_gap <= cmd.conservation_tol &&
                      (!phi0_applies || rep.max_phi0_gap <= 1e-4);
    Json body = to_json(rep);
    body["phi0_applies"] = phi0_applies;
    record("conservation", std::move(body), pass);
  }

  if (wants(cmd, "sync")) {
    SyncOptions sopt;
    sopt.eta_mag = cmd.eta;
    sopt.k = cmd.k_margin;
    sopt.theta_max = cmd.theta_max;
    sopt.nu = -orbit.floquet.nontrivial_max_real;
    sopt.step.tol = std::min(cmd.common.tol, 1e-12);
    const SyncExperiment exp = sync_contraction_experiment(sys, field, orbit, sopt);
    double max_q = 0.0;
    for (double q : exp.q_residual) max_q = std::max(max_q, q);
    const bool pass = (exp.degenerate || exp.fitted_rate > 0.0) && max_q <= 1e-10;
    record("sync", to_json(exp), pass);
    if (!cmd.plot_prefix.empty()) {
      std::vector<std::vector<double>> rows;
      for (std::size_t i = 0; i < exp.theta.size(); ++i)
        rows.push_back({exp.theta[i], exp.a_values[i]});
      write_text_file(cmd.plot_prefix + "-sync.csv", csv_table({"theta", "a"}, rows));
    }
  }

  if (wants(cmd, "uniqueness") && built) {
    QuadratureConfig alt;
    alt.t_max = cmd.metric.tmax + 5.0;
    alt.rel_tail_tol = 0.1 * cmd.metric.tail_tol;
    alt.step.tol = cmd.common.tol;
    const BField b2 = cmd.metric.b_file.empty() ? identity_b(sys.n) : parse_b_file(cmd.metric.b_file);
    const auto other = build_metric(sys, b2, cmd.metric.c0, orbit.anchor, alt);
    std::vector<Vector> pts;
    const std::size_t stride = std::max<std::size_t>(1, region.points.size() / 6);
    for (std::size_t i = 0; i < region.points.size(); i += stride) pts.push_back(region.points[i]);
    const UniquenessReport rep = uniqueness_convergence(*built, *other, pts);
    record("uniqueness", to_json(rep), rep.within_declared);
  }

  report["config"] = std::move(config);
  report["results"] = std::move(results);
  report["verdict"] = all_pass ? "pass" : "fail";
  if (cert) report["nu_certified"] = cert->nu_certified;
  deliver_report(report, cmd.common.out);
  if (!cmd.common.out.empty()) std::printf("verify: %s\n", all_pass ? "pass" : "fail");
  return all_pass ? 0 : 6;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"contraction metrics for exponentially stable periodic orbits"};
  app.require_subcommand(1);

  OrbitCmd orbit_cmd;
  BuildCmd build_cmd;
  VerifyCmd verify_cmd;
  int rc = 0;

  auto* orbit_app = app.add_subcommand("orbit", "locate a periodic orbit and its Floquet data");
  add_common_flags(orbit_app, orbit_cmd.common);
  orbit_app->add_option("--samples", orbit_cmd.samples, "orbit sample count in the report")
      ->capture_default_str();
  orbit_app->callback([&] { rc = run_orbit(orbit_cmd); });

  auto* build_app = app.add_subcommand("build", "construct the contraction metric on a point set");
  add_common_flags(build_app, build_cmd.common);
  add_metric_flags(build_app, build_cmd.metric);
  add_region_flags(build_app, build_cmd.region);
  build_app->add_option("--csv-out", build_cmd.csv_out, "also write the metric grid as CSV");
  build_app->callback([&] { rc = run_build(build_cmd); });

  auto* verify_app = app.add_subcommand("verify", "run verification checks");
  add_common_flags(verify_app, verify_cmd.common);
  add_metric_flags(verify_app, verify_cmd.metric);
  add_region_flags(verify_app, verify_cmd.region);
  verify_app
      ->add_option("--check", verify_cmd.checks,
                   "checks to run: orbit, jacobian, metric, contraction, residual, decay, "
                   "normalized-decay, conservation, sync, uniqueness, gronwall, all")
      ->delimiter(',');
  verify_app->add_flag("--all", verify_cmd.all, "run every applicable check");
  verify_app->add_option("--input", verify_cmd.input,
                         "CSV input for --check gronwall (columns theta,r,a,K,b)");
  verify_app->add_option("--residual-tol", verify_cmd.residual_tol, "PDE residual tolerance")
      ->capture_default_str();
  verify_app
      ->add_option("--conservation-tol", verify_cmd.conservation_tol,
                   "derivative-identity tolerance")
      ->capture_default_str();
  verify_app->add_option("--eta", verify_cmd.eta, "perturbation size for --check sync")
      ->capture_default_str();
  verify_app->add_option("--k", verify_cmd.k_margin, "margin parameter for --check sync")
      ->capture_default_str();
  verify_app->add_option("--theta-max", verify_cmd.theta_max, "horizon for --check sync")
      ->capture_default_str();
  verify_app
      ->add_option("--decay-horizon", verify_cmd.decay_horizon, "horizon for the decay fits")
      ->capture_default_str();
  verify_app->add_option("--emit-plot-data", verify_cmd.plot_prefix,
                         "write plot series CSVs with this path prefix");
  verify_app->callback([&] { rc = run_verify(verify_cmd); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const cmtk::error& e) {
    std::fprintf(stderr, "error (%s): %s\n", errc_name(e.code()), e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return rc;
}
