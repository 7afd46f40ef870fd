#pragma once

// Machine-readable reports: a self-describing JSON tree (numbers serialized
// with 17 significant digits, non-finite values as null) plus flat CSV tables
// for grids and plot series. Output is byte-stable for a fixed configuration:
// no timestamps, no pointers, no locale dependence.

#include "cmtk/core.hpp"
#include "cmtk/metric.hpp"
#include "cmtk/orbit.hpp"
#include "cmtk/verify.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

namespace cmtk {

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Serialization with fixed numeric formatting
// ---------------------------------------------------------------------------

/// %.17g rendering; NaN and infinities become JSON null.
[[nodiscard]] inline std::string format_number(double v) {
  if (!std::isfinite(v)) return "null";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

namespace detail {

inline void emit_node(const Json& j, std::string& out, int depth) {
  const std::string pad(2 * (static_cast<std::size_t>(depth) + 1), ' ');
  const std::string close_pad(2 * static_cast<std::size_t>(depth), ' ');
  switch (j.type()) {
    case Json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += "{\n";
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out += ",\n";
        first = false;
        out += pad;
        out += Json(it.key()).dump();  // quoted + escaped
        out += ": ";
        emit_node(it.value(), out, depth + 1);
      }
      out += "\n";
      out += close_pad;
      out += "}";
      return;
    }
    case Json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      bool scalars_only = true;
      for (const auto& v : j)
        if (v.is_structured()) scalars_only = false;
      if (scalars_only) {  // compact one-line arrays for numeric rows
        out += "[";
        bool first = true;
        for (const auto& v : j) {
          if (!first) out += ", ";
          first = false;
          emit_node(v, out, depth + 1);
        }
        out += "]";
        return;
      }
      out += "[\n";
      bool first = true;
      for (const auto& v : j) {
        if (!first) out += ",\n";
        first = false;
        out += pad;
        emit_node(v, out, depth + 1);
      }
      out += "\n";
      out += close_pad;
      out += "]";
      return;
    }
    case Json::value_t::string:
      out += j.dump();  // nlohmann handles escaping
      return;
    case Json::value_t::boolean:
      out += j.get<bool>() ? "true" : "false";
      return;
    case Json::value_t::number_integer:
      out += std::to_string(j.get<std::int64_t>());
      return;
    case Json::value_t::number_unsigned:
      out += std::to_string(j.get<std::uint64_t>());
      return;
    case Json::value_t::number_float:
      out += format_number(j.get<double>());
      return;
    default:
      out += "null";
      return;
  }
}

}  // namespace detail

/// Render the tree with 2-space indentation and fixed numeric formatting.
[[nodiscard]] inline std::string report_to_string(const Json& j) {
  std::string out;
  detail::emit_node(j, out, 0);
  out += "\n";
  return out;
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw error(errc::config, "cannot open output file: " + path);
  f << content;
  if (!f) throw error(errc::config, "failed writing output file: " + path);
}

inline void write_report(const std::string& path, const Json& j) {
  write_text_file(path, report_to_string(j));
}

// ---------------------------------------------------------------------------
// CSV tables
// ---------------------------------------------------------------------------

[[nodiscard]] inline std::string csv_table(const std::vector<std::string>& header,
                                           const std::vector<std::vector<double>>& rows) {
  std::string out;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i) out += ",";
    out += header[i];
  }
  out += "\n";
  for (const auto& row : rows) {
    if (row.size() != header.size())
      throw error(errc::config, "csv_table: row width does not match the header");
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ",";
      out += std::isfinite(row[i]) ? format_number(row[i]) : std::string("nan");
    }
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Value conversion helpers
// ---------------------------------------------------------------------------

[[nodiscard]] inline Json json_vector(const Vector& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

[[nodiscard]] inline Json json_matrix(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

[[nodiscard]] inline Json json_complex_vector(const Eigen::VectorXcd& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    Json c = Json::object();
    c["re"] = v[i].real();
    c["im"] = v[i].imag();
    a.push_back(std::move(c));
  }
  return a;
}

[[nodiscard]] inline Json json_doubles(const std::vector<double>& v) {
  Json a = Json::array();
  for (double x : v) a.push_back(x);
  return a;
}

// ---------------------------------------------------------------------------
// Struct converters
// ---------------------------------------------------------------------------

[[nodiscard]] inline Json to_json(const PeriodicOrbitRecord& rec, bool include_samples = true) {
  Json j = Json::object();
  j["anchor"] = json_vector(rec.anchor);
  j["period"] = rec.period;
  j["closure_residual"] = rec.residual;
  j["monodromy"] = json_matrix(rec.monodromy);
  Json fl = Json::object();
  fl["multipliers"] = json_complex_vector(rec.floquet.multipliers);
  fl["exponents"] = json_complex_vector(rec.floquet.exponents);
  fl["trivial_index"] = rec.floquet.trivial_index;
  fl["nontrivial_max_real"] = rec.floquet.nontrivial_max_real;
  j["floquet"] = std::move(fl);
  if (include_samples) {
    Json samples = Json::array();
    for (const auto& [t, x] : rec.samples) {
      Json s = Json::object();
      s["t"] = t;
      s["x"] = json_vector(x);
      samples.push_back(std::move(s));
    }
    j["samples"] = std::move(samples);
  }
  return j;
}

[[nodiscard]] inline Json to_json(const DecayEstimate& d) {
  Json j = Json::object();
  j["prefactor"] = d.prefactor;
  j["rate"] = d.rate;
  j["r2"] = d.r2;
  return j;
}

[[nodiscard]] inline Json to_json(const MetricEvalRecord& rec, bool include_matrices = true) {
  Json j = Json::object();
  j["x"] = json_vector(rec.x);
  if (include_matrices) {
    j["m"] = json_matrix(rec.m);
    j["m_integral_part"] = json_matrix(rec.m1);
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(rec.m, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  j["min_eig"] = lo;
  j["max_eig"] = hi;
  j["condition_number"] = lo > 0.0 ? hi / lo : std::numeric_limits<double>::quiet_NaN();
  j["tail_bound"] = rec.tail_bound;
  j["integration_error"] = rec.est_error;
  j["declared_error"] = rec.declared_error();
  j["horizon"] = rec.t_max;
  j["horizon_doublings"] = rec.doublings;
  j["decay_fit"] = to_json(rec.decay);
  j["b_sup"] = rec.b_sup;
  j["normalization_gap"] = rec.normalization_gap;
  j["kernel_residual"] = rec.kernel_residual;
  return j;
}

[[nodiscard]] inline Json to_json(const ContractionSample& s, bool include_vectors = true) {
  Json j = Json::object();
  j["x"] = json_vector(s.x);
  j["l_value"] = s.l_value;
  j["min_eig_m"] = s.min_eig_m;
  j["residual"] = s.residual_norm;
  j["asymmetry"] = s.asymmetry;
  if (include_vectors) {
    j["v_argmax"] = json_vector(s.v_argmax);
    j["v_f_abs"] = s.v_f_abs;
    j["v_m_v"] = s.v_m_v;
  }
  return j;
}

[[nodiscard]] inline Json to_json(const CertificationReport& rep, bool include_samples = true) {
  Json j = Json::object();
  j["set_descriptor"] = rep.set_descriptor;
  j["n_samples"] = static_cast<std::int64_t>(rep.samples.size());
  j["n_excluded"] = static_cast<std::int64_t>(rep.excluded.size());
  j["nu_certified"] = rep.nu_certified;
  j["lambda_max_m"] = rep.lambda_max_m;
  j["lambda_min_b"] = rep.lambda_min_b;
  j["lower_bound_rate"] = rep.proposition_bound;
  j["max_residual"] = rep.max_residual;
  j["floquet_nu"] = rep.floquet_nu;
  j["floquet_consistent"] = rep.floquet_consistent;
  j["lipschitz_estimate"] = rep.lipschitz_estimate;
  j["margin_radius"] = rep.margin_radius;
  j["posdef_pass"] = rep.posdef_pass;
  j["contraction_pass"] = rep.contraction_pass;
  j["residual_pass"] = rep.residual_pass;
  j["verdict"] = rep.pass ? "pass" : "fail";
  if (include_samples) {
    Json samples = Json::array();
    for (const auto& s : rep.samples) samples.push_back(to_json(s, /*include_vectors=*/false));
    j["samples"] = std::move(samples);
  }
  return j;
}

[[nodiscard]] inline Json to_json(const DecayFit& f) {
  Json j = Json::object();
  j["rate"] = f.rate;
  j["prefactor"] = f.prefactor;
  j["r2"] = f.r2;
  j["horizon"] = f.horizon;
  j["n_used"] = f.n_used;
  j["sup_unprojected"] = f.sup_unprojected;
  return j;
}

[[nodiscard]] inline Json to_json(const RateChain& rc) {
  Json j = Json::object();
  j["nu"] = rc.nu;
  j["eps"] = rc.eps;
  j["mu0"] = rc.mu0;
  j["rho0"] = rc.rho0;
  j["kappa"] = rc.kappa;
  j["kappa0"] = rc.kappa0;
  return j;
}

[[nodiscard]] inline Json to_json(const NormalizedSystemReport& rep) {
  Json j = Json::object();
  j["decomposition_error"] = rep.decomposition_error;
  j["tracking_error"] = rep.tracking_error;
  j["decay"] = to_json(rep.fit);
  return j;
}

[[nodiscard]] inline Json to_json(const ConservationReport& rep) {
  Json j = Json::object();
  j["max_identity_gap"] = rep.max_identity_gap;
  j["max_phi0_gap"] = rep.max_phi0_gap;
  j["phi0_times"] = json_doubles(rep.phi0_times);
  j["phi0_values"] = json_doubles(rep.phi0_values);
  return j;
}

[[nodiscard]] inline Json to_json(const GronwallReport& rep) {
  Json j = Json::object();
  j["conclusion_ok"] = rep.conclusion_ok;
  j["max_hypothesis_slack"] = rep.max_hypothesis_slack;
  j["max_conclusion_slack"] = rep.max_conclusion_slack;
  j["bound"] = json_doubles(rep.bound);
  return j;
}

[[nodiscard]] inline Json to_json(const UniquenessReport& rep) {
  Json j = Json::object();
  j["max_difference"] = rep.max_difference;
  j["max_declared_bound"] = rep.max_declared_bound;
  j["within_declared"] = rep.within_declared;
  j["differences"] = json_doubles(rep.differences);
  j["declared"] = json_doubles(rep.declared);
  return j;
}

[[nodiscard]] inline Json to_json(const SyncExperiment& e) {
  Json j = Json::object();
  j["fitted_rate"] = e.fitted_rate;
  j["reference_rate"] = e.reference_rate;
  j["tdot_initial"] = e.tdot_initial;
  j["degenerate"] = e.degenerate;
  double max_q = 0.0;
  for (double q : e.q_residual) max_q = std::max(max_q, q);
  j["max_q_residual"] = max_q;
  j["theta"] = json_doubles(e.theta);
  j["t_sync"] = json_doubles(e.t_sync);
  j["a_values"] = json_doubles(e.a_values);
  j["contraction_observed"] = e.degenerate || e.fitted_rate > 0.0;
  return j;
}

// ---------------------------------------------------------------------------
// Report envelope
// ---------------------------------------------------------------------------

/// Every report embeds the resolved configuration and the tool version; the
/// caller attaches results under keys of its choice.
[[nodiscard]] inline Json report_envelope(const std::string& command, Json config) {
  Json j = Json::object();
  j["tool"] = "cmtk";
  j["version"] = version_string;
  j["command"] = command;
  j["config"] = std::move(config);
  return j;
}

}  // namespace cmtk
