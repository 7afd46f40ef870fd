#pragma once

// Construction of the contraction metric by quadrature of the projected
// variational flow:
//
//   M(x) = M1(x) + c0 f(x) f(x)^T,
//   M1(x) = integral over t in [0, inf) of Phi(t,0;x)^T C(S_t x) Phi(t,0;x),
//   C(x)  = P_x^T B(x) P_x,
//
// where P_x is the projector perpendicular to f(x) and B is a user-chosen
// uniformly positive definite weight field. The improper integral is
// truncated at an adaptive horizon with a certified tail bound derived from
// an exponential-decay fit of ||P Phi||.

#include "cmtk/core.hpp"
#include "cmtk/flow.hpp"
#include "cmtk/integrate.hpp"
#include "cmtk/polynomial.hpp"
#include "cmtk/projection.hpp"
#include "cmtk/system.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <memory>

namespace cmtk {

// ---------------------------------------------------------------------------
// Weight fields B(x)
// ---------------------------------------------------------------------------

/// Uniformly positive definite symmetric weight field. `eval_into` writes
/// B(x) into preallocated storage; `identity` short-circuits the common case.
struct BField {
  int n = 0;
  std::string kind;  // "identity", "constant", "polynomial"
  bool identity = false;
  std::function<void(const Eigen::Ref<const Vector>&, Eigen::Ref<Matrix>)> eval_into;

  [[nodiscard]] Matrix eval(const Vector& x) const {
    Matrix out(n, n);
    eval_into(x, out);
    return out;
  }
};

[[nodiscard]] inline BField identity_b(int n) {
  BField b;
  b.n = n;
  b.kind = "identity";
  b.identity = true;
  b.eval_into = [](const Eigen::Ref<const Vector>&, Eigen::Ref<Matrix> out) { out.setIdentity(); };
  return b;
}

[[nodiscard]] inline BField constant_b(const Matrix& mat) {
  if (mat.rows() != mat.cols()) throw error(errc::config, "constant_b: matrix must be square");
  if (asymmetry_norm(mat) > 1e-12 * std::max(1.0, mat.norm()))
    throw error(errc::config, "constant_b: matrix must be symmetric");
  const Matrix stored = mirror_upper(mat);
  Eigen::SelfAdjointEigenSolver<Matrix> es(stored, Eigen::EigenvaluesOnly);
  if (!(es.eigenvalues().minCoeff() > 0.0))
    throw error(errc::config, "constant_b: matrix must be positive definite");
  BField b;
  b.n = static_cast<int>(mat.rows());
  b.kind = "constant";
  b.eval_into = [stored](const Eigen::Ref<const Vector>&, Eigen::Ref<Matrix> out) { out = stored; };
  return b;
}

/// Polynomial matrix field: entry (i,j) is a polynomial in x. The evaluation
/// is symmetrized; positive definiteness is checked at every quadrature
/// sample time (a non-SPD value raises a config error).
[[nodiscard]] inline BField polynomial_b(int n, const std::vector<std::vector<Polynomial>>& entries) {
  if (static_cast<int>(entries.size()) != n)
    throw error(errc::config, "polynomial_b: entry grid must be n x n");
  for (const auto& row : entries)
    if (static_cast<int>(row.size()) != n)
      throw error(errc::config, "polynomial_b: entry grid must be n x n");
  auto grid = std::make_shared<std::vector<std::vector<Polynomial>>>(entries);
  BField b;
  b.n = n;
  b.kind = "polynomial";
  b.eval_into = [grid, n](const Eigen::Ref<const Vector>& x, Eigen::Ref<Matrix> out) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        out(i, j) = eval_polynomial((*grid)[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)], x);
    out = 0.5 * (out + out.transpose()).eval();
  };
  return b;
}

/// C(x) = P_x^T B(x) P_x, the right-hand side the constructed metric is
/// designed to satisfy LM = -C for.
[[nodiscard]] inline Matrix rhs_C(const SystemDef& sys, const BField& b, const Vector& x) {
  if (x.size() != sys.n || b.n != sys.n) throw error(errc::config, "rhs_C: dimension mismatch");
  const Matrix p = flow_projector(sys, x);
  if (b.identity) return p;  // P^T I P = P^2 = P
  const Matrix bx = b.eval(x);
  return Matrix(mirror_upper(symmetric_part(p.transpose() * bx * p)));
}

// ---------------------------------------------------------------------------
// Tail bound
// ---------------------------------------------------------------------------

/// Exponential-decay estimate ||P_{S_t x} Phi(t,0;x)|| <~ prefactor * e^{-rate t}.
struct DecayEstimate {
  double prefactor = 0.0;
  double rate = 0.0;
  double r2 = 0.0;  ///< fit quality
};

/// Bound on the neglected tail of the metric integral beyond t_max: the
/// integrand norm is at most prefactor^2 * b_sup * e^{-2 rate t}, hence the
/// tail is bounded by prefactor^2 * b_sup / (2 rate) * e^{-2 rate t_max}.
[[nodiscard]] inline double tail_bound(const DecayEstimate& decay, double t_max, double b_sup) {
  if (!(decay.rate > 0.0))
    throw error(errc::no_decay, "tail_bound: nonpositive decay rate, no convergent tail");
  return decay.prefactor * decay.prefactor * b_sup / (2.0 * decay.rate) *
         std::exp(-2.0 * decay.rate * t_max);
}

// ---------------------------------------------------------------------------
// Integral metric
// ---------------------------------------------------------------------------

struct QuadratureConfig {
  double t_max = 15.0;             ///< initial truncation horizon
  double rel_tail_tol = 1e-6;      ///< accept when tail_bound <= rel_tail_tol * ||M1||_F
  int max_doublings = 6;           ///< horizon extension budget
  int samples_per_segment = 24;    ///< decay samples per horizon segment
  double fit_warmup_frac = 0.25;   ///< fraction of the horizon discarded before fitting
  ode::StepControl step{};         ///< integrator control (tol 1e-10 by default)
};

/// Everything produced by one evaluation of the integral metric at a point.
struct MetricEvalRecord {
  Vector x;
  Matrix m;               ///< M = M1 + c0 f f^T (exactly symmetric storage)
  Matrix m1;              ///< integral part
  double tail_bound = 0.0;       ///< certified truncation bound
  double est_error = 0.0;        ///< accumulated integrator error estimate
  double t_max = 0.0;            ///< horizon actually used
  int doublings = 0;             ///< horizon extensions performed
  DecayEstimate decay;           ///< fit of ||P Phi|| used for the tail bound
  double b_sup = 0.0;            ///< sup spectral norm of B along the trajectory
  double normalization_gap = 0.0;  ///< |f^T M f / ||f||^4 - c0|
  double kernel_residual = 0.0;    ///< ||M1 f|| / ||f||
  /// tail_bound + est_error: the total declared error bound of this record.
  [[nodiscard]] double declared_error() const { return tail_bound + est_error; }
};

namespace detail {

/// RHS of the joint quadrature state [x; vec(Phi); vec(U)] with
/// U' = sym(Phi^T C(x) Phi).
struct QuadratureRhs {
  const SystemDef* sys;
  const BField* b;
  mutable Vector f;
  mutable Matrix a, bx, c, cphi, integ;

  QuadratureRhs(const SystemDef* s, const BField* bf)
      : sys(s), b(bf), f(s->n), a(s->n, s->n), bx(s->n, s->n), c(s->n, s->n), cphi(s->n, s->n),
        integ(s->n, s->n) {}

  void operator()(const Vector& y, Vector& dy) const {
    const int n = sys->n;
    const Eigen::Map<const Vector> x(y.data(), n);
    const Eigen::Map<const Matrix> phi(y.data() + n, n, n);
    Eigen::Map<Vector> dx(dy.data(), n);
    Eigen::Map<Matrix> dphi(dy.data() + n, n, n);
    Eigen::Map<Matrix> du(dy.data() + n + n * n, n, n);

    sys->rhs(x, f);
    const double n2 = f.squaredNorm();
    if (!(n2 > sys->fmin_threshold * sys->fmin_threshold))
      throw error(errc::equilibrium, "metric quadrature: trajectory reached an equilibrium");
    sys->jac(x, a);
    dx = f;
    dphi.noalias() = a * phi;

    // C = P^T B P expanded so no projector matrix is formed:
    //   identity B: C = I - f f^T / ||f||^2
    //   general B:  C = B - (B f f^T + f f^T B)/||f||^2 + f f^T (f^T B f)/||f||^4
    if (b->identity) {
      c.noalias() = (-1.0 / n2) * (f * f.transpose());
      c.diagonal().array() += 1.0;
    } else {
      b->eval_into(x, bx);
      const Vector bf = bx * f;
      const double fbf = f.dot(bf);
      c = bx;
      c.noalias() -= (bf * f.transpose()) / n2;
      c.noalias() -= (f * bf.transpose()) / n2;
      c.noalias() += (fbf / (n2 * n2)) * (f * f.transpose());
    }
    cphi.noalias() = c * phi;
    integ.noalias() = phi.transpose() * cphi;
    du = 0.5 * (integ + integ.transpose());
  }
};

}  // namespace detail

/// The numerically constructed contraction metric. Evaluations are cached by
/// rounded coordinates; the cache tolerates concurrent insertion.
class IntegralMetric {
 public:
  IntegralMetric(SystemDef sys, BField b, double c0, Vector x0, QuadratureConfig cfg = {})
      : sys_(std::move(sys)), b_(std::move(b)), c0_(c0), x0_(std::move(x0)), cfg_(cfg) {
    if (!(c0_ > 0.0)) throw error(errc::config, "IntegralMetric: c0 must be positive");
    if (b_.n != sys_.n) throw error(errc::config, "IntegralMetric: B dimension mismatch");
    if (x0_.size() != sys_.n) throw error(errc::config, "IntegralMetric: anchor dimension mismatch");
    if (!(cfg_.t_max > 0.0) || !(cfg_.rel_tail_tol > 0.0))
      throw error(errc::config, "IntegralMetric: horizon and tail tolerance must be positive");
  }

  [[nodiscard]] const SystemDef& system() const { return sys_; }
  [[nodiscard]] const BField& weight() const { return b_; }
  [[nodiscard]] double c0() const { return c0_; }
  [[nodiscard]] const Vector& anchor() const { return x0_; }
  [[nodiscard]] const QuadratureConfig& config() const { return cfg_; }

  /// Evaluation at the anchor point (cached after the eager build).
  [[nodiscard]] MetricEvalRecord anchor_record() const { return evaluate(x0_); }

  /// Evaluate with adaptive horizon extension; results are cached.
  [[nodiscard]] MetricEvalRecord evaluate(const Vector& x) const {
    const auto key = cache_key(x);
    {
      std::lock_guard<std::mutex> lock(cache_mutex_);
      const auto it = cache_.find(key);
      if (it != cache_.end()) return it->second;
    }
    MetricEvalRecord rec = evaluate_impl(x, cfg_.t_max, /*allow_extension=*/true);
    {
      std::lock_guard<std::mutex> lock(cache_mutex_);
      cache_.emplace(key, rec);
    }
    return rec;
  }

  /// Evaluate at a frozen horizon (no extension, no caching). Used for
  /// finite differences along the flow, where all stencil points must share
  /// one horizon so the truncation error stays smooth in x.
  [[nodiscard]] MetricEvalRecord evaluate_fixed(const Vector& x, double horizon) const {
    return evaluate_impl(x, horizon, /*allow_extension=*/false);
  }

  /// Orbital derivative M'(x) by flow-based central differences with one
  /// Richardson level, all stencil evaluations at the horizon selected for x.
  [[nodiscard]] Matrix orbital(const Vector& x, double h = 0.0) const {
    const MetricEvalRecord center = evaluate(x);
    const double horizon = center.t_max;
    if (h <= 0.0) h = 1e-3 * characteristic_time(sys_, x);
    const ode::StepControl fd_ctrl{std::min(1e-12, cfg_.step.tol)};
    auto value_at = [&](double step) {
      const Vector xs = flow_point(sys_, x, step, fd_ctrl);
      return evaluate_fixed(xs, horizon).m;
    };
    const Matrix d1 = (value_at(h) - value_at(-h)) / (2.0 * h);
    const Matrix d2 = (value_at(0.5 * h) - value_at(-0.5 * h)) / h;
    return (4.0 * d2 - d1) / 3.0;
  }

 private:
  [[nodiscard]] std::vector<long long> cache_key(const Vector& x) const {
    std::vector<long long> key(static_cast<std::size_t>(x.size()));
    for (Eigen::Index i = 0; i < x.size(); ++i)
      key[static_cast<std::size_t>(i)] = llround(x[i] * 1e12);
    return key;
  }

  [[nodiscard]] MetricEvalRecord evaluate_impl(const Vector& x, double horizon,
                                               bool allow_extension) const {
    if (x.size() != sys_.n) throw error(errc::config, "IntegralMetric: dimension mismatch");
    require_not_equilibrium(sys_, x, "IntegralMetric::evaluate");
    const int n = sys_.n;

    Vector y(n + 2 * n * n);
    y.head(n) = x;
    Eigen::Map<Matrix>(y.data() + n, n, n).setIdentity();
    y.tail(n * n).setZero();
    detail::QuadratureRhs rhs(&sys_, &b_);
    detail::TrajectoryEscape escape{n, sys_.escape_radius};

    MetricEvalRecord rec;
    rec.x = x;
    std::vector<double> fit_t;
    std::vector<double> fit_log;
    double b_sup = b_.identity ? 1.0 : 0.0;
    Matrix bx(n, n), phi_proj(n, n);
    Vector ft(n);
    const std::function<void(double, const Vector&)> on_sample = [&](double t, const Vector& state) {
      const Eigen::Map<const Vector> xt(state.data(), n);
      const Eigen::Map<const Matrix> phi(state.data() + n, n, n);
      sys_.rhs(xt, ft);
      const double n2 = ft.squaredNorm();
      if (!(n2 > sys_.fmin_threshold * sys_.fmin_threshold))
        throw error(errc::equilibrium, "metric quadrature: trajectory reached an equilibrium");
      phi_proj = phi;
      phi_proj.noalias() -= ft * ((ft.transpose() * phi) / n2);
      const double norm_pphi = spectral_norm(phi_proj);
      if (norm_pphi > 0.0 && t > 0.0) {
        fit_t.push_back(t);
        fit_log.push_back(std::log(norm_pphi));
      }
      if (!b_.identity) {
        b_.eval_into(xt, bx);
        Eigen::SelfAdjointEigenSolver<Matrix> es(bx, Eigen::EigenvaluesOnly);
        if (!(es.eigenvalues().minCoeff() > 0.0))
          throw error(errc::config, "weight field B is not positive definite along the trajectory");
        b_sup = std::max(b_sup, es.eigenvalues().maxCoeff());
      }
    };

    double t_lo = 0.0;
    double t_hi = horizon;
    int doublings = 0;
    for (;;) {
      std::vector<double> stops(static_cast<std::size_t>(cfg_.samples_per_segment));
      for (int i = 0; i < cfg_.samples_per_segment; ++i)
        stops[static_cast<std::size_t>(i)] =
            t_lo + (t_hi - t_lo) * (i + 1) / static_cast<double>(cfg_.samples_per_segment);
      const auto stats =
          ode::integrate(rhs, y, t_lo, t_hi, cfg_.step, escape, &stops, &on_sample);
      if (stats.status != ode::outcome::success)
        throw error(errc::integration, std::string("metric quadrature failed (") +
                                           ode::outcome_name(stats.status) + ") at t=" +
                                           std::to_string(stats.t_reached));
      rec.est_error += stats.est_error;
      t_lo = t_hi;

      // exponential-decay fit of ||P Phi|| past the warm-up prefix
      std::vector<double> ft_fit, fl_fit;
      for (std::size_t i = 0; i < fit_t.size(); ++i) {
        if (fit_t[i] >= cfg_.fit_warmup_frac * t_hi) {
          ft_fit.push_back(fit_t[i]);
          fl_fit.push_back(fit_log[i]);
        }
      }
      bool decayed = false;
      if (ft_fit.size() >= 4) {
        const LineFit line = fit_line(ft_fit, fl_fit);
        rec.decay.rate = -line.slope;
        rec.decay.prefactor = std::exp(line.intercept);
        rec.decay.r2 = line.r2;
        decayed = rec.decay.rate > 0.0;
      }
      const Eigen::Map<const Matrix> u(y.data() + n + n * n, n, n);
      const double m1_norm = std::max(u.norm(), std::numeric_limits<double>::min());
      if (decayed) {
        rec.tail_bound = tail_bound(rec.decay, t_hi, b_sup);
        if (rec.tail_bound <= cfg_.rel_tail_tol * m1_norm) break;  // converged
      }
      if (!allow_extension) {
        if (!decayed) rec.tail_bound = std::numeric_limits<double>::infinity();
        break;
      }
      if (doublings >= cfg_.max_doublings)
        throw error(errc::no_decay,
                    decayed ? "metric quadrature: tail decays too slowly to reach the requested "
                              "tolerance within the horizon budget"
                            : "metric quadrature: projected variational solutions do not decay; "
                              "the point does not appear to lie in the basin");
      t_hi *= 2.0;
      ++doublings;
    }

    rec.t_max = t_hi;
    rec.doublings = doublings;
    rec.b_sup = b_sup;
    rec.m1 = mirror_upper(symmetric_part(Eigen::Map<const Matrix>(y.data() + n + n * n, n, n)));
    const Vector f0 = eval_rhs(sys_, x);
    rec.m = rec.m1 + mirror_upper(c0_ * (f0 * f0.transpose()));
    rec.m = mirror_upper(rec.m);
    const double f2 = f0.squaredNorm();
    rec.normalization_gap = std::abs(f0.dot(rec.m * f0) / (f2 * f2) - c0_);
    rec.kernel_residual = (rec.m1 * f0).norm() / std::sqrt(f2);
    return rec;
  }

  SystemDef sys_;
  BField b_;
  double c0_;
  Vector x0_;
  QuadratureConfig cfg_;
  mutable std::map<std::vector<long long>, MetricEvalRecord> cache_;
  mutable std::mutex cache_mutex_;
};

/// Build the contraction metric for a system. Eagerly evaluates at the
/// anchor x0 so obvious configuration problems (equilibrium anchor, non-SPD
/// weight, non-decaying point) surface immediately.
[[nodiscard]] inline std::shared_ptr<IntegralMetric> build_metric(const SystemDef& sys,
                                                                  const BField& b, double c0,
                                                                  const Vector& x0,
                                                                  const QuadratureConfig& cfg = {}) {
  auto metric = std::make_shared<IntegralMetric>(sys, b, c0, x0, cfg);
  const MetricEvalRecord& rec = metric->evaluate(x0);
  log_info("build_metric: anchor declared error %.3g at horizon %.6g (%d doubling(s))",
           rec.declared_error(), rec.t_max, rec.doublings);
  return metric;
}

/// Adapt an IntegralMetric to the generic MetricField interface (shares
/// ownership so the field stays valid on its own).
[[nodiscard]] inline MetricField integral_metric_field(std::shared_ptr<const IntegralMetric> metric) {
  if (!metric) throw error(errc::config, "integral_metric_field: null metric");
  MetricField m;
  m.n = metric->system().n;
  m.kind = "integral";
  m.eval = [metric](const Vector& x) { return metric->evaluate(x).m; };
  m.orbital = [metric](const Vector& x) { return metric->orbital(x); };
  return m;
}

}  // namespace cmtk
