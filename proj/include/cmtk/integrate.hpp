#pragma once

// Embedded adaptive Runge-Kutta 5(4) integrator (Dormand-Prince pair) with a
// proportional-integral step-size controller.
//
// Error control is per unit step: a step of size h is accepted when the
// embedded local error estimate satisfies
//
//   ||e|| <= tol * (1 + ||y||) * |h| / T,
//
// where T is the total requested span. Summing over accepted steps, the
// accumulated estimate reported in `est_error` is bounded by
// tol * (1 + sup ||y||), i.e. the requested tolerance materialized for the
// trajectory at hand.

#include "cmtk/core.hpp"

#include <cmath>
#include <deque>
#include <limits>
#include <utility>

namespace cmtk::ode {

enum class outcome {
  success,
  step_underflow,  ///< required step below representable resolution (stiffness)
  escape,          ///< state left the configured bounding region
  max_steps,       ///< step budget exhausted
};

[[nodiscard]] inline const char* outcome_name(outcome o) {
  switch (o) {
    case outcome::success: return "success";
    case outcome::step_underflow: return "step-underflow";
    case outcome::escape: return "escape";
    case outcome::max_steps: return "max-steps";
  }
  return "unknown";
}

struct StepControl {
  double tol = 1e-10;        ///< accuracy target (absolute + relative, see header note)
  double h_init = 0.0;       ///< initial step, 0 = automatic
  long max_steps = 2000000;  ///< accepted + rejected step budget
  bool record_trail = false; ///< keep recent states for post-mortem on failure
};

struct IntegrationStats {
  outcome status = outcome::success;
  double t_reached = 0.0;
  double est_error = 0.0;  ///< accumulated local error estimates
  long steps_accepted = 0;
  long steps_rejected = 0;
  /// Most recent accepted (t, y) pairs; populated on failure so callers can
  /// inspect the partial trajectory.
  std::vector<std::pair<double, Vector>> trail;
};

namespace detail {

// Dormand-Prince RK5(4) tableau.
inline constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
inline constexpr double a21 = 1.0 / 5;
inline constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
inline constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
inline constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                        a54 = -212.0 / 729;
inline constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                        a64 = 49.0 / 176, a65 = -5103.0 / 18656;
inline constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                        b5 = -2187.0 / 6784, b6 = 11.0 / 84;
// Difference between the 5th and the embedded 4th order weights.
inline constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                        e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

}  // namespace detail

/// Workhorse driver. `rhs(y, dy)` fills dy with the vector field at y;
/// `escaped(y)` may flag the state as out of bounds; `stops` (optional,
/// ascending, within the span) are times that must be hit exactly, with
/// `on_stop(t, y)` invoked at each. Integrates y in place from t0 to t1
/// (either direction).
template <class Rhs, class Escape>
IntegrationStats integrate(Rhs&& rhs, Vector& y, double t0, double t1, const StepControl& ctrl,
                           Escape&& escaped, const std::vector<double>* stops = nullptr,
                           const std::function<void(double, const Vector&)>* on_stop = nullptr) {
  IntegrationStats stats;
  stats.t_reached = t0;
  const double span = t1 - t0;
  const int n = static_cast<int>(y.size());
  std::size_t next_stop = 0;
  auto fire_stops_at = [&](double t) {
    if (stops == nullptr) return;
    while (next_stop < stops->size() && std::abs((*stops)[next_stop] - t) <= 1e-13 * std::max(1.0, std::abs(t))) {
      if (on_stop != nullptr) (*on_stop)(t, y);
      ++next_stop;
    }
  };
  fire_stops_at(t0);
  if (span == 0.0 || std::abs(span) <= 1e-15 * std::max(1.0, std::abs(t0))) return stats;
  const double dir = span > 0.0 ? 1.0 : -1.0;
  const double total = std::abs(span);

  Vector k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n);
  Vector ytmp(n), ynew(n), errv(n);

  rhs(y, k1);
  double h = ctrl.h_init != 0.0 ? std::abs(ctrl.h_init) : std::min(total, 1e-4 * total + 1e-8);
  h = std::min(h, total);

  double t = t0;
  double err_prev_ratio = 1.0;
  constexpr double safety = 0.9, fac_min = 0.2, fac_max = 6.0;
  constexpr double k_order = 4.0;  // per-unit-step control drops the effective order by one
  std::deque<std::pair<double, Vector>> trail;

  while (dir * (t1 - t) > 1e-14 * std::max(1.0, std::abs(t))) {
    if (stats.steps_accepted + stats.steps_rejected >= ctrl.max_steps) {
      stats.status = outcome::max_steps;
      break;
    }
    double h_step = std::min(h, std::abs(t1 - t));
    // land exactly on the next requested sample time
    if (stops != nullptr && next_stop < stops->size()) {
      const double to_stop = std::abs((*stops)[next_stop] - t);
      if (to_stop > 1e-14 * std::max(1.0, std::abs(t))) h_step = std::min(h_step, to_stop);
    }
    if (h_step < 1e-14 * std::max(1.0, std::abs(t))) {
      stats.status = outcome::step_underflow;
      break;
    }
    const double hs = dir * h_step;

    ytmp = y + hs * (detail::a21 * k1);
    rhs(ytmp, k2);
    ytmp = y + hs * (detail::a31 * k1 + detail::a32 * k2);
    rhs(ytmp, k3);
    ytmp = y + hs * (detail::a41 * k1 + detail::a42 * k2 + detail::a43 * k3);
    rhs(ytmp, k4);
    ytmp = y + hs * (detail::a51 * k1 + detail::a52 * k2 + detail::a53 * k3 + detail::a54 * k4);
    rhs(ytmp, k5);
    ytmp = y + hs * (detail::a61 * k1 + detail::a62 * k2 + detail::a63 * k3 + detail::a64 * k4 +
                     detail::a65 * k5);
    rhs(ytmp, k6);
    ynew = y + hs * (detail::b1 * k1 + detail::b3 * k3 + detail::b4 * k4 + detail::b5 * k5 +
                     detail::b6 * k6);
    rhs(ynew, k7);  // FSAL: becomes k1 of the next step
    errv = hs * (detail::e1 * k1 + detail::e3 * k3 + detail::e4 * k4 + detail::e5 * k5 +
                 detail::e6 * k6 + detail::e7 * k7);

    const double err = errv.norm();
    const double threshold = ctrl.tol * (1.0 + y.norm()) * (h_step / total);
    const double ratio = std::max(err / std::max(threshold, 1e-300), 1e-10);

    if (ratio <= 1.0) {
      t += hs;
      y.swap(ynew);
      k1.swap(k7);
      stats.est_error += err;
      ++stats.steps_accepted;
      stats.t_reached = t;
      fire_stops_at(t);
      if (escaped(y)) {
        stats.status = outcome::escape;
        break;
      }
      if (ctrl.record_trail) {
        trail.emplace_back(t, y);
        if (trail.size() > 32) trail.pop_front();
      }
      const double fac = safety * std::pow(ratio, -0.7 / k_order) * std::pow(err_prev_ratio, 0.4 / k_order);
      h = h_step * std::min(fac_max, std::max(fac_min, fac));
      err_prev_ratio = std::max(ratio, 1e-4);
    } else {
      ++stats.steps_rejected;
      const double fac = std::min(0.9, std::max(0.1, safety * std::pow(ratio, -1.0 / k_order)));
      h = h_step * fac;
    }
  }

  if (stats.status != outcome::success)
    stats.trail.assign(trail.begin(), trail.end());
  return stats;
}

}  // namespace cmtk::ode
