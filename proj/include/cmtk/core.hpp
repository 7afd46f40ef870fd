#pragma once

// Shared aliases, error taxonomy, logging and small utilities used by the
// whole toolkit.

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace cmtk {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr const char* version_string = "0.1.0";

/// Failure categories. The CLI maps these onto process exit codes; library
/// users can switch on `code()` to react programmatically.
enum class errc {
  config,               ///< invalid input, file, flag or parameter
  no_orbit,             ///< orbit search did not converge
  equilibrium,          ///< point is (numerically) an equilibrium of f
  integration,          ///< ODE integration failed (stiffness, escape, budget)
  no_decay,             ///< projected variational solutions do not decay
  metric_not_positive,  ///< candidate metric fails positive definiteness
  perturbation,         ///< perturbation too large for the synchronized pair
  hypothesis,           ///< integral-inequality hypothesis violated by data
  certification,        ///< a verification verdict failed
};

/// Exception carrying an `errc` besides the human-readable message.
class error : public std::runtime_error {
 public:
  error(errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  [[nodiscard]] errc code() const noexcept { return code_; }

 private:
  errc code_;
};

[[nodiscard]] inline const char* errc_name(errc c) {
  switch (c) {
    case errc::config: return "config";
    case errc::no_orbit: return "no-orbit";
    case errc::equilibrium: return "equilibrium";
    case errc::integration: return "integration";
    case errc::no_decay: return "no-decay";
    case errc::metric_not_positive: return "metric-not-positive";
    case errc::perturbation: return "perturbation";
    case errc::hypothesis: return "hypothesis";
    case errc::certification: return "certification";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Logging. Controlled by the CMTK_LOG environment variable:
//   unset/"0"/"silent" -> silent, "1"/"info" -> info, "2"/"debug" -> debug.
// All output goes to stderr so reports on stdout stay clean.
// ---------------------------------------------------------------------------

enum class log_level : int { silent = 0, info = 1, debug = 2 };

inline log_level log_threshold() {
  static const log_level cached = [] {
    const char* env = std::getenv("CMTK_LOG");
    if (env == nullptr) return log_level::silent;
    const std::string v(env);
    if (v == "2" || v == "debug") return log_level::debug;
    if (v == "1" || v == "info") return log_level::info;
    return log_level::silent;
  }();
  return cached;
}

inline void vlog(log_level lvl, const char* fmt, std::va_list args) {
  if (static_cast<int>(lvl) > static_cast<int>(log_threshold())) return;
  std::fprintf(stderr, "[cmtk] ");
  std::vfprintf(stderr, fmt, args);
  std::fprintf(stderr, "\n");
}

inline void log_info(const char* fmt, ...) {
  std::va_list args;
  va_start(args, fmt);
  vlog(log_level::info, fmt, args);
  va_end(args);
}

inline void log_debug(const char* fmt, ...) {
  std::va_list args;
  va_start(args, fmt);
  vlog(log_level::debug, fmt, args);
  va_end(args);
}

// ---------------------------------------------------------------------------
// Small numeric helpers
// ---------------------------------------------------------------------------

/// (A + A^T)/2 without aliasing surprises.
[[nodiscard]] inline Matrix symmetric_part(const Matrix& a) { return 0.5 * (a + a.transpose()); }

/// Copy the upper triangle onto the lower one so the result is symmetric to
/// the last bit (used when a matrix is symmetric analytically and we want the
/// stored representation to honor that exactly).
[[nodiscard]] inline Matrix mirror_upper(const Matrix& a) {
  Matrix out = a;
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    for (Eigen::Index j = 0; j < i; ++j) out(i, j) = out(j, i);
  return out;
}

/// Departure from symmetry in Frobenius norm.
[[nodiscard]] inline double asymmetry_norm(const Matrix& a) {
  return 0.5 * (a - a.transpose()).norm();
}

/// Spectral norm (largest singular value) of a small dense matrix.
[[nodiscard]] inline double spectral_norm(const Matrix& a) {
  if (a.rows() == 0 || a.cols() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(Matrix(a.transpose() * a), Eigen::EigenvaluesOnly);
  const double top = es.eigenvalues().maxCoeff();
  return top > 0.0 ? std::sqrt(top) : 0.0;
}

/// Least-squares straight line y ≈ intercept + slope·x through the samples.
struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;  ///< coefficient of determination of the fit
};

[[nodiscard]] inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw error(errc::config, "fit_line: need at least two samples of equal length");
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  const double denom = n * sxx - sx * sx;
  if (denom == 0.0) throw error(errc::config, "fit_line: degenerate abscissae");
  LineFit f;
  f.slope = (n * sxy - sx * sy) / denom;
  f.intercept = (sy - f.slope * sx) / n;
  double ss_res = 0, ss_tot = 0;
  const double mean_y = sy / n;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double fit = f.intercept + f.slope * x[i];
    ss_res += (y[i] - fit) * (y[i] - fit);
    ss_tot += (y[i] - mean_y) * (y[i] - mean_y);
  }
  f.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
  return f;
}

// ---------------------------------------------------------------------------
// Bounded worker pool: run fn(i) for i in [0, count) on up to `jobs` threads.
// Results must be written by index into pre-sized storage by the caller so the
// output order is deterministic regardless of scheduling.
// ---------------------------------------------------------------------------

inline void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn) {
  if (count == 0) return;
  const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(count)));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr first_error;
  std::mutex err_mutex;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mutex);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace cmtk
