#pragma once

#include "dp2erm/core.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dp2erm::optim {

/// Evaluates f(x) and writes grad f(x) into the second argument.
using Objective = std::function<double(const Vector&, Vector&)>;
/// Euclidean projection onto the feasible set.
using Projection = std::function<Vector(const Vector&)>;

struct ConvexProblem {
  Index dimension = 0;
  Objective objective;
  Projection projection;
  std::optional<double> smoothness;  // Lipschitz constant of the gradient
};

struct SolveDiagnostics {
  long iterations = 0;
  double gradient_mapping_norm = std::numeric_limits<double>::infinity();
  double objective = std::numeric_limits<double>::quiet_NaN();
  bool converged = false;
  long backtracks = 0;
  long restarts = 0;
  double final_step_inverse = 0.0;  // L in effect at termination
};

class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& what, SolveDiagnostics diagnostics)
      : std::runtime_error(what), diagnostics_(diagnostics) {}
  const SolveDiagnostics& diagnostics() const { return diagnostics_; }

 private:
  SolveDiagnostics diagnostics_;
};

struct PgdOptions {
  double tol = 1e-8;
  long max_iter = 100000;
  // Nesterov extrapolation with function-value restart. Accepted iterates stay
  // monotone either way; plain steps are taken when false.
  bool accelerated = true;
  // Called with f(x_k) after every accepted iterate.
  std::function<void(double)> on_iterate;
};

struct PgdResult {
  Vector x;
  SolveDiagnostics diagnostics;
};

namespace detail {

inline void check_finite(double value, const Vector& grad,
                         const SolveDiagnostics& diag) {
  if (!std::isfinite(value) || !grad.allFinite())
    throw SolverError("non-finite objective or gradient at iteration " +
                          std::to_string(diag.iterations),
                      diag);
}

// Rounding slack in the sufficient-decrease test; without it the step size
// collapses once successive objective values agree to machine precision.
inline double decrease_slack(double f) {
  return 64.0 * std::numeric_limits<double>::epsilon() *
         std::max(1.0, std::abs(f));
}

}  // namespace detail

/// Projected gradient descent with step 1/L and backtracking (L doubles until
/// the quadratic upper bound holds at the candidate).
///
/// Stops when L * ||x - P(x - grad f(x) / L)|| <= tol at the returned point.
/// `start` must already be feasible. A non-finite objective or gradient throws
/// SolverError; hitting max_iter returns with converged = false.
inline PgdResult pgd(const ConvexProblem& problem, const Vector& start,
                     const PgdOptions& options = {}) {
  if (!(options.tol > 0.0)) throw std::invalid_argument("pgd: tol must be > 0");
  if (start.size() != problem.dimension)
    throw std::invalid_argument("pgd: start has wrong dimension");

  SolveDiagnostics diag;
  const bool fixed_smoothness = problem.smoothness.has_value();
  double L = fixed_smoothness ? *problem.smoothness : 1.0;
  if (!(L > 0.0) || !std::isfinite(L))
    throw std::invalid_argument("pgd: smoothness must be positive and finite");

  Vector x = start;
  Vector gx(x.size());
  double fx = problem.objective(x, gx);
  detail::check_finite(fx, gx, diag);

  Vector x_prev = x;
  Vector y = x;
  Vector gy = gx;
  double fy = fx;
  double momentum = 1.0;
  Vector z(x.size());
  Vector gz(x.size());

  auto gradient_mapping = [&](const Vector& point, const Vector& grad) {
    return L * (point - problem.projection(point - grad / L)).norm();
  };

  for (diag.iterations = 1; diag.iterations <= options.max_iter;
       ++diag.iterations) {
    if (!fixed_smoothness) L = std::max(L * 0.5, 1e-300);

    double fz = 0.0;
    for (;;) {
      z = problem.projection(y - gy / L);
      fz = problem.objective(z, gz);
      const Vector d = z - y;
      if (std::isfinite(fz) &&
          fz <= fy + gy.dot(d) + 0.5 * L * d.squaredNorm() +
                    detail::decrease_slack(fy))
        break;
      L *= 2.0;
      ++diag.backtracks;
      if (!std::isfinite(L) || L > 1e300)
        throw SolverError("pgd: backtracking failed to find a step", diag);
    }
    detail::check_finite(fz, gz, diag);

    if (options.accelerated && fz > fx && momentum > 1.0) {
      // Extrapolated step went uphill: restart from the last accepted iterate.
      ++diag.restarts;
      momentum = 1.0;
      y = x;
      fy = fx;
      gy = gx;
      continue;
    }

    x_prev = x;
    x = z;
    fx = fz;
    gx = gz;
    if (options.on_iterate) options.on_iterate(fx);

    const double gm = gradient_mapping(x, gx);
    if (gm <= options.tol) {
      diag.converged = true;
      diag.gradient_mapping_norm = gm;
      break;
    }

    if (options.accelerated) {
      const double next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * momentum * momentum));
      const double beta = (momentum - 1.0) / next;
      momentum = next;
      if (beta > 0.0) {
        y = x + beta * (x - x_prev);
        fy = problem.objective(y, gy);
        detail::check_finite(fy, gy, diag);
        continue;
      }
    }
    y = x;
    fy = fx;
    gy = gx;
  }
  if (diag.iterations > options.max_iter) diag.iterations = options.max_iter;
  if (!diag.converged) diag.gradient_mapping_norm = gradient_mapping(x, gx);
  diag.objective = fx;
  diag.final_step_inverse = L;
  return {std::move(x), diag};
}

/// Like pgd(), but non-convergence is an error.
inline PgdResult pgd_or_throw(const ConvexProblem& problem, const Vector& start,
                              const PgdOptions& options,
                              const std::string& context) {
  PgdResult result = pgd(problem, start, options);
  if (!result.diagnostics.converged)
    throw SolverError(context + ": solver did not converge after " +
                          std::to_string(result.diagnostics.iterations) +
                          " iterations (gradient-mapping norm " +
                          std::to_string(result.diagnostics.gradient_mapping_norm) +
                          ")",
                      result.diagnostics);
  return result;
}

// ---------------------------------------------------------------------------
// Projections

inline Vector project_l2_ball(const Vector& x, double radius) {
  if (!(radius > 0.0)) throw std::invalid_argument("radius must be > 0");
  const double norm = x.norm();
  if (norm <= radius) return x;
  return x * (radius / norm);
}

inline Vector project_linf_ball(const Vector& x, double radius) {
  if (!(radius > 0.0)) throw std::invalid_argument("radius must be > 0");
  return x.cwiseMax(-radius).cwiseMin(radius);
}

/// Euclidean projection onto {||v||_1 <= radius} by sort-and-threshold.
inline Vector project_l1_ball(const Vector& x, double radius) {
  if (!(radius > 0.0)) throw std::invalid_argument("radius must be > 0");
  const Vector mag = x.cwiseAbs();
  if (mag.sum() <= radius) return x;

  std::vector<double> sorted(mag.data(), mag.data() + mag.size());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double cumulative = 0.0;
  double threshold = 0.0;
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    cumulative += sorted[k];
    const double candidate = (cumulative - radius) / static_cast<double>(k + 1);
    if (sorted[k] > candidate) threshold = candidate;
  }
  Vector out(x.size());
  for (Index i = 0; i < x.size(); ++i)
    out[i] = std::copysign(std::max(mag[i] - threshold, 0.0), x[i]);
  return out;
}

/// Euclidean projection onto {v : sum(v) = total, 0 <= v_i <= cap}.
///
/// Bisection on the dual shift mu in [min(x) - cap, max(x)] solving
/// sum clip(x_i - mu, 0, cap) = total; the residual left after bisection is
/// spread over the coordinates strictly inside (0, cap).
inline Vector project_capped_simplex(const Vector& x, double total, double cap) {
  const double dim = static_cast<double>(x.size());
  if (!(total > 0.0) || !(cap > 0.0))
    throw std::invalid_argument("capped simplex needs total > 0 and cap > 0");
  if (total > cap * dim * (1.0 + 1e-12))
    throw std::invalid_argument("capped simplex infeasible: total " +
                                std::to_string(total) + " > cap * dim " +
                                std::to_string(cap * dim));

  auto clipped_sum = [&](double mu) {
    double s = 0.0;
    for (Index i = 0; i < x.size(); ++i) s += std::clamp(x[i] - mu, 0.0, cap);
    return s;
  };

  double lo = x.minCoeff() - cap;  // sum = cap * dim >= total
  double hi = x.maxCoeff();        // sum = 0 <= total
  const double tol = 1e-10 * total;
  double mu = 0.5 * (lo + hi);
  for (int step = 0; step < 200; ++step) {
    mu = 0.5 * (lo + hi);
    const double s = clipped_sum(mu);
    if (std::abs(s - total) <= tol * 1e-3) break;
    if (s > total)
      lo = mu;
    else
      hi = mu;
  }

  Vector out(x.size());
  for (Index i = 0; i < x.size(); ++i) out[i] = std::clamp(x[i] - mu, 0.0, cap);

  const double residual = total - out.sum();
  if (residual != 0.0) {
    Index free = 0;
    for (Index i = 0; i < out.size(); ++i) free += (out[i] > 0.0 && out[i] < cap);
    if (free > 0) {
      const double shift = residual / static_cast<double>(free);
      for (Index i = 0; i < out.size(); ++i)
        if (out[i] > 0.0 && out[i] < cap)
          out[i] = std::clamp(out[i] + shift, 0.0, cap);
    }
  }
  return out;
}

/// Central-difference gradient estimate of a scalar function.
template <typename F>
Vector finite_diff_gradient(F&& f, const Vector& x, double h = 1e-5) {
  if (!(h > 0.0)) throw std::invalid_argument("finite difference step must be > 0");
  Vector grad(x.size());
  Vector probe = x;
  for (Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

/// Overload for objectives in the (value, gradient) callback form.
inline Vector finite_diff_gradient(const Objective& objective, const Vector& x,
                                   double h = 1e-5) {
  Vector scratch(x.size());
  return finite_diff_gradient(
      [&](const Vector& v) { return objective(v, scratch); }, x, h);
}

// ---------------------------------------------------------------------------
// Small symmetric eigenvalue helpers (tridiagonal QL via Eigen).

inline double min_eigenvalue(const Matrix& symmetric) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(symmetric, Eigen::EigenvaluesOnly);
  return solver.eigenvalues().minCoeff();
}

inline double max_eigenvalue(const Matrix& symmetric) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(symmetric, Eigen::EigenvaluesOnly);
  return solver.eigenvalues().maxCoeff();
}

/// Power-iteration estimate of the largest eigenvalue of a PSD matrix, padded
/// upward slightly. Cheaper than a full decomposition for the n x n kernel
/// blocks; backtracking in pgd() absorbs any underestimate.
inline double max_eigenvalue_psd(const Matrix& psd, int iterations = 200) {
  if (psd.rows() == 0) return 0.0;
  Vector v = Vector::Ones(psd.rows()).normalized();
  double estimate = 0.0;
  for (int k = 0; k < iterations; ++k) {
    Vector w = psd * v;
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    const double next = v.dot(w);
    v = w / norm;
    if (k > 5 && std::abs(next - estimate) <= 1e-10 * std::abs(next)) {
      estimate = next;
      break;
    }
    estimate = next;
  }
  return estimate * 1.05;
}

}  // namespace dp2erm::optim
