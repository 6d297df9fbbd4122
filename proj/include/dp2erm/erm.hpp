#pragma once

#include "dp2erm/core.hpp"
#include "dp2erm/optim.hpp"
#include "dp2erm/privacy.hpp"
#include "dp2erm/rng.hpp"
#include "dp2erm/stability.hpp"
#include "dp2erm/weights.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace dp2erm::erm {

/// Weighted ITR regression over the L1 ball ||theta||_1 <= lambda1 with the
/// squared loss (2ya - x^T theta)^2 and an optional ridge R(theta).
struct ErmSpec {
  ProblemConstants constants;
  double ridge = 0.0;  // R(theta) = (ridge / 2) ||theta||^2
  optim::PgdOptions solver;
};

struct ErmSolution {
  Vector theta;
  double objective_nonprivate = 0.0;
  optim::SolveDiagnostics diagnostics;
  std::optional<privacy::Calibration> calibration_used;
  Vector noise;  // the drawn b; empty for the non-private solve
};

/// L(theta) = theta^T H theta - 2 g^T theta + c + (ridge/2) ||theta||^2 with
/// H = n^-1 sum w x x^T, g = n^-1 sum w 2 y a x, c = n^-1 sum w 4 y^2.
/// Outcomes are clipped to [-M_out, M_out] so the gradient bound holds.
class WeightedRisk {
 public:
  WeightedRisk(const Dataset& data, const WeightVector& w, const ErmSpec& spec)
      : ridge_(spec.ridge) {
    if (w.size() != data.size())
      throw std::invalid_argument("weights and dataset differ in length");
    if (!(spec.ridge >= 0.0)) throw std::invalid_argument("ridge must be >= 0");
    const Index n = data.size();
    const Index p = data.dim();
    const double bound = spec.constants.M_out;
    H_ = Matrix::Zero(p, p);
    g_ = Vector::Zero(p);
    c_ = 0.0;
    Matrix xw(n, p);
    for (Index i = 0; i < n; ++i) {
      double y = data.y(i);
      if (std::abs(y) > bound) {
        y = std::clamp(y, -bound, bound);
        ++clips_;
      }
      xw.row(i) = w[i] * data.x(i);
      g_ += (w[i] * 2.0 * y * data.a(i)) * data.x(i).transpose();
      c_ += w[i] * 4.0 * y * y;
    }
    H_ = xw.transpose() * data.covariates();
    H_ = 0.5 * (H_ + H_.transpose());
    const double nd = static_cast<double>(n);
    H_ /= nd;
    g_ /= nd;
    c_ /= nd;
    lambda_max_H_ = p ? optim::max_eigenvalue(H_) : 0.0;
  }

  double value(const Vector& theta) const {
    return theta.dot(H_ * theta) - 2.0 * g_.dot(theta) + c_ +
           0.5 * ridge_ * theta.squaredNorm();
  }

  Vector gradient(const Vector& theta) const {
    return 2.0 * (H_ * theta - g_) + ridge_ * theta;
  }

  double smoothness() const { return 2.0 * lambda_max_H_ + ridge_; }
  long outcome_clips() const { return clips_; }
  Index dim() const { return g_.size(); }

 private:
  Matrix H_;
  Vector g_;
  double c_ = 0.0;
  double ridge_ = 0.0;
  double lambda_max_H_ = 0.0;
  long clips_ = 0;
};

/// Minimises L(theta) + (gamma/2) ||theta||^2 + <b, theta>/n over the L1 ball.
/// Exposed so that tests can force gamma and b.
inline ErmSolution solve_perturbed(const Dataset& data, const WeightVector& w,
                                   const ErmSpec& spec, double gamma,
                                   const Vector& b) {
  if (!(gamma >= 0.0)) throw std::invalid_argument("gamma must be >= 0");
  const Index p = data.dim();
  if (b.size() != p) throw std::invalid_argument("noise vector has wrong dimension");
  const WeightedRisk risk(data, w, spec);
  const double nd = static_cast<double>(data.size());
  const double radius = spec.constants.lambda1;

  optim::ConvexProblem problem;
  problem.dimension = p;
  problem.objective = [&](const Vector& theta, Vector& grad) {
    grad = risk.gradient(theta) + gamma * theta + b / nd;
    return risk.value(theta) + 0.5 * gamma * theta.squaredNorm() + b.dot(theta) / nd;
  };
  problem.projection = [radius](const Vector& v) {
    return optim::project_l1_ball(v, radius);
  };
  problem.smoothness = std::max(risk.smoothness() + gamma, 1e-12);

  auto result =
      optim::pgd_or_throw(problem, Vector::Zero(p), spec.solver, "ERM stage two");
  ErmSolution out;
  out.theta = std::move(result.x);
  out.diagnostics = result.diagnostics;
  out.objective_nonprivate = risk.value(out.theta);
  return out;
}

inline ErmSolution solve_nonprivate(const Dataset& data, const WeightVector& w,
                                    const ErmSpec& spec) {
  return solve_perturbed(data, w, spec, 0.0, Vector::Zero(data.dim()));
}

inline void check_calibration(const privacy::Calibration& c, const Dataset& data,
                              const ErmSpec& spec) {
  auto close = [](double a, double b) {
    return std::abs(a - b) <= 1e-12 * std::max({1.0, std::abs(a), std::abs(b)});
  };
  if (c.n != data.size() || c.p != data.dim())
    throw std::invalid_argument("calibration was computed for a different n or p");
  if (!close(c.zeta, spec.constants.zeta) || !close(c.lam_tr, spec.constants.lam_tr))
    throw std::invalid_argument(
        "calibration constants do not match the ERM specification");
}

inline ErmSolution solve_private(const Dataset& data, const WeightVector& w,
                                 const ErmSpec& spec,
                                 const privacy::Calibration& calibration, Rng& rng) {
  check_calibration(calibration, data, spec);
  const Vector b = privacy::sample_noise(calibration, rng);
  ErmSolution out = solve_perturbed(data, w, spec, calibration.gamma_ridge, b);
  out.calibration_used = calibration;
  out.noise = b;
  return out;
}

// ---------------------------------------------------------------------------
// Two-stage pipeline

using SchemeConfig =
    std::variant<weights::IpwRandomizedConfig, weights::IpwKnownConfig,
                 weights::IpwEstimatedConfig, weights::MmdConfig,
                 weights::EbwConfig>;

struct StageOne {
  weights::WeightSolution solution;
  stability::SchemeParams bound_params;
};

/// Solves the Stage-1 weights and collects the constants of the matching
/// stability bound for this dataset.
inline StageOne solve_stage_one(const Dataset& data, const SchemeConfig& scheme,
                                const ProblemConstants& constants) {
  struct {
    const Dataset& data;
    const ProblemConstants& constants;

    StageOne operator()(const weights::IpwRandomizedConfig& c) const {
      return {weights::ipw_randomized(data, c.p0, c.p1),
              stability::IpwRandomizedParams{c.p0, c.p1}};
    }
    StageOne operator()(const weights::IpwKnownConfig& c) const {
      return {weights::ipw_known_beta(data, c.lambda_star),
              stability::IpwKnownParams{static_cast<double>(data.dim()),
                                        constants.M, c.lambda_star.norm()}};
    }
    StageOne operator()(const weights::IpwEstimatedConfig& c) const {
      const double lmin =
          optim::min_eigenvalue(weights::second_moment(data.covariates()));
      return {weights::ipw_estimated(data, c),
              stability::IpwEstimatedParams{constants.M, c.R, c.lambda_ipw,
                                            std::max(lmin, 0.0)}};
    }
    StageOne operator()(const weights::MmdConfig& c) const {
      auto sol = weights::mmd_weights(data, c);
      const double C = c.kernel ? c.kernel->C : 1.0;
      return {sol, stability::MmdParams{sol.cap, C, c.lambda_mmd}};
    }
    StageOne operator()(const weights::EbwConfig& c) const {
      const weights::EbwProblem ebw(data, c);
      const double lmin = std::max(optim::min_eigenvalue(ebw.sigma_b()), 0.0);
      // The bound is stated for an L2 ball; an L-inf ball of radius R sits
      // inside the L2 ball of radius R sqrt(dim).
      const double radius =
          c.norm == weights::DualNorm::l2
              ? c.R
              : c.R * std::sqrt(static_cast<double>(ebw.dual_dim()));
      return {weights::ebw_weights(data, c),
              stability::EbwParams{radius, ebw.r_q(), lmin, c.lambda_ebw}};
    }
  } visitor{data, constants};
  return std::visit(visitor, scheme);
}

struct PipelineOptions {
  std::optional<double> w_max;      // default: stability::default_w_max
  bool universal_budget = false;    // composition baseline
};

struct PipelineResult {
  ErmSolution solution;
  weights::WeightSolution weights;
  privacy::Calibration calibration;
  stability::StabilityBudget budget;
};

/// Stage 1 (non-private weights), budget, calibration, Stage 2 (private ERM).
inline PipelineResult run_dp2erm(const Dataset& data, const SchemeConfig& scheme,
                                 const ErmSpec& spec,
                                 const privacy::PrivacyParams& privacy_params,
                                 Rng& rng, const PipelineOptions& options = {}) {
  for (Index i = 0; i < data.size(); ++i)
    if (data.x(i).norm() > spec.constants.M * (1.0 + kNormSlack))
      throw std::invalid_argument("covariate norm bound exceeded at row " +
                                  std::to_string(i));
  StageOne stage1 = solve_stage_one(data, scheme, spec.constants);
  const double w_max =
      options.w_max.value_or(stability::default_w_max(stage1.solution.weights));
  PipelineResult out;
  out.budget = options.universal_budget
                   ? stability::budget_universal(data.size())
                   : stability::budget_from_scheme(stage1.bound_params,
                                                   data.size(), w_max);
  out.calibration = privacy::calibrate(privacy_params, spec.constants, out.budget,
                                       data.size(), data.dim());
  out.solution =
      solve_private(data, stage1.solution.weights, spec, out.calibration, rng);
  out.weights = std::move(stage1.solution);
  return out;
}

/// Same as run_dp2erm with the universal worst-case budget.
inline PipelineResult composition_baseline(const Dataset& data,
                                           const SchemeConfig& scheme,
                                           const ErmSpec& spec,
                                           const privacy::PrivacyParams& privacy_params,
                                           Rng& rng) {
  PipelineOptions options;
  options.universal_budget = true;
  return run_dp2erm(data, scheme, spec, privacy_params, rng, options);
}

// ---------------------------------------------------------------------------
// Utility tail check

struct UtilityPoint {
  double t = 0.0;
  double empirical = 0.0;   // fraction of draws with gap >= t
  double standard_error = 0.0;
  bool gamma_applicable = false;
  double gamma_bound = 1.0;
  bool gaussian_applicable = false;
  double gaussian_bound_c1 = 1.0;  // absolute constant unknown; evaluated at c = 1
};

struct UtilityReport {
  double opt_value = 0.0;
  double theta_opt_norm_sq = 0.0;
  std::vector<double> gaps;
  std::vector<UtilityPoint> points;
};

/// Analytic tail bounds for the suboptimality gap at level t.
inline UtilityPoint utility_bounds(double t, double gamma, double theta_opt_norm_sq,
                                   const privacy::Calibration& c) {
  UtilityPoint pt;
  pt.t = t;
  const double nd = static_cast<double>(c.n);
  const double floor_t = 0.5 * gamma * theta_opt_norm_sq;
  if (!(gamma > 0.0) || t < floor_t) return pt;
  const double D_t =
      0.5 * std::sqrt(std::max(2.0 * gamma * t - gamma * gamma * theta_opt_norm_sq, 0.0));
  if (c.mechanism == privacy::Mechanism::gamma) {
    pt.gamma_applicable = true;
    const double beta = c.noise_scale > 0.0 ? 1.0 / c.noise_scale
                                            : std::numeric_limits<double>::infinity();
    pt.gamma_bound = std::min(1.0, std::exp(-D_t * beta * nd / 2.0));
  } else {
    const double sigma = c.noise_scale;
    const double shift = 2.0 * sigma * sigma / (gamma * nd);
    if (t >= shift + floor_t && sigma > 0.0) {
      pt.gaussian_applicable = true;
      const double ratio = (t - shift - floor_t) / (std::sqrt(nd) * D_t + sigma);
      const double rate =
          gamma * gamma * nd * nd * nd / (16.0 * std::pow(sigma, 4)) * ratio * ratio;
      pt.gaussian_bound_c1 = std::min(1.0, 2.0 * std::exp(-rate));
    }
  }
  return pt;
}

/// Monte-Carlo tail of L(theta_priv) - L(theta_opt) over `trials` noise draws
/// at a fixed calibration, with the analytic bounds at each t.
inline UtilityReport utility_gap_trial(const Dataset& data, const WeightVector& w,
                                       const ErmSpec& spec,
                                       const privacy::Calibration& calibration,
                                       int trials, const std::vector<double>& t_grid,
                                       Rng& rng) {
  if (trials < 100) throw std::invalid_argument("utility_gap_trial needs >= 100 trials");
  check_calibration(calibration, data, spec);
  const ErmSolution opt = solve_nonprivate(data, w, spec);
  UtilityReport report;
  report.opt_value = opt.objective_nonprivate;
  report.theta_opt_norm_sq = opt.theta.squaredNorm();
  report.gaps.reserve(static_cast<std::size_t>(trials));
  for (int k = 0; k < trials; ++k) {
    const ErmSolution priv = solve_private(data, w, spec, calibration, rng);
    report.gaps.push_back(std::max(priv.objective_nonprivate - opt.objective_nonprivate, 0.0));
  }
  for (double t : t_grid) {
    UtilityPoint pt =
        utility_bounds(t, calibration.gamma_ridge, report.theta_opt_norm_sq, calibration);
    const auto hits = std::count_if(report.gaps.begin(), report.gaps.end(),
                                    [t](double g) { return g >= t; });
    pt.empirical = static_cast<double>(hits) / trials;
    pt.standard_error = std::sqrt(pt.empirical * (1.0 - pt.empirical) / trials);
    report.points.push_back(pt);
  }
  return report;
}

}  // namespace dp2erm::erm
