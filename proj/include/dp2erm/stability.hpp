#pragma once

#include "dp2erm/core.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <variant>

namespace dp2erm::stability {

struct StabilityBudget {
  double w1_bar = 0.0;
  double w2_bar = 0.0;
  std::string scheme;
  std::string provenance;
};

struct WeightPerturbation {
  double l1 = 0.0;
  double l2 = 0.0;
  Index l0 = 0;
  double max_min = 0.0;
  double max_prod = 0.0;
};

struct EmpiricalW1W2 {
  double w1 = 0.0;
  double w2 = 0.0;
  WeightPerturbation perturbation;
};

inline constexpr double kL0Tolerance = 1e-10;

inline EmpiricalW1W2 empirical_w1_w2(const WeightVector& w,
                                     const WeightVector& w_prime) {
  if (w.size() != w_prime.size())
    throw std::invalid_argument("weight vectors have different lengths");
  WeightPerturbation d;
  double sq = 0.0;
  for (Index i = 0; i < w.size(); ++i) {
    const double diff = std::abs(w[i] - w_prime[i]);
    d.l1 += diff;
    sq += diff * diff;
    if (diff > kL0Tolerance) ++d.l0;
    d.max_min = std::max(d.max_min, std::min(w[i], w_prime[i]));
    d.max_prod = std::max(d.max_prod, w[i] * w_prime[i]);
  }
  d.l2 = std::sqrt(sq);
  EmpiricalW1W2 out;
  out.perturbation = d;
  out.w1 = d.l1 + d.max_min;
  out.w2 = std::sqrt(sq + 2.0 * d.max_prod) *
           std::sqrt(1.0 + static_cast<double>(d.l0));
  return out;
}

// ---------------------------------------------------------------------------
// Closed-form L2 perturbation bounds ||w - w'||_2 per weighting scheme.

inline double bound_ipw_randomized(Index n, double p0, double p1) {
  if (!(p0 > 0.0 && p0 < 1.0 && p1 > 0.0 && p1 < 1.0))
    throw std::invalid_argument("propensities must lie in (0, 1)");
  if (n < 1) throw std::invalid_argument("n must be >= 1");
  const double ratio = std::max(p0, p1) / std::min(p0, p1);
  return 2.0 / static_cast<double>(n) * ratio * ratio;
}

/// Bound that holds for the sum-to-n normalisation: the changed record's own
/// weight lies in [1/r, r] before and after, and every other weight moves by
/// at most r (r - 1) / n, where r = max(p0, p1) / min(p0, p1).
inline double bound_ipw_randomized_valid(Index n, double p0, double p1) {
  if (!(p0 > 0.0 && p0 < 1.0 && p1 > 0.0 && p1 < 1.0))
    throw std::invalid_argument("propensities must lie in (0, 1)");
  if (n < 1) throw std::invalid_argument("n must be >= 1");
  const double r = std::max(p0, p1) / std::min(p0, p1);
  return (r - 1.0 / r) + r * (r - 1.0) / std::sqrt(static_cast<double>(n));
}

inline double bound_ipw_known(double p, double M, double R) {
  if (!(p > 0.0) || !(M > 0.0) || !(R >= 0.0))
    throw std::invalid_argument("bound_ipw_known needs p, M > 0 and R >= 0");
  return std::sqrt(5.0 * p) * std::exp(M * R) * M * M * R;
}

inline double bound_ipw_estimated(double M, double R, double lambda_ipw,
                                  double lambda_min_sigma) {
  const double denom = lambda_ipw + lambda_min_sigma;
  if (!(denom > 0.0))
    throw std::invalid_argument(
        "bound_ipw_estimated: lambda_IPW + lambda_min must be > 0");
  return 8.0 * M * M * R / denom * (1.0 + std::exp(M * R)) *
         std::exp(M * R / 2.0);
}

inline double bound_mmd(double R, double C, Index n, double lambda_mmd) {
  if (!(lambda_mmd > 0.0))
    throw std::invalid_argument("bound_mmd: lambda_MMD must be > 0");
  if (n < 1) throw std::invalid_argument("n must be >= 1");
  return (12.0 * R + 8.0) * C / (static_cast<double>(n) * lambda_mmd);
}

inline double bound_ebw(Index n, double R, double r_q, double lambda_min_sigma_b,
                        double lambda_ebw) {
  if (!(r_q >= 1.0)) throw std::invalid_argument("bound_ebw: r_q must be >= 1");
  if (n < 1) throw std::invalid_argument("n must be >= 1");
  const double denom = r_q * std::exp(-2.0 * R) * lambda_min_sigma_b + lambda_ebw;
  if (!(denom > 0.0))
    throw std::invalid_argument("bound_ebw: denominator must be > 0");
  const double numer =
      2.0 * (3.0 * std::exp(R / 2.0) + r_q * std::exp(2.5 * R)) /
      std::sqrt(static_cast<double>(n));
  return numer / denom;
}

// ---------------------------------------------------------------------------
// Budgets

inline StabilityBudget budget_universal(Index n) {
  if (n < 1) throw std::invalid_argument("n must be >= 1");
  const double nd = static_cast<double>(n);
  return {3.0 * nd, std::sqrt(6.0) * std::pow(nd + 1.0, 1.5), "universal",
          "universal worst-case bound"};
}

/// Weights that do not depend on the data at all: w' = w.
inline StabilityBudget budget_data_independent(double w_max) {
  if (!(w_max > 0.0)) throw std::invalid_argument("w_max must be > 0");
  return {w_max, std::sqrt(2.0) * w_max, "data-independent",
          "data-independent weights"};
}

struct IpwRandomizedParams {
  double p0 = 0.5;
  double p1 = 0.5;
};
struct IpwKnownParams {
  double p = 1.0;
  double M = 1.0;
  double R = 1.0;
};
struct IpwEstimatedParams {
  double M = 1.0;
  double R = 1.0;
  double lambda_ipw = 0.0;
  double lambda_min_sigma = 0.0;
};
struct MmdParams {
  double R = 1.0;
  double C = 1.0;
  double lambda_mmd = 1.0;
};
struct EbwParams {
  double R = 1.0;
  double r_q = 1.0;
  double lambda_min_sigma_b = 0.0;
  double lambda_ebw = 0.0;
};

using SchemeParams = std::variant<IpwRandomizedParams, IpwKnownParams,
                                  IpwEstimatedParams, MmdParams, EbwParams>;

inline std::string scheme_name(const SchemeParams& params) {
  struct {
    std::string operator()(const IpwRandomizedParams&) const { return "ipw-randomized"; }
    std::string operator()(const IpwKnownParams&) const { return "ipw-known"; }
    std::string operator()(const IpwEstimatedParams&) const { return "ipw-estimated"; }
    std::string operator()(const MmdParams&) const { return "mmd"; }
    std::string operator()(const EbwParams&) const { return "ebw"; }
  } visitor;
  return std::visit(visitor, params);
}

/// The scheme's deterministic bound on ||w(D) - w(D')||_2.
inline double scheme_l2_bound(const SchemeParams& params, Index n) {
  struct {
    Index n;
    // The closed form of bound_ipw_randomized is violated whenever the changed
    // record switches arm, so budgets use the valid bound.
    double operator()(const IpwRandomizedParams& s) const {
      return bound_ipw_randomized_valid(n, s.p0, s.p1);
    }
    double operator()(const IpwKnownParams& s) const {
      return bound_ipw_known(s.p, s.M, s.R);
    }
    double operator()(const IpwEstimatedParams& s) const {
      return bound_ipw_estimated(s.M, s.R, s.lambda_ipw, s.lambda_min_sigma);
    }
    double operator()(const MmdParams& s) const {
      return bound_mmd(s.R, s.C, n, s.lambda_mmd);
    }
    double operator()(const EbwParams& s) const {
      return bound_ebw(n, s.R, s.r_q, s.lambda_min_sigma_b, s.lambda_ebw);
    }
  } visitor{n};
  return std::visit(visitor, params);
}

/// Composes an L2 bound B with a max-weight cap:
///   W1 <= sqrt(n) B + w_max,  W2 <= sqrt((B^2 + 2 w_max^2)(1 + n)),
/// then caps at the universal budget.
inline StabilityBudget budget_from_l2_bound(double B, double w_max, Index n,
                                            const std::string& scheme) {
  if (!(B >= 0.0) || !std::isfinite(B) || !(w_max > 0.0))
    throw std::invalid_argument("budget needs finite B >= 0 and w_max > 0");
  const double nd = static_cast<double>(n);
  const StabilityBudget universal = budget_universal(n);
  StabilityBudget out;
  out.scheme = scheme;
  out.w1_bar = std::sqrt(nd) * B + w_max;
  // With B = 0 no coordinate moves, so ||w - w'||_0 = 0.
  const double l0_term = B > 0.0 ? 1.0 + nd : 1.0;
  out.w2_bar = std::sqrt((B * B + 2.0 * w_max * w_max) * l0_term);
  bool capped = false;
  if (out.w1_bar > universal.w1_bar) {
    out.w1_bar = universal.w1_bar;
    capped = true;
  }
  if (out.w2_bar > universal.w2_bar) {
    out.w2_bar = universal.w2_bar;
    capped = true;
  }
  out.provenance = "scheme L2 bound B=" + std::to_string(B) +
                   " composed with w_max=" + std::to_string(w_max) +
                   (capped ? " (capped at universal)" : "");
  return out;
}

inline StabilityBudget budget_from_scheme(const SchemeParams& params, Index n,
                                          double w_max) {
  return budget_from_l2_bound(scheme_l2_bound(params, n), w_max, n,
                              scheme_name(params));
}

/// Default max-weight cap: twice the observed maximum, floored at 1.
inline double default_w_max(const WeightVector& w) {
  return std::max(1.0, 2.0 * w.max());
}

}  // namespace dp2erm::stability
