#pragma once

#include "dp2erm/core.hpp"
#include "dp2erm/rng.hpp"
#include "dp2erm/stability.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace dp2erm::privacy {

enum class Mechanism { gamma, gaussian };

inline std::string to_string(Mechanism m) {
  return m == Mechanism::gamma ? "gamma" : "gaussian";
}

inline Mechanism parse_mechanism(const std::string& name) {
  if (name == "gamma") return Mechanism::gamma;
  if (name == "gaussian") return Mechanism::gaussian;
  throw std::invalid_argument("unknown mechanism '" + name +
                              "' (valid: gamma, gaussian)");
}

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// epsilon = +inf denotes the non-private sentinel.
struct PrivacyParams {
  double epsilon = 1.0;
  double delta = 0.0;
  Mechanism mechanism = Mechanism::gamma;

  bool is_private() const { return std::isfinite(epsilon); }

  void check() const {
    if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be > 0");
    if (mechanism == Mechanism::gamma && delta != 0.0)
      throw std::invalid_argument("gamma mechanism requires delta = 0");
    if (mechanism == Mechanism::gaussian && is_private() &&
        !(delta > 0.0 && delta < 1.0))
      throw std::invalid_argument("gaussian mechanism requires delta in (0, 1)");
  }
};

struct Calibration {
  Mechanism mechanism = Mechanism::gamma;
  double noise_scale = 0.0;  // 1/beta (gamma) or sigma (gaussian)
  double gamma_ridge = 0.0;
  // inputs
  double epsilon = kInfinity;
  double delta = 0.0;
  double zeta = 0.0;
  double lam_tr = 0.0;
  double w1_bar = 0.0;
  double w2_bar = 0.0;
  Index n = 0;
  Index p = 0;
  std::string budget_provenance;
};

/// L-tilde of the Gaussian calibration rule.
inline double gaussian_l_tilde(Index p, double delta) {
  const double log_inv = std::log(1.0 / delta);
  const double s = std::sqrt(static_cast<double>(p)) + std::sqrt(log_inv);
  return std::sqrt(s * s + log_inv);
}

/// Minimal (noise scale, ridge) meeting the privacy conditions with equality.
/// A non-private epsilon yields zero noise and zero ridge.
inline Calibration calibrate(const PrivacyParams& privacy,
                             const ProblemConstants& constants,
                             const stability::StabilityBudget& budget, Index n,
                             Index p) {
  privacy.check();
  // W2 only enters the ridge, so 0 is allowed (gamma_ridge = 0).
  if (!(budget.w1_bar > 0.0) || !(budget.w2_bar >= 0.0) ||
      !std::isfinite(budget.w1_bar) || !std::isfinite(budget.w2_bar))
    throw std::invalid_argument("stability budget must be finite with W1 > 0, W2 >= 0");
  if (n < 1 || p < 1) throw std::invalid_argument("n and p must be >= 1");

  Calibration c;
  c.mechanism = privacy.mechanism;
  c.epsilon = privacy.epsilon;
  c.delta = privacy.delta;
  c.zeta = constants.zeta;
  c.lam_tr = constants.lam_tr;
  c.w1_bar = budget.w1_bar;
  c.w2_bar = budget.w2_bar;
  c.n = n;
  c.p = p;
  c.budget_provenance = budget.provenance;
  if (!privacy.is_private()) return c;

  const double eps = privacy.epsilon;
  const double nd = static_cast<double>(n);
  c.gamma_ridge = 2.0 * constants.lam_tr * budget.w2_bar / (eps * nd);
  if (privacy.mechanism == Mechanism::gamma) {
    c.noise_scale = 2.0 * constants.zeta * budget.w1_bar / eps;
  } else {
    const double lt = gaussian_l_tilde(p, privacy.delta);
    c.noise_scale = constants.zeta / eps *
                    (lt + std::sqrt(lt * lt + eps / (3.0 * nd))) * budget.w1_bar;
  }
  return c;
}

/// b = r u with r ~ Gamma(p, 1/beta) and u uniform on the sphere; the density
/// of b is proportional to exp(-beta ||b||).
inline Vector sample_gamma_noise(Index p, double inv_beta, Rng& rng) {
  if (p < 1) throw std::invalid_argument("p must be >= 1");
  if (!(inv_beta > 0.0)) throw std::invalid_argument("1/beta must be > 0");
  Vector u(p);
  double norm = 0.0;
  do {
    for (Index j = 0; j < p; ++j) u[j] = rng.normal();
    norm = u.norm();
  } while (norm == 0.0);
  const double radius = rng.gamma(static_cast<double>(p), inv_beta);
  return u * (radius / norm);
}

inline Vector sample_gaussian_noise(Index p, double sigma, Rng& rng) {
  if (p < 1) throw std::invalid_argument("p must be >= 1");
  if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be > 0");
  Vector b(p);
  for (Index j = 0; j < p; ++j) b[j] = sigma * rng.normal();
  return b;
}

/// Draws the objective-perturbation vector for a calibration; zero when the
/// calibration is non-private.
inline Vector sample_noise(const Calibration& c, Rng& rng) {
  if (!(c.noise_scale > 0.0)) return Vector::Zero(c.p);
  return c.mechanism == Mechanism::gamma
             ? sample_gamma_noise(c.p, c.noise_scale, rng)
             : sample_gaussian_noise(c.p, c.noise_scale, rng);
}

}  // namespace dp2erm::privacy
