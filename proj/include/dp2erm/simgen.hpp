#pragma once

#include "dp2erm/core.hpp"
#include "dp2erm/rng.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>

namespace dp2erm::simgen {

enum class Scenario { linear, tree, nonlinear };

inline std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::linear: return "linear";
    case Scenario::tree: return "tree";
    case Scenario::nonlinear: return "nonlinear";
  }
  return "?";
}

inline Scenario parse_scenario(const std::string& name) {
  if (name == "linear") return Scenario::linear;
  if (name == "tree") return Scenario::tree;
  if (name == "nonlinear") return Scenario::nonlinear;
  throw std::invalid_argument("unknown scenario '" + name +
                              "' (valid: linear, tree, nonlinear)");
}

struct ScenarioSpec {
  Scenario id = Scenario::linear;
  Index n = 400;
  Index n_test = 10000;
  Index p = 10;
  // Tree scenario: use "2 X1 < -0.5" as written (true) or "X1 < -0.5".
  bool tree_literal = true;
  // Test hook: when false the outcome noise is switched off.
  bool noise = true;

  void check() const {
    if (p < 5) throw std::invalid_argument("scenarios need p >= 5");
    if (n < 1 || n_test < 1) throw std::invalid_argument("n and n_test must be >= 1");
  }
};

/// Entries i.i.d. standard normal truncated to [-1, 1], by rejection.
inline Matrix sample_covariates(Index n, Index p, Rng& rng) {
  if (n < 1 || p < 1) throw std::invalid_argument("n and p must be >= 1");
  Matrix x(n, p);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < p; ++j) {
      double z;
      do z = rng.normal();
      while (std::abs(z) > 1.0);
      x(i, j) = z;
    }
  return x;
}

inline double expit(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

/// P(A = +1 | x) = expit(0.3 x1 - 0.5 x2 + 0.05).
template <typename Row>
double treatment_propensity(const Row& x) {
  return expit(0.3 * x[0] - 0.5 * x[1] + 0.05);
}

struct Assignment {
  Eigen::VectorXi a;
  Vector p_treated;
};

inline Assignment assign_treatment(const Matrix& x, Rng& rng) {
  if (x.cols() < 2) throw std::invalid_argument("treatment model needs p >= 2");
  Assignment out{Eigen::VectorXi(x.rows()), Vector(x.rows())};
  for (Index i = 0; i < x.rows(); ++i) {
    out.p_treated[i] = treatment_propensity(x.row(i));
    out.a[i] = rng.uniform() < out.p_treated[i] ? 1 : -1;
  }
  return out;
}

struct TruthFunctions {
  std::function<double(const Vector&)> mu;
  std::function<double(const Vector&)> f_opt;
  std::function<double(int, const Vector&)> variance;  // sigma^2(a, x)
};

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }
inline double indicator(bool c) { return c ? 1.0 : 0.0; }

inline double quadratic_baseline(const Vector& x) {
  double s = 0.0;
  for (Index j = 0; j < 5; ++j) s += x[j] + (2.0 / 3.0) * (2.0 * x[j] * x[j] - 1.0);
  return s;
}

inline TruthFunctions truth_functions(Scenario id, bool tree_literal = true) {
  TruthFunctions t;
  switch (id) {
    case Scenario::linear:
      t.mu = [](const Vector& x) { return -0.1 * quadratic_baseline(x); };
      t.f_opt = [](const Vector& x) {
        return 8.0 * x[0] - 8.0 * x[1] + 4.0 * x[2] + 8.0 * x[3];
      };
      t.variance = [](int, const Vector&) { return 2.0; };
      break;
    case Scenario::tree:
      t.mu = [](const Vector& x) { return -3.0 * quadratic_baseline(x); };
      t.f_opt = [tree_literal](const Vector& x) {
        const bool second = tree_literal ? 2.0 * x[0] < -0.5 : x[0] < -0.5;
        return 6.0 * indicator(x[0] > -0.5) * sign(x[0] - 0.5) +
               5.0 * indicator(second) * sign(x[3] + 0.5) + 1.0;
      };
      t.variance = [](int, const Vector&) { return 2.0; };
      break;
    case Scenario::nonlinear:
      t.mu = [](const Vector& x) {
        return 2.0 + 3.0 * x[0] + 2.0 * x[1] + 3.0 * x[3] - 2.5 * x[3] * x[3] -
               1.5 * x[4] * x[4] + 2.0 * x[0] * x[1] + 2.0 * std::exp(-x[0] * x[1]) +
               std::sin(x[2]);
      };
      t.f_opt = [](const Vector& x) {
        return -0.5 - 2.0 * x[3] + x[3] * x[3] + 2.5 * x[4] * x[4];
      };
      t.variance = [](int a, const Vector& x) {
        return 0.25 + 2.0 * x[1] * indicator(x[1] > 0.0) +
               x[2] * indicator(x[2] > 0.0 && a == 1) +
               x[3] * indicator(x[3] > 0.0 && a == -1);
      };
      break;
  }
  return t;
}

/// Outcome bound for covariates in [-1, 1]^p: sup|mu| + sup|f_opt| / 2 plus six
/// noise standard deviations. Suprema are termwise triangle bounds.
inline double outcome_bound(Scenario id) {
  // Per-coordinate x + (2/3)(2x^2 - 1) ranges over [-0.854, 5/3] on [-1, 1].
  const double baseline = 5.0 * (5.0 / 3.0);
  switch (id) {
    case Scenario::linear:
      return 0.1 * baseline + 28.0 / 2.0 + 6.0 * std::sqrt(2.0);
    case Scenario::tree:
      return 3.0 * baseline + 12.0 / 2.0 + 6.0 * std::sqrt(2.0);
    case Scenario::nonlinear: {
      const double mu = 2.0 + 3.0 + 2.0 + 3.0 + 2.5 + 1.5 + 2.0 + 2.0 * std::exp(1.0) +
                        std::sin(1.0);
      return mu + 5.0 / 2.0 + 6.0 * std::sqrt(3.25);
    }
  }
  return 0.0;
}

/// Covariate L2 bound for [-1, 1]^p support.
inline double covariate_bound(Index p) { return std::sqrt(static_cast<double>(p)); }

struct SimulatedData {
  Dataset train;
  Vector train_p_treated;
  Vector train_f_opt;
  Dataset test;
  Vector test_p_treated;
  Vector test_f_opt;
};

namespace detail {

inline Dataset draw(const ScenarioSpec& spec, const TruthFunctions& truth, Index n,
                    Rng& rng, Vector& p_treated, Vector& f_opt) {
  Matrix x = sample_covariates(n, spec.p, rng);
  Assignment assignment = assign_treatment(x, rng);
  Vector y(n);
  f_opt.resize(n);
  for (Index i = 0; i < n; ++i) {
    const Vector xi = x.row(i).transpose();
    const int a = assignment.a[i];
    f_opt[i] = truth.f_opt(xi);
    double mean = truth.mu(xi) + 0.5 * a * f_opt[i];
    const double var = truth.variance(a, xi);
    if (!(var > 0.0))
      throw std::runtime_error("noise variance not positive at record " +
                               std::to_string(i));
    const double noise = rng.normal() * std::sqrt(var);
    y[i] = spec.noise ? mean + noise : mean;
  }
  p_treated = std::move(assignment.p_treated);
  return Dataset(std::move(x), std::move(assignment.a), std::move(y));
}

}  // namespace detail

/// Training and test draws from one stream; the test draw follows the
/// training draw.
inline SimulatedData generate(const ScenarioSpec& spec, Rng& rng) {
  spec.check();
  const TruthFunctions truth = truth_functions(spec.id, spec.tree_literal);
  SimulatedData out;
  out.train = detail::draw(spec, truth, spec.n, rng, out.train_p_treated, out.train_f_opt);
  out.test = detail::draw(spec, truth, spec.n_test, rng, out.test_p_treated, out.test_f_opt);
  return out;
}

}  // namespace dp2erm::simgen
