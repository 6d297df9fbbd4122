#pragma once

#include "dp2erm/core.hpp"

#include <stdexcept>
#include <utility>

namespace dp2erm::itr {

/// (2ya - x^T theta)^2 and its gradient in theta.
inline std::pair<double, Vector> itr_loss(const Vector& theta, const Record& r) {
  if (theta.size() != r.x.size())
    throw std::invalid_argument("theta and x have different dimensions");
  const double residual = 2.0 * r.y * r.a - r.x.dot(theta);
  return {residual * residual, -2.0 * residual * r.x};
}

/// Linear rule d(x) = sign(x^T theta), with sign(0) = +1.
struct DecisionRule {
  Vector theta;
};

inline int sign_of(double v) { return v >= 0.0 ? 1 : -1; }

template <typename Row>
int decide(const DecisionRule& rule, const Row& x) {
  if (x.size() != rule.theta.size())
    throw std::invalid_argument("rule and covariates have different dimensions");
  return sign_of(x.dot(rule.theta.transpose()));
}

inline int decide(const DecisionRule& rule, const Vector& x) {
  if (x.size() != rule.theta.size())
    throw std::invalid_argument("rule and covariates have different dimensions");
  return sign_of(x.dot(rule.theta));
}

/// Decisions for every row of a covariate matrix.
inline Eigen::VectorXi decide_all(const DecisionRule& rule, const Matrix& x) {
  if (x.cols() != rule.theta.size())
    throw std::invalid_argument("rule and covariates have different dimensions");
  const Vector score = x * rule.theta;
  Eigen::VectorXi out(score.size());
  for (Index i = 0; i < score.size(); ++i) out[i] = sign_of(score[i]);
  return out;
}

/// Fraction of rows where the rule agrees with sign(f_opt).
inline double accuracy(const DecisionRule& rule, const Matrix& x,
                       const Vector& f_opt) {
  if (x.rows() != f_opt.size())
    throw std::invalid_argument("covariates and truth values differ in length");
  if (x.rows() == 0) throw std::invalid_argument("empty test set");
  const Eigen::VectorXi d = decide_all(rule, x);
  Index hits = 0;
  for (Index i = 0; i < d.size(); ++i) hits += (d[i] == sign_of(f_opt[i]));
  return static_cast<double>(hits) / static_cast<double>(d.size());
}

/// Inverse-propensity value estimate (1/n) sum y_i 1{a_i = d(x_i)} / pi_i, where
/// pi_i is the probability of the treatment actually received.
inline double empirical_value(const DecisionRule& rule, const Dataset& test,
                              const Vector& propensity_received) {
  if (propensity_received.size() != test.size())
    throw std::invalid_argument("propensities and test set differ in length");
  if (test.size() == 0) throw std::invalid_argument("empty test set");
  const Eigen::VectorXi d = decide_all(rule, test.covariates());
  double total = 0.0;
  for (Index i = 0; i < test.size(); ++i) {
    const double pi = propensity_received[i];
    if (!(pi > 0.0))
      throw std::invalid_argument("nonpositive propensity at row " +
                                  std::to_string(i));
    if (d[i] == test.a(i)) total += test.y(i) / pi;
  }
  return total / static_cast<double>(test.size());
}

/// Converts P(A = +1 | x) into the probability of each received treatment.
inline Vector received_propensity(const Eigen::VectorXi& a, const Vector& p_treated) {
  if (a.size() != p_treated.size())
    throw std::invalid_argument("treatments and propensities differ in length");
  Vector out(a.size());
  for (Index i = 0; i < a.size(); ++i)
    out[i] = a[i] == 1 ? p_treated[i] : 1.0 - p_treated[i];
  return out;
}

struct EvalReport {
  double accuracy = 0.0;
  double empirical_value = 0.0;
  Index n_test = 0;
};

}  // namespace dp2erm::itr
