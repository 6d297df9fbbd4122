#pragma once

#include "dp2erm/core.hpp"
#include "dp2erm/optim.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dp2erm::weights {

inline constexpr double kExponentClamp = 50.0;

/// Clamps an exponent argument to +-50 and counts each clamp.
inline double clamp_exponent(double z, long& clamps) {
  if (z > kExponentClamp) {
    ++clamps;
    return kExponentClamp;
  }
  if (z < -kExponentClamp) {
    ++clamps;
    return -kExponentClamp;
  }
  return z;
}

struct WeightSolution {
  WeightVector weights;
  Vector lambda;  // fitted parameter: IPW lambda-hat or EBW dual; empty otherwise
  optim::SolveDiagnostics diagnostics;
  long exponent_clamps = 0;
  // EBW
  double moment_scale = 1.0;
  Matrix moment_residuals;  // row = group (control, treated), unscaled moments
  bool moments_matched = true;
  // MMD
  double kkt_residual = 0.0;
  double cap = 0.0;
  double bandwidth = 0.0;
};

/// p x p second-moment matrix n^-1 sum x x^T of the covariate rows.
inline Matrix second_moment(const Matrix& x) {
  return x.transpose() * x / static_cast<double>(x.rows());
}

inline double max_row_norm(const Matrix& x) {
  return x.rows() ? x.rowwise().norm().maxCoeff() : 0.0;
}

// ---------------------------------------------------------------------------
// IPW

struct IpwRandomizedConfig {
  double p0 = 0.5;  // P(A = -1)
  double p1 = 0.5;  // P(A = +1)
};

struct IpwKnownConfig {
  Vector lambda_star;
};

struct IpwEstimatedConfig {
  double R = 1.0;
  double lambda_ipw = 0.0;
  optim::PgdOptions solver;
};

inline WeightSolution ipw_randomized(const Dataset& data, double p0, double p1) {
  if (!(p0 > 0.0 && p0 < 1.0 && p1 > 0.0 && p1 < 1.0))
    throw std::invalid_argument("propensities must lie in (0, 1)");
  const Index n = data.size();
  Vector raw(n);
  for (Index i = 0; i < n; ++i) raw[i] = 1.0 / (data.group(i) == 1 ? p1 : p0);
  WeightSolution out;
  out.weights = WeightVector(raw * (static_cast<double>(n) / raw.sum()));
  return out;
}

/// w_i proportional to 1 + exp(-<x_i, lambda>), normalised to sum n.
inline WeightVector logistic_inverse_weights(const Matrix& x, const Vector& lambda,
                                             long& clamps) {
  if (lambda.size() != x.cols())
    throw std::invalid_argument("parameter dimension does not match covariates");
  const Index n = x.rows();
  Vector raw(n);
  const Vector score = x * lambda;
  for (Index i = 0; i < n; ++i)
    raw[i] = 1.0 + std::exp(-clamp_exponent(score[i], clamps));
  return WeightVector(raw * (static_cast<double>(n) / raw.sum()));
}

inline WeightSolution ipw_known_beta(const Dataset& data, const Vector& lambda_star) {
  WeightSolution out;
  out.weights =
      logistic_inverse_weights(data.covariates(), lambda_star, out.exponent_clamps);
  out.lambda = lambda_star;
  return out;
}

/// Regularised logistic negative log-likelihood of group labels, as a
/// (value, gradient) objective:
///   (1/n) sum log(1 + e^{z_i}) - g_i z_i + (lambda_ipw / 2) ||lambda||^2.
inline optim::Objective ipw_nll_objective(const Dataset& data, double lambda_ipw) {
  const Matrix x = data.covariates();
  Vector labels(data.size());
  for (Index i = 0; i < data.size(); ++i) labels[i] = data.group(i);
  return [x, labels, lambda_ipw](const Vector& lambda, Vector& grad) {
    const double n = static_cast<double>(x.rows());
    const Vector z = x * lambda;
    Vector residual(z.size());
    double value = 0.0;
    for (Index i = 0; i < z.size(); ++i) {
      const double zi = z[i];
      const double softplus =
          zi > 0.0 ? zi + std::log1p(std::exp(-zi)) : std::log1p(std::exp(zi));
      value += softplus - labels[i] * zi;
      const double prob = zi >= 0.0 ? 1.0 / (1.0 + std::exp(-zi))
                                    : std::exp(zi) / (1.0 + std::exp(zi));
      residual[i] = prob - labels[i];
    }
    grad = x.transpose() * residual / n + lambda_ipw * lambda;
    return value / n + 0.5 * lambda_ipw * lambda.squaredNorm();
  };
}

inline WeightSolution ipw_estimated(const Dataset& data,
                                    const IpwEstimatedConfig& config) {
  if (!(config.R > 0.0)) throw std::invalid_argument("IPW radius R must be > 0");
  if (!(config.lambda_ipw >= 0.0))
    throw std::invalid_argument("lambda_IPW must be >= 0");
  const Index p = data.dim();
  optim::ConvexProblem problem;
  problem.dimension = p;
  problem.objective = ipw_nll_objective(data, config.lambda_ipw);
  const double radius = config.R;
  problem.projection = [radius](const Vector& v) {
    return optim::project_l2_ball(v, radius);
  };
  problem.smoothness =
      std::max(optim::max_eigenvalue(second_moment(data.covariates())) / 4.0 +
                   config.lambda_ipw,
               1e-12);
  auto result = optim::pgd_or_throw(problem, Vector::Zero(p), config.solver,
                                    "IPW propensity fit");
  WeightSolution out;
  out.lambda = result.x;
  out.diagnostics = result.diagnostics;
  out.weights =
      logistic_inverse_weights(data.covariates(), out.lambda, out.exponent_clamps);
  return out;
}

// ---------------------------------------------------------------------------
// MMD

/// Gaussian RBF kernel exp(-||x - y||^2 / (2 h^2)); sup bound C = 1.
struct KernelSpec {
  double bandwidth = 1.0;
  double C = 1.0;

  double operator()(const Vector& x, const Vector& y) const {
    return std::exp(-(x - y).squaredNorm() / (2.0 * bandwidth * bandwidth));
  }
};

inline Matrix rbf_gram(const Matrix& x, double bandwidth) {
  if (!(bandwidth > 0.0)) throw std::invalid_argument("bandwidth must be > 0");
  const Index n = x.rows();
  const Vector sq = x.rowwise().squaredNorm();
  Matrix gram = x * x.transpose();
  const double scale = -1.0 / (2.0 * bandwidth * bandwidth);
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < n; ++i) {
      const double d2 = std::max(sq[i] + sq[j] - 2.0 * gram(i, j), 0.0);
      gram(i, j) = std::exp(scale * d2);
    }
  return gram;
}

/// Median pairwise Euclidean distance; falls back to 1 when all points
/// coincide.
inline double median_bandwidth(const Matrix& x) {
  const Index n = x.rows();
  std::vector<double> dist;
  dist.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) dist.push_back((x.row(i) - x.row(j)).norm());
  if (dist.empty()) return 1.0;
  const auto mid = dist.begin() + static_cast<std::ptrdiff_t>(dist.size() / 2);
  std::nth_element(dist.begin(), mid, dist.end());
  double median = *mid;
  if (dist.size() % 2 == 0) {
    median = 0.5 * (median + *std::max_element(dist.begin(), mid));
  }
  return median > 0.0 ? median : 1.0;
}

struct MmdConfig {
  double alpha = 0.5;
  double lambda_mmd = 1.0;
  std::optional<double> cap;           // default 10 n / n_min
  std::optional<KernelSpec> kernel;    // default: median-distance bandwidth
  optim::PgdOptions solver;
};

/// Block system of the MMD quadratic, rows ordered control block then
/// treated block; `order[k]` is the dataset row of position k.
struct MmdSystem {
  Matrix A;
  Vector b;
  std::vector<Index> order;
  Index n0 = 0;
  Index n1 = 0;
};

inline MmdSystem mmd_kernel_matrices(const Dataset& data, const KernelSpec& kernel,
                                     double alpha, double lambda_mmd) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw std::invalid_argument("alpha must lie in [0, 1]");
  MmdSystem sys;
  const auto control = data.group_indices(0);
  const auto treated = data.group_indices(1);
  if (control.empty() || treated.empty())
    throw std::invalid_argument("MMD weights need both arms nonempty");
  sys.n0 = static_cast<Index>(control.size());
  sys.n1 = static_cast<Index>(treated.size());
  sys.order = control;
  sys.order.insert(sys.order.end(), treated.begin(), treated.end());

  const Index n = data.size();
  Matrix ordered(n, data.dim());
  for (Index k = 0; k < n; ++k) ordered.row(k) = data.x(sys.order[k]);
  const Matrix K = rbf_gram(ordered, kernel.bandwidth);

  const double nn = static_cast<double>(n) * static_cast<double>(n);
  sys.A = K;
  sys.A.topRightCorner(sys.n0, sys.n1) *= (alpha - 1.0);
  sys.A.bottomLeftCorner(sys.n1, sys.n0) *= (alpha - 1.0);
  sys.A.diagonal().array() += lambda_mmd;
  sys.A /= nn;
  sys.b = (alpha / nn) * K.rowwise().sum();
  return sys;
}

/// w^T A w - 2 b^T w with gradient 2 (A w - b).
inline optim::Objective mmd_quadratic_objective(Matrix A, Vector b) {
  return [A = std::move(A), b = std::move(b)](const Vector& w, Vector& grad) {
    const Vector Aw = A * w;
    grad = 2.0 * (Aw - b);
    return w.dot(Aw) - 2.0 * w.dot(b);
  };
}

inline WeightSolution mmd_weights(const Dataset& data, const MmdConfig& config) {
  if (!(config.lambda_mmd > 0.0))
    throw std::invalid_argument("lambda_MMD must be > 0");
  const Index n = data.size();
  const Index n0 = data.group_size(0);
  const Index n1 = data.group_size(1);
  if (n0 == 0 || n1 == 0)
    throw std::invalid_argument("MMD weights need both arms nonempty");
  const double nd = static_cast<double>(n);
  const double cap =
      config.cap.value_or(10.0 * nd / static_cast<double>(std::min(n0, n1)));
  if (cap * static_cast<double>(std::min(n0, n1)) < nd * (1.0 - 1e-12))
    throw std::invalid_argument("MMD cap R=" + std::to_string(cap) +
                                " is infeasible: need R >= n / n_a for both arms");
  const KernelSpec kernel =
      config.kernel.value_or(KernelSpec{median_bandwidth(data.covariates()), 1.0});

  MmdSystem sys = mmd_kernel_matrices(data, kernel, config.alpha, config.lambda_mmd);
  // The minimiser is unchanged by the factor n^2; removing it keeps the
  // stopping tolerance on the scale of the weights themselves.
  const Matrix A = sys.A * (nd * nd);
  const Vector b = sys.b * (nd * nd);

  optim::ConvexProblem problem;
  problem.dimension = n;
  problem.objective = mmd_quadratic_objective(A, b);
  problem.projection = [n0, n1, nd, cap](const Vector& v) {
    Vector out(v.size());
    out.head(n0) = optim::project_capped_simplex(v.head(n0), nd, cap);
    out.tail(n1) = optim::project_capped_simplex(v.tail(n1), nd, cap);
    return out;
  };
  problem.smoothness = 2.0 * optim::max_eigenvalue_psd(A);

  Vector start(n);
  start.head(n0).setConstant(nd / static_cast<double>(n0));
  start.tail(n1).setConstant(nd / static_cast<double>(n1));
  auto result = optim::pgd_or_throw(problem, start, config.solver, "MMD weights");

  Vector w(n);
  for (Index k = 0; k < n; ++k) w[sys.order[k]] = 0.5 * result.x[k];
  // The projection leaves per-arm sums exact up to rounding; renormalise the
  // last few ulps so the sum-to-n check is independent of solver noise.
  w *= nd / w.sum();
  WeightSolution out;
  out.weights = WeightVector(w);
  out.diagnostics = result.diagnostics;
  out.kkt_residual = result.diagnostics.gradient_mapping_norm;
  out.cap = cap;
  out.bandwidth = kernel.bandwidth;
  return out;
}

// ---------------------------------------------------------------------------
// Entropy balancing

enum class MomentSet { first, first_and_squares, custom };
enum class DualNorm { l2, linf };

struct EbwConfig {
  MomentSet moments = MomentSet::first;
  // For MomentSet::custom: maps x to (g_1(x), ..., g_K(x)).
  std::function<Vector(const Vector&)> custom_moments;
  std::optional<Vector> base_q;  // default uniform
  double R = 1.0;
  double lambda_ebw = 0.0;
  DualNorm norm = DualNorm::l2;
  // Multiplier applied to every moment (including g_0). Default makes
  // (n / n_min) ||g(x_i)|| <= 1 for all rows.
  std::optional<double> moment_scale;
  double moment_tolerance = 1e-6;
  optim::PgdOptions solver;
};

/// Moment rows G(x_i) = (1, g_1(x_i), ..., g_K(x_i)), unscaled.
inline Matrix ebw_moment_matrix(const Dataset& data, const EbwConfig& config) {
  const Index n = data.size();
  const Index p = data.dim();
  Index K = 0;
  switch (config.moments) {
    case MomentSet::first: K = p; break;
    case MomentSet::first_and_squares: K = 2 * p; break;
    case MomentSet::custom:
      if (!config.custom_moments)
        throw std::invalid_argument("custom EBW moments need a callback");
      K = n ? config.custom_moments(data.x(0).transpose()).size() : 0;
      break;
  }
  Matrix G(n, K + 1);
  for (Index i = 0; i < n; ++i) {
    G(i, 0) = 1.0;
    const Vector x = data.x(i).transpose();
    switch (config.moments) {
      case MomentSet::first: G.row(i).tail(K) = x.transpose(); break;
      case MomentSet::first_and_squares:
        G.row(i).segment(1, p) = x.transpose();
        G.row(i).tail(p) = x.array().square().matrix().transpose();
        break;
      case MomentSet::custom: {
        const Vector g = config.custom_moments(x);
        if (g.size() != K)
          throw std::invalid_argument("custom moments changed length");
        G.row(i).tail(K) = g.transpose();
        break;
      }
    }
  }
  return G;
}

/// Precomputed data of the convex entropy-balancing dual
///   log C(lambda) - <lambda_0 + lambda_1, g_bar> + (lambda_ebw / 2) ||lambda||^2,
/// C(lambda) = sum_i q_i exp(<b_i, lambda>), with b_i the extended rows.
class EbwProblem {
 public:
  EbwProblem(const Dataset& data, const EbwConfig& config)
      : n_(data.size()), lambda_ebw_(config.lambda_ebw) {
    if (!(config.lambda_ebw >= 0.0))
      throw std::invalid_argument("lambda_EBW must be >= 0");
    if (!(config.R > 0.0)) throw std::invalid_argument("EBW radius R must be > 0");
    n0_ = data.group_size(0);
    n1_ = data.group_size(1);
    if (n0_ == 0 || n1_ == 0)
      throw std::invalid_argument("EBW weights need both arms nonempty");

    const Vector q = config.base_q.value_or(
        Vector::Constant(n_, 1.0 / static_cast<double>(n_)));
    if (q.size() != n_) throw std::invalid_argument("base_q has wrong length");
    if ((q.array() <= 0.0).any() || std::abs(q.sum() - 1.0) > 1e-10)
      throw std::invalid_argument("base_q must be strictly positive and sum to 1");
    log_q_ = q.array().log().matrix();
    r_q_ = q.maxCoeff() / q.minCoeff();

    G_ = ebw_moment_matrix(data, config);
    const Index k1 = G_.cols();
    const double nd = static_cast<double>(n_);
    const double ratio_min = nd / static_cast<double>(std::min(n0_, n1_));
    if (config.moment_scale) {
      scale_ = *config.moment_scale;
      if (!(scale_ > 0.0)) throw std::invalid_argument("moment_scale must be > 0");
    } else {
      const double largest = ratio_min * G_.rowwise().norm().maxCoeff();
      scale_ = largest > 0.0 ? 1.0 / largest : 1.0;
    }
    g_bar_ = scale_ * G_.colwise().mean().transpose();

    groups_.resize(n_);
    B_ = Matrix::Zero(n_, 2 * k1);
    for (Index i = 0; i < n_; ++i) {
      groups_[i] = data.group(i);
      const double factor = nd / static_cast<double>(groups_[i] ? n1_ : n0_);
      B_.row(i).segment(groups_[i] * k1, k1) = factor * scale_ * G_.row(i);
    }
    target_.resize(2 * k1);
    target_ << g_bar_, g_bar_;
    max_row_sq_ = B_.rowwise().squaredNorm().maxCoeff();
  }

  Index dual_dim() const { return B_.cols(); }
  const Matrix& extended_rows() const { return B_; }
  double scale() const { return scale_; }
  double r_q() const { return r_q_; }
  double smoothness() const { return max_row_sq_ + lambda_ebw_; }

  /// Uncentred second moment B^T B / n of the extended rows.
  Matrix sigma_b() const { return B_.transpose() * B_ / static_cast<double>(n_); }

  double objective(const Vector& lambda, Vector& grad) const {
    const Vector pi = softmax(lambda);
    grad = B_.transpose() * pi - target_ + lambda_ebw_ * lambda;
    return log_c(lambda) - target_.dot(lambda) +
           0.5 * lambda_ebw_ * lambda.squaredNorm();
  }

  /// w_i = n q_i exp(<b_i, lambda>) / C(lambda).
  Vector weights(const Vector& lambda) const {
    return static_cast<double>(n_) * softmax(lambda);
  }

  /// (1/n_a) sum_{i in S_a} w_i G(x_i) - mean G, unscaled; row a = group.
  Matrix moment_residuals(const Vector& w) const {
    const Index k1 = G_.cols();
    Matrix res = Matrix::Zero(2, k1);
    for (Index i = 0; i < n_; ++i) res.row(groups_[i]) += w[i] * G_.row(i);
    res.row(0) /= static_cast<double>(n0_);
    res.row(1) /= static_cast<double>(n1_);
    const Vector mean = g_bar_ / scale_;
    res.row(0) -= mean.transpose();
    res.row(1) -= mean.transpose();
    return res;
  }

 private:
  Vector logits(const Vector& lambda) const {
    if (lambda.size() != B_.cols())
      throw std::invalid_argument("EBW dual variable has wrong dimension");
    return B_ * lambda + log_q_;
  }

  double log_c(const Vector& lambda) const {
    const Vector z = logits(lambda);
    const double shift = z.maxCoeff();
    return shift + std::log((z.array() - shift).exp().sum());
  }

  Vector softmax(const Vector& lambda) const {
    const Vector z = logits(lambda);
    const double shift = z.maxCoeff();
    Vector e = (z.array() - shift).exp().matrix();
    return e / e.sum();
  }

  Index n_ = 0;
  Index n0_ = 0;
  Index n1_ = 0;
  double lambda_ebw_ = 0.0;
  double scale_ = 1.0;
  double r_q_ = 1.0;
  double max_row_sq_ = 0.0;
  Matrix G_;
  Matrix B_;
  Vector log_q_;
  Vector g_bar_;
  Vector target_;
  std::vector<int> groups_;
};

inline std::pair<double, Vector> ebw_dual_objective(const Vector& lambda,
                                                    const Dataset& data,
                                                    const EbwConfig& config) {
  const EbwProblem problem(data, config);
  Vector grad;
  const double value = problem.objective(lambda, grad);
  return {value, grad};
}

inline WeightSolution ebw_weights(const Dataset& data, const EbwConfig& config) {
  const EbwProblem ebw(data, config);
  optim::ConvexProblem problem;
  problem.dimension = ebw.dual_dim();
  problem.objective = [&ebw](const Vector& lambda, Vector& grad) {
    return ebw.objective(lambda, grad);
  };
  const double radius = config.R;
  if (config.norm == DualNorm::l2)
    problem.projection = [radius](const Vector& v) {
      return optim::project_l2_ball(v, radius);
    };
  else
    problem.projection = [radius](const Vector& v) {
      return optim::project_linf_ball(v, radius);
    };
  problem.smoothness = ebw.smoothness();

  auto result = optim::pgd_or_throw(problem, Vector::Zero(ebw.dual_dim()),
                                    config.solver, "EBW dual");
  WeightSolution out;
  out.lambda = result.x;
  out.diagnostics = result.diagnostics;
  out.moment_scale = ebw.scale();
  Vector w = ebw.weights(out.lambda);
  w *= static_cast<double>(data.size()) / w.sum();
  out.weights = WeightVector(w);
  out.moment_residuals = ebw.moment_residuals(w);
  out.moments_matched =
      out.moment_residuals.cwiseAbs().maxCoeff() <= config.moment_tolerance;
  return out;
}

}  // namespace dp2erm::weights
