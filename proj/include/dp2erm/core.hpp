#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dp2erm {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Treatment arm in the decision-rule convention. Weight solvers work with the
// 0/1 group label returned by group_of(); the mapping is fixed here and only
// here: +1 <-> treated (group 1), -1 <-> control (group 0).
inline int group_of(int treatment) {
  if (treatment == 1) return 1;
  if (treatment == -1) return 0;
  throw std::invalid_argument("treatment must be -1 or +1, got " +
                              std::to_string(treatment));
}

inline int treatment_of(int group) { return group == 1 ? 1 : -1; }

struct Record {
  Vector x;
  int a = 1;
  double y = 0.0;

  bool operator==(const Record& other) const {
    return a == other.a && y == other.y && x.size() == other.x.size() &&
           x == other.x;
  }
};

/// n records of (covariate row, treatment in {-1,+1}, outcome).
///
/// Shape and label checks happen at construction; statistical admissibility
/// (both arms present, covariate norm bound) is reported by validate() so that
/// inadmissible data can still be loaded and diagnosed.
class Dataset {
 public:
  Dataset() = default;

  Dataset(Matrix covariates, Eigen::VectorXi treatments, Vector outcomes)
      : x_(std::move(covariates)),
        a_(std::move(treatments)),
        y_(std::move(outcomes)) {
    if (x_.rows() != a_.size() || x_.rows() != y_.size()) {
      std::ostringstream msg;
      msg << "dataset component lengths differ: covariates " << x_.rows()
          << ", treatments " << a_.size() << ", outcomes " << y_.size();
      throw std::invalid_argument(msg.str());
    }
    for (Index i = 0; i < a_.size(); ++i) group_of(a_[i]);
  }

  Index size() const { return x_.rows(); }
  Index dim() const { return x_.cols(); }

  const Matrix& covariates() const { return x_; }
  const Eigen::VectorXi& treatments() const { return a_; }
  const Vector& outcomes() const { return y_; }

  auto x(Index i) const { return x_.row(i); }
  int a(Index i) const { return a_[i]; }
  double y(Index i) const { return y_[i]; }
  int group(Index i) const { return group_of(a_[i]); }

  Index group_size(int g) const {
    Index count = 0;
    for (Index i = 0; i < size(); ++i) count += (group(i) == g);
    return count;
  }

  std::vector<Index> group_indices(int g) const {
    std::vector<Index> out;
    for (Index i = 0; i < size(); ++i)
      if (group(i) == g) out.push_back(i);
    return out;
  }

  Record record(Index i) const { return {x_.row(i).transpose(), a_[i], y_[i]}; }

  Dataset with_record(Index i, const Record& r) const {
    Dataset out = *this;
    out.x_.row(i) = r.x.transpose();
    out.a_[i] = r.a;
    out.y_[i] = r.y;
    return out;
  }

  Dataset subset(const std::vector<Index>& rows) const {
    Matrix x(static_cast<Index>(rows.size()), dim());
    Eigen::VectorXi a(static_cast<Index>(rows.size()));
    Vector y(static_cast<Index>(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const auto i = rows[k];
      x.row(static_cast<Index>(k)) = x_.row(i);
      a[static_cast<Index>(k)] = a_[i];
      y[static_cast<Index>(k)] = y_[i];
    }
    return {std::move(x), std::move(a), std::move(y)};
  }

  bool operator==(const Dataset& other) const {
    return x_.rows() == other.x_.rows() && x_.cols() == other.x_.cols() &&
           x_ == other.x_ && a_ == other.a_ && y_ == other.y_;
  }

 private:
  Matrix x_;
  Eigen::VectorXi a_;
  Vector y_;
};

/// Nonnegative weights summing to n.
class WeightVector {
 public:
  static constexpr double kRelativeSumTolerance = 1e-8;

  WeightVector() = default;

  explicit WeightVector(Vector w) : w_(std::move(w)) {
    const double n = static_cast<double>(w_.size());
    for (Index i = 0; i < w_.size(); ++i) {
      if (!std::isfinite(w_[i]) || w_[i] < 0.0)
        throw std::invalid_argument("weight " + std::to_string(i) +
                                    " is negative or non-finite");
    }
    if (std::abs(w_.sum() - n) > kRelativeSumTolerance * std::max(n, 1.0)) {
      std::ostringstream msg;
      msg.precision(17);
      msg << "weights sum to " << w_.sum() << ", expected " << n;
      throw std::invalid_argument(msg.str());
    }
  }

  static WeightVector uniform(Index n) { return WeightVector(Vector::Ones(n)); }

  Index size() const { return w_.size(); }
  double operator[](Index i) const { return w_[i]; }
  const Vector& values() const { return w_; }
  double max() const { return w_.size() ? w_.maxCoeff() : 0.0; }

 private:
  Vector w_;
};

/// Bounds on the data and on the loss for the linear ITR instantiation.
struct ProblemConstants {
  double M = 1.0;        // covariate L2 bound
  double M_out = 1.0;    // outcome magnitude bound
  double lambda1 = 1.0;  // L1-ball radius for theta
  double zeta = 0.0;     // per-sample gradient bound
  double lam_tr = 0.0;   // per-sample Hessian trace bound

  static ProblemConstants itr(double M, double M_out, double lambda1) {
    if (!(M > 0.0) || !(M_out >= 0.0) || !(lambda1 > 0.0))
      throw std::invalid_argument(
          "ITR constants need M > 0, M_out >= 0, lambda1 > 0");
    ProblemConstants c;
    c.M = M;
    c.M_out = M_out;
    c.lambda1 = lambda1;
    c.zeta = 2.0 * M * M * lambda1 + 4.0 * M * M_out;
    c.lam_tr = 2.0 * M * M;
    return c;
  }
};

struct ValidationReport {
  std::vector<std::string> issues;
  bool ok() const { return issues.empty(); }
};

// Slack on the norm bound so that rows generated exactly on the boundary
// (e.g. all coordinates at +-1 with M = sqrt(p)) are not flagged.
inline constexpr double kNormSlack = 1e-12;

inline ValidationReport validate(const Dataset& data,
                                 const ProblemConstants& constants) {
  ValidationReport report;
  const Index n = data.size();
  if (n < 2)
    report.issues.push_back("dataset has " + std::to_string(n) +
                            " records, need at least 2");
  if (data.group_size(1) == 0) report.issues.push_back("treated arm empty");
  if (data.group_size(0) == 0) report.issues.push_back("control arm empty");
  for (Index i = 0; i < n; ++i) {
    const auto x = data.x(i);
    if (!x.allFinite() || !std::isfinite(data.y(i))) {
      report.issues.push_back("non-finite value at row " + std::to_string(i));
      continue;
    }
    if (x.norm() > constants.M * (1.0 + kNormSlack))
      report.issues.push_back("norm bound exceeded at row " +
                              std::to_string(i));
    if (std::abs(data.y(i)) > constants.M_out * (1.0 + kNormSlack))
      report.issues.push_back("outcome bound exceeded at row " +
                              std::to_string(i));
  }
  return report;
}

struct NeighborPair {
  Dataset base;
  Dataset perturbed;
  Index index = 0;
};

inline NeighborPair make_neighbor(const Dataset& data, Index index,
                                  const Record& replacement,
                                  const ProblemConstants& constants) {
  if (index < 0 || index >= data.size())
    throw std::out_of_range("neighbor index " + std::to_string(index) +
                            " outside [0, " + std::to_string(data.size()) +
                            ")");
  if (replacement.x.size() != data.dim())
    throw std::invalid_argument("replacement has wrong covariate dimension");
  group_of(replacement.a);
  if (!replacement.x.allFinite() || !std::isfinite(replacement.y))
    throw std::invalid_argument("replacement has non-finite values");
  if (replacement.x.norm() > constants.M * (1.0 + kNormSlack))
    throw std::invalid_argument("replacement violates covariate norm bound");
  if (std::abs(replacement.y) > constants.M_out * (1.0 + kNormSlack))
    throw std::invalid_argument("replacement violates outcome bound");
  return {data, data.with_record(index, replacement), index};
}

/// Number of records that differ between two equally sized datasets.
inline Index record_distance(const Dataset& lhs, const Dataset& rhs) {
  if (lhs.size() != rhs.size() || lhs.dim() != rhs.dim())
    throw std::invalid_argument("datasets have different shapes");
  Index count = 0;
  for (Index i = 0; i < lhs.size(); ++i)
    count += !(lhs.record(i) == rhs.record(i));
  return count;
}

}  // namespace dp2erm
