#ifndef ROBUST_SCATTER_SAMPLE_HPP
#define ROBUST_SCATTER_SAMPLE_HPP

#include "robust_scatter/rho.hpp"
#include "robust_scatter/symcone.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace robust_scatter {

/// The discrete distribution Q = sum_i w_i delta_{x_i}: data rows with
/// positive weights summing to one.
class WeightedSample {
 public:
  WeightedSample(Matrix x, Vector w) : x_(std::move(x)), w_(std::move(w)) {
    if (x_.rows() < 1 || x_.cols() < 1) {
      throw std::invalid_argument("WeightedSample: empty data matrix");
    }
    if (w_.size() != x_.rows()) {
      throw std::invalid_argument("WeightedSample: weight count does not match rows");
    }
    if (!x_.allFinite() || !w_.allFinite()) {
      throw std::invalid_argument("WeightedSample: non-finite entries");
    }
    for (Eigen::Index i = 0; i < w_.size(); ++i) {
      if (!(w_(i) > 0.0)) {
        throw std::invalid_argument("WeightedSample: weight of row " +
                                    std::to_string(i) + " is not positive");
      }
    }
    if (std::abs(w_.sum() - 1.0) > 1e-12) {
      throw std::invalid_argument("WeightedSample: weights do not sum to one");
    }
  }

  static WeightedSample uniform(Matrix x) {
    const auto n = x.rows();
    if (n < 1) throw std::invalid_argument("WeightedSample: empty data matrix");
    return WeightedSample(std::move(x), Vector::Constant(n, 1.0 / static_cast<double>(n)));
  }

  /// Rescales arbitrary positive weights to sum one.
  static WeightedSample normalized(Matrix x, Vector w) {
    const double total = w.sum();
    if (!(total > 0.0)) throw std::invalid_argument("WeightedSample: weights sum to zero");
    return WeightedSample(std::move(x), w / total);
  }

  const Matrix& data() const { return x_; }
  const Vector& weights() const { return w_; }
  Eigen::Index size() const { return x_.rows(); }
  int dim() const { return static_cast<int>(x_.cols()); }

  Matrix second_moment() const {
    return symmetrize(x_.transpose() * w_.asDiagonal() * x_);
  }

  /// Setting 0 requires Q({0}) = 0.
  void validate_for(const RhoFamily& family) const {
    if (family.q() != dim()) {
      throw std::invalid_argument("WeightedSample: family dimension " +
                                  std::to_string(family.q()) + " does not match data dimension " +
                                  std::to_string(dim()));
    }
    if (!family.scale_free()) return;
    for (Eigen::Index i = 0; i < x_.rows(); ++i) {
      if (x_.row(i).squaredNorm() == 0.0) {
        throw std::domain_error("WeightedSample: row " + std::to_string(i) +
                                " is zero, which Tyler's estimator does not allow");
      }
    }
  }

  /// Drops zero rows and renormalizes the remaining weights. Appends one
  /// message to `warnings` when anything was dropped.
  WeightedSample drop_zero_rows(std::vector<std::string>* warnings = nullptr) const {
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < x_.rows(); ++i) {
      if (x_.row(i).squaredNorm() > 0.0) keep.push_back(i);
    }
    if (keep.empty()) throw std::domain_error("WeightedSample: every row is zero");
    if (static_cast<Eigen::Index>(keep.size()) == x_.rows()) return *this;
    Matrix x(static_cast<Eigen::Index>(keep.size()), x_.cols());
    Vector w(static_cast<Eigen::Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) {
      x.row(static_cast<Eigen::Index>(k)) = x_.row(keep[k]);
      w(static_cast<Eigen::Index>(k)) = w_(keep[k]);
    }
    if (warnings) {
      warnings->push_back("dropped " + std::to_string(x_.rows() - x.rows()) +
                          " zero rows and renormalized weights");
    }
    return normalized(std::move(x), std::move(w));
  }

 private:
  Matrix x_;
  Vector w_;
};

}  // namespace robust_scatter

#endif  // ROBUST_SCATTER_SAMPLE_HPP
