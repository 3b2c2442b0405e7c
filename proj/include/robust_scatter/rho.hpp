#ifndef ROBUST_SCATTER_RHO_HPP
#define ROBUST_SCATTER_RHO_HPP

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace robust_scatter {

/// The multivariate-t family rho(s) = (nu + q) log(nu + s) for nu > 0, and
/// Tyler's scale-free rho(s) = q log(s) for nu = 0.
///
/// nu = 0 is "Setting 0": the target is invariant under scaling of Sigma and
/// the estimate is normalized to det = 1. nu > 0 is "Setting 1": strictly
/// convex, with psi(s) = s rho'(s) increasing to psi(inf) = nu + q.
class RhoFamily {
 public:
  RhoFamily(double nu, int q) : nu_(nu), q_(q) {
    if (!(nu >= 0.0) || !std::isfinite(nu)) {
      throw std::invalid_argument("RhoFamily: nu must be finite and >= 0");
    }
    if (q < 1) throw std::invalid_argument("RhoFamily: q must be >= 1");
  }

  static RhoFamily tyler(int q) { return RhoFamily(0.0, q); }
  static RhoFamily student(double nu, int q) { return RhoFamily(nu, q); }

  double nu() const { return nu_; }
  int q() const { return q_; }
  int setting() const { return nu_ == 0.0 ? 0 : 1; }
  bool scale_free() const { return nu_ == 0.0; }

  /// psi(inf) = nu + q in Setting 1. In Setting 0 psi is constantly q, which
  /// is what this returns; callers needing the distinction use scale_free().
  double psi_infinity() const { return nu_ + q_; }

  double rho(double s) const {
    check(s);
    if (scale_free()) return q_ * std::log(s);
    return (nu_ + q_) * std::log(nu_ + s);
  }

  double rho_prime(double s) const {
    check(s);
    if (scale_free()) return q_ / s;
    return (nu_ + q_) / (nu_ + s);
  }

  double rho_second(double s) const {
    check(s);
    if (scale_free()) return -q_ / (s * s);
    const double d = nu_ + s;
    return -(nu_ + q_) / (d * d);
  }

  double psi(double s) const {
    check(s);
    if (scale_free()) return static_cast<double>(q_);
    return (nu_ + q_) * s / (nu_ + s);
  }

  /// rho(s + ds) - rho(s) evaluated without cancellation. ds is the change of
  /// the squared norm and must satisfy s + ds >= 0.
  double rho_increment(double s, double ds) const {
    check(s);
    if (scale_free()) {
      if (s + ds <= 0.0) throw std::domain_error("rho: zero vector in Setting 0");
      return q_ * std::log1p(ds / s);
    }
    return (nu_ + q_) * std::log1p(ds / (nu_ + s));
  }

  /// The family obtained by the location augmentation trick:
  /// rho_{nu,q}(s - 1) = rho_{nu-1,q+1}(s).
  RhoFamily augmented() const {
    if (nu_ < 1.0) {
      throw std::invalid_argument("location-scatter reduction requires nu >= 1");
    }
    return RhoFamily(nu_ - 1.0, q_ + 1);
  }

  std::string name() const {
    return scale_free() ? "tyler" : "t(" + std::to_string(nu_) + ")";
  }

 private:
  void check(double s) const {
    if (scale_free() ? !(s > 0.0) : !(s >= 0.0)) {
      throw std::domain_error(scale_free() ? "rho: zero vector in Setting 0"
                                           : "rho: negative argument");
    }
  }

  double nu_;
  int q_;
};

}  // namespace robust_scatter

#endif  // ROBUST_SCATTER_RHO_HPP
