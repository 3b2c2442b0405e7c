#ifndef ROBUST_SCATTER_SYMCONE_HPP
#define ROBUST_SCATTER_SYMCONE_HPP

// Calculus on symmetric matrices: spectral decomposition, exp/log of
// symmetric matrices, SPD square roots and the Frobenius geometry.

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>

namespace robust_scatter {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// A = vectors * diag(values) * vectors^T with values sorted descending.
struct SpectralDecomp {
  Matrix vectors;
  Vector values;

  Matrix reconstruct() const {
    return vectors * values.asDiagonal() * vectors.transpose();
  }
};

/// Largest eigenvalue accepted by sym_exp. exp(700) is still finite.
inline constexpr double kMaxExpEigenvalue = 700.0;

namespace detail {

inline void require_square(const Matrix& a, const char* what) {
  if (a.rows() != a.cols()) {
    throw std::invalid_argument(std::string(what) + ": matrix is not square");
  }
}

inline void require_symmetric(const Matrix& a, const char* what) {
  require_square(a, what);
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw std::invalid_argument(std::string(what) + ": matrix is not symmetric");
  }
}

}  // namespace detail

/// Exactly symmetric copy (A + A^T)/2.
inline Matrix symmetrize(const Matrix& a) { return 0.5 * (a + a.transpose()); }

namespace detail {

template <class F>
Matrix spectral_map(const SpectralDecomp& d, F f) {
  const Vector mapped = d.values.unaryExpr(f);
  return symmetrize(d.vectors * mapped.asDiagonal() * d.vectors.transpose());
}

}  // namespace detail

/// Eigen-decomposition of a symmetric matrix. Eigenvalues are sorted
/// descending and each eigenvector column is signed so that its entry of
/// largest magnitude is positive (first such entry on ties).
inline SpectralDecomp spectral(const Matrix& a) {
  detail::require_symmetric(a, "spectral");
  const Eigen::Index q = a.rows();
  Eigen::SelfAdjointEigenSolver<Matrix> solver(symmetrize(a));
  if (solver.info() != Eigen::Success) {
    throw std::runtime_error("spectral: eigen-decomposition failed");
  }
  SpectralDecomp out{Matrix(q, q), Vector(q)};
  for (Eigen::Index k = 0; k < q; ++k) {
    // SelfAdjointEigenSolver sorts ascending.
    const Eigen::Index src = q - 1 - k;
    out.values(k) = solver.eigenvalues()(src);
    auto col = solver.eigenvectors().col(src);
    Eigen::Index arg = 0;
    double best = -1.0;
    for (Eigen::Index i = 0; i < q; ++i) {
      if (std::abs(col(i)) > best) {
        best = std::abs(col(i));
        arg = i;
      }
    }
    out.vectors.col(k) = col(arg) < 0.0 ? Vector(-col) : Vector(col);
  }
  return out;
}

inline Matrix sym_exp(const SpectralDecomp& d,
                      double max_eigenvalue = kMaxExpEigenvalue) {
  if (d.values.size() > 0 && d.values.maxCoeff() > max_eigenvalue) {
    throw std::overflow_error("sym_exp: eigenvalue exceeds bound (diverging step)");
  }
  return detail::spectral_map(d, [](double x) { return std::exp(x); });
}

inline Matrix sym_exp(const Matrix& a, double max_eigenvalue = kMaxExpEigenvalue) {
  return sym_exp(spectral(a), max_eigenvalue);
}

inline void require_positive_spectrum(const SpectralDecomp& d, const char* what) {
  const double scale = std::max(1.0, d.values.cwiseAbs().maxCoeff());
  if (d.values.size() > 0 && !(d.values.minCoeff() > 1e-12 * scale)) {
    throw std::domain_error(std::string(what) + ": matrix is not positive definite");
  }
}

inline Matrix sym_log(const Matrix& a) {
  const SpectralDecomp d = spectral(a);
  require_positive_spectrum(d, "sym_log");
  return detail::spectral_map(d, [](double x) { return std::log(x); });
}

inline Matrix spd_sqrt(const Matrix& a) {
  const SpectralDecomp d = spectral(a);
  require_positive_spectrum(d, "spd_sqrt");
  return detail::spectral_map(d, [](double x) { return std::sqrt(x); });
}

inline bool is_spd(const Matrix& a) {
  if (a.rows() != a.cols() || !a.allFinite()) return false;
  if ((a - a.transpose()).cwiseAbs().maxCoeff() >
      1e-10 * std::max(1.0, a.cwiseAbs().maxCoeff())) {
    return false;
  }
  Eigen::LLT<Matrix> llt(symmetrize(a));
  return llt.info() == Eigen::Success;
}

inline double frobenius_inner(const Matrix& m, const Matrix& n) {
  if (m.rows() != n.rows() || m.cols() != n.cols()) {
    throw std::invalid_argument("frobenius_inner: dimension mismatch");
  }
  return m.cwiseProduct(n).sum();
}

inline double frobenius_norm(const Matrix& m) { return m.norm(); }

/// log det of an SPD matrix via Cholesky.
inline double log_det_spd(const Matrix& a) {
  Eigen::LLT<Matrix> llt(symmetrize(a));
  if (llt.info() != Eigen::Success) {
    throw std::domain_error("log_det_spd: matrix is not positive definite");
  }
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

/// Rescale a positive definite matrix to determinant one.
inline Matrix normalize_det(const Matrix& a) {
  const double q = static_cast<double>(a.rows());
  return a * std::exp(-log_det_spd(a) / q);
}

}  // namespace robust_scatter

#endif  // ROBUST_SCATTER_SYMCONE_HPP
