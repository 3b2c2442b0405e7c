#ifndef ROBUST_SCATTER_OBJECTIVE_HPP
#define ROBUST_SCATTER_OBJECTIVE_HPP

// The target L(Sigma, Q) and its local geometry at a whitened state.
//
// For Sigma = B B^T and symmetric A,
//   L(B exp(A) B^T, Q) - L(B B^T, Q) = L(exp(A), Q_B)
//     = <A, G> + H(A)/2 + o(|A|^2),
// with Q_B the law of B^{-1} x, Psi = sum w rho'(|y|^2) y y^T, G = I - Psi and
// H(A) = <A^2, Psi> + sum w rho''(|y|^2) (y^T A y)^2.

#include "robust_scatter/layout.hpp"
#include "robust_scatter/rho.hpp"
#include "robust_scatter/sample.hpp"
#include "robust_scatter/symcone.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace robust_scatter {

/// Candidate factor B together with the whitened points Y = X B^{-T}.
/// Owned by a single solver run.
template <PointLayout Layout>
struct BasicWhitenedState {
  Layout layout;
  RhoFamily family;
  Matrix x;
  Matrix b;
  Matrix y;
  ReduceOptions reduce{};

  int dim() const { return static_cast<int>(y.cols()); }
  Matrix sigma() const { return symmetrize(b * b.transpose()); }

  /// Recompute Y from the source rows, discarding drift accumulated by the
  /// multiplicative updates.
  void refresh() {
    y = b.partialPivLu().solve(x.transpose()).transpose();
  }

  /// B <- B R, Y <- Y R for orthogonal R; Sigma is unchanged.
  void rotate(const Matrix& r) {
    b = b * r;
    y = y * r;
  }

  /// B <- B diag(exp(alpha/2)), Y <- Y diag(exp(-alpha/2)), i.e.
  /// Sigma <- B diag(exp(alpha)) B^T in the current frame.
  void scale_axes(const Vector& alpha) {
    const Vector up = (0.5 * alpha).array().exp();
    const Vector down = (-0.5 * alpha).array().exp();
    b = b * up.asDiagonal();
    y = y * down.asDiagonal();
  }
};

using WhitenedState = BasicWhitenedState<WeightedRows>;
using PairwiseState = BasicWhitenedState<PairwiseDifferences>;

namespace detail {

inline Vector squared_norms(const PointBlock& blk, const RhoFamily& family) {
  Vector s = blk.points.rowwise().squaredNorm();
  if (family.scale_free()) {
    for (Eigen::Index k = 0; k < s.size(); ++k) {
      if (!(s(k) > 0.0)) {
        throw std::domain_error("zero vector at " + blk.label(k) +
                                " is not allowed in Setting 0");
      }
    }
  }
  return s;
}

inline Vector rho_prime_of(const RhoFamily& f, const Vector& s) {
  return s.unaryExpr([&](double v) { return f.rho_prime(v); });
}

inline Vector rho_second_of(const RhoFamily& f, const Vector& s) {
  return s.unaryExpr([&](double v) { return f.rho_second(v); });
}

}  // namespace detail

/// Initial state with B = Sigma0^{1/2} (symmetric root).
template <PointLayout L>
BasicWhitenedState<L> make_state(L layout, const RhoFamily& family, Matrix x,
                                 const Matrix& sigma0, ReduceOptions reduce = {}) {
  if (family.q() != x.cols()) {
    throw std::invalid_argument("whiten: family dimension does not match data");
  }
  if (sigma0.rows() != x.cols() || !is_spd(sigma0)) {
    throw std::invalid_argument("whiten: start matrix is not SPD of matching size");
  }
  BasicWhitenedState<L> st{std::move(layout), family, std::move(x), spd_sqrt(sigma0), Matrix(),
                           reduce};
  st.refresh();
  return st;
}

inline WhitenedState whiten(const WeightedSample& sample, const RhoFamily& family,
                            const Matrix& sigma0, ReduceOptions reduce = {}) {
  sample.validate_for(family);
  return make_state(WeightedRows(sample.weights()), family, sample.data(), sigma0, reduce);
}

/// Psi(Q_B) = sum_i w_i rho'(|y_i|^2) y_i y_i^T.
template <PointLayout L>
Matrix psi_matrix(const BasicWhitenedState<L>& st) {
  const Eigen::Index q = st.dim();
  const RhoFamily& f = st.family;
  Matrix psi = reduce_points(
      st.layout, st.y, Matrix(Matrix::Zero(q, q)),
      [&](const PointBlock& blk) -> Matrix {
        const Vector s = detail::squared_norms(blk, f);
        const Vector c = blk.weights.cwiseProduct(detail::rho_prime_of(f, s));
        Matrix acc = Matrix::Zero(q, q);
        acc.selfadjointView<Eigen::Lower>().rankUpdate(blk.points.transpose() * c.cwiseSqrt().asDiagonal());
        return acc;
      },
      st.reduce, static_cast<std::size_t>(q * q + 4 * q));
  psi = Matrix(psi.selfadjointView<Eigen::Lower>());
  if (!psi.allFinite()) throw std::runtime_error("psi_matrix: non-finite accumulation");
  return psi;
}

template <PointLayout L>
Matrix gradient(const BasicWhitenedState<L>& st) {
  return Matrix::Identity(st.dim(), st.dim()) - psi_matrix(st);
}

/// L(B diag(exp(alpha)) B^T, Q) - L(B B^T, Q) in the current frame of the
/// state. Uses |z|^2 - |y|^2 = sum_j y_j^2 expm1(-alpha_j) so the result is
/// accurate even when the step is tiny.
template <PointLayout L>
double l_delta_diag(const BasicWhitenedState<L>& st, const Vector& alpha) {
  const Eigen::Index q = st.dim();
  if (alpha.size() != q) throw std::invalid_argument("l_delta_diag: size mismatch");
  const Vector shrink = (-alpha).array().unaryExpr([](double v) { return std::expm1(v); });
  const RhoFamily& f = st.family;
  const double sum = reduce_points(
      st.layout, st.y, 0.0,
      [&](const PointBlock& blk) -> double {
        const Vector s = detail::squared_norms(blk, f);
        const Vector ds = blk.points.cwiseAbs2() * shrink;
        double acc = 0.0;
        for (Eigen::Index k = 0; k < s.size(); ++k) {
          acc += blk.weights(k) * f.rho_increment(s(k), ds(k));
        }
        return acc;
      },
      st.reduce, static_cast<std::size_t>(4 * q + 20));
  return sum + alpha.sum();
}

/// L(B exp(A) B^T, Q) - L(B B^T, Q), computed from the whitened points only:
/// z_i = exp(-A/2) y_i and the difference is sum w [rho(|z|^2) - rho(|y|^2)] + tr(A).
template <PointLayout L>
double l_delta_exp(const BasicWhitenedState<L>& st, const Matrix& a) {
  const SpectralDecomp d = spectral(a);
  if (d.values.size() > 0 && (-d.values).maxCoeff() > kMaxExpEigenvalue) {
    throw std::overflow_error("l_delta_exp: step overflows");
  }
  BasicWhitenedState<L> rotated{st.layout, st.family, Matrix(), Matrix(), st.y * d.vectors,
                                st.reduce};
  return l_delta_diag(rotated, d.values);
}

/// H(A, Q_B) = <A^2, Psi> + sum w rho''(|y|^2) (y^T A y)^2.
template <PointLayout L>
double h_form(const BasicWhitenedState<L>& st, const Matrix& a, const Matrix& psi) {
  const Eigen::Index q = st.dim();
  const RhoFamily& f = st.family;
  const double curvature = reduce_points(
      st.layout, st.y, 0.0,
      [&](const PointBlock& blk) -> double {
        const Vector s = detail::squared_norms(blk, f);
        const Vector quad = (blk.points * a).cwiseProduct(blk.points).rowwise().sum();
        return (blk.weights.cwiseProduct(detail::rho_second_of(f, s)))
            .dot(quad.cwiseAbs2());
      },
      st.reduce, static_cast<std::size_t>(q * q + 4 * q));
  return frobenius_inner(a * a, psi) + curvature;
}

template <PointLayout L>
double h_form(const BasicWhitenedState<L>& st, const Matrix& a) {
  return h_form(st, a, psi_matrix(st));
}

/// diag(phi) + sum w rho''(|y|^2) s(y) s(y)^T with s(y) = (y_j^2)_j. The
/// state must already be rotated so that Psi = diag(phi).
template <PointLayout L>
Matrix h_tilde(const BasicWhitenedState<L>& st, const Vector& phi) {
  const Eigen::Index q = st.dim();
  const RhoFamily& f = st.family;
  Matrix h = reduce_points(
      st.layout, st.y, Matrix(Matrix::Zero(q, q)),
      [&](const PointBlock& blk) -> Matrix {
        const Vector s = detail::squared_norms(blk, f);
        const Matrix sq = blk.points.cwiseAbs2();
        const Vector c = blk.weights.cwiseProduct(detail::rho_second_of(f, s));
        return sq.transpose() * c.asDiagonal() * sq;
      },
      st.reduce, static_cast<std::size_t>(q * q + 4 * q));
  h = symmetrize(h);
  h.diagonal() += phi;
  return h;
}

/// Orthonormal basis of the perturbation space W, in a fixed order:
///   Setting 1: e_i e_i^T (i = 1..q), then (e_i e_j^T + e_j e_i^T)/sqrt(2), i < j.
///   Setting 0: the q-1 Helmert diagonals
///              (sum_{j<=k} e_j e_j^T - k e_{k+1} e_{k+1}^T)/sqrt(k(k+1)),
///              then the same off-diagonal units.
inline std::vector<Matrix> w_basis(int q, int setting) {
  std::vector<Matrix> basis;
  if (setting == 0) {
    for (int k = 1; k < q; ++k) {
      Matrix e = Matrix::Zero(q, q);
      const double norm = std::sqrt(static_cast<double>(k) * (k + 1));
      for (int j = 0; j < k; ++j) e(j, j) = 1.0 / norm;
      e(k, k) = -static_cast<double>(k) / norm;
      basis.push_back(std::move(e));
    }
  } else {
    for (int i = 0; i < q; ++i) {
      Matrix e = Matrix::Zero(q, q);
      e(i, i) = 1.0;
      basis.push_back(std::move(e));
    }
  }
  const double r = 1.0 / std::sqrt(2.0);
  for (int i = 0; i < q; ++i) {
    for (int j = i + 1; j < q; ++j) {
      Matrix e = Matrix::Zero(q, q);
      e(i, j) = r;
      e(j, i) = r;
      basis.push_back(std::move(e));
    }
  }
  return basis;
}

/// Coordinates <E_k, A> of a symmetric matrix in a basis of W.
inline Vector w_coordinates(const std::vector<Matrix>& basis, const Matrix& a) {
  Vector c(static_cast<Eigen::Index>(basis.size()));
  for (std::size_t k = 0; k < basis.size(); ++k) {
    c(static_cast<Eigen::Index>(k)) = frobenius_inner(basis[k], a);
  }
  return c;
}

inline Matrix w_compose(const std::vector<Matrix>& basis, const Vector& c) {
  Matrix a = Matrix::Zero(basis.front().rows(), basis.front().cols());
  for (std::size_t k = 0; k < basis.size(); ++k) a += c(static_cast<Eigen::Index>(k)) * basis[k];
  return a;
}

/// Matrix of the Hessian operator
///   H(Q_B) A = (Psi A + A Psi)/2 + sum w rho''(|y|^2) (y^T A y) y y^T
/// in the basis w_basis(q, setting).
template <PointLayout L>
Matrix h_operator_matrix(const BasicWhitenedState<L>& st, const Matrix& psi) {
  const int q = st.dim();
  const RhoFamily& f = st.family;
  const std::vector<Matrix> basis = w_basis(q, f.setting());
  const auto m = static_cast<Eigen::Index>(basis.size());

  // Column k of `quadratic` maps a point y to y^T E_k y, written as a linear
  // functional of the flattened outer product y y^T.
  Matrix quadratic(q * q, m);
  for (Eigen::Index k = 0; k < m; ++k) {
    quadratic.col(k) = Eigen::Map<const Vector>(basis[static_cast<std::size_t>(k)].data(), q * q);
  }
  Matrix h = reduce_points(
      st.layout, st.y, Matrix(Matrix::Zero(m, m)),
      [&](const PointBlock& blk) -> Matrix {
        const Vector s = detail::squared_norms(blk, f);
        const Eigen::Index np = blk.points.rows();
        Matrix outer(np, q * q);
        for (int j = 0; j < q; ++j) {
          for (int i = 0; i < q; ++i) {
            outer.col(j * q + i) = blk.points.col(i).cwiseProduct(blk.points.col(j));
          }
        }
        const Matrix t = outer * quadratic;
        const Vector c = blk.weights.cwiseProduct(detail::rho_second_of(f, s));
        return t.transpose() * c.asDiagonal() * t;
      },
      st.reduce, static_cast<std::size_t>(q * q * m + m * m));
  for (Eigen::Index k = 0; k < m; ++k) {
    for (Eigen::Index l = 0; l < m; ++l) {
      h(k, l) += (basis[static_cast<std::size_t>(k)] * psi * basis[static_cast<std::size_t>(l)]).trace();
    }
  }
  return symmetrize(h);
}

template <PointLayout L>
Matrix h_operator_matrix(const BasicWhitenedState<L>& st) {
  return h_operator_matrix(st, psi_matrix(st));
}

/// L(Sigma, Q) = sum w [rho(x^T Sigma^{-1} x) - rho(x^T x)] + log det Sigma
/// over the points of `layout` built from the raw rows `x`. In Setting 0 this
/// is q sum w log(x^T Sigma^{-1} x / x^T x) + log det Sigma.
template <PointLayout L>
double l_value(const L& layout, const Matrix& x, const Matrix& sigma, const RhoFamily& family,
               const ReduceOptions& reduce = {}) {
  Eigen::LLT<Matrix> llt(symmetrize(sigma));
  if (llt.info() != Eigen::Success) throw std::domain_error("l_value: Sigma is not SPD");
  const Matrix white = llt.matrixL().solve(x.transpose()).transpose();
  const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  // Points of `white` are L^{-1} p for the points p of x, so |.|^2 = p^T Sigma^{-1} p.
  // Both matrices are visited with the same block partition.
  const Eigen::Index q = x.cols();
  const double sum = reduce_blocks(
      layout.block_count(x), 0.0,
      [&](std::size_t b) -> double {
        // PairwiseDifferences reuses one scratch buffer per thread, so s0 must
        // be taken before the second block is requested.
        const Vector s0 = detail::squared_norms(layout.block(x, b), family);
        const PointBlock wb = layout.block(white, b);
        const Vector s1 = detail::squared_norms(wb, family);
        double acc = 0.0;
        for (Eigen::Index k = 0; k < s0.size(); ++k) {
          acc += wb.weights(k) * family.rho_increment(s0(k), s1(k) - s0(k));
        }
        return acc;
      },
      reduce, layout.point_count(x) * static_cast<std::size_t>(4 * q));
  return sum + log_det;
}

inline double l_value(const Matrix& sigma, const WeightedSample& sample, const RhoFamily& family) {
  return l_value(WeightedRows(sample.weights()), sample.data(), sigma, family);
}

template <PointLayout L>
double l_value(const BasicWhitenedState<L>& st) {
  return l_value(st.layout, st.x, st.sigma(), st.family, st.reduce);
}

/// Necessary-condition screening of the support conditions. Certifying the
/// subspace mass conditions for every subspace is out of reach; this checks
/// the rank and the mass carried by single directions.
struct SupportDiagnostics {
  int rank = 0;
  double smallest_singular_value = 0.0;
  /// Largest weight found on a single line through the origin.
  double max_direction_weight = 0.0;
  /// Bound that mass must stay strictly below for dim(V) = 1.
  double direction_bound = 0.0;
  /// Weight of the point 0 (Setting 1 bound nu/(nu+q)).
  double origin_weight = 0.0;
  bool pass = false;
  bool warn = false;
  std::vector<std::string> messages;
};

inline SupportDiagnostics check_support(const WeightedSample& sample, const RhoFamily& family) {
  SupportDiagnostics d;
  const Matrix& x = sample.data();
  const Vector& w = sample.weights();
  const Eigen::Index n = x.rows();
  const int q = sample.dim();

  const Matrix weighted = w.cwiseSqrt().asDiagonal() * x;
  Eigen::JacobiSVD<Matrix> svd(weighted);
  const Vector sv = svd.singularValues();
  const double tol = std::max<double>(n, q) * std::numeric_limits<double>::epsilon() *
                     (sv.size() > 0 ? sv(0) : 0.0);
  d.rank = static_cast<int>((sv.array() > tol).count());
  d.smallest_singular_value = sv.size() == q ? sv(q - 1) : 0.0;
  if (d.rank < q) {
    d.messages.push_back("data rank " + std::to_string(d.rank) + " < dimension " +
                         std::to_string(q));
  }

  const double nu = family.nu();
  d.direction_bound = family.scale_free() ? 1.0 / q : (nu + 1.0) / (nu + q);

  const Vector norms = x.rowwise().norm();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (norms(i) == 0.0) d.origin_weight += w(i);
  }

  auto mass_on_line = [&](const Vector& dir) {
    double mass = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (norms(i) == 0.0) continue;
      if (std::abs(std::abs(x.row(i).dot(dir)) - norms(i)) <= 1e-9 * norms(i)) mass += w(i);
    }
    return mass + d.origin_weight;
  };
  if (q > 1) {
    const SpectralDecomp moment = spectral(sample.second_moment());
    for (int k = 0; k < q; ++k) {
      d.max_direction_weight = std::max(d.max_direction_weight, mass_on_line(moment.vectors.col(k)));
    }
    // Data directions are probed too; quadratic in n, so capped.
    const Eigen::Index probes = std::min<Eigen::Index>(n, 2000);
    for (Eigen::Index i = 0; i < probes; ++i) {
      if (norms(i) == 0.0) continue;
      d.max_direction_weight =
          std::max(d.max_direction_weight, mass_on_line(x.row(i).transpose() / norms(i)));
    }
    if (d.max_direction_weight >= d.direction_bound) {
      d.warn = true;
      d.messages.push_back("a single direction carries weight " +
                           std::to_string(d.max_direction_weight) + " >= " +
                           std::to_string(d.direction_bound));
    }
  }
  if (!family.scale_free() && d.origin_weight >= nu / (nu + q)) {
    d.warn = true;
    d.messages.push_back("weight at the origin exceeds nu/(nu+q)");
  }
  d.pass = d.rank == q;
  return d;
}

}  // namespace robust_scatter

#endif  // ROBUST_SCATTER_OBJECTIVE_HPP
