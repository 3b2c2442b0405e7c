#ifndef ROBUST_SCATTER_SOLVER_HPP
#define ROBUST_SCATTER_SOLVER_HPP

// Iterative M-estimators of scatter.
//
// Every step has the form Sigma <- B U exp(diag(alpha)) U^T B^T where U holds
// eigenvectors of Psi(Q_B) = U diag(phi) U^T:
//
//   fixed point (FP)     alpha = log(phi)
//   gradient (G)         alpha = -t (1 - phi), t = |G|^2 / H(G)
//   partial Newton (PN)  alpha = a, a = H~^{-1} (phi - 1)  (+ c 1 1^T in Setting 0)
//
// G and PN are accepted only if the realized change of L is at least a fixed
// fraction of the predicted one; otherwise the FP step is taken. The full
// Newton step solves the Hessian system on all of W and is meant as an
// oracle for small problems.

#include "robust_scatter/objective.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace robust_scatter {

enum class Algorithm { fp, gradient, partial_newton, full_newton, fp3 };

enum class StepKind { fixed_point, fp_fallback, grad_accepted, pn_accepted, newton_accepted };

enum class StartKind { second_moment, identity, user };

inline std::string_view to_string(Algorithm a) {
  switch (a) {
    case Algorithm::fp: return "fp";
    case Algorithm::gradient: return "g";
    case Algorithm::partial_newton: return "pn";
    case Algorithm::full_newton: return "newton";
    case Algorithm::fp3: return "fp3";
  }
  return "?";
}

inline Algorithm parse_algorithm(std::string_view s) {
  if (s == "fp") return Algorithm::fp;
  if (s == "g") return Algorithm::gradient;
  if (s == "pn") return Algorithm::partial_newton;
  if (s == "newton") return Algorithm::full_newton;
  if (s == "fp3") return Algorithm::fp3;
  throw std::invalid_argument("unknown algorithm '" + std::string(s) + "'");
}

inline std::string_view to_string(StepKind k) {
  switch (k) {
    case StepKind::fixed_point: return "fixed_point";
    case StepKind::fp_fallback: return "fp_fallback";
    case StepKind::grad_accepted: return "grad_accepted";
    case StepKind::pn_accepted: return "pn_accepted";
    case StepKind::newton_accepted: return "newton_accepted";
  }
  return "?";
}

struct SolverConfig {
  /// Stop once |1 - phi| = |I - Psi| < delta.
  double delta = 1e-7;
  /// Defaults to 10000 for FP and FP3, 500 otherwise.
  std::optional<int> max_iter;
  /// Accept a G/PN/Newton trial if its L-change is <= predicted/accept_factor.
  double accept_factor = 4.0;
  /// Rank-one shift c 1 1^T added to H~ in Setting 0.
  double setting0_shift = 1.0;
  Algorithm algorithm = Algorithm::partial_newton;
  Reduction reduction = Reduction::deterministic;
  StartKind start = StartKind::second_moment;
  /// Used with StartKind::user. For location-scatter problems this is the
  /// scatter part and user_location the location part.
  Matrix user_start;
  Vector user_location;
  /// Recompute Y = X B^{-T} every this many steps (0 disables).
  int refresh_every = 50;

  int effective_max_iter() const {
    if (max_iter) return *max_iter;
    return (algorithm == Algorithm::fp || algorithm == Algorithm::fp3) ? 10000 : 500;
  }

  void validate() const {
    if (!(delta > 0.0)) throw std::invalid_argument("SolverConfig: delta must be > 0");
    if (!(accept_factor > 2.0)) {
      throw std::invalid_argument("SolverConfig: accept_factor must be > 2");
    }
    if (!(setting0_shift > 0.0)) {
      throw std::invalid_argument("SolverConfig: setting0_shift must be > 0");
    }
    if (max_iter && *max_iter < 1) throw std::invalid_argument("SolverConfig: max_iter must be >= 1");
  }

  ReduceOptions reduce_options() const { return ReduceOptions{reduction}; }
};

struct FitResult {
  Matrix sigma;
  std::optional<Vector> mu;
  int iterations = 0;
  std::vector<StepKind> step_log;
  /// Change of L caused by each step.
  std::vector<double> l_trace;
  /// |1 - phi| before each step.
  std::vector<double> residual_trace;
  double final_residual = std::numeric_limits<double>::infinity();
  bool converged = false;
  /// Location-scatter only: Gamma_{q+1,q+1} of the augmented estimate
  /// before any rescaling.
  std::optional<double> corner;
  /// Symmetrized estimator only: iterations spent computing the start.
  int start_iterations = 0;
  std::vector<std::string> warnings;

  int count(StepKind k) const {
    int c = 0;
    for (StepKind s : step_log) c += (s == k);
    return c;
  }
};

struct StepOutcome {
  StepKind kind;
  double loss_change;
};

namespace detail {

inline double residual(const SpectralDecomp& psi) {
  return (Vector::Ones(psi.values.size()) - psi.values).norm();
}

/// L-change of a diagonal trial step; +inf if the trial leaves the domain.
template <PointLayout L>
double trial_loss(const BasicWhitenedState<L>& st, const Vector& alpha) {
  if (!alpha.allFinite() || alpha.cwiseAbs().maxCoeff() > kMaxExpEigenvalue) {
    return std::numeric_limits<double>::infinity();
  }
  try {
    const double dl = l_delta_diag(st, alpha);
    return std::isfinite(dl) ? dl : std::numeric_limits<double>::infinity();
  } catch (const std::domain_error&) {
    return std::numeric_limits<double>::infinity();
  }
}

/// FP step in a frame where Psi = diag(phi).
template <PointLayout L>
StepOutcome fp_in_frame(BasicWhitenedState<L>& st, const Vector& phi, StepKind kind) {
  if (!phi.allFinite() || !(phi.minCoeff() > 0.0)) {
    throw std::runtime_error("fixed-point step: Psi is not positive definite");
  }
  const Vector alpha = phi.array().log();
  const double dl = l_delta_diag(st, alpha);
  st.scale_axes(alpha);
  return {kind, dl};
}

}  // namespace detail

/// One fixed-point step B <- B U diag(phi)^{1/2}, i.e. Sigma <- B Psi B^T.
template <PointLayout L>
StepOutcome fp_step(BasicWhitenedState<L>& st, const SpectralDecomp& psi) {
  st.rotate(psi.vectors);
  return detail::fp_in_frame(st, psi.values, StepKind::fixed_point);
}

template <PointLayout L>
StepOutcome fp_step(BasicWhitenedState<L>& st) {
  return fp_step(st, spectral(psi_matrix(st)));
}

/// Gradient step with step size t = |G|^2 / H(G), accepted if
/// L(exp(-tG), Q_B) <= -|G|^2 / accept_factor; otherwise a FP step.
template <PointLayout L>
StepOutcome gradient_step(BasicWhitenedState<L>& st, const Matrix& psi_mat,
                          const SpectralDecomp& psi, const SolverConfig& cfg) {
  const Eigen::Index q = st.dim();
  const Matrix g = Matrix::Identity(q, q) - psi_mat;
  const double g2 = g.squaredNorm();
  if (g2 == 0.0) throw std::invalid_argument("gradient_step: gradient is zero");
  const double h = h_form(st, g, psi_mat);
  if (!(h > 0.0)) {
    throw std::domain_error("gradient_step: H(G) <= 0, support conditions are violated");
  }
  const double t = g2 / h;
  st.rotate(psi.vectors);
  const Vector alpha = -t * (Vector::Ones(q) - psi.values);
  const double dl = detail::trial_loss(st, alpha);
  if (dl <= -g2 / cfg.accept_factor) {
    st.scale_axes(alpha);
    return {StepKind::grad_accepted, dl};
  }
  return detail::fp_in_frame(st, psi.values, StepKind::fp_fallback);
}

template <PointLayout L>
StepOutcome gradient_step(BasicWhitenedState<L>& st, const SolverConfig& cfg) {
  const Matrix p = psi_matrix(st);
  return gradient_step(st, p, spectral(p), cfg);
}

/// The Newton direction restricted to diagonal steps in the eigenframe of
/// Psi. The state must already be rotated so that Psi = diag(phi).
template <PointLayout L>
Vector pn_direction(const BasicWhitenedState<L>& st, const Vector& phi, const SolverConfig& cfg) {
  const Eigen::Index q = st.dim();
  Matrix h = h_tilde(st, phi);
  if (st.family.scale_free()) h.array() += cfg.setting0_shift;
  const Eigen::LDLT<Matrix> ldlt(h);
  if (ldlt.info() != Eigen::Success) return Vector::Constant(q, std::numeric_limits<double>::quiet_NaN());
  return ldlt.solve(phi - Vector::Ones(q));
}

/// Partial Newton step. Rotates the state into the eigenframe of Psi, tries
/// B <- B exp(diag(a)/2) and falls back to B <- B diag(phi)^{1/2}.
template <PointLayout L>
StepOutcome pn_step(BasicWhitenedState<L>& st, const SpectralDecomp& psi, const SolverConfig& cfg) {
  const Eigen::Index q = st.dim();
  st.rotate(psi.vectors);
  const Vector a = pn_direction(st, psi.values, cfg);
  const Vector g = Vector::Ones(q) - psi.values;
  const double dl = detail::trial_loss(st, a);
  if (dl <= a.dot(g) / cfg.accept_factor) {
    st.scale_axes(a);
    return {StepKind::pn_accepted, dl};
  }
  return detail::fp_in_frame(st, psi.values, StepKind::fp_fallback);
}

template <PointLayout L>
StepOutcome pn_step(BasicWhitenedState<L>& st, const SolverConfig& cfg) {
  return pn_step(st, spectral(psi_matrix(st)), cfg);
}

/// Full Newton direction A = -H(Q_B)^{-1} G on W. Throws if the Hessian
/// operator is not positive definite.
template <PointLayout L>
Matrix newton_direction(const BasicWhitenedState<L>& st, const Matrix& psi_mat) {
  const int q = st.dim();
  const std::vector<Matrix> basis = w_basis(q, st.family.setting());
  const Matrix h = h_operator_matrix(st, psi_mat);
  const Eigen::LLT<Matrix> llt(h);
  if (llt.info() != Eigen::Success) {
    throw std::domain_error("newton_direction: Hessian operator is not positive definite");
  }
  const Vector g = w_coordinates(basis, Matrix::Identity(q, q) - psi_mat);
  return w_compose(basis, -llt.solve(g));
}

template <PointLayout L>
StepOutcome full_newton_step(BasicWhitenedState<L>& st, const Matrix& psi_mat,
                             const SpectralDecomp& psi, const SolverConfig& cfg) {
  const int q = st.dim();
  const Matrix a = newton_direction(st, psi_mat);
  const SpectralDecomp d = spectral(a);
  const double predicted = frobenius_inner(a, Matrix::Identity(q, q) - psi_mat);
  BasicWhitenedState<L> trial{st.layout, st.family, Matrix(), Matrix(), st.y * d.vectors, st.reduce};
  const double dl = detail::trial_loss(trial, d.values);
  if (dl <= predicted / cfg.accept_factor) {
    st.rotate(d.vectors);
    st.scale_axes(d.values);
    return {StepKind::newton_accepted, dl};
  }
  st.rotate(psi.vectors);
  return detail::fp_in_frame(st, psi.values, StepKind::fp_fallback);
}

template <PointLayout L>
StepOutcome full_newton_step(BasicWhitenedState<L>& st, const SolverConfig& cfg) {
  const Matrix p = psi_matrix(st);
  return full_newton_step(st, p, spectral(p), cfg);
}

/// Iterate the configured step from the given state until |1 - phi| < delta
/// or the iteration budget is spent. Setting-0 results are scaled to det 1.
template <PointLayout L>
FitResult solve(BasicWhitenedState<L> st, const SolverConfig& cfg) {
  cfg.validate();
  if (cfg.algorithm == Algorithm::fp3) {
    throw std::invalid_argument("fp3 applies to location-scatter problems only");
  }
  const int max_iter = cfg.effective_max_iter();
  FitResult res;
  for (;;) {
    const Matrix psi_mat = psi_matrix(st);
    const SpectralDecomp psi = spectral(psi_mat);
    const double r = detail::residual(psi);
    res.final_residual = r;
    if (r < cfg.delta) {
      res.converged = true;
      break;
    }
    if (res.iterations >= max_iter) break;

    StepOutcome out{StepKind::fixed_point, 0.0};
    switch (cfg.algorithm) {
      case Algorithm::fp: out = fp_step(st, psi); break;
      case Algorithm::gradient: out = gradient_step(st, psi_mat, psi, cfg); break;
      case Algorithm::partial_newton: out = pn_step(st, psi, cfg); break;
      case Algorithm::full_newton:
        try {
          out = full_newton_step(st, psi_mat, psi, cfg);
        } catch (const std::domain_error&) {
          out = fp_step(st, psi);
          out.kind = StepKind::fp_fallback;
        }
        break;
      case Algorithm::fp3: break;
    }
    res.step_log.push_back(out.kind);
    res.l_trace.push_back(out.loss_change);
    res.residual_trace.push_back(r);
    ++res.iterations;
    if (cfg.refresh_every > 0 && res.iterations % cfg.refresh_every == 0) st.refresh();
  }
  res.sigma = st.sigma();
  if (st.family.scale_free()) res.sigma = normalize_det(res.sigma);
  return res;
}

inline Matrix start_matrix(const WeightedSample& sample, const SolverConfig& cfg) {
  const int q = sample.dim();
  switch (cfg.start) {
    case StartKind::second_moment: return sample.second_moment();
    case StartKind::identity: return Matrix::Identity(q, q);
    case StartKind::user:
      if (cfg.user_start.rows() != q || !is_spd(cfg.user_start)) {
        throw std::invalid_argument("user start is not an SPD matrix of the data dimension");
      }
      return cfg.user_start;
  }
  return Matrix::Identity(q, q);
}

/// M-estimator of scatter Sigma(Q) for a weighted sample.
inline FitResult estimate_scatter(const WeightedSample& sample, const RhoFamily& family,
                                  const SolverConfig& cfg) {
  cfg.validate();
  sample.validate_for(family);
  const SupportDiagnostics support = check_support(sample, family);
  if (!support.pass) {
    throw std::invalid_argument("estimate_scatter: " + support.messages.front());
  }
  FitResult res = solve(whiten(sample, family, start_matrix(sample, cfg), cfg.reduce_options()), cfg);
  res.warnings.insert(res.warnings.end(), support.messages.begin(), support.messages.end());
  return res;
}

/// Gamma(mu, Sigma) = [[Sigma + mu mu^T, mu], [mu^T, 1]].
inline Matrix gamma_matrix(const Vector& mu, const Matrix& sigma) {
  const Eigen::Index q = mu.size();
  Matrix g(q + 1, q + 1);
  g.topLeftCorner(q, q) = sigma + mu * mu.transpose();
  g.topRightCorner(q, 1) = mu;
  g.bottomLeftCorner(1, q) = mu.transpose();
  g(q, q) = 1.0;
  return g;
}

/// Rows [x_i^T, 1].
inline WeightedSample augment(const WeightedSample& sample) {
  Matrix y(sample.size(), sample.dim() + 1);
  y.leftCols(sample.dim()) = sample.data();
  y.col(sample.dim()).setOnes();
  return WeightedSample(std::move(y), sample.weights());
}

namespace detail {

inline std::pair<Vector, Matrix> location_start(const WeightedSample& sample, const SolverConfig& cfg) {
  const int q = sample.dim();
  switch (cfg.start) {
    case StartKind::second_moment: {
      const Vector mean = sample.data().transpose() * sample.weights();
      const Matrix centered = sample.data().rowwise() - mean.transpose();
      return {mean, symmetrize(centered.transpose() * sample.weights().asDiagonal() * centered)};
    }
    case StartKind::identity: return {Vector::Zero(q), Matrix::Identity(q, q)};
    case StartKind::user: {
      if (cfg.user_start.rows() != q || !is_spd(cfg.user_start)) {
        throw std::invalid_argument("user start is not an SPD matrix of the data dimension");
      }
      Vector mu = cfg.user_location.size() == q ? cfg.user_location : Vector::Zero(q);
      return {mu, cfg.user_start};
    }
  }
  return {Vector::Zero(q), Matrix::Identity(q, q)};
}

inline void require_location_nu(const RhoFamily& family) {
  if (family.nu() < 1.0) {
    throw std::invalid_argument("location-scatter estimation requires nu >= 1");
  }
}

}  // namespace detail

/// Joint M-estimator of location and scatter for rho_{nu,q}, nu >= 1, via
/// the (q+1)-dimensional scatter problem for the rows [x_i; 1] with
/// rho_{nu-1,q+1}.
inline FitResult fp3_estimate(const WeightedSample& sample, double nu, const SolverConfig& cfg);

inline FitResult estimate_location_scatter(const WeightedSample& sample, const RhoFamily& family,
                                           const SolverConfig& cfg) {
  detail::require_location_nu(family);
  if (family.q() != sample.dim()) {
    throw std::invalid_argument("estimate_location_scatter: family dimension mismatch");
  }
  if (cfg.algorithm == Algorithm::fp3) return fp3_estimate(sample, family.nu(), cfg);
  cfg.validate();
  const int q = sample.dim();
  const WeightedSample aug = augment(sample);
  const RhoFamily inner = family.augmented();
  const SupportDiagnostics support = check_support(aug, inner);
  if (!support.pass) {
    throw std::invalid_argument("estimate_location_scatter: " + support.messages.front());
  }
  const auto [mu0, sigma0] = detail::location_start(sample, cfg);
  FitResult res = solve(whiten(aug, inner, gamma_matrix(mu0, sigma0), cfg.reduce_options()), cfg);

  Matrix gamma = res.sigma;
  res.corner = gamma(q, q);
  if (inner.scale_free()) gamma /= gamma(q, q);
  const Vector mu = gamma.topRightCorner(q, 1);
  res.mu = mu;
  res.sigma = symmetrize(gamma.topLeftCorner(q, q) - mu * mu.transpose());
  return res;
}

/// Three-part fixed-point variant for location-scatter: with B_Gamma = [[B, mu], [0, 1]] and
/// Psi computed from the rows [B^{-1}(x - mu); 1], write
/// Psi = lambda Gamma(delta, C C^T) and update mu <- mu + B delta, B <- B C.
inline FitResult fp3_estimate(const WeightedSample& sample, double nu, const SolverConfig& cfg) {
  cfg.validate();
  const int q = sample.dim();
  const RhoFamily family(nu, q);
  detail::require_location_nu(family);
  const WeightedSample aug = augment(sample);
  const RhoFamily inner = family.augmented();
  aug.validate_for(inner);
  const SupportDiagnostics support = check_support(aug, inner);
  if (!support.pass) throw std::invalid_argument("fp3_estimate: " + support.messages.front());

  const auto [mu0, sigma0] = detail::location_start(sample, cfg);
  Matrix bg = Matrix::Identity(q + 1, q + 1);
  bg.topLeftCorner(q, q) = Eigen::LLT<Matrix>(sigma0).matrixL();
  bg.topRightCorner(q, 1) = mu0;
  WhitenedState st{WeightedRows(aug.weights()), inner, aug.data(), bg, Matrix(), cfg.reduce_options()};
  st.refresh();

  const int max_iter = cfg.effective_max_iter();
  FitResult res;
  for (;;) {
    const Matrix psi = psi_matrix(st);
    const double r = (Matrix::Identity(q + 1, q + 1) - psi).norm();
    res.final_residual = r;
    if (r < cfg.delta) {
      res.converged = true;
      break;
    }
    if (res.iterations >= max_iter) break;

    const double lambda = psi(q, q);
    const Vector shift = psi.topRightCorner(q, 1) / lambda;
    const Matrix cc = psi.topLeftCorner(q, q) / lambda - shift * shift.transpose();
    const Eigen::LLT<Matrix> llt(symmetrize(cc));
    if (llt.info() != Eigen::Success) {
      throw std::domain_error("fp3_estimate: degenerate configuration, C C^T is not SPD");
    }
    // In whitened coordinates the step is Gamma <- B_Gamma (Psi/lambda) B_Gamma^T.
    const SpectralDecomp scaled = spectral(psi / lambda);
    WhitenedState frame{st.layout, inner, Matrix(), Matrix(), st.y * scaled.vectors, st.reduce};
    const double dl = l_delta_diag(frame, Vector(scaled.values.array().log()));

    Matrix k = Matrix::Identity(q + 1, q + 1);
    k.topLeftCorner(q, q) = llt.matrixL();
    k.topRightCorner(q, 1) = shift;
    st.b = st.b * k;
    // y <- K^{-1} y, i.e. top <- C^{-1}(top - delta); the last coordinate stays 1.
    const Matrix top = st.y.leftCols(q) - st.y.col(q) * shift.transpose();
    st.y.leftCols(q) = llt.matrixL().solve(top.transpose()).transpose();
    res.step_log.push_back(StepKind::fixed_point);
    res.l_trace.push_back(dl);
    res.residual_trace.push_back(r);
    ++res.iterations;
    if (cfg.refresh_every > 0 && res.iterations % cfg.refresh_every == 0) st.refresh();
  }
  const Matrix b = st.b.topLeftCorner(q, q);
  res.mu = Vector(st.b.topRightCorner(q, 1));
  res.corner = 1.0;
  res.sigma = symmetrize(b * b.transpose());
  return res;
}

}  // namespace robust_scatter

#endif  // ROBUST_SCATTER_SOLVER_HPP
