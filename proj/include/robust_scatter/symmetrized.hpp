#ifndef ROBUST_SCATTER_SYMMETRIZED_HPP
#define ROBUST_SCATTER_SYMMETRIZED_HPP

// Symmetrized M-estimation: the scatter estimator applied to the distribution
// of all pairwise differences x_i - x_j, i < j. This removes the location
// nuisance, and independent blocks of coordinates yield a block-diagonal
// scatter functional.

#include "robust_scatter/solver.hpp"

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace robust_scatter {

enum class PairMode {
  /// Materialize the N x q difference matrix.
  all,
  /// Stream pairs row block by row block.
  seq,
  /// `all` when the difference matrix fits the memory budget, else `seq`.
  automatic,
};

inline PairMode parse_pair_mode(std::string_view s) {
  if (s == "all") return PairMode::all;
  if (s == "seq") return PairMode::seq;
  if (s == "auto") return PairMode::automatic;
  throw std::invalid_argument("unknown pair mode '" + std::string(s) + "'");
}

inline std::string_view to_string(PairMode m) {
  switch (m) {
    case PairMode::all: return "all";
    case PairMode::seq: return "seq";
    case PairMode::automatic: return "auto";
  }
  return "?";
}

struct SymmetrizedOptions {
  PairMode mode = PairMode::automatic;
  bool prewhiten = true;
  /// Tolerance of the prewhitening run; the outer delta when unset.
  std::optional<double> prewhiten_delta;
  int prewhiten_retries = 10;
  std::size_t memory_budget = std::size_t{256} << 20;
  std::uint64_t seed = 0;
};

inline PairMode resolve_mode(PairMode mode, Eigen::Index n, Eigen::Index q, std::size_t budget) {
  if (mode != PairMode::automatic) return mode;
  const double bytes = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1) *
                       static_cast<double>(q) * sizeof(double);
  return bytes <= static_cast<double>(budget) ? PairMode::all : PairMode::seq;
}

/// (1/N) sum_{i<j} (x_i - x_j)(x_i - x_j)^T = (n sum x x^T - s s^T) / N, s = sum x.
inline Matrix pairwise_second_moment(const Matrix& x) {
  const double n = static_cast<double>(x.rows());
  const Vector s = x.colwise().sum().transpose();
  const Matrix m = n * (x.transpose() * x) - s * s.transpose();
  return symmetrize(m / (0.5 * n * (n - 1.0)));
}

namespace detail {

inline void require_rows(const Matrix& y, Eigen::Index minimum, const char* what) {
  if (y.rows() < minimum) {
    throw std::invalid_argument(std::string(what) + ": need at least " + std::to_string(minimum) +
                                " rows, got " + std::to_string(y.rows()));
  }
}

/// State over the pairwise differences of the rows of y, with B = I.
template <class Fn>
auto with_pair_state(const Matrix& y, const RhoFamily& family, PairMode mode, Fn&& fn) {
  const PairMode m = resolve_mode(mode, y.rows(), y.cols(), SymmetrizedOptions{}.memory_budget);
  const Eigen::Index q = y.cols();
  if (m == PairMode::all) {
    Matrix d = materialize_differences(y);
    const Eigen::Index pairs = d.rows();
    WhitenedState st{WeightedRows(Vector::Constant(pairs, 1.0 / static_cast<double>(pairs))), family,
                     Matrix(), Matrix::Identity(q, q), std::move(d)};
    return fn(st);
  }
  PairwiseState st{PairwiseDifferences(y.rows()), family, Matrix(), Matrix::Identity(q, q), y};
  return fn(st);
}

}  // namespace detail

/// (1/N) sum_{i<j} rho'(|y_i - y_j|^2) (y_i - y_j)(y_i - y_j)^T.
inline Matrix pairwise_psi(const Matrix& y, const RhoFamily& family, PairMode mode) {
  detail::require_rows(y, 2, "pairwise_psi");
  return detail::with_pair_state(y, family, mode, [](const auto& st) { return psi_matrix(st); });
}

/// diag(phi) + (1/N) sum_{i<j} rho''(|y_i - y_j|^2) s(y_i - y_j) s(y_i - y_j)^T.
/// The Setting-0 shift is not applied here.
inline Matrix pairwise_h(const Vector& phi, const Matrix& y, const RhoFamily& family, PairMode mode) {
  detail::require_rows(y, 2, "pairwise_h");
  return detail::with_pair_state(y, family, mode,
                                 [&](const auto& st) { return h_tilde(st, phi); });
}

/// (1/N) sum_{i<j} [rho(|z_i - z_j|^2) - rho(|y_i - y_j|^2)] + sum_k a_k for
/// Z = Y exp(-diag(a)/2). Z is used only to check the caller's pairing; the
/// value is evaluated in the increment form from Y and a.
inline double pairwise_dl(const Matrix& y, const Matrix& z, const Vector& a, const RhoFamily& family,
                          PairMode mode) {
  detail::require_rows(y, 2, "pairwise_dl");
  if (z.rows() != y.rows() || z.cols() != y.cols() || a.size() != y.cols()) {
    throw std::invalid_argument("pairwise_dl: dimension mismatch");
  }
  const Matrix expected = y * (-0.5 * a).array().exp().matrix().asDiagonal();
  if ((expected - z).cwiseAbs().maxCoeff() > 1e-9 * std::max(1.0, y.cwiseAbs().maxCoeff())) {
    throw std::invalid_argument("pairwise_dl: Z is not Y exp(-diag(a)/2)");
  }
  return detail::with_pair_state(y, family, mode,
                                 [&](const auto& st) { return l_delta_diag(st, a); });
}

struct PrewhitenResult {
  Matrix sigma;
  int iterations = 0;
  int attempts = 0;
  /// True when every permutation failed and the second moment of the
  /// pairwise differences was used instead.
  bool fallback = false;
};

/// Start for the symmetrized estimator: the M-estimate for the n cyclic
/// differences x_{pi(i)} - x_{pi(i+1)} of a random permutation pi.
template <class Rng>
PrewhitenResult prewhiten_start(const Matrix& x, const RhoFamily& family, const SolverConfig& cfg,
                                Rng& rng, int retries = 10) {
  detail::require_rows(x, 3, "prewhiten_start");
  const Eigen::Index n = x.rows();
  PrewhitenResult out;
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  for (int attempt = 0; attempt < std::max(1, retries); ++attempt) {
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    ++out.attempts;
    Matrix cyc(n, x.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
      cyc.row(i) = x.row(perm[static_cast<std::size_t>(i)]) -
                   x.row(perm[static_cast<std::size_t>((i + 1) % n)]);
    }
    try {
      const FitResult fit = estimate_scatter(WeightedSample::uniform(std::move(cyc)), family, cfg);
      out.iterations = fit.iterations;
      if (is_spd(fit.sigma)) {
        out.sigma = fit.sigma;
        return out;
      }
    } catch (const std::domain_error&) {
      // duplicate points give a zero cyclic difference in Setting 0
    } catch (const std::invalid_argument&) {
      // rank-deficient cyclic differences
    }
  }
  out.fallback = true;
  out.sigma = pairwise_second_moment(x);
  return out;
}

/// Identity permutation variant, mainly for tests: differences
/// x_1 - x_2, ..., x_n - x_1.
inline Matrix cyclic_differences(const Matrix& x) {
  const Eigen::Index n = x.rows();
  Matrix cyc(n, x.cols());
  for (Eigen::Index i = 0; i < n; ++i) cyc.row(i) = x.row(i) - x.row((i + 1) % n);
  return cyc;
}

/// Symmetrized M-estimator of scatter. Uses the configured algorithm (PN by
/// default) on the pairwise-difference distribution, started from the
/// prewhitening estimate or from the second moment of the differences.
inline FitResult estimate_symmetrized(const Matrix& x, const RhoFamily& family, const SolverConfig& cfg,
                                      const SymmetrizedOptions& opts = {}) {
  cfg.validate();
  detail::require_rows(x, 3, "estimate_symmetrized");
  if (family.q() != x.cols()) {
    throw std::invalid_argument("estimate_symmetrized: family dimension does not match data");
  }
  if (cfg.algorithm == Algorithm::fp3) {
    throw std::invalid_argument("fp3 applies to location-scatter problems only");
  }
  if (!x.allFinite()) throw std::invalid_argument("estimate_symmetrized: non-finite data");
  // Everything below sees only x_i - x_0, so translated inputs with equal
  // differences give bit-identical results.
  const Matrix xc = x.rowwise() - x.row(0);

  Matrix start;
  int start_iterations = 0;
  std::vector<std::string> warnings;
  if (opts.prewhiten) {
    SolverConfig inner = cfg;
    inner.start = StartKind::second_moment;
    if (opts.prewhiten_delta) inner.delta = *opts.prewhiten_delta;
    std::mt19937_64 rng(opts.seed);
    const PrewhitenResult pre = prewhiten_start(xc, family, inner, rng, opts.prewhiten_retries);
    start = pre.sigma;
    start_iterations = pre.iterations;
    if (pre.fallback) warnings.push_back("prewhitening failed; started from the pairwise second moment");
  } else if (cfg.start == StartKind::user) {
    start = cfg.user_start;
  } else if (cfg.start == StartKind::identity) {
    start = Matrix::Identity(x.cols(), x.cols());
  } else {
    start = pairwise_second_moment(xc);
  }

  const ReduceOptions reduce = cfg.reduce_options();
  FitResult res;
  if (resolve_mode(opts.mode, x.rows(), x.cols(), opts.memory_budget) == PairMode::all) {
    Matrix d = materialize_differences(xc);
    const Eigen::Index pairs = d.rows();
    res = solve(make_state(WeightedRows(Vector::Constant(pairs, 1.0 / static_cast<double>(pairs))),
                           family, std::move(d), start, reduce),
                cfg);
  } else {
    res = solve(make_state(PairwiseDifferences(x.rows()), family, xc, start, reduce), cfg);
  }
  res.start_iterations = start_iterations;
  res.warnings.insert(res.warnings.end(), warnings.begin(), warnings.end());
  return res;
}

}  // namespace robust_scatter

#endif  // ROBUST_SCATTER_SYMMETRIZED_HPP
