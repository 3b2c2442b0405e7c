#include "robust_scatter/symmetrized.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <string>

namespace rs = robust_scatter;
using rs::Algorithm;
using rs::Matrix;
using rs::PairMode;
using rs::RhoFamily;
using rs::SolverConfig;
using rs::SymmetrizedOptions;
using rs::Vector;

namespace {

SolverConfig pn(double delta = 1e-10) {
  SolverConfig c;
  c.delta = delta;
  return c;
}

SymmetrizedOptions opts(PairMode mode, bool prewhiten = true, std::uint64_t seed = 7) {
  SymmetrizedOptions o;
  o.mode = mode;
  o.prewhiten = prewhiten;
  o.seed = seed;
  return o;
}

// Direct double loop over i < j.
Matrix naive_pair_psi(const Matrix& y, const RhoFamily& f) {
  const Eigen::Index n = y.rows();
  const Eigen::Index q = y.cols();
  Matrix m = Matrix::Zero(q, q);
  double pairs = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const Vector d = (y.row(i) - y.row(j)).transpose();
      m += f.rho_prime(d.squaredNorm()) * d * d.transpose();
      pairs += 1.0;
    }
  }
  return m / pairs;
}

Matrix square_corners() {
  Matrix x(4, 2);
  x << 0, 0, 1, 0, 0, 1, 1, 1;
  return x;
}

}  // namespace

TEST(CyclicDifferences, Examples) {
  Matrix x(3, 2);
  x << 1, 2, 4, 8, -3, 5;
  const Matrix c = rs::cyclic_differences(x);
  EXPECT_EQ(c.rows(), 3);
  EXPECT_EQ(c.row(0), (x.row(0) - x.row(1)));
  EXPECT_EQ(c.row(2), (x.row(2) - x.row(0)));
  EXPECT_LT(c.colwise().sum().norm(), 1e-15);
}

TEST(Prewhiten, DeterministicForFixedSeed) {
  rs_test::Gen gen(61);
  const Matrix x = gen.cauchy(60, 3);
  const RhoFamily f(1, 3);
  std::mt19937_64 r1(5), r2(5);
  const auto a = rs::prewhiten_start(x, f, pn(1e-7), r1);
  const auto b = rs::prewhiten_start(x, f, pn(1e-7), r2);
  EXPECT_EQ(a.sigma, b.sigma);
  EXPECT_FALSE(a.fallback);
  EXPECT_TRUE(rs::is_spd(a.sigma));
  EXPECT_EQ(a.attempts, 1);
}

TEST(Prewhiten, FallsBackOnDegenerateData) {
  // Every cyclic difference is a multiple of e1, so each attempt is rank deficient.
  Matrix x = Matrix::Zero(5, 2);
  for (int i = 0; i < 5; ++i) x(i, 0) = i;
  std::mt19937_64 rng(1);
  const auto r = rs::prewhiten_start(x, RhoFamily(1, 2), pn(1e-7), rng, 3);
  EXPECT_TRUE(r.fallback);
  EXPECT_EQ(r.attempts, 3);
}

TEST(PairwiseSecondMoment, MatchesDoubleLoop) {
  rs_test::Gen gen(62);
  const Matrix x = gen.gaussian(17, 4);
  Matrix m = Matrix::Zero(4, 4);
  for (int i = 0; i < 17; ++i) {
    for (int j = i + 1; j < 17; ++j) {
      const Vector d = (x.row(i) - x.row(j)).transpose();
      m += d * d.transpose();
    }
  }
  m /= 17.0 * 16.0 / 2.0;
  EXPECT_LT(rs_test::rel_diff(rs::pairwise_second_moment(x), m), 1e-13);
}

TEST(PairwisePsi, Examples) {
  const RhoFamily f(1, 1);
  Matrix two(2, 1);
  two << 3, 1;
  // One pair, d = 2: rho'(4) d^2 = (2/5) 4.
  for (PairMode m : {PairMode::all, PairMode::seq}) {
    EXPECT_NEAR(rs::pairwise_psi(two, f, m)(0, 0), 1.6, 1e-15);
  }

  Matrix three(3, 1);
  three << 0, 1, 3;
  // Pairs d = 1, 3, 2.
  const double hand = (2.0 / 2.0 * 1.0 + 2.0 / 10.0 * 9.0 + 2.0 / 5.0 * 4.0) / 3.0;
  for (PairMode m : {PairMode::all, PairMode::seq}) {
    EXPECT_NEAR(rs::pairwise_psi(three, f, m)(0, 0), hand, 1e-15);
  }
  Matrix one(1, 1);
  one << 0;
  EXPECT_THROW(rs::pairwise_psi(one, f, PairMode::seq), std::invalid_argument);
}

TEST(PairwisePsi, LayoutsAgreeWithOracle) {
  rs_test::Gen gen(63);
  for (int rep = 0; rep < 10; ++rep) {
    const int q = gen.integer(1, 6);
    const int n = gen.integer(2, 40);
    const Matrix y = gen.cauchy(n, q);
    for (const RhoFamily& f : {RhoFamily(0, q), RhoFamily(1, q), RhoFamily(3, q)}) {
      const Matrix all = rs::pairwise_psi(y, f, PairMode::all);
      const Matrix seq = rs::pairwise_psi(y, f, PairMode::seq);
      EXPECT_LT((all - seq).norm(), 1e-10 * std::max(1.0, all.norm()));
      EXPECT_LT(rs_test::rel_diff(seq, naive_pair_psi(y, f)), 1e-12);
    }
  }
}

TEST(PairwisePsi, DuplicateRowsNamePairInSettingZero) {
  Matrix y(4, 2);
  y << 1, 2, 0, 1, 5, 5, 0, 1;
  for (PairMode m : {PairMode::seq, PairMode::all}) {
    try {
      rs::pairwise_psi(y, RhoFamily::tyler(2), m);
      FAIL() << "expected domain_error";
    } catch (const std::domain_error& e) {
      if (m == PairMode::seq) {
        EXPECT_NE(std::string(e.what()).find("pair (1, 3)"), std::string::npos) << e.what();
      }
    }
  }
  EXPECT_NO_THROW(rs::pairwise_psi(y, RhoFamily(1, 2), PairMode::seq));
}

TEST(PairwiseH, Examples) {
  const RhoFamily f(1, 1);
  Matrix two(2, 1);
  two << 3, 1;
  Vector phi(1);
  phi << 0.7;
  const double expected = 0.7 + f.rho_second(4.0) * 16.0;
  for (PairMode m : {PairMode::all, PairMode::seq}) {
    EXPECT_NEAR(rs::pairwise_h(phi, two, f, m)(0, 0), expected, 1e-15);
  }

  rs_test::Gen gen(64);
  for (int rep = 0; rep < 10; ++rep) {
    const int q = gen.integer(2, 6);
    const Matrix y = gen.gaussian(gen.integer(3, 30), q);
    Vector p(q);
    for (int k = 0; k < q; ++k) p(k) = gen.uniform(0.5, 1.5);
    const RhoFamily g(2, q);
    const Matrix all = rs::pairwise_h(p, y, g, PairMode::all);
    const Matrix seq = rs::pairwise_h(p, y, g, PairMode::seq);
    EXPECT_LT((all - seq).norm(), 1e-10 * all.norm());

    // In Setting 0 the Psi diagonal cancels the curvature along 1.
    const RhoFamily t = RhoFamily::tyler(q);
    const Matrix psi = rs::pairwise_psi(y, t, PairMode::seq);
    const Matrix h0 = rs::pairwise_h(psi.diagonal(), y, t, PairMode::seq);
    EXPECT_NEAR(Vector::Ones(q).dot(h0 * Vector::Ones(q)), 0.0, 1e-10 * h0.norm());
  }
}

TEST(PairwiseDl, ZeroStepAndLayouts) {
  rs_test::Gen gen(65);
  for (int rep = 0; rep < 10; ++rep) {
    const int q = gen.integer(1, 5);
    const Matrix y = gen.cauchy(gen.integer(3, 30), q);
    const RhoFamily f(1, q);
    const Vector zero = Vector::Zero(q);
    EXPECT_EQ(rs::pairwise_dl(y, y, zero, f, PairMode::seq), 0.0);

    Vector a(q);
    for (int k = 0; k < q; ++k) a(k) = gen.uniform(-1.0, 1.0);
    const Matrix z = y * (-0.5 * a).array().exp().matrix().asDiagonal();
    const double all = rs::pairwise_dl(y, z, a, f, PairMode::all);
    const double seq = rs::pairwise_dl(y, z, a, f, PairMode::seq);
    EXPECT_NEAR(all, seq, 1e-12 * std::max(1.0, std::abs(all)));

    // Same value as the general increment on the materialized differences.
    const auto st = rs::whiten(rs::WeightedSample::uniform(rs::materialize_differences(y)), f,
                               Matrix::Identity(q, q));
    const Matrix a_mat = a.asDiagonal();
    EXPECT_NEAR(rs::l_delta_exp(st, a_mat), seq, 1e-11 * std::max(1.0, std::abs(seq)));

    // And the plain difference of the objective terms.
    double direct = a.sum();
    const Eigen::Index n = y.rows();
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = i + 1; j < n; ++j) {
        direct += (f.rho((z.row(i) - z.row(j)).squaredNorm()) - f.rho((y.row(i) - y.row(j)).squaredNorm())) /
                  (0.5 * static_cast<double>(n * (n - 1)));
      }
    }
    EXPECT_NEAR(seq, direct, 1e-9 * std::max(1.0, std::abs(direct)));
  }
  Matrix y(3, 1);
  y << 0, 1, 2;
  Vector a(1);
  a << 0.5;
  EXPECT_THROW(rs::pairwise_dl(y, y, a, RhoFamily(1, 1), PairMode::seq), std::invalid_argument);
}

TEST(EstimateSymmetrized, SquareCornersGiveIsotropicScatter) {
  for (PairMode m : {PairMode::all, PairMode::seq}) {
    for (const RhoFamily& f : {RhoFamily(1, 2), RhoFamily::tyler(2)}) {
      const auto res = rs::estimate_symmetrized(square_corners(), f, pn(), opts(m));
      ASSERT_TRUE(res.converged);
      EXPECT_NEAR(res.sigma(0, 1), 0.0, 1e-8);
      EXPECT_NEAR(res.sigma(0, 0), res.sigma(1, 1), 1e-8);
    }
  }
}

TEST(EstimateSymmetrized, LayoutsAgree) {
  rs_test::Gen gen(66);
  const Matrix x = gen.cauchy(50, 5);
  for (const RhoFamily& f : {RhoFamily(0, 5), RhoFamily(1, 5)}) {
    const auto all = rs::estimate_symmetrized(x, f, pn(), opts(PairMode::all));
    const auto seq = rs::estimate_symmetrized(x, f, pn(), opts(PairMode::seq));
    ASSERT_TRUE(all.converged && seq.converged);
    EXPECT_LT(rs_test::rel_diff(all.sigma, seq.sigma), 1e-8);
  }
}

TEST(EstimateSymmetrized, LocationInvariance) {
  rs_test::Gen gen(67);
  for (int rep = 0; rep < 5; ++rep) {
    const int q = gen.integer(2, 5);
    const Matrix x = gen.gaussian(40, q);
    Vector v(q);
    for (int k = 0; k < q; ++k) v(k) = gen.uniform(-5.0, 5.0);
    const Matrix shifted = x.rowwise() + v.transpose();
    const auto a = rs::estimate_symmetrized(x, RhoFamily(1, q), pn(), opts(PairMode::seq));
    const auto b = rs::estimate_symmetrized(shifted, RhoFamily(1, q), pn(), opts(PairMode::seq));
    EXPECT_LT(rs_test::rel_diff(a.sigma, b.sigma), 1e-10);
  }
  // Integer data and shifts keep every difference exact, so the runs match bit for bit.
  Matrix xi(30, 3);
  for (int i = 0; i < 30; ++i) {
    for (int k = 0; k < 3; ++k) xi(i, k) = static_cast<double>((7 * i + 3 * k * k + i * k) % 11);
  }
  const Matrix xs = xi.rowwise() + Vector::Constant(3, 64.0).transpose();
  const auto a = rs::estimate_symmetrized(xi, RhoFamily(1, 3), pn(), opts(PairMode::seq));
  const auto b = rs::estimate_symmetrized(xs, RhoFamily(1, 3), pn(), opts(PairMode::seq));
  EXPECT_EQ(a.sigma, b.sigma);
}

TEST(EstimateSymmetrized, PrewhiteningChangesOnlyTheStart) {
  rs_test::Gen gen(68);
  int better_or_equal = 0;
  const int reps = 20;
  for (int rep = 0; rep < reps; ++rep) {
    const Matrix x = gen.cauchy(80, 5);
    for (const RhoFamily& f : {RhoFamily(1, 5)}) {
      const auto with = rs::estimate_symmetrized(x, f, pn(1e-9), opts(PairMode::seq, true, rep));
      const auto without = rs::estimate_symmetrized(x, f, pn(1e-9), opts(PairMode::seq, false));
      ASSERT_TRUE(with.converged && without.converged);
      EXPECT_LT(rs_test::rel_diff(with.sigma, without.sigma), 1e-7);
      EXPECT_GT(with.start_iterations, 0);
      EXPECT_EQ(without.start_iterations, 0);
      better_or_equal += with.iterations <= without.iterations;
    }
  }
  EXPECT_GE(better_or_equal, (reps * 8) / 10);
}

TEST(EstimateSymmetrized, RejectsBadInput) {
  Matrix two(2, 2);
  two << 1, 2, 3, 4;
  EXPECT_THROW(rs::estimate_symmetrized(two, RhoFamily(1, 2), pn()), std::invalid_argument);
  SolverConfig c = pn();
  c.algorithm = Algorithm::fp3;
  EXPECT_THROW(rs::estimate_symmetrized(square_corners(), RhoFamily(1, 2), c), std::invalid_argument);
  EXPECT_THROW(rs::estimate_symmetrized(square_corners(), RhoFamily(1, 3), pn()), std::invalid_argument);
  Matrix bad = square_corners();
  bad(1, 1) = std::nan("");
  EXPECT_THROW(rs::estimate_symmetrized(bad, RhoFamily(1, 2), pn()), std::invalid_argument);
}

TEST(EstimateSymmetrized, AllAlgorithmsAgree) {
  rs_test::Gen gen(69);
  const Matrix x = gen.gaussian(40, 3);
  const auto ref = rs::estimate_symmetrized(x, RhoFamily(1, 3), pn(), opts(PairMode::seq));
  for (Algorithm a : {Algorithm::fp, Algorithm::gradient, Algorithm::full_newton}) {
    SolverConfig c = pn();
    c.algorithm = a;
    const auto res = rs::estimate_symmetrized(x, RhoFamily(1, 3), c, opts(PairMode::seq));
    ASSERT_TRUE(res.converged) << rs::to_string(a);
    EXPECT_LT(rs_test::rel_diff(res.sigma, ref.sigma), 1e-8) << rs::to_string(a);
  }
}

TEST(ResolveMode, MemoryBudget) {
  EXPECT_EQ(rs::resolve_mode(PairMode::automatic, 500, 20, std::size_t{256} << 20), PairMode::all);
  // 20000 rows, q = 20: about 32 GB of differences.
  EXPECT_EQ(rs::resolve_mode(PairMode::automatic, 20000, 20, std::size_t{256} << 20), PairMode::seq);
  EXPECT_EQ(rs::resolve_mode(PairMode::seq, 10, 2, std::size_t{256} << 20), PairMode::seq);
  EXPECT_EQ(rs::resolve_mode(PairMode::all, 20000, 20, 0), PairMode::all);
  EXPECT_EQ(rs::parse_pair_mode("auto"), PairMode::automatic);
  EXPECT_THROW(rs::parse_pair_mode("some"), std::invalid_argument);
}
