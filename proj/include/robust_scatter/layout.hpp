#ifndef ROBUST_SCATTER_LAYOUT_HPP
#define ROBUST_SCATTER_LAYOUT_HPP

// Point layouts describe which weighted points a distribution Q puts mass on,
// given a whitened data matrix Y. Every statistic of the objective is a
// weighted sum over these points, evaluated block by block.
//
//   WeightedRows         points are the rows of Y with sample weights.
//   PairwiseDifferences  points are y_i - y_j for i < j with weight 1/N,
//                        N = n(n-1)/2, streamed one anchor row at a time.

#include "robust_scatter/parallel.hpp"
#include "robust_scatter/symcone.hpp"

#include <concepts>
#include <cstddef>
#include <string>
#include <utility>

namespace robust_scatter {

/// One block of points handed to a reduction kernel.
struct PointBlock {
  Eigen::Ref<const Matrix> points;
  Eigen::Ref<const Vector> weights;
  /// Row layout: -1. Pair layout: the anchor row i of pairs (i, first + k).
  Eigen::Index anchor;
  Eigen::Index first;

  std::string label(Eigen::Index k) const {
    if (anchor < 0) return "row " + std::to_string(first + k);
    return "pair (" + std::to_string(anchor) + ", " + std::to_string(first + k) + ")";
  }
};

template <class L>
concept PointLayout = requires(const L& layout, const Matrix& y) {
  { layout.point_count(y) } -> std::convertible_to<std::size_t>;
  { layout.block_count(y) } -> std::convertible_to<std::size_t>;
  { layout.block(y, std::size_t{0}) } -> std::same_as<PointBlock>;
};

class WeightedRows {
 public:
  static constexpr Eigen::Index kBlockRows = 256;

  explicit WeightedRows(Vector weights) : w_(std::move(weights)) {}

  const Vector& weights() const { return w_; }

  std::size_t point_count(const Matrix& y) const { return static_cast<std::size_t>(y.rows()); }

  std::size_t block_count(const Matrix& y) const {
    return static_cast<std::size_t>((y.rows() + kBlockRows - 1) / kBlockRows);
  }

  PointBlock block(const Matrix& y, std::size_t b) const {
    const Eigen::Index start = static_cast<Eigen::Index>(b) * kBlockRows;
    const Eigen::Index len = std::min(kBlockRows, y.rows() - start);
    return PointBlock{y.middleRows(start, len), w_.segment(start, len), -1, start};
  }

 private:
  Vector w_;
};

/// Streams the n(n-1)/2 pairwise differences without materializing them.
/// Block b holds the differences y_b - y_j for j > b, so the partition is
/// fixed by n alone.
class PairwiseDifferences {
 public:
  explicit PairwiseDifferences(Eigen::Index n) : n_(n) {
    if (n < 2) throw std::invalid_argument("PairwiseDifferences: need at least 2 rows");
    const double pairs = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
    w_ = Vector::Constant(n - 1, 1.0 / pairs);
  }

  Eigen::Index rows() const { return n_; }

  std::size_t point_count(const Matrix&) const {
    return static_cast<std::size_t>(n_) * static_cast<std::size_t>(n_ - 1) / 2;
  }

  std::size_t block_count(const Matrix&) const { return static_cast<std::size_t>(n_ - 1); }

  PointBlock block(const Matrix& y, std::size_t b) const {
    const Eigen::Index i = static_cast<Eigen::Index>(b);
    const Eigen::Index len = n_ - 1 - i;
    buffer_ = y.bottomRows(len).rowwise() - y.row(i);
    buffer_ *= -1.0;
    return PointBlock{buffer_, w_.head(len), i, i + 1};
  }

 private:
  Eigen::Index n_;
  Vector w_;
  // Per-thread scratch: a block is consumed before the next is requested on
  // the same thread.
  static inline thread_local Matrix buffer_;
};

/// All n(n-1)/2 differences x_i - x_j (i < j) as a dense matrix, in the same
/// order PairwiseDifferences streams them.
inline Matrix materialize_differences(const Matrix& x) {
  const Eigen::Index n = x.rows();
  const Eigen::Index pairs = n * (n - 1) / 2;
  Matrix out(pairs, x.cols());
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    const Eigen::Index len = n - 1 - i;
    out.middleRows(r, len) = (-(x.bottomRows(len).rowwise() - x.row(i)));
    r += len;
  }
  return out;
}

/// Reduce kernel(block) over every block of the layout.
template <PointLayout L, class Acc, class Kernel>
Acc reduce_points(const L& layout, const Matrix& y, const Acc& zero, Kernel&& kernel,
                  const ReduceOptions& opts, std::size_t flops_per_point) {
  const std::size_t work = layout.point_count(y) * flops_per_point;
  return reduce_blocks(
      layout.block_count(y), zero,
      [&](std::size_t b) -> Acc { return kernel(layout.block(y, b)); }, opts, work);
}

}  // namespace robust_scatter

#endif  // ROBUST_SCATTER_LAYOUT_HPP
