#ifndef ROBUST_SCATTER_SIMULATE_HPP
#define ROBUST_SCATTER_SIMULATE_HPP

#include "robust_scatter/symcone.hpp"

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace robust_scatter {

enum class SimModel { gaussian, cauchy, outlier };

inline std::string_view to_string(SimModel m) {
  switch (m) {
    case SimModel::gaussian: return "gaussian";
    case SimModel::cauchy: return "cauchy";
    case SimModel::outlier: return "outlier";
  }
  return "?";
}

inline SimModel parse_sim_model(std::string_view s) {
  if (s == "gaussian") return SimModel::gaussian;
  if (s == "cauchy") return SimModel::cauchy;
  if (s == "outlier") return SimModel::outlier;
  throw std::invalid_argument("unknown data model '" + std::string(s) + "'");
}

struct SimSpec {
  int n = 0;
  int q = 0;
  SimModel model = SimModel::gaussian;
  /// Mean shift of column 1 in the first n/10 rows (outlier model only).
  double outlier_shift = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (n < 1 || q < 1) throw std::invalid_argument("SimSpec: n and q must be positive");
    if (model == SimModel::outlier && !(outlier_shift >= 0.0)) {
      throw std::invalid_argument("SimSpec: outlier shift must be >= 0");
    }
    if (model != SimModel::outlier && outlier_shift != 0.0) {
      throw std::invalid_argument("SimSpec: outlier shift is only defined for the outlier model");
    }
  }

  std::string label() const {
    std::string s = std::string(to_string(model)) + "_n" + std::to_string(n) + "_q" + std::to_string(q);
    if (model == SimModel::outlier) s += "_shift" + std::to_string(outlier_shift);
    return s;
  }
};

/// Rows are generated in order, entries left to right:
///   gaussian  i.i.d. N(0,1);
///   cauchy    (Z_j / Z_0)_j with Z_0 drawn first for each row;
///   outlier   N(0,1), plus outlier_shift in column 1 of rows 1..floor(n/10).
/// The outlier model with shift 0 reproduces the gaussian model draw for draw.
inline Matrix simulate(const SimSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix x(spec.n, spec.q);
  for (int i = 0; i < spec.n; ++i) {
    if (spec.model == SimModel::cauchy) {
      const double divisor = normal(rng);
      for (int j = 0; j < spec.q; ++j) x(i, j) = normal(rng) / divisor;
    } else {
      for (int j = 0; j < spec.q; ++j) x(i, j) = normal(rng);
    }
  }
  if (spec.model == SimModel::outlier) {
    for (int i = 0; i < spec.n / 10; ++i) x(i, 0) += spec.outlier_shift;
  }
  return x;
}

}  // namespace robust_scatter

#endif  // ROBUST_SCATTER_SIMULATE_HPP
