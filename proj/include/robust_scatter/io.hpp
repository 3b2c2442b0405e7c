#ifndef ROBUST_SCATTER_IO_HPP
#define ROBUST_SCATTER_IO_HPP

// CSV input and JSON output. Uses the single-header nlohmann json (json.hpp).

#include "robust_scatter/sample.hpp"
#include "robust_scatter/solver.hpp"

#include <json.hpp>

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace robust_scatter {

inline constexpr int kSchemaVersion = 1;

/// Raised for unreadable or malformed input files.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CsvOptions {
  bool header = false;
  /// Name of the weight column; requires a header.
  std::optional<std::string> weights_col;
  /// Tolerance on |sum w - 1| beyond which renormalization is reported.
  double weight_tolerance = 1e-9;
};

struct LoadedSample {
  WeightedSample sample;
  std::vector<std::string> columns;
  std::vector<std::string> warnings;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_cell(const std::string& raw, std::size_t line, std::size_t col) {
  const std::string s = trim(raw);
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE || !std::isfinite(v)) {
    throw InputError("line " + std::to_string(line) + ", column " + std::to_string(col) +
                     ": not a finite number: '" + s + "'");
  }
  return v;
}

}  // namespace detail

/// Reads comma-separated numeric rows. Blank lines are skipped. Line and
/// column numbers in errors are 1-based.
inline LoadedSample parse_csv(std::istream& in, const CsvOptions& opts = {}) {
  if (opts.weights_col && !opts.header) {
    throw InputError("a weight column can only be selected by name when the file has a header");
  }
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> names;
  std::optional<std::size_t> weight_index;
  std::vector<std::vector<double>> rows;
  std::vector<double> weights;
  std::size_t width = 0;

  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (opts.header && names.empty()) {
      for (const auto& c : cells) names.push_back(detail::trim(c));
      width = names.size();
      if (opts.weights_col) {
        for (std::size_t k = 0; k < names.size(); ++k) {
          if (names[k] == *opts.weights_col) weight_index = k;
        }
        if (!weight_index) throw InputError("weight column '" + *opts.weights_col + "' not found in header");
      }
      continue;
    }
    if (width == 0) width = cells.size();
    if (cells.size() != width) {
      throw InputError("line " + std::to_string(line_no) + ": expected " + std::to_string(width) +
                       " fields, found " + std::to_string(cells.size()));
    }
    std::vector<double> row;
    row.reserve(width);
    for (std::size_t k = 0; k < cells.size(); ++k) {
      const double v = detail::parse_cell(cells[k], line_no, k + 1);
      if (weight_index && k == *weight_index) {
        if (v < 0.0) {
          throw InputError("line " + std::to_string(line_no) + ": negative weight " + detail::trim(cells[k]));
        }
        weights.push_back(v);
      } else {
        row.push_back(v);
      }
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw InputError("no data rows");
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto q = static_cast<Eigen::Index>(rows.front().size());
  if (q == 0) throw InputError("no data columns");
  Matrix x(n, q);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < q; ++j) x(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }

  std::vector<std::string> columns;
  for (std::size_t k = 0; k < names.size(); ++k) {
    if (!weight_index || k != *weight_index) columns.push_back(names[k]);
  }
  std::vector<std::string> warnings;
  if (!weight_index) {
    return LoadedSample{WeightedSample::uniform(std::move(x)), std::move(columns), std::move(warnings)};
  }
  Vector w = Eigen::Map<Vector>(weights.data(), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (w(i) == 0.0) throw InputError("row " + std::to_string(i + 1) + " has zero weight");
  }
  const double total = w.sum();
  if (std::abs(total - 1.0) > opts.weight_tolerance) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "weights summed to " << total << "; renormalized to 1";
    warnings.push_back(msg.str());
  }
  return LoadedSample{WeightedSample::normalized(std::move(x), std::move(w)), std::move(columns),
                      std::move(warnings)};
}

inline LoadedSample load_csv(const std::string& path, const CsvOptions& opts = {}) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  try {
    return parse_csv(in, opts);
  } catch (const InputError& e) {
    throw InputError(path + ": " + e.what());
  }
}

inline void write_csv(std::ostream& out, const Matrix& x) {
  out.precision(17);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      if (j) out << ',';
      out << x(i, j);
    }
    out << '\n';
  }
}

// ---- JSON ---------------------------------------------------------------

inline nlohmann::json to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline nlohmann::json to_json(const Vector& v) {
  nlohmann::json out = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.empty()) throw std::invalid_argument("matrix JSON must be a non-empty array of rows");
  const auto r = static_cast<Eigen::Index>(j.size());
  const auto c = static_cast<Eigen::Index>(j.front().size());
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    const auto& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != c) {
      throw std::invalid_argument("matrix JSON rows have unequal lengths");
    }
    for (Eigen::Index k = 0; k < c; ++k) m(i, k) = row[static_cast<std::size_t>(k)].get<double>();
  }
  return m;
}

inline nlohmann::json to_json(const SolverConfig& cfg) {
  return {
      {"algorithm", std::string(to_string(cfg.algorithm))},
      {"delta", cfg.delta},
      {"max_iter", cfg.effective_max_iter()},
      {"accept_factor", cfg.accept_factor},
      {"setting0_shift", cfg.setting0_shift},
      {"deterministic", cfg.reduction == Reduction::deterministic},
  };
}

/// Step-kind counts plus the final loss differences; the full per-step
/// traces are included when `full_trace` is set.
inline nlohmann::json to_json(const FitResult& r, bool full_trace = false) {
  nlohmann::json steps = nlohmann::json::object();
  for (StepKind k : {StepKind::fixed_point, StepKind::fp_fallback, StepKind::grad_accepted,
                     StepKind::pn_accepted, StepKind::newton_accepted}) {
    if (const int c = r.count(k)) steps[std::string(to_string(k))] = c;
  }
  nlohmann::json out = {
      {"sigma", to_json(r.sigma)},
      {"iterations", r.iterations},
      {"converged", r.converged},
      {"residual", r.final_residual},
      {"step_log", steps},
  };
  if (r.mu) out["mu"] = to_json(*r.mu);
  if (r.corner) out["corner"] = *r.corner;
  if (r.start_iterations) out["start_iterations"] = r.start_iterations;
  if (!r.warnings.empty()) out["warnings"] = r.warnings;
  if (full_trace) {
    nlohmann::json kinds = nlohmann::json::array();
    for (StepKind k : r.step_log) kinds.push_back(std::string(to_string(k)));
    out["trace"] = {{"steps", kinds}, {"loss_change", r.l_trace}, {"residual", r.residual_trace}};
  }
  return out;
}

inline nlohmann::json result_document(const nlohmann::json& config_echo, const nlohmann::json& result) {
  return {{"schema_version", kSchemaVersion}, {"config_echo", config_echo}, {"result", result}};
}

/// Writes JSON with round-trip precision for doubles.
inline void write_json(const nlohmann::json& doc, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path + "'");
  out << doc.dump(2) << '\n';
  if (!out) throw InputError("write to '" + path + "' failed");
}

inline nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(path + ": " + e.what());
  }
}

}  // namespace robust_scatter

#endif  // ROBUST_SCATTER_IO_HPP
