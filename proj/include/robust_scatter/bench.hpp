#ifndef ROBUST_SCATTER_BENCH_HPP
#define ROBUST_SCATTER_BENCH_HPP

// Iteration-count and timing sweeps over simulated data.
//
// Replication r of dataset d draws one data set and every (nu, algorithm)
// cell of that dataset is fitted on it, so algorithm comparisons are paired.
// Wall time covers the estimator call only.

#include "robust_scatter/io.hpp"
#include "robust_scatter/simulate.hpp"
#include "robust_scatter/solver.hpp"
#include "robust_scatter/symmetrized.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

namespace robust_scatter {

enum class Problem { scatter, location, symmetrized };

inline std::string_view to_string(Problem p) {
  switch (p) {
    case Problem::scatter: return "scatter";
    case Problem::location: return "location";
    case Problem::symmetrized: return "symmetrized";
  }
  return "?";
}

inline Problem parse_problem(std::string_view s) {
  if (s == "scatter") return Problem::scatter;
  if (s == "location") return Problem::location;
  if (s == "symmetrized") return Problem::symmetrized;
  throw std::invalid_argument("unknown problem '" + std::string(s) + "'");
}

/// Data design of a sweep; the seed of each replication is derived from
/// BenchConfig::seed.
struct DatasetSpec {
  int n = 0;
  int q = 0;
  SimModel model = SimModel::gaussian;
  double outlier_shift = 0.0;

  SimSpec with_seed(std::uint64_t seed) const { return SimSpec{n, q, model, outlier_shift, seed}; }
  std::string label() const { return with_seed(0).label(); }
  bool operator==(const DatasetSpec&) const = default;
};

struct BenchConfig {
  Problem problem = Problem::scatter;
  std::vector<DatasetSpec> datasets;
  std::vector<Algorithm> algorithms{Algorithm::fp, Algorithm::gradient, Algorithm::partial_newton};
  std::vector<double> nus{1.0};
  int reps = 100;
  std::uint64_t seed = 1;
  double delta = 1e-7;
  std::optional<int> max_iter;
  double accept_factor = 4.0;
  bool deterministic = true;
  PairMode mode = PairMode::automatic;
  bool prewhiten = true;

  void validate() const {
    if (datasets.empty()) throw std::invalid_argument("bench: no datasets");
    if (algorithms.empty()) throw std::invalid_argument("bench: no algorithms");
    if (nus.empty()) throw std::invalid_argument("bench: no nu values");
    if (reps < 1) throw std::invalid_argument("bench: reps must be >= 1");
    for (const auto& d : datasets) d.with_seed(0).validate();
    for (Algorithm a : algorithms) {
      if (a == Algorithm::fp3 && problem != Problem::location) {
        throw std::invalid_argument("bench: fp3 is only available for the location problem");
      }
    }
    for (double nu : nus) {
      if (problem == Problem::location && nu < 1.0) {
        throw std::invalid_argument("bench: the location problem needs nu >= 1");
      }
      RhoFamily(nu, 1);
    }
    solver_config(algorithms.front()).validate();
  }

  SolverConfig solver_config(Algorithm a) const {
    SolverConfig c;
    c.algorithm = a;
    c.delta = delta;
    c.max_iter = max_iter;
    c.accept_factor = accept_factor;
    c.reduction = deterministic ? Reduction::deterministic : Reduction::free_order;
    return c;
  }
};

/// Seed of replication `rep` of dataset `dataset` (splitmix64 finalizer).
inline std::uint64_t replication_seed(std::uint64_t base, std::size_t dataset, int rep) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (1 + dataset * 1000003ull + static_cast<std::uint64_t>(rep));
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

struct BenchRun {
  int iterations = 0;
  bool converged = false;
  double wall_ms = 0.0;
  /// Empty unless the estimator threw.
  std::string error;
  bool operator==(const BenchRun&) const = default;
};

struct BenchCell {
  DatasetSpec dataset;
  double nu = 1.0;
  Algorithm algorithm = Algorithm::partial_newton;
  std::vector<BenchRun> runs;

  // Statistics over converged runs.
  double mean_iterations = std::nan("");
  double iqr_iterations = std::nan("");
  double mean_wall_ms = std::nan("");
  double iqr_wall_ms = std::nan("");
  int replications = 0;
  int nonconverged = 0;

  void summarize();
};

struct BenchReport {
  BenchConfig config;
  std::vector<BenchCell> cells;
  nlohmann::json environment;

  const BenchCell* find(const DatasetSpec& d, double nu, Algorithm a) const {
    for (const auto& c : cells) {
      if (c.dataset == d && c.nu == nu && c.algorithm == a) return &c;
    }
    return nullptr;
  }
};

/// Sample quantile with linear interpolation between order statistics
/// (Hyndman-Fan type 7).
inline double quantile(std::vector<double> v, double p) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline double iqr(const std::vector<double>& v) { return quantile(v, 0.75) - quantile(v, 0.25); }

inline double mean(const std::vector<double>& v) {
  if (v.empty()) return std::nan("");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline void BenchCell::summarize() {
  std::vector<double> it;
  std::vector<double> ms;
  nonconverged = 0;
  for (const auto& r : runs) {
    if (r.converged) {
      it.push_back(r.iterations);
      ms.push_back(r.wall_ms);
    } else {
      ++nonconverged;
    }
  }
  replications = static_cast<int>(runs.size());
  mean_iterations = mean(it);
  iqr_iterations = iqr(it);
  mean_wall_ms = mean(ms);
  iqr_wall_ms = iqr(ms);
}

/// Fits one data set with one configuration of the sweep.
inline FitResult bench_fit(const BenchConfig& cfg, const Matrix& x, double nu, Algorithm a, std::uint64_t seed) {
  const SolverConfig sc = cfg.solver_config(a);
  const RhoFamily family(nu, static_cast<int>(x.cols()));
  switch (cfg.problem) {
    case Problem::scatter: return estimate_scatter(WeightedSample::uniform(x), family, sc);
    case Problem::location: return estimate_location_scatter(WeightedSample::uniform(x), family, sc);
    case Problem::symmetrized: {
      SymmetrizedOptions o;
      o.mode = cfg.mode;
      o.prewhiten = cfg.prewhiten;
      o.seed = seed;
      return estimate_symmetrized(x, family, sc, o);
    }
  }
  throw std::logic_error("bench_fit: unknown problem");
}

inline nlohmann::json bench_environment() {
  nlohmann::json env = {
      {"hardware_threads", std::thread::hardware_concurrency()},
      {"workers", worker_count()},
      {"eigen_version", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                            std::to_string(EIGEN_MINOR_VERSION)},
  };
#if defined(__clang__)
  env["compiler"] = "clang " __clang_version__;
#elif defined(__GNUC__)
  env["compiler"] = "gcc " __VERSION__;
#endif
  return env;
}

/// Runs the sweep. Estimator exceptions are recorded as non-converged runs.
/// `progress`, when given, receives one line per finished replication.
inline BenchReport run_benchmark(const BenchConfig& cfg, std::ostream* progress = nullptr) {
  cfg.validate();
  BenchReport report;
  report.config = cfg;
  report.environment = bench_environment();
  for (std::size_t d = 0; d < cfg.datasets.size(); ++d) {
    const std::size_t first = report.cells.size();
    for (double nu : cfg.nus) {
      for (Algorithm a : cfg.algorithms) report.cells.push_back(BenchCell{cfg.datasets[d], nu, a, {}});
    }
    for (int rep = 0; rep < cfg.reps; ++rep) {
      const std::uint64_t seed = replication_seed(cfg.seed, d, rep);
      const Matrix x = simulate(cfg.datasets[d].with_seed(seed));
      for (std::size_t c = first; c < report.cells.size(); ++c) {
        BenchCell& cell = report.cells[c];
        BenchRun run;
        const auto t0 = std::chrono::steady_clock::now();
        try {
          const FitResult fit = bench_fit(cfg, x, cell.nu, cell.algorithm, seed);
          run.iterations = fit.iterations;
          run.converged = fit.converged;
        } catch (const std::exception& e) {
          run.error = e.what();
        }
        run.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        cell.runs.push_back(std::move(run));
      }
      if (progress) *progress << cfg.datasets[d].label() << " rep " << rep + 1 << "/" << cfg.reps << '\n';
    }
    for (std::size_t c = first; c < report.cells.size(); ++c) report.cells[c].summarize();
  }
  return report;
}

// ---- serialization -------------------------------------------------------

namespace detail {

inline nlohmann::json number_or_null(double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }
inline double number_from(const nlohmann::json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }

}  // namespace detail

inline nlohmann::json to_json(const DatasetSpec& d) {
  nlohmann::json j = {{"n", d.n}, {"q", d.q}, {"model", std::string(to_string(d.model))}};
  if (d.model == SimModel::outlier) j["outlier_shift"] = d.outlier_shift;
  return j;
}

inline DatasetSpec dataset_from_json(const nlohmann::json& j) {
  DatasetSpec d;
  d.n = j.at("n").get<int>();
  d.q = j.at("q").get<int>();
  d.model = parse_sim_model(j.value("model", std::string("gaussian")));
  d.outlier_shift = j.value("outlier_shift", 0.0);
  return d;
}

inline nlohmann::json to_json(const BenchConfig& c) {
  nlohmann::json algos = nlohmann::json::array();
  for (Algorithm a : c.algorithms) algos.push_back(std::string(to_string(a)));
  nlohmann::json data = nlohmann::json::array();
  for (const auto& d : c.datasets) data.push_back(to_json(d));
  nlohmann::json j = {
      {"problem", std::string(to_string(c.problem))},
      {"datasets", data},
      {"algorithms", algos},
      {"nus", c.nus},
      {"reps", c.reps},
      {"seed", c.seed},
      {"delta", c.delta},
      {"accept_factor", c.accept_factor},
      {"deterministic", c.deterministic},
      {"mode", std::string(to_string(c.mode))},
      {"prewhiten", c.prewhiten},
  };
  if (c.max_iter) j["max_iter"] = *c.max_iter;
  return j;
}

/// Missing keys take the BenchConfig defaults; `datasets` is required.
inline BenchConfig bench_config_from_json(const nlohmann::json& j) {
  BenchConfig c;
  if (j.contains("problem")) c.problem = parse_problem(j["problem"].get<std::string>());
  for (const auto& d : j.at("datasets")) c.datasets.push_back(dataset_from_json(d));
  if (j.contains("algorithms")) {
    c.algorithms.clear();
    for (const auto& a : j["algorithms"]) c.algorithms.push_back(parse_algorithm(a.get<std::string>()));
  }
  if (j.contains("nus")) c.nus = j["nus"].get<std::vector<double>>();
  c.reps = j.value("reps", c.reps);
  c.seed = j.value("seed", c.seed);
  c.delta = j.value("delta", c.delta);
  c.accept_factor = j.value("accept_factor", c.accept_factor);
  c.deterministic = j.value("deterministic", c.deterministic);
  if (j.contains("mode")) c.mode = parse_pair_mode(j["mode"].get<std::string>());
  c.prewhiten = j.value("prewhiten", c.prewhiten);
  if (j.contains("max_iter")) c.max_iter = j["max_iter"].get<int>();
  return c;
}

inline nlohmann::json to_json(const BenchReport& r) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : r.cells) {
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& run : c.runs) {
      nlohmann::json rj = {{"iterations", run.iterations}, {"converged", run.converged}, {"wall_ms", run.wall_ms}};
      if (!run.error.empty()) rj["error"] = run.error;
      runs.push_back(std::move(rj));
    }
    cells.push_back({
        {"dataset", to_json(c.dataset)},
        {"label", c.dataset.label()},
        {"nu", c.nu},
        {"algorithm", std::string(to_string(c.algorithm))},
        {"replications", c.replications},
        {"nonconverged", c.nonconverged},
        {"mean_iterations", detail::number_or_null(c.mean_iterations)},
        {"iqr_iterations", detail::number_or_null(c.iqr_iterations)},
        {"mean_wall_ms", detail::number_or_null(c.mean_wall_ms)},
        {"iqr_wall_ms", detail::number_or_null(c.iqr_wall_ms)},
        {"runs", runs},
    });
  }
  return {{"schema_version", kSchemaVersion},
          {"config_echo", to_json(r.config)},
          {"report", {{"environment", r.environment}, {"cells", cells}}}};
}

inline BenchReport bench_report_from_json(const nlohmann::json& j) {
  if (j.at("schema_version").get<int>() != kSchemaVersion) {
    throw std::invalid_argument("unsupported report schema version");
  }
  BenchReport r;
  r.config = bench_config_from_json(j.at("config_echo"));
  const auto& body = j.at("report");
  r.environment = body.at("environment");
  for (const auto& cj : body.at("cells")) {
    BenchCell c;
    c.dataset = dataset_from_json(cj.at("dataset"));
    c.nu = cj.at("nu").get<double>();
    c.algorithm = parse_algorithm(cj.at("algorithm").get<std::string>());
    c.replications = cj.at("replications").get<int>();
    c.nonconverged = cj.at("nonconverged").get<int>();
    c.mean_iterations = detail::number_from(cj.at("mean_iterations"));
    c.iqr_iterations = detail::number_from(cj.at("iqr_iterations"));
    c.mean_wall_ms = detail::number_from(cj.at("mean_wall_ms"));
    c.iqr_wall_ms = detail::number_from(cj.at("iqr_wall_ms"));
    for (const auto& rj : cj.at("runs")) {
      c.runs.push_back(BenchRun{rj.at("iterations").get<int>(), rj.at("converged").get<bool>(),
                                rj.at("wall_ms").get<double>(), rj.value("error", std::string())});
    }
    r.cells.push_back(std::move(c));
  }
  return r;
}

/// One line per cell.
inline void write_bench_csv(std::ostream& out, const BenchReport& r) {
  out.precision(17);
  out << "problem,dataset,model,n,q,outlier_shift,nu,algorithm,replications,nonconverged,"
         "mean_iterations,iqr_iterations,mean_wall_ms,iqr_wall_ms\n";
  for (const auto& c : r.cells) {
    out << to_string(r.config.problem) << ',' << c.dataset.label() << ',' << to_string(c.dataset.model) << ','
        << c.dataset.n << ',' << c.dataset.q << ',' << c.dataset.outlier_shift << ',' << c.nu << ','
        << to_string(c.algorithm) << ',' << c.replications << ',' << c.nonconverged << ',' << c.mean_iterations
        << ',' << c.iqr_iterations << ',' << c.mean_wall_ms << ',' << c.iqr_wall_ms << '\n';
  }
}

}  // namespace robust_scatter

#endif  // ROBUST_SCATTER_BENCH_HPP
