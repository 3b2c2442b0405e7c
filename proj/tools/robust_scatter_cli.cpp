// robust-scatter: command-line front end.
//
//   robust-scatter estimate      [flags] data.csv
//   robust-scatter estimate-loc  [flags] data.csv
//   robust-scatter estimate-symm [flags] data.csv
//   robust-scatter simulate      --n N --q Q [--model M] [--shift D] [--seed S]
//   robust-scatter bench         config.json [--csv report.csv]
//
// Exit status: 0 converged, 1 usage or I/O error, 2 not converged.

#include "robust_scatter/bench.hpp"
#include "robust_scatter/io.hpp"
#include "robust_scatter/simulate.hpp"
#include "robust_scatter/solver.hpp"
#include "robust_scatter/symmetrized.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace rs = robust_scatter;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNotConverged = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EstimateArgs {
  std::string input;
  std::string rho = "t";
  std::optional<double> nu;
  std::string algo = "pn";
  double delta = 1e-7;
  std::optional<int> max_iter;
  double accept_factor = 4.0;
  std::uint64_t seed = 0;
  bool deterministic = false;
  std::string out;
  bool header = false;
  std::string weights_col;
  bool trace = false;
  // estimate-symm only
  std::string mode = "auto";
  bool no_prewhiten = false;
};

void add_estimate_flags(CLI::App* cmd, EstimateArgs& a) {
  cmd->add_option("input", a.input, "CSV data file, one observation per row")->required();
  cmd->add_option("--rho", a.rho, "loss family: tyler (scale-free) or t (multivariate t)")
      ->check(CLI::IsMember({"tyler", "t"}))
      ->capture_default_str();
  cmd->add_option("--nu", a.nu, "degrees of freedom for --rho t (default 1)")->check(CLI::NonNegativeNumber);
  cmd->add_option("--algo", a.algo, "fp, g, pn, newton or fp3")
      ->check(CLI::IsMember({"fp", "g", "pn", "newton", "fp3"}))
      ->capture_default_str();
  cmd->add_option("--delta", a.delta, "stop when |1 - phi| < delta")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--max-iter", a.max_iter, "iteration budget")->check(CLI::PositiveNumber);
  cmd->add_option("--accept-factor", a.accept_factor, "step acceptance factor (> 2)")->capture_default_str();
  cmd->add_option("--seed", a.seed, "random seed")->capture_default_str();
  cmd->add_flag("--deterministic", a.deterministic, "fixed-order reductions (bit-reproducible)");
  cmd->add_option("--out", a.out, "write the JSON result here instead of stdout");
  cmd->add_flag("--header", a.header, "the first CSV line holds column names");
  cmd->add_option("--weights-col", a.weights_col, "name of a weight column (needs --header)");
  cmd->add_flag("--trace", a.trace, "include the per-step trace in the output");
}

rs::RhoFamily family_from(const EstimateArgs& a, int q) {
  if (a.rho == "tyler") {
    if (a.nu && *a.nu != 0.0) throw UsageError("--nu cannot be combined with --rho tyler");
    return rs::RhoFamily::tyler(q);
  }
  const double nu = a.nu.value_or(1.0);
  if (nu == 0.0) throw UsageError("--rho t needs --nu > 0; use --rho tyler for nu = 0");
  return rs::RhoFamily::student(nu, q);
}

rs::SolverConfig solver_config_from(const EstimateArgs& a) {
  rs::SolverConfig c;
  c.algorithm = rs::parse_algorithm(a.algo);
  c.delta = a.delta;
  c.max_iter = a.max_iter;
  c.accept_factor = a.accept_factor;
  c.reduction = a.deterministic ? rs::Reduction::deterministic : rs::Reduction::free_order;
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return c;
}

rs::LoadedSample read_input(const EstimateArgs& a) {
  rs::CsvOptions o;
  o.header = a.header;
  if (!a.weights_col.empty()) o.weights_col = a.weights_col;
  return rs::load_csv(a.input, o);
}

void emit(const nlohmann::json& doc, const std::string& out) {
  if (out.empty()) {
    std::cout << doc.dump(2) << '\n';
  } else {
    rs::write_json(doc, out);
  }
}

nlohmann::json echo(const EstimateArgs& a, const std::string& command, const rs::RhoFamily& f,
                    const rs::SolverConfig& c) {
  nlohmann::json j = {{"command", command}, {"input", a.input}, {"rho", a.rho}, {"nu", f.nu()}, {"solver", rs::to_json(c)}};
  return j;
}

int finish(const rs::FitResult& fit, nlohmann::json config, const EstimateArgs& a) {
  for (const auto& w : fit.warnings) std::cerr << "warning: " << w << '\n';
  emit(rs::result_document(config, rs::to_json(fit, a.trace)), a.out);
  if (!fit.converged) {
    std::cerr << "not converged after " << fit.iterations << " iterations (residual " << fit.final_residual << ")\n";
    return kExitNotConverged;
  }
  return kExitOk;
}

int cmd_estimate(const EstimateArgs& a) {
  const rs::SolverConfig c = solver_config_from(a);
  if (c.algorithm == rs::Algorithm::fp3) throw UsageError("--algo fp3 is only available for estimate-loc");
  const rs::LoadedSample in = read_input(a);
  for (const auto& w : in.warnings) std::cerr << "warning: " << w << '\n';
  const rs::RhoFamily f = family_from(a, in.sample.dim());
  return finish(rs::estimate_scatter(in.sample, f, c), echo(a, "estimate", f, c), a);
}

int cmd_estimate_loc(const EstimateArgs& a) {
  const rs::SolverConfig c = solver_config_from(a);
  const rs::LoadedSample in = read_input(a);
  for (const auto& w : in.warnings) std::cerr << "warning: " << w << '\n';
  const rs::RhoFamily f = family_from(a, in.sample.dim());
  if (f.nu() < 1.0) throw UsageError("estimate-loc needs --rho t with --nu >= 1");
  return finish(rs::estimate_location_scatter(in.sample, f, c), echo(a, "estimate-loc", f, c), a);
}

int cmd_estimate_symm(const EstimateArgs& a) {
  const rs::SolverConfig c = solver_config_from(a);
  if (c.algorithm == rs::Algorithm::fp3) throw UsageError("--algo fp3 is only available for estimate-loc");
  if (!a.weights_col.empty()) throw UsageError("estimate-symm uses uniform pair weights; --weights-col is not supported");
  const rs::LoadedSample in = read_input(a);
  const rs::Matrix& x = in.sample.data();
  if (x.rows() < 3) throw UsageError("estimate-symm needs at least 3 rows, got " + std::to_string(x.rows()));
  const rs::RhoFamily f = family_from(a, in.sample.dim());
  rs::SymmetrizedOptions o;
  o.mode = rs::parse_pair_mode(a.mode);
  o.prewhiten = !a.no_prewhiten;
  o.seed = a.seed;
  nlohmann::json cfg = echo(a, "estimate-symm", f, c);
  cfg["mode"] = a.mode;
  cfg["prewhiten"] = o.prewhiten;
  cfg["seed"] = a.seed;
  return finish(rs::estimate_symmetrized(x, f, c, o), cfg, a);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robust M-estimation of multivariate scatter and location"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "robust-scatter 1.0");

  EstimateArgs est;
  EstimateArgs loc;
  EstimateArgs symm;
  auto* c_est = app.add_subcommand("estimate", "M-estimator of scatter");
  add_estimate_flags(c_est, est);
  auto* c_loc = app.add_subcommand("estimate-loc", "joint M-estimator of location and scatter");
  add_estimate_flags(c_loc, loc);
  auto* c_symm = app.add_subcommand("estimate-symm", "symmetrized M-estimator of scatter (pairwise differences)");
  add_estimate_flags(c_symm, symm);
  c_symm->add_option("--mode", symm.mode, "all, seq or auto")
      ->check(CLI::IsMember({"all", "seq", "auto"}))
      ->capture_default_str();
  c_symm->add_flag("--no-prewhiten", symm.no_prewhiten, "start from the second moment of the differences");

  rs::SimSpec sim;
  std::string sim_model = "gaussian";
  std::string sim_out;
  auto* c_sim = app.add_subcommand("simulate", "write a simulated data set as CSV");
  c_sim->add_option("--n", sim.n, "rows")->required()->check(CLI::PositiveNumber);
  c_sim->add_option("--q", sim.q, "columns")->required()->check(CLI::PositiveNumber);
  c_sim->add_option("--model", sim_model, "gaussian, cauchy or outlier")
      ->check(CLI::IsMember({"gaussian", "cauchy", "outlier"}))
      ->capture_default_str();
  c_sim->add_option("--shift", sim.outlier_shift, "outlier shift of column 1 (outlier model)")
      ->check(CLI::NonNegativeNumber);
  c_sim->add_option("--seed", sim.seed, "random seed")->capture_default_str();
  c_sim->add_option("--out", sim_out, "output CSV (default stdout)");

  std::string bench_config;
  std::string bench_out;
  std::string bench_csv;
  bool bench_quiet = false;
  auto* c_bench = app.add_subcommand("bench", "run a benchmark sweep described by a JSON config");
  c_bench->add_option("config", bench_config, "JSON sweep configuration")->required();
  c_bench->add_option("--out", bench_out, "JSON report (default stdout)");
  c_bench->add_option("--csv", bench_csv, "flat CSV report");
  c_bench->add_flag("--quiet", bench_quiet, "no progress lines on stderr");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (c_est->parsed()) return cmd_estimate(est);
    if (c_loc->parsed()) return cmd_estimate_loc(loc);
    if (c_symm->parsed()) return cmd_estimate_symm(symm);
    if (c_sim->parsed()) {
      sim.model = rs::parse_sim_model(sim_model);
      if (sim.model != rs::SimModel::outlier && sim.outlier_shift != 0.0) {
        throw UsageError("--shift needs --model outlier");
      }
      const rs::Matrix x = rs::simulate(sim);
      if (sim_out.empty()) {
        rs::write_csv(std::cout, x);
      } else {
        std::ofstream out(sim_out);
        if (!out) throw rs::InputError("cannot write '" + sim_out + "'");
        rs::write_csv(out, x);
      }
      return kExitOk;
    }
    if (c_bench->parsed()) {
      const rs::BenchConfig cfg = rs::bench_config_from_json(rs::read_json(bench_config));
      const rs::BenchReport report = rs::run_benchmark(cfg, bench_quiet ? nullptr : &std::cerr);
      emit(rs::to_json(report), bench_out);
      if (!bench_csv.empty()) {
        std::ofstream out(bench_csv);
        if (!out) throw rs::InputError("cannot write '" + bench_csv + "'");
        rs::write_bench_csv(out, report);
      }
      return kExitOk;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const rs::InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
