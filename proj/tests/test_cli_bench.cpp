#include "robust_scatter/bench.hpp"
#include "robust_scatter/io.hpp"
#include "robust_scatter/simulate.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace rs = robust_scatter;
namespace fs = std::filesystem;
using rs::Algorithm;
using rs::Matrix;
using rs::SimModel;
using rs::SimSpec;
using rs::Vector;

namespace {

fs::path tmp_path(const std::string& name) {
  const fs::path dir = fs::path(RS_TMP_DIR) / "cli";
  fs::create_directories(dir);
  return dir / name;
}

void write_matrix(const fs::path& p, const Matrix& x) {
  std::ofstream out(p);
  rs::write_csv(out, x);
}

int run(const std::string& args) {
  const std::string cmd = std::string(RS_CLI_PATH) + " " + args + " 2>" + tmp_path("stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string last_stderr() {
  std::ifstream in(tmp_path("stderr.txt"));
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Matrix sigma_of(const fs::path& p) { return rs::matrix_from_json(rs::read_json(p.string()).at("result").at("sigma")); }

rs::BenchConfig small_config() {
  rs::BenchConfig c;
  c.datasets = {{40, 2, SimModel::gaussian, 0.0}, {40, 3, SimModel::cauchy, 0.0}};
  c.algorithms = {Algorithm::fp, Algorithm::partial_newton};
  c.nus = {0.0, 1.0};
  c.reps = 3;
  c.seed = 11;
  return c;
}

}  // namespace

// ---- simulation ------------------------------------------------------------------

TEST(Simulate, Deterministic) {
  for (SimModel m : {SimModel::gaussian, SimModel::cauchy, SimModel::outlier}) {
    const SimSpec s{30, 4, m, m == SimModel::outlier ? 2.0 : 0.0, 99};
    EXPECT_EQ(rs::simulate(s), rs::simulate(s));
    SimSpec other = s;
    other.seed = 100;
    EXPECT_NE(rs::simulate(s), rs::simulate(other));
  }
}

TEST(Simulate, GaussianMoments) {
  const Matrix x = rs::simulate(SimSpec{100000, 1, SimModel::gaussian, 0.0, 3});
  const double mean = x.mean();
  const double var = (x.array() - mean).square().sum() / (x.rows() - 1.0);
  EXPECT_NEAR(mean, 0.0, 0.02);
  EXPECT_NEAR(var, 1.0, 0.02);
}

TEST(Simulate, OutlierWithZeroShiftIsGaussian) {
  EXPECT_EQ(rs::simulate(SimSpec{50, 3, SimModel::outlier, 0.0, 8}), rs::simulate(SimSpec{50, 3, SimModel::gaussian, 0.0, 8}));
  const Matrix g = rs::simulate(SimSpec{50, 3, SimModel::gaussian, 0.0, 8});
  const Matrix o = rs::simulate(SimSpec{50, 3, SimModel::outlier, 4.0, 8});
  const Matrix d = o - g;
  EXPECT_LT((d.topLeftCorner(5, 1) - Matrix::Constant(5, 1, 4.0)).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_EQ(d.bottomRows(45).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(d.rightCols(2).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Simulate, CauchyRowsShareDivisor) {
  // Reproduce the draws: divisor first, then q numerators.
  const SimSpec s{20, 3, SimModel::cauchy, 0.0, 4};
  const Matrix x = rs::simulate(s);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 20; ++i) {
    const double z0 = n(rng);
    for (int j = 0; j < 3; ++j) EXPECT_EQ(x(i, j), n(rng) / z0);
  }
}

TEST(Simulate, Validation) {
  EXPECT_THROW(rs::simulate(SimSpec{0, 2, SimModel::gaussian, 0.0, 1}), std::invalid_argument);
  EXPECT_THROW(rs::simulate(SimSpec{10, 2, SimModel::outlier, -1.0, 1}), std::invalid_argument);
  EXPECT_EQ(rs::parse_sim_model("cauchy"), SimModel::cauchy);
  EXPECT_THROW(rs::parse_sim_model("t3"), std::invalid_argument);
}

// ---- CSV and JSON ----------------------------------------------------------------

TEST(Csv, ParsesPlainAndHeader) {
  std::istringstream plain("1,0\n-1,0\n\n0,1\n0,-1\n");
  const auto a = rs::parse_csv(plain);
  EXPECT_EQ(a.sample.data(), rs_test::plus_minus_design(2));
  EXPECT_NEAR(a.sample.weights().sum(), 1.0, 1e-15);

  std::istringstream hdr("u, v\n1,2\n3,4\n");
  rs::CsvOptions o;
  o.header = true;
  const auto b = rs::parse_csv(hdr, o);
  EXPECT_EQ(b.sample.data().rows(), 2);
  EXPECT_EQ(b.columns, (std::vector<std::string>{"u", "v"}));
}

TEST(Csv, WeightsAreRenormalizedWithWarning) {
  std::istringstream in("x,y,w\n1,0,2\n-1,0,2\n0,1,2\n0,-1,2\n");
  rs::CsvOptions o;
  o.header = true;
  o.weights_col = "w";
  const auto s = rs::parse_csv(in, o);
  EXPECT_EQ(s.sample.data().cols(), 2);
  EXPECT_LT((s.sample.weights() - Vector::Constant(4, 0.25)).norm(), 1e-15);
  ASSERT_EQ(s.warnings.size(), 1u);
  EXPECT_NE(s.warnings[0].find("renormalized"), std::string::npos);

  std::istringstream exact("x,w\n1,0.5\n2,0.5\n");
  rs::CsvOptions o2;
  o2.header = true;
  o2.weights_col = "w";
  EXPECT_TRUE(rs::parse_csv(exact, o2).warnings.empty());
}

TEST(Csv, ReportsBadInput) {
  auto message = [](const std::string& text, rs::CsvOptions o = {}) -> std::string {
    std::istringstream in(text);
    try {
      rs::parse_csv(in, o);
    } catch (const rs::InputError& e) {
      return e.what();
    }
    return "";
  };
  EXPECT_NE(message("1,2\n3,abc\n").find("line 2, column 2"), std::string::npos);
  EXPECT_NE(message("1,2\n3,inf\n").find("line 2"), std::string::npos);
  EXPECT_NE(message("1,2\n3\n").find("line 2: expected 2 fields, found 1"), std::string::npos);
  EXPECT_NE(message("").find("no data"), std::string::npos);
  rs::CsvOptions w;
  w.header = true;
  w.weights_col = "w";
  EXPECT_NE(message("x,w\n1,0.5\n2,-0.5\n", w).find("negative weight"), std::string::npos);
  EXPECT_NE(message("x,w\n1,1\n2,0\n", w).find("zero weight"), std::string::npos);
  EXPECT_NE(message("x,z\n1,1\n", w).find("not found"), std::string::npos);
  EXPECT_THROW(rs::load_csv(tmp_path("does_not_exist.csv").string()), rs::InputError);
}

TEST(Csv, WriteReadRoundTrip) {
  rs_test::Gen gen(81);
  const Matrix x = gen.cauchy(10, 3);
  const auto p = tmp_path("roundtrip.csv");
  write_matrix(p, x);
  EXPECT_EQ(rs::load_csv(p.string()).sample.data(), x);
}

TEST(Json, MatrixRoundTrip) {
  rs_test::Gen gen(82);
  const Matrix m = gen.gaussian(3, 4);
  EXPECT_EQ(rs::matrix_from_json(nlohmann::json::parse(rs::to_json(m).dump())), m);
  EXPECT_THROW(rs::matrix_from_json(nlohmann::json::array()), std::invalid_argument);
  EXPECT_THROW(rs::matrix_from_json(nlohmann::json::parse("[[1,2],[3]]")), std::invalid_argument);
}

TEST(Json, FitResultDocument) {
  rs::FitResult r;
  r.sigma = Matrix::Identity(2, 2);
  r.iterations = 4;
  r.converged = true;
  r.final_residual = 1e-9;
  r.step_log = {rs::StepKind::pn_accepted, rs::StepKind::pn_accepted, rs::StepKind::fp_fallback, rs::StepKind::pn_accepted};
  const auto doc = rs::result_document({{"command", "estimate"}}, rs::to_json(r));
  EXPECT_EQ(doc.at("schema_version"), 1);
  EXPECT_EQ(doc.at("result").at("iterations"), 4);
  EXPECT_EQ(doc.at("result").at("step_log").at("pn_accepted"), 3);
  EXPECT_EQ(doc.at("result").at("step_log").at("fp_fallback"), 1);
  EXPECT_FALSE(doc.at("result").contains("mu"));
}

// ---- benchmark ---------------------------------------------------------------------

TEST(BenchStats, QuantileType7) {
  EXPECT_DOUBLE_EQ(rs::quantile({1, 2, 3, 4}, 0.25), 1.75);
  EXPECT_DOUBLE_EQ(rs::quantile({4, 1, 3, 2}, 0.75), 3.25);
  EXPECT_DOUBLE_EQ(rs::iqr({1, 2, 3, 4, 5}), 2.0);
  EXPECT_DOUBLE_EQ(rs::quantile({7}, 0.5), 7.0);
  EXPECT_TRUE(std::isnan(rs::quantile({}, 0.5)));
  EXPECT_DOUBLE_EQ(rs::mean({1, 2, 6}), 3.0);
}

TEST(BenchConfig, ParseAndValidate) {
  const auto j = nlohmann::json::parse(R"({
    "problem": "location",
    "datasets": [{"n": 100, "q": 10, "model": "outlier", "outlier_shift": 5}],
    "algorithms": ["fp", "pn", "fp3"],
    "nus": [1, 2],
    "reps": 7,
    "seed": 3
  })");
  const auto c = rs::bench_config_from_json(j);
  EXPECT_EQ(c.problem, rs::Problem::location);
  EXPECT_EQ(c.datasets.at(0).outlier_shift, 5.0);
  EXPECT_EQ(c.algorithms.size(), 3u);
  EXPECT_EQ(c.reps, 7);
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(rs::bench_config_from_json(rs::to_json(c)).datasets, c.datasets);

  rs::BenchConfig bad = c;
  bad.problem = rs::Problem::scatter;
  EXPECT_THROW(bad.validate(), std::invalid_argument);  // fp3 outside location
  bad = c;
  bad.nus = {0.5};
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = c;
  bad.reps = 0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(BenchRun, ReproduciblePairedAndComplete) {
  const auto c = small_config();
  const auto a = rs::run_benchmark(c);
  const auto b = rs::run_benchmark(c);
  ASSERT_EQ(a.cells.size(), 2u * 2u * 2u);
  for (std::size_t k = 0; k < a.cells.size(); ++k) {
    EXPECT_EQ(a.cells[k].replications, c.reps);
    EXPECT_EQ(a.cells[k].nonconverged, 0);
    ASSERT_EQ(a.cells[k].runs.size(), static_cast<std::size_t>(c.reps));
    for (int r = 0; r < c.reps; ++r) EXPECT_EQ(a.cells[k].runs[r].iterations, b.cells[k].runs[r].iterations);
    EXPECT_EQ(a.cells[k].mean_iterations, b.cells[k].mean_iterations);
  }
  // Paired data: each cell's run r reproduces a direct fit on the replication's data set.
  const auto* cell = a.find(c.datasets[1], 1.0, Algorithm::partial_newton);
  ASSERT_NE(cell, nullptr);
  for (int r = 0; r < c.reps; ++r) {
    const std::uint64_t seed = rs::replication_seed(c.seed, 1, r);
    const Matrix x = rs::simulate(c.datasets[1].with_seed(seed));
    EXPECT_EQ(rs::bench_fit(c, x, 1.0, Algorithm::partial_newton, seed).iterations, cell->runs[r].iterations);
  }
}

TEST(BenchRun, NonConvergenceIsRecorded) {
  auto c = small_config();
  c.algorithms = {Algorithm::fp};
  c.max_iter = 2;
  const auto rep = rs::run_benchmark(c);
  for (const auto& cell : rep.cells) {
    EXPECT_EQ(cell.replications, c.reps);
    EXPECT_EQ(cell.nonconverged, c.reps);
    EXPECT_TRUE(std::isnan(cell.mean_iterations));
  }
}

TEST(BenchReport, JsonRoundTripAndCsv) {
  const auto rep = rs::run_benchmark(small_config());
  const auto j = rs::to_json(rep);
  const auto back = rs::bench_report_from_json(nlohmann::json::parse(j.dump()));
  ASSERT_EQ(back.cells.size(), rep.cells.size());
  for (std::size_t k = 0; k < rep.cells.size(); ++k) {
    EXPECT_EQ(back.cells[k].dataset, rep.cells[k].dataset);
    EXPECT_EQ(back.cells[k].algorithm, rep.cells[k].algorithm);
    EXPECT_EQ(back.cells[k].nu, rep.cells[k].nu);
    EXPECT_EQ(back.cells[k].mean_iterations, rep.cells[k].mean_iterations);
    EXPECT_EQ(back.cells[k].iqr_wall_ms, rep.cells[k].iqr_wall_ms);
    EXPECT_EQ(back.cells[k].runs.size(), rep.cells[k].runs.size());
  }
  EXPECT_EQ(rs::to_json(back).dump(), j.dump());

  std::ostringstream csv;
  rs::write_bench_csv(csv, rep);
  std::size_t lines = 0;
  for (char ch : csv.str()) lines += ch == '\n';
  EXPECT_EQ(lines, rep.cells.size() + 1);
}

// ---- command line --------------------------------------------------------------------

TEST(Cli, EstimatePlusMinusDesign) {
  const auto data = tmp_path("pm.csv");
  write_matrix(data, rs_test::plus_minus_design(2));
  const auto out = tmp_path("pm.json");
  ASSERT_EQ(run("estimate --rho t --nu 1 --algo pn --deterministic " + data.string() + " --out " + out.string()), 0);
  EXPECT_LT((sigma_of(out) - 0.5 * Matrix::Identity(2, 2)).norm(), 1e-6);
  const auto doc = rs::read_json(out.string());
  EXPECT_TRUE(doc.at("result").at("converged").get<bool>());
  EXPECT_EQ(doc.at("config_echo").at("solver").at("algorithm"), "pn");
}

TEST(Cli, TylerHasUnitDeterminant) {
  const auto data = tmp_path("cauchy.csv");
  write_matrix(data, rs::simulate(SimSpec{60, 3, SimModel::cauchy, 0.0, 5}));
  const auto out = tmp_path("tyler.json");
  ASSERT_EQ(run("estimate --rho tyler --algo fp " + data.string() + " --out " + out.string()), 0);
  EXPECT_NEAR(sigma_of(out).determinant(), 1.0, 1e-10);
}

TEST(Cli, ErrorsExitOne) {
  EXPECT_EQ(run("estimate " + tmp_path("missing.csv").string()), 1);
  EXPECT_NE(last_stderr().find("missing.csv"), std::string::npos);

  const auto ragged = tmp_path("ragged.csv");
  {
    std::ofstream f(ragged);
    f << "1,2\n3,4\n5\n";
  }
  EXPECT_EQ(run("estimate " + ragged.string()), 1);
  EXPECT_NE(last_stderr().find("line 3"), std::string::npos);

  const auto data = tmp_path("pm_err.csv");
  write_matrix(data, rs_test::plus_minus_design(2));
  EXPECT_EQ(run("estimate --algo fp3 " + data.string()), 1);
  EXPECT_EQ(run("estimate --algo bogus " + data.string()), 1);
  EXPECT_EQ(run("frobnicate"), 1);
}

TEST(Cli, NonConvergenceExitsTwo) {
  const auto data = tmp_path("nc.csv");
  write_matrix(data, rs::simulate(SimSpec{50, 3, SimModel::gaussian, 0.0, 6}));
  const auto out = tmp_path("nc.json");
  EXPECT_EQ(run("estimate --algo fp --max-iter 1 " + data.string() + " --out " + out.string()), 2);
  EXPECT_FALSE(rs::read_json(out.string()).at("result").at("converged").get<bool>());
}

TEST(Cli, LocationRecoversShift) {
  Matrix x = rs_test::plus_minus_design(3);
  Vector v(3);
  v << 2.0, -1.0, 0.5;
  x.rowwise() += v.transpose();
  const auto data = tmp_path("loc.csv");
  write_matrix(data, x);
  const auto out = tmp_path("loc.json");
  ASSERT_EQ(run("estimate-loc --rho t --nu 2 " + data.string() + " --out " + out.string()), 0);
  const auto mu = rs::read_json(out.string()).at("result").at("mu").get<std::vector<double>>();
  ASSERT_EQ(mu.size(), 3u);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(mu[k], v(k), 1e-6);
}

TEST(Cli, SymmetrizedModesAgree) {
  const auto data = tmp_path("symm.csv");
  write_matrix(data, rs::simulate(SimSpec{50, 5, SimModel::cauchy, 0.0, 7}));
  const auto all = tmp_path("symm_all.json");
  const auto seq = tmp_path("symm_seq.json");
  const std::string common = " --delta 1e-10 --seed 3 " + data.string();
  ASSERT_EQ(run("estimate-symm --mode all" + common + " --out " + all.string()), 0);
  ASSERT_EQ(run("estimate-symm --mode seq" + common + " --out " + seq.string()), 0);
  EXPECT_LT(rs_test::rel_diff(sigma_of(all), sigma_of(seq)), 1e-8);

  const auto two = tmp_path("two.csv");
  write_matrix(two, rs_test::plus_minus_design(1));
  EXPECT_EQ(run("estimate-symm " + two.string()), 1);
  EXPECT_NE(last_stderr().find("at least 3 rows"), std::string::npos);
}

TEST(Cli, SimulateAndBench) {
  const auto sim = tmp_path("sim.csv");
  ASSERT_EQ(run("simulate --n 25 --q 2 --model cauchy --seed 9 --out " + sim.string()), 0);
  EXPECT_EQ(rs::load_csv(sim.string()).sample.data(), rs::simulate(SimSpec{25, 2, SimModel::cauchy, 0.0, 9}));

  const auto cfg = tmp_path("bench_cfg.json");
  auto c = small_config();
  c.reps = 2;
  rs::write_json(rs::to_json(c), cfg.string());
  const auto out = tmp_path("bench.json");
  const auto csv = tmp_path("bench.csv");
  ASSERT_EQ(run("bench --quiet " + cfg.string() + " --out " + out.string() + " --csv " + csv.string()), 0);
  const auto rep = rs::bench_report_from_json(rs::read_json(out.string()));
  EXPECT_EQ(rep.cells.size(), 8u);
  EXPECT_EQ(rep.cells[0].replications, 2);
  EXPECT_TRUE(fs::exists(csv));
}
