#include "support.hpp"

#include "vibefuse/errors.hpp"
#include "vibefuse/eval.hpp"
#include "vibefuse/random.hpp"
#include "vibefuse/sampling.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

using namespace vibefuse;
namespace fs = std::filesystem;

namespace {

Eigen::MatrixXd random_matrix(int rows, int cols, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = uniform01(rng);
  return m;
}

eval::EvalReport report_from_mse(eval::Emulator e, const Eigen::VectorXd& mse) {
  // One-row tables whose squared errors equal the requested mse values.
  Eigen::MatrixXd truth = Eigen::MatrixXd::Zero(1, mse.size());
  Eigen::MatrixXd pred = mse.cwiseSqrt().transpose();
  return eval::make_report(e, pred, truth, 0, 0);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int line_count(const fs::path& p) {
  std::ifstream in(p);
  int n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

/// Equal-fidelity strip datasets: every DOF is a master.
data::DatasetPair make_equal_fidelity_pair(int count) {
  sim::ReductionSpec red;
  red.all_masters = true;
  sim::StructuralModel model(testing::strip_model(), red);
  sampling::SamplingSpec spec;
  spec.count = count;
  spec.seed = 21;
  return data::generate_datasets(model, sampling::lhs_normal_samples(spec), 1, {21, "strip", ""});
}

const data::DatasetPair& equal_fidelity_pair() {
  static const data::DatasetPair pair = make_equal_fidelity_pair(150);
  return pair;
}

eval::StudyInputs small_inputs(const data::DatasetPair& d) {
  eval::StudyInputs in;
  in.high = &d.high;
  in.low = &d.low;
  in.mfdf.net.stage1_widths = {32, 32};
  in.mfdf.net.linear_widths = {16};
  in.mfdf.net.nonlinear_widths = {16, 16};
  in.mfdf.net.lf_output_dim = d.low.response_length();
  in.mfdf.net.hf_output_dim = d.high.response_length();
  in.mfdf.plan.epochs = 200;
  in.mfdf.plan.standardize = true;
  in.mfdf.plan.seed = 5;
  in.mlmrgp.pso.seed = 6;
  return in;
}

}  // namespace

TEST_CASE("per-frequency MSE on hand cases") {
  const Eigen::MatrixXd truth = random_matrix(4, 3, 1);
  CHECK(eval::per_frequency_mse(truth, truth).isZero(0.0));

  const Eigen::MatrixXd shifted = truth.array() + 2e-3;
  const auto mse = eval::per_frequency_mse(shifted, truth);
  for (int r = 0; r < 3; ++r) CHECK(std::abs(mse[r] - 4e-6) < 1e-18);
}

TEST_CASE("per-frequency MSE matches an independent summation") {
  const Eigen::MatrixXd truth = random_matrix(5, 10, 2);
  const Eigen::MatrixXd pred = random_matrix(5, 10, 3);
  const auto mse = eval::per_frequency_mse(pred, truth);
  for (int r = 0; r < 10; ++r) {
    long double acc = 0.0L;
    for (int k = 0; k < 5; ++k) {
      const long double e = static_cast<long double>(pred(k, r)) - truth(k, r);
      acc += e * e;
    }
    const double expected = static_cast<double>(acc / 5.0L);
    CHECK(testing::rel_diff(mse[r], expected) < 1e-15);
  }
}

TEST_CASE("per-frequency MSE rejects mismatched tables") {
  const Eigen::MatrixXd a = random_matrix(4, 3, 1);
  CHECK_THROWS_AS(eval::per_frequency_mse(a, random_matrix(5, 3, 1)), DomainError);
  CHECK_THROWS_AS(eval::per_frequency_mse(a, random_matrix(4, 2, 1)), DomainError);
  CHECK_THROWS_AS(eval::per_frequency_mse(Eigen::MatrixXd(0, 3), Eigen::MatrixXd(0, 3)), DomainError);
}

TEST_CASE("log-MSE of reports") {
  Eigen::VectorXd mse(3);
  mse << std::exp(1.0), 1.0, 0.0;
  const auto r = report_from_mse(eval::Emulator::Mlmrgp, mse);
  CHECK(std::abs(r.log_mse[0] - 1.0) < 1e-15);
  CHECK(r.log_mse[1] == 0.0);
  CHECK(std::isinf(r.log_mse[2]));
  CHECK(r.log_mse[2] < 0.0);
  CHECK(r.has_log_of_zero);
  CHECK(std::isinf(eval::mean_log(r)));

  mse[2] = 1.0;
  const auto clean = report_from_mse(eval::Emulator::Mlmrgp, mse);
  CHECK_FALSE(clean.has_log_of_zero);
  CHECK(std::abs(eval::mean_log(clean) - 1.0 / 3.0) < 1e-15);
}

TEST_CASE("log-MSE aggregation over five runs") {
  const double table[5][2] = {{1e-10, 2e-9}, {3e-10, 5e-9}, {2e-11, 7e-10}, {8e-11, 1e-9}, {4e-10, 3e-9}};
  std::vector<eval::EvalReport> reports;
  for (const auto& row : table) reports.push_back(report_from_mse(eval::Emulator::MfdfCnn, Eigen::Vector2d(row[0], row[1])));
  const auto s = eval::log_mse_aggregate(reports, eval::StudyKind::Robustness);
  CHECK(s.runs.size() == 5);
  CHECK(s.kind == eval::StudyKind::Robustness);
  CHECK_FALSE(s.has_log_of_zero);
  for (int r = 0; r < 2; ++r) {
    double expected = 0.0;
    for (const auto& row : table) expected += std::log(row[r]);
    expected /= 5.0;
    CHECK(testing::rel_diff(s.mean_log_mse[r], expected) < 1e-14);
  }

  const auto single = eval::log_mse_aggregate({reports[2]}, eval::StudyKind::Robustness);
  CHECK(single.mean_log_mse == reports[2].log_mse);
}

TEST_CASE("log-MSE aggregation errors and sentinel") {
  CHECK_THROWS_AS(eval::log_mse_aggregate({}, eval::StudyKind::Alpha), DomainError);
  const auto a = report_from_mse(eval::Emulator::MfdfCnn, Eigen::Vector2d(1.0, 2.0));
  const auto b = report_from_mse(eval::Emulator::Mlmrgp, Eigen::Vector2d(1.0, 2.0));
  CHECK_THROWS_AS(eval::log_mse_aggregate({a, b}, eval::StudyKind::Robustness), DomainError);
  const auto c = report_from_mse(eval::Emulator::MfdfCnn, Eigen::Vector3d(1.0, 2.0, 3.0));
  CHECK_THROWS_AS(eval::log_mse_aggregate({a, c}, eval::StudyKind::Robustness), DomainError);

  const auto zero = report_from_mse(eval::Emulator::MfdfCnn, Eigen::Vector2d(0.0, 2.0));
  const auto s = eval::log_mse_aggregate({a, zero}, eval::StudyKind::Robustness);
  CHECK(s.has_log_of_zero);
  CHECK(std::isinf(s.mean_log_mse[0]));
  CHECK(std::abs(s.mean_log_mse[1] - std::log(2.0)) < 1e-15);
}

TEST_CASE("equal-fidelity comparison reaches near-interpolation") {
  const auto d = make_equal_fidelity_pair(500);
  CHECK(d.high.responses == d.low.responses);
  const auto in = small_inputs(d);
  const auto split = data::split_nested(d.high, d.low, 400, 200, 9);
  const auto res = eval::run_comparison(in, split, 0);

  CHECK(res.cnn.mse.size() == 5);
  CHECK(res.gp.mse.size() == 5);
  CHECK(res.mean_error_low == 0.0);
  const Eigen::MatrixXd centered = res.truth.rowwise() - res.truth.colwise().mean();
  const Eigen::VectorXd variance = centered.array().square().colwise().mean();
  for (int r = 0; r < 5; ++r) {
    MESSAGE("point " << r + 1 << ": cnn " << res.cnn.mse[r] / variance[r] << ", gp " << res.gp.mse[r] / variance[r]);
    CHECK(res.cnn.mse[r] < 1e-2 * variance[r]);
    CHECK(res.gp.mse[r] < 1e-2 * variance[r]);
  }
}

TEST_CASE("comparison metrics are recomputable from persisted errors") {
  const auto& d = equal_fidelity_pair();
  auto in = small_inputs(d);
  in.mfdf.plan.epochs = 5;
  in.mlmrgp.pso.particles = 8;
  in.mlmrgp.pso.iterations = 10;
  const auto split = data::split_nested(d.high, d.low, 120, 40, 9);
  const auto res = eval::run_comparison(in, split, 0);
  const auto again = eval::run_comparison(in, split, 0);
  CHECK(again.pred_cnn == res.pred_cnn);
  CHECK(again.pred_gp == res.pred_gp);

  const fs::path dir = fs::temp_directory_path() / "vibefuse_eval_cmp";
  fs::remove_all(dir);
  fs::create_directories(dir);
  eval::write_comparison(res, d.high.frequencies_hz, 6, 4, dir);
  CHECK(line_count(dir / "comparison.csv") == 6);
  CHECK(line_count(dir / "scatter.csv") == 1 + 5 * static_cast<int>(split.hf_test.size()));
  for (int k = 1; k <= 6; ++k) CHECK(line_count(dir / ("curves_" + std::to_string(k) + ".csv")) == 6);
  CHECK_FALSE(fs::exists(dir / "curves_7.csv"));

  std::ifstream in_csv(dir / "scatter.csv");
  std::string line;
  std::getline(in_csv, line);
  Eigen::VectorXd cnn_acc = Eigen::VectorXd::Zero(5), gp_acc = Eigen::VectorXd::Zero(5);
  while (std::getline(in_csv, line)) {
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> v;
    while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
    const int r = static_cast<int>(v[0]) - 1;
    cnn_acc[r] += (v[3] - v[4]) * (v[3] - v[4]);
    gp_acc[r] += (v[3] - v[5]) * (v[3] - v[5]);
  }
  const double m = static_cast<double>(split.hf_test.size());
  for (int r = 0; r < 5; ++r) {
    CHECK(testing::rel_diff(cnn_acc[r] / m, res.cnn.mse[r]) < 1e-12);
    CHECK(testing::rel_diff(gp_acc[r] / m, res.gp.mse[r]) < 1e-12);
  }
  fs::remove_all(dir);
}

TEST_CASE("robustness with one run equals the single comparison") {
  const auto& d = equal_fidelity_pair();
  auto in = small_inputs(d);
  in.mfdf.plan.epochs = 5;
  in.mlmrgp.pso.particles = 8;
  in.mlmrgp.pso.iterations = 10;
  const auto rob = eval::run_robustness(in, 1, 30, 120, 40);
  REQUIRE(rob.runs.size() == 1);
  CHECK(rob.cnn.mean_log_mse == rob.runs[0].cnn.log_mse);
  CHECK(rob.gp.mean_log_mse == rob.runs[0].gp.log_mse);

  const auto direct = eval::run_comparison(in, data::split_nested(d.high, d.low, 120, 40, 30), 0);
  CHECK(direct.cnn.mse == rob.runs[0].cnn.mse);
  CHECK(direct.gp.mse == rob.runs[0].gp.mse);
  CHECK_THROWS_AS(eval::run_robustness(in, 0, 30, 120, 40), DomainError);
}

TEST_CASE("robustness aggregation identity and jobs independence") {
  const auto& d = equal_fidelity_pair();
  auto in = small_inputs(d);
  in.mfdf.plan.epochs = 3;
  in.mlmrgp.pso.particles = 8;
  in.mlmrgp.pso.iterations = 10;
  const auto rob = eval::run_robustness(in, 3, 40, 120, 30);
  REQUIRE(rob.runs.size() == 3);
  for (std::size_t t = 0; t < 3; ++t) CHECK(rob.runs[t].split.seed == 40 + t);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(5);
  for (const auto& r : rob.runs) mean += r.cnn.log_mse;
  mean /= 3.0;
  CHECK((mean - rob.cnn.mean_log_mse).cwiseAbs().maxCoeff() < 1e-12);

  in.jobs = 3;
  const auto par = eval::run_robustness(in, 3, 40, 120, 30);
  for (std::size_t t = 0; t < 3; ++t) {
    CHECK(par.runs[t].cnn.mse == rob.runs[t].cnn.mse);
    CHECK(par.runs[t].gp.mse == rob.runs[t].gp.mse);
  }

  const fs::path path = fs::temp_directory_path() / "vibefuse_robustness.csv";
  eval::write_robustness(rob, path);
  CHECK(line_count(path) == 1 + 3 * 2 * 5 + 2 * 5);
  fs::remove(path);
}

TEST_CASE("alpha sweep with the two end points") {
  const auto& d = equal_fidelity_pair();
  auto in = small_inputs(d);
  in.mfdf.plan.epochs = 3;
  const auto split = data::split_nested(d.high, d.low, 120, 40, 9);
  const auto sw = eval::run_alpha_sweep(in, split, {0.0, 1.0});
  REQUIRE(sw.points.size() == 2);
  CHECK(sw.kind == eval::StudyKind::Alpha);
  CHECK(sw.points[0].value == 0.0);
  CHECK(sw.points[1].value == 1.0);
  CHECK_FALSE(sw.points[0].gp.has_value());
  CHECK(sw.points[0].cnn.mse != sw.points[1].cnn.mse);

  const fs::path path = fs::temp_directory_path() / "vibefuse_sweep_alpha.csv";
  eval::write_sweep(sw, d.high.frequencies_hz, path);
  CHECK(line_count(path) == 1 + 2 * 5);
  fs::remove(path);
}

TEST_CASE("HF-fraction sweep keeps the test set and scales HF-train") {
  const auto& d = equal_fidelity_pair();
  auto in = small_inputs(d);
  in.mfdf.plan.epochs = 3;
  in.mlmrgp.pso.particles = 8;
  in.mlmrgp.pso.iterations = 10;
  const auto split = data::split_nested(d.high, d.low, 120, 40, 9);
  const auto sw = eval::run_hf_fraction_sweep(in, split, {0.15, 0.3});
  REQUIRE(sw.points.size() == 2);
  CHECK(sw.points[0].hf_train == 18);
  CHECK(sw.points[1].hf_train == 36);
  CHECK(sw.points[0].gp.has_value());
  CHECK(sw.points[0].cnn.mse.size() == 5);

  const fs::path path = fs::temp_directory_path() / "vibefuse_sweep_hf.csv";
  eval::write_sweep(sw, d.high.frequencies_hz, path);
  CHECK(line_count(path) == 1 + 2 * 2 * 5);
  const auto first = slurp(path);
  eval::write_sweep(eval::run_hf_fraction_sweep(in, split, {0.15, 0.3}), d.high.frequencies_hz, path);
  CHECK(slurp(path) == first);
  fs::remove(path);

  CHECK_THROWS_AS(eval::run_hf_fraction_sweep(in, split, {0.0}), DomainError);
  CHECK_THROWS_AS(eval::run_hf_fraction_sweep(in, split, {1.5}), DomainError);
}
