#pragma once

#include "vibefuse/config.hpp"
#include "vibefuse/dataset.hpp"
#include "vibefuse/gp.hpp"
#include "vibefuse/mfdf.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace vibefuse::eval {

enum class Emulator { MfdfCnn, Mlmrgp };
std::string tag(Emulator e);

/// Mean over rows of squared errors, one entry per response column.
Eigen::VectorXd per_frequency_mse(const Eigen::MatrixXd& predictions, const Eigen::MatrixXd& truth);

struct EvalReport {
  Emulator emulator = Emulator::MfdfCnn;
  Eigen::VectorXd mse;
  Eigen::VectorXd log_mse;  // -inf where mse == 0
  bool has_log_of_zero = false;
  std::uint64_t split_seed = 0;
  int run = 0;
};

EvalReport make_report(Emulator emulator, const Eigen::MatrixXd& predictions, const Eigen::MatrixXd& truth,
                       std::uint64_t split_seed, int run);

enum class StudyKind { Robustness, HfFraction, Alpha };

struct StudyReport {
  StudyKind kind = StudyKind::Robustness;
  Emulator emulator = Emulator::MfdfCnn;
  std::vector<EvalReport> runs;
  Eigen::VectorXd mean_log_mse;
  bool has_log_of_zero = false;
};

StudyReport log_mse_aggregate(const std::vector<EvalReport>& reports, StudyKind kind);

/// Everything the studies need besides the split.
struct StudyInputs {
  const data::FidelityDataset* high = nullptr;
  const data::FidelityDataset* low = nullptr;
  config::MfdfSpec mfdf;
  gp::MlmrgpConfig mlmrgp;
  unsigned jobs = 1;
};

struct ComparisonResult {
  data::NestedSplit split;
  EvalReport cnn, gp;
  Eigen::MatrixXd truth, low, pred_cnn, pred_gp;  // test rows
  std::vector<double> cnn_epoch_loss;
  double cnn_initial_loss = 0.0;
  mfdf::CompositeNet net;
  gp::MlmrgpModel gp_model;
  /// Mean Euclidean row error over the test set.
  double mean_error_cnn = 0.0, mean_error_gp = 0.0, mean_error_low = 0.0;
};

mfdf::TrainingResult train_cnn(const StudyInputs& in, const data::NestedSplit& split, int run_salt = 0);
gp::MlmrgpModel train_gp(const StudyInputs& in, const data::NestedSplit& split, unsigned jobs, int run_salt = 0);

ComparisonResult run_comparison(const StudyInputs& in, const data::NestedSplit& split, int run = 0);

struct RobustnessResult {
  std::vector<ComparisonResult> runs;
  StudyReport cnn, gp;
};

/// Q splits with seeds base_seed + t.
RobustnessResult run_robustness(const StudyInputs& in, int runs, std::uint64_t base_seed, int lf_train, int hf_train);

struct SweepPoint {
  double value = 0.0;  // HF fraction or alpha
  int hf_train = 0;
  EvalReport cnn;
  std::optional<EvalReport> gp;
};

struct SweepResult {
  StudyKind kind = StudyKind::Alpha;
  std::vector<SweepPoint> points;
};

SweepResult run_hf_fraction_sweep(const StudyInputs& in, const data::NestedSplit& base,
                                  const std::vector<double>& fractions);
SweepResult run_alpha_sweep(const StudyInputs& in, const data::NestedSplit& split, const std::vector<double>& alphas);

/// Frequency-averaged log-MSE; -inf if any entry is -inf.
double mean_log(const EvalReport& r);

void write_comparison(const ComparisonResult& result, const std::vector<double>& freqs, int curve_samples,
                      std::uint64_t curve_seed, const std::filesystem::path& dir);
void write_robustness(const RobustnessResult& result, const std::filesystem::path& path);
void write_sweep(const SweepResult& result, const std::vector<double>& freqs, const std::filesystem::path& path);

}  // namespace vibefuse::eval
