#pragma once

#include "vibefuse/config.hpp"
#include "vibefuse/dataset.hpp"
#include "vibefuse/eval.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace vibefuse::pipeline {

struct Context {
  config::PipelineConfig config;
  std::filesystem::path out_dir;
  unsigned jobs = 1;
  std::ostream* log = nullptr;
};

/// Output directory: explicit flag, then $VIBEFUSE_OUT, then the config.
std::filesystem::path resolve_out_dir(const std::optional<std::string>& flag, const config::PipelineConfig& cfg);

int mesh(const Context& ctx);
Eigen::MatrixXd sample(const Context& ctx);
data::DatasetPair simulate(const Context& ctx);
data::NestedSplit split(const Context& ctx);
void train_cnn(const Context& ctx);
void train_gp(const Context& ctx);
void predict(const Context& ctx, const std::string& emulator, const std::optional<std::string>& input_csv);
eval::ComparisonResult evaluate(const Context& ctx);
eval::RobustnessResult study_robustness(const Context& ctx);
eval::SweepResult study_hf_fraction(const Context& ctx);
eval::SweepResult study_alpha(const Context& ctx);
void run_all(const Context& ctx);

/// Full command-line entry point; returns the process exit status.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace vibefuse::pipeline
