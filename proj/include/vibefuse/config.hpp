#pragma once

// Strict JSON pipeline configuration. Unknown keys are errors; every error
// names the JSON path and, when it can be located, the source line.

#include "vibefuse/gp.hpp"
#include "vibefuse/mfdf.hpp"
#include "vibefuse/sampling.hpp"
#include "vibefuse/simulation.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace vibefuse::config {

struct SplitSpec {
  int lf_train = 400;
  int hf_train = 40;
  std::uint64_t seed = 0;
};

struct MfdfSpec {
  mfdf::CompositeNetConfig net;
  mfdf::TrainingPlan plan;
  mfdf::SampleWeights weights;
};

struct EvalSpec {
  int robustness_runs = 5;
  std::vector<double> hf_fractions{0.1, 0.2, 0.3};
  std::vector<double> alpha_grid{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  int curve_samples = 6;
  int histogram_bins = 30;
  std::uint64_t seed = 0;
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  sim::ModelSpec model;
  sim::ReductionSpec reduction;
  sampling::SamplingSpec sampling;
  SplitSpec split;
  MfdfSpec mfdf;
  gp::MlmrgpConfig mlmrgp;
  EvalSpec eval;
  std::string out_dir = "out";

  /// FNV-1a of the canonical effective configuration.
  std::string hash() const;
  /// Hash of the parts that determine the datasets.
  std::string model_hash() const;
  nlohmann::json effective() const;
};

/// Parses `text`; `source` names the origin in error messages. A set
/// `seed_override` replaces the global seed before section seeds are derived.
PipelineConfig parse_config(const std::string& text, const std::string& source = "<config>",
                            std::optional<std::uint64_t> seed_override = std::nullopt);
PipelineConfig load_config(const std::filesystem::path& path,
                           std::optional<std::uint64_t> seed_override = std::nullopt);

std::string fnv1a_hex(const std::string& bytes);

}  // namespace vibefuse::config
