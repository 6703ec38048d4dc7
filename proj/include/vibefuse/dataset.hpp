#pragma once

#include "vibefuse/simulation.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace vibefuse::data {

enum class Fidelity { Low, High };

std::string to_string(Fidelity f);
Fidelity fidelity_from_string(const std::string& s);

struct DatasetMetadata {
  std::uint64_t seed = 0;
  std::string model_hash;
  std::string timestamp;  // ISO-8601 UTC, informational only
};

/// Rows of (theta, response) at one fidelity. Responses are FRF magnitudes
/// ordered outputs-fastest within each frequency.
struct FidelityDataset {
  Fidelity fidelity = Fidelity::High;
  std::vector<double> frequencies_hz;
  std::vector<int> output_dofs;
  Eigen::MatrixXd inputs;     // rows x parameter count
  Eigen::MatrixXd responses;  // rows x (outputs * frequencies)
  DatasetMetadata metadata;

  int rows() const { return static_cast<int>(inputs.rows()); }
  int response_length() const { return static_cast<int>(output_dofs.size() * frequencies_hz.size()); }
  void validate() const;
  /// Selected rows, in the given order.
  FidelityDataset subset(const std::vector<int>& ids) const;
};

struct DatasetPair {
  FidelityDataset high;
  FidelityDataset low;
};

/// Evaluates both fidelity levels for every theta row. A failing sample
/// aborts the whole call with its row index in the message.
DatasetPair generate_datasets(const sim::StructuralModel& model, const Eigen::MatrixXd& theta, unsigned jobs,
                              const DatasetMetadata& metadata);

struct NestedSplit {
  std::vector<int> lf_train;  // ascending
  std::vector<int> hf_train;  // ascending, subset of lf_train
  std::vector<int> hf_test;   // ascending, complement of lf_train
  std::uint64_t seed = 0;

  void validate(int rows) const;
};

NestedSplit split_nested(const FidelityDataset& hf, const FidelityDataset& lf, int lf_train, int hf_train,
                         std::uint64_t seed);
/// HF-train of `hf_train` rows drawn from an existing LF-train; test set kept.
NestedSplit resplit_hf(const NestedSplit& base, int hf_train, std::uint64_t seed);

void save_split(const NestedSplit& split, const std::filesystem::path& path, const std::string& config_hash);
NestedSplit load_split(const std::filesystem::path& path);

/// Writes `<stem>.csv` and `<stem>.json`.
void save_dataset(const FidelityDataset& ds, const std::filesystem::path& stem);
FidelityDataset load_dataset(const std::filesystem::path& stem);

struct PointSummary {
  double freq_hz = 0.0;
  int output = 0;
  double min = 0.0, max = 0.0, mean = 0.0, std = 0.0;
  double skewness = 0.0, excess_kurtosis = 0.0;
  std::vector<double> bin_edges;  // bins + 1
  std::vector<int> counts;
};

std::vector<PointSummary> summarize(const FidelityDataset& ds, int bins = 30);
void write_summary(const std::vector<PointSummary>& summary, const std::filesystem::path& envelope_csv,
                   const std::filesystem::path& histogram_csv);

/// Mean over rows of |low - high| / |high| (Euclidean norms of response rows).
double mean_relative_discrepancy(const FidelityDataset& low, const FidelityDataset& high);

/// Shortest decimal that parses back to the same double.
std::string format_double(double v);
double parse_double(const std::string& s);

std::string utc_timestamp();

}  // namespace vibefuse::data
