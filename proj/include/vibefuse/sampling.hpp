#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>

namespace vibefuse::sampling {

struct SamplingSpec {
  int dimension = 12;
  Eigen::VectorXd means = Eigen::VectorXd::Zero(12);
  Eigen::VectorXd stds = Eigen::VectorXd::Constant(12, 0.10);
  int count = 1000;
  std::uint64_t seed = 0;
  /// Draws at or below this value are redrawn inside their stratum
  /// (-1 keeps 1 + delta positive for relative deviations).
  std::optional<double> reject_at_or_below = -1.0;

  static SamplingSpec isotropic(int dimension, double std, int count, std::uint64_t seed);
  void validate() const;
};

double normal_cdf(double x);

/// Inverse standard normal CDF (Wichura's AS 241, relative error ~1e-16).
double normal_quantile(double p);

/// Latin hypercube sample of independent normals, count x dimension.
Eigen::MatrixXd lhs_normal_samples(const SamplingSpec& spec);

}  // namespace vibefuse::sampling
