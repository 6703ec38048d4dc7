#pragma once

// Multi-response Gaussian processes with a linear mean and separable
// covariance Q (x) Sigma, stacked recursively over two fidelity levels.

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

namespace vibefuse::gp {

double squared_exp_kernel(const Eigen::VectorXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& roughness);

/// Rows of a and b are points.
Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const Eigen::VectorXd& roughness);

/// [1, x^T] per row.
Eigen::MatrixXd linear_basis(const Eigen::MatrixXd& x);

struct PsoConfig {
  int particles = 30;
  int iterations = 200;
  double inertia = 0.72;
  double cognitive = 1.49;
  double social = 1.49;
  std::uint64_t seed = 0;

  void validate() const;
};

struct PsoResult {
  Eigen::VectorXd best;
  double best_value = 0.0;
  Eigen::MatrixXd initial_positions;  // particles x dims
  Eigen::VectorXd initial_values;
};

/// Maximizes `objective` over the box. Non-finite objective values count as
/// -infinity. Evaluations within a sweep run on up to `jobs` threads.
PsoResult pso_optimize(const std::function<double(const Eigen::VectorXd&)>& objective,
                       const Eigen::VectorXd& lower, const Eigen::VectorXd& upper, const PsoConfig& config,
                       unsigned jobs = 1);

/// Maps each input dimension to a roughness group.
struct LengthscaleGroups {
  std::vector<int> group_of_dim;
  int group_count = 0;

  static LengthscaleGroups per_dimension(int dims);
  /// Consecutive pairs share one roughness (density and modulus of a segment).
  static LengthscaleGroups paired(int dims);
  Eigen::VectorXd expand(const Eigen::VectorXd& grouped) const;
};

/// One fitted level with profiled mean coefficients and response covariance.
class MrgpLevel {
 public:
  MrgpLevel() = default;
  /// Fits beta and Q in closed form for fixed roughness. Throws on a
  /// non-positive-definite kernel or rank-deficient mean basis.
  MrgpLevel(Eigen::MatrixXd x, Eigen::MatrixXd y, Eigen::VectorXd roughness, double jitter);

  const Eigen::MatrixXd& inputs() const { return x_; }
  const Eigen::MatrixXd& outputs() const { return y_; }
  const Eigen::VectorXd& roughness() const { return roughness_; }
  double jitter() const { return jitter_; }
  const Eigen::MatrixXd& beta() const { return beta_; }
  const Eigen::MatrixXd& response_covariance() const { return q_; }
  double log_likelihood() const { return log_likelihood_; }

  /// Posterior mean rows.
  Eigen::MatrixXd mean(const Eigen::MatrixXd& x) const;
  /// Spatial factor c(x*) of the predictive covariance c(x*) * Q, per row.
  Eigen::VectorXd spatial_factor(const Eigen::MatrixXd& x) const;
  /// Per-response predictive variance rows.
  Eigen::MatrixXd variance(const Eigen::MatrixXd& x) const;

 private:
  Eigen::MatrixXd x_, y_;
  Eigen::VectorXd roughness_;
  double jitter_ = 1e-8;
  Eigen::LLT<Eigen::MatrixXd> sigma_;
  Eigen::MatrixXd h_;
  Eigen::MatrixXd sigma_inv_h_;
  Eigen::LLT<Eigen::MatrixXd> gls_;  // H^T Sigma^-1 H
  Eigen::MatrixXd beta_, q_;
  Eigen::MatrixXd weights_;          // Sigma^-1 (Y - H beta)
  double log_likelihood_ = 0.0;
};

/// Profile log-likelihood, -infinity when the fit is impossible.
double profile_log_likelihood(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const Eigen::VectorXd& roughness,
                              double jitter);

struct LevelBounds {
  double log10_lower = -4.0;  // roughness searched on a log10 scale
  double log10_upper = 3.0;
};

MrgpLevel fit_level(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const LengthscaleGroups& groups,
                    const LevelBounds& bounds, const PsoConfig& pso, double jitter, unsigned jobs,
                    PsoResult* trace = nullptr);

enum class Grouping { PerDimension, SegmentTied };

struct MlmrgpConfig {
  Grouping grouping = Grouping::PerDimension;
  double jitter = 1e-8;
  PsoConfig pso;
  LevelBounds roughness_bounds;
  double rho_lower = -10.0;
  double rho_upper = 10.0;
  /// Fix rho instead of optimizing it.
  std::optional<double> fixed_rho;
  bool scale_data = true;

  void validate() const;
};

struct DataScaling {
  Eigen::VectorXd x_min, x_range;
  Eigen::VectorXd y_mean, y_scale;

  Eigen::MatrixXd inputs(const Eigen::MatrixXd& rows) const;
  Eigen::MatrixXd outputs(const Eigen::MatrixXd& rows) const;
  Eigen::MatrixXd restore(const Eigen::MatrixXd& rows) const;
};

struct MlmrgpModel {
  DataScaling scaling;
  MrgpLevel low;
  double rho = 1.0;
  MrgpLevel discrepancy;
  int hyperparameter_count = 0;
};

struct TwoLevelPrediction {
  Eigen::MatrixXd mean;      // rows x responses, physical units
  Eigen::MatrixXd variance;  // same shape
};

/// HF inputs must be a subset (row-wise, exact) of the LF inputs.
MlmrgpModel fit_two_level(const Eigen::MatrixXd& lf_x, const Eigen::MatrixXd& lf_y, const Eigen::MatrixXd& hf_x,
                          const Eigen::MatrixXd& hf_y, const MlmrgpConfig& config, unsigned jobs = 1);

TwoLevelPrediction predict_two_level(const MlmrgpModel& model, const Eigen::MatrixXd& x);

/// Discrepancy posterior mean in physical units: prediction - rho * LF prediction.
Eigen::MatrixXd discrepancy_mean(const MlmrgpModel& model, const Eigen::MatrixXd& x);

nlohmann::json to_json(const MlmrgpModel& model);
MlmrgpModel mlmrgp_from_json(const nlohmann::json& j);

}  // namespace vibefuse::gp
