#pragma once

// Composite multi-fidelity network: a low-fidelity stage feeding a linear and
// a nonlinear passage whose outputs are blended with a fixed weight alpha.

#include "vibefuse/dataset.hpp"
#include "vibefuse/nn.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace vibefuse::mfdf {

struct CompositeNetConfig {
  int input_dim = 12;
  std::vector<int> stage1_widths{512, 512, 512};
  int lf_output_dim = 10;
  std::vector<int> linear_widths{256, 256};
  std::vector<int> nonlinear_widths{256, 256, 256};
  int hf_output_dim = 10;
  double alpha = 0.6;

  void validate() const;
};

/// Optional affine maps applied around the network (identity when disabled).
struct Standardizer {
  bool enabled = false;
  Eigen::VectorXd x_mean, x_scale;
  Eigen::VectorXd y_mean, y_scale;  // shared by both fidelity outputs

  Eigen::MatrixXd inputs(const Eigen::MatrixXd& rows) const;
  Eigen::MatrixXd outputs(const Eigen::MatrixXd& rows) const;
  Eigen::MatrixXd restore_outputs(const Eigen::MatrixXd& rows) const;
};

struct CompositeNet {
  CompositeNetConfig config;
  std::vector<nn::DenseLayer> stage1;
  std::vector<nn::DenseLayer> linear;
  std::vector<nn::DenseLayer> nonlinear;
  Standardizer scaling;

  double alpha() const { return config.alpha; }
  long parameter_count() const;
  std::vector<nn::DenseLayer*> layers();
  std::vector<const nn::DenseLayer*> layers() const;
};

CompositeNet build_composite(const CompositeNetConfig& config, std::uint64_t seed);

struct CompositeOutput {
  Eigen::MatrixXd lf;         // y1 hat
  Eigen::MatrixXd hf;         // y2 hat
  Eigen::MatrixXd linear;     // v_L
  Eigen::MatrixXd nonlinear;  // v_NL
};

struct CompositeCache {
  nn::ForwardCache stage1, linear, nonlinear;
};

/// Column batch in network units (features x batch), no scaling applied.
CompositeOutput composite_forward(const CompositeNet& net, const Eigen::MatrixXd& x, CompositeCache* cache = nullptr);

enum class LossForm { Separable, LiteralSquaredSum };

struct SampleWeights {
  double real_lf = 0.5;
  double real_hf = 2.0;
  double pseudo_lf = 0.5;
  double pseudo_hf = 1e-5;
};

/// One row per LF-train id. Rows without a real HF partner carry a copy of
/// their LF response as pseudo high-fidelity data.
struct FusedTrainingSet {
  std::vector<int> row_ids;
  Eigen::MatrixXd x;   // rows x input
  Eigen::MatrixXd y1;  // rows x outputs
  Eigen::MatrixXd y2;
  std::vector<bool> is_pseudo;
  Eigen::VectorXd beta1, beta2;

  int rows() const { return static_cast<int>(x.rows()); }
  int pseudo_count() const;
};

FusedTrainingSet fill_pseudo_high_fidelity(const data::NestedSplit& split, const data::FidelityDataset& lf,
                                           const data::FidelityDataset& hf, const SampleWeights& weights = {});

struct TrainingPlan {
  double gamma = 0.8;
  int epochs = 40;
  int batch_size = 5;
  std::uint64_t seed = 0;
  LossForm loss_form = LossForm::Separable;
  nn::AdamConfig adam;
  bool standardize = false;

  void validate() const;
};

struct LossValue {
  double value = 0.0;
  Eigen::MatrixXd grad_lf;  // dL / d y1 hat, outputs x batch
  Eigen::MatrixXd grad_hf;
};

/// Weighted two-output loss over a column batch.
LossValue weighted_loss(const Eigen::MatrixXd& y1, const Eigen::MatrixXd& y2, const Eigen::MatrixXd& y1_hat,
                        const Eigen::MatrixXd& y2_hat, const Eigen::VectorXd& beta1, const Eigen::VectorXd& beta2,
                        double gamma, LossForm form, bool with_gradient);

/// Loss of `net` on rows `ids` of the fused set (network units: the set must
/// already be standardized if the net expects it).
double training_loss(const FusedTrainingSet& fused, const std::vector<int>& ids, const CompositeNet& net,
                     const TrainingPlan& plan);

struct CompositeGradient {
  double loss = 0.0;
  std::vector<nn::LayerGradient> stage1, linear, nonlinear;
  std::vector<const nn::LayerGradient*> flat() const;
};

CompositeGradient composite_gradient(const CompositeNet& net, const FusedTrainingSet& fused,
                                     const std::vector<int>& ids, const TrainingPlan& plan);

struct TrainingResult {
  CompositeNet net;
  std::vector<double> epoch_loss;  // mean loss per epoch
  double initial_loss = 0.0;       // full-set loss before the first update
};

/// Builds a network from `config` and trains it on `fused`.
TrainingResult train_composite(const FusedTrainingSet& fused, const CompositeNetConfig& config,
                               const TrainingPlan& plan);

/// Rows in, rows out, in physical units.
Eigen::MatrixXd predict_high_fidelity(const CompositeNet& net, const Eigen::MatrixXd& theta_rows,
                                      Eigen::MatrixXd* lf_rows = nullptr);

void save_composite(const CompositeNet& net, const std::filesystem::path& stem, const nlohmann::json& extra = {});
CompositeNet load_composite(const std::filesystem::path& stem, nlohmann::json* extra = nullptr);

}  // namespace vibefuse::mfdf
