#pragma once

// Dense feed-forward building blocks with reverse-mode gradients and Adam.
// Batches are stored column-wise: a batch of B samples with F features is an
// F x B matrix.

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace vibefuse::nn {

enum class Activation { Relu, Linear };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

struct DenseLayer {
  Eigen::MatrixXd weights;  // out x in
  Eigen::VectorXd bias;     // out
  Activation activation = Activation::Linear;

  int inputs() const { return static_cast<int>(weights.cols()); }
  int outputs() const { return static_cast<int>(weights.rows()); }
  long parameter_count() const { return static_cast<long>(weights.size() + bias.size()); }
};

/// Weights uniform in +-sqrt(6 / (fan_in + fan_out)), zero biases.
DenseLayer glorot_init(int fan_in, int fan_out, Activation activation, std::uint64_t seed);

/// Builds a chain in -> widths[0] -> ... -> widths.back(); `activations`
/// gives one tag per layer. Layer k is seeded with mix_seed(seed, k).
std::vector<DenseLayer> build_chain(int input_dim, const std::vector<int>& widths,
                                    const std::vector<Activation>& activations, std::uint64_t seed);

long parameter_count(const std::vector<DenseLayer>& layers);

/// values[0] is the input, values[k + 1] the output of layer k.
struct ForwardCache {
  std::vector<Eigen::MatrixXd> values;
};

Eigen::MatrixXd forward(const std::vector<DenseLayer>& layers, const Eigen::MatrixXd& x,
                        ForwardCache* cache = nullptr);

struct LayerGradient {
  Eigen::MatrixXd weights;
  Eigen::VectorXd bias;
};

std::vector<LayerGradient> zero_gradients(const std::vector<DenseLayer>& layers);

/// Adds dL/dparams into `grads` given dL/d(output) and returns dL/d(input).
/// The ReLU derivative at 0 is taken as 0.
Eigen::MatrixXd backprop(const std::vector<DenseLayer>& layers, const ForwardCache& cache,
                         const Eigen::MatrixXd& output_gradient, std::vector<LayerGradient>& grads);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class AdamState {
 public:
  AdamState(const std::vector<const DenseLayer*>& layers, AdamConfig config);

  const AdamConfig& config() const { return config_; }
  long step() const { return step_; }

  /// One bias-corrected update of every layer in place.
  void update(const std::vector<DenseLayer*>& layers, const std::vector<const LayerGradient*>& grads);

 private:
  AdamConfig config_;
  long step_ = 0;
  std::vector<LayerGradient> m_, v_;
};

/// Named groups of layers, saved as `<stem>.json` (shapes, tags, extra
/// metadata) plus `<stem>.bin` (little-endian float64 payload).
using LayerGroups = std::vector<std::pair<std::string, std::vector<DenseLayer>>>;

void save_network(const std::filesystem::path& stem, const LayerGroups& groups, const nlohmann::json& extra);
LayerGroups load_network(const std::filesystem::path& stem, nlohmann::json* extra = nullptr);

}  // namespace vibefuse::nn
