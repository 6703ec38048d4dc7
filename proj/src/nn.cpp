#include "vibefuse/nn.hpp"

#include "vibefuse/errors.hpp"
#include "vibefuse/random.hpp"

#include <bit>
#include <cmath>
#include <fstream>

namespace vibefuse::nn {

namespace {
constexpr const char* kModule = "nn-core";
constexpr const char* kFormat = "vibefuse-network";
constexpr int kVersion = 1;

static_assert(std::endian::native == std::endian::little, "payload format assumes a little-endian host");

void apply_activation(Activation a, Eigen::MatrixXd& z) {
  if (a == Activation::Relu) z = z.cwiseMax(0.0);
}
}  // namespace

std::string to_string(Activation a) { return a == Activation::Relu ? "RELU" : "LINEAR"; }

Activation activation_from_string(const std::string& s) {
  if (s == "RELU") return Activation::Relu;
  if (s == "LINEAR") return Activation::Linear;
  throw FormatError(kModule, "unknown activation '" + s + "'");
}

DenseLayer glorot_init(int fan_in, int fan_out, Activation activation, std::uint64_t seed) {
  if (fan_in < 1 || fan_out < 1) throw DomainError(kModule, "layer shape must be positive");
  DenseLayer layer;
  layer.activation = activation;
  layer.weights.resize(fan_out, fan_in);
  layer.bias = Eigen::VectorXd::Zero(fan_out);
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  Rng rng(seed);
  for (int j = 0; j < fan_in; ++j)
    for (int i = 0; i < fan_out; ++i) layer.weights(i, j) = (2.0 * uniform01(rng) - 1.0) * bound;
  return layer;
}

std::vector<DenseLayer> build_chain(int input_dim, const std::vector<int>& widths,
                                    const std::vector<Activation>& activations, std::uint64_t seed) {
  if (widths.size() != activations.size()) throw DomainError(kModule, "one activation per layer required");
  std::vector<DenseLayer> layers;
  int in = input_dim;
  for (std::size_t k = 0; k < widths.size(); ++k) {
    layers.push_back(glorot_init(in, widths[k], activations[k], mix_seed(seed, k)));
    in = widths[k];
  }
  return layers;
}

long parameter_count(const std::vector<DenseLayer>& layers) {
  long n = 0;
  for (const auto& l : layers) n += l.parameter_count();
  return n;
}

Eigen::MatrixXd forward(const std::vector<DenseLayer>& layers, const Eigen::MatrixXd& x, ForwardCache* cache) {
  if (cache) {
    cache->values.resize(layers.size() + 1);
    cache->values[0] = x;
  }
  Eigen::MatrixXd h = x;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const auto& layer = layers[k];
    if (h.rows() != layer.inputs())
      throw DomainError(kModule, "layer " + std::to_string(k) + " expects " + std::to_string(layer.inputs()) +
                                     " inputs, got " + std::to_string(h.rows()));
    Eigen::MatrixXd z = layer.weights * h;
    z.colwise() += layer.bias;
    apply_activation(layer.activation, z);
    h = std::move(z);
    if (cache) cache->values[k + 1] = h;
  }
  return h;
}

std::vector<LayerGradient> zero_gradients(const std::vector<DenseLayer>& layers) {
  std::vector<LayerGradient> g(layers.size());
  for (std::size_t k = 0; k < layers.size(); ++k) {
    g[k].weights = Eigen::MatrixXd::Zero(layers[k].outputs(), layers[k].inputs());
    g[k].bias = Eigen::VectorXd::Zero(layers[k].outputs());
  }
  return g;
}

Eigen::MatrixXd backprop(const std::vector<DenseLayer>& layers, const ForwardCache& cache,
                         const Eigen::MatrixXd& output_gradient, std::vector<LayerGradient>& grads) {
  if (cache.values.size() != layers.size() + 1) throw DomainError(kModule, "forward cache does not match network");
  if (grads.size() != layers.size()) throw DomainError(kModule, "gradient buffer does not match network");
  Eigen::MatrixXd delta = output_gradient;
  for (std::size_t k = layers.size(); k-- > 0;) {
    const auto& layer = layers[k];
    if (layer.activation == Activation::Relu)
      delta = (cache.values[k + 1].array() > 0.0).select(delta, 0.0);
    grads[k].weights.noalias() += delta * cache.values[k].transpose();
    grads[k].bias.noalias() += delta.rowwise().sum();
    delta = layer.weights.transpose() * delta;
  }
  return delta;
}

AdamState::AdamState(const std::vector<const DenseLayer*>& layers, AdamConfig config) : config_(config) {
  if (!(config.learning_rate > 0.0) || !(config.beta1 >= 0.0 && config.beta1 < 1.0) ||
      !(config.beta2 >= 0.0 && config.beta2 < 1.0) || !(config.epsilon > 0.0))
    throw DomainError(kModule, "invalid Adam hyperparameters");
  for (const auto* l : layers) {
    LayerGradient z{Eigen::MatrixXd::Zero(l->outputs(), l->inputs()), Eigen::VectorXd::Zero(l->outputs())};
    m_.push_back(z);
    v_.push_back(std::move(z));
  }
}

void AdamState::update(const std::vector<DenseLayer*>& layers, const std::vector<const LayerGradient*>& grads) {
  if (layers.size() != m_.size() || grads.size() != m_.size())
    throw DomainError(kModule, "Adam state does not match the parameter set");
  ++step_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  const double lr = config_.learning_rate, eps = config_.epsilon;

  auto apply = [&](auto& param, auto& m, auto& v, const auto& g) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  };
  for (std::size_t k = 0; k < layers.size(); ++k) {
    apply(layers[k]->weights, m_[k].weights, v_[k].weights, grads[k]->weights);
    apply(layers[k]->bias, m_[k].bias, v_[k].bias, grads[k]->bias);
  }
}

void save_network(const std::filesystem::path& stem, const LayerGroups& groups, const nlohmann::json& extra) {
  auto json_path = stem, bin_path = stem;
  json_path += ".json";
  bin_path += ".bin";
  std::ofstream bin(bin_path, std::ios::binary);
  if (!bin) throw FormatError(kModule, "cannot write " + bin_path.string());

  nlohmann::json manifest = {{"format", kFormat}, {"version", kVersion}, {"payload", bin_path.filename().string()}};
  nlohmann::json jgroups = nlohmann::json::array();
  long offset = 0;
  for (const auto& [name, layers] : groups) {
    nlohmann::json jl = nlohmann::json::array();
    for (const auto& l : layers) {
      jl.push_back({{"inputs", l.inputs()}, {"outputs", l.outputs()}, {"activation", to_string(l.activation)},
                    {"offset", offset}});
      bin.write(reinterpret_cast<const char*>(l.weights.data()), l.weights.size() * sizeof(double));
      bin.write(reinterpret_cast<const char*>(l.bias.data()), l.bias.size() * sizeof(double));
      offset += l.parameter_count();
    }
    jgroups.push_back({{"name", name}, {"layers", jl}});
  }
  if (!bin) throw FormatError(kModule, "write failed for " + bin_path.string());
  manifest["groups"] = jgroups;
  manifest["parameter_count"] = offset;
  manifest["extra"] = extra;
  std::ofstream js(json_path);
  if (!js) throw FormatError(kModule, "cannot write " + json_path.string());
  js << manifest.dump(1) << '\n';
}

LayerGroups load_network(const std::filesystem::path& stem, nlohmann::json* extra) {
  auto json_path = stem;
  json_path += ".json";
  std::ifstream js(json_path);
  if (!js) throw FormatError(kModule, "cannot open " + json_path.string());
  LayerGroups groups;
  try {
    const auto manifest = nlohmann::json::parse(js);
    if (manifest.at("format") != kFormat || manifest.at("version") != kVersion)
      throw FormatError(kModule, json_path.string() + ": not a version " + std::to_string(kVersion) + " network");
    const auto bin_path = json_path.parent_path() / manifest.at("payload").get<std::string>();
    std::ifstream bin(bin_path, std::ios::binary);
    if (!bin) throw FormatError(kModule, "cannot open " + bin_path.string());
    long offset = 0;
    for (const auto& jg : manifest.at("groups")) {
      std::vector<DenseLayer> layers;
      for (const auto& jl : jg.at("layers")) {
        DenseLayer l;
        l.activation = activation_from_string(jl.at("activation").get<std::string>());
        const int in = jl.at("inputs").get<int>(), out = jl.at("outputs").get<int>();
        if (in < 1 || out < 1 || jl.at("offset").get<long>() != offset)
          throw FormatError(kModule, json_path.string() + ": inconsistent layer table");
        l.weights.resize(out, in);
        l.bias.resize(out);
        bin.read(reinterpret_cast<char*>(l.weights.data()), l.weights.size() * sizeof(double));
        bin.read(reinterpret_cast<char*>(l.bias.data()), l.bias.size() * sizeof(double));
        if (!bin) throw FormatError(kModule, bin_path.string() + ": payload shorter than the manifest");
        offset += l.parameter_count();
        layers.push_back(std::move(l));
      }
      groups.emplace_back(jg.at("name").get<std::string>(), std::move(layers));
    }
    if (bin.peek() != std::char_traits<char>::eof())
      throw FormatError(kModule, bin_path.string() + ": payload longer than the manifest");
    if (extra) *extra = manifest.value("extra", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(kModule, json_path.string() + ": " + e.what());
  }
  return groups;
}

}  // namespace vibefuse::nn
