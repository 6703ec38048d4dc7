#include "vibefuse/mfdf.hpp"

#include "vibefuse/errors.hpp"
#include "vibefuse/random.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace vibefuse::mfdf {

namespace {
constexpr const char* kModule = "mfdf-cnn";

std::vector<nn::Activation> tags(std::size_t hidden, nn::Activation hidden_tag) {
  std::vector<nn::Activation> t(hidden, hidden_tag);
  t.push_back(nn::Activation::Linear);
  return t;
}

std::vector<int> with_output(std::vector<int> widths, int out) {
  widths.push_back(out);
  return widths;
}

Eigen::MatrixXd gather_columns(const Eigen::MatrixXd& rows, const std::vector<int>& ids) {
  Eigen::MatrixXd out(rows.cols(), static_cast<Eigen::Index>(ids.size()));
  for (std::size_t k = 0; k < ids.size(); ++k) out.col(k) = rows.row(ids[k]).transpose();
  return out;
}

Eigen::VectorXd gather(const Eigen::VectorXd& v, const std::vector<int>& ids) {
  Eigen::VectorXd out(ids.size());
  for (std::size_t k = 0; k < ids.size(); ++k) out[k] = v[ids[k]];
  return out;
}

void column_stats(const Eigen::MatrixXd& rows, Eigen::VectorXd& mean, Eigen::VectorXd& scale) {
  mean = rows.colwise().mean().transpose();
  scale.resize(rows.cols());
  for (int j = 0; j < rows.cols(); ++j) {
    const double sd = std::sqrt((rows.col(j).array() - mean[j]).square().mean());
    scale[j] = sd > 0.0 ? sd : 1.0;
  }
}

nlohmann::json to_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

FusedTrainingSet standardized(const FusedTrainingSet& fused, const Standardizer& s) {
  FusedTrainingSet out = fused;
  out.x = s.inputs(fused.x);
  out.y1 = s.outputs(fused.y1);
  out.y2 = s.outputs(fused.y2);
  return out;
}
}  // namespace

void CompositeNetConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw DomainError(kModule, "alpha must lie in [0, 1]");
  auto positive = [](const std::vector<int>& w) { return std::all_of(w.begin(), w.end(), [](int x) { return x > 0; }); };
  if (input_dim < 1 || lf_output_dim < 1 || hf_output_dim < 1 || !positive(stage1_widths) ||
      !positive(linear_widths) || !positive(nonlinear_widths))
    throw DomainError(kModule, "layer widths must be positive");
}

Eigen::MatrixXd Standardizer::inputs(const Eigen::MatrixXd& rows) const {
  if (!enabled) return rows;
  return (rows.rowwise() - x_mean.transpose()).array().rowwise() / x_scale.transpose().array();
}

Eigen::MatrixXd Standardizer::outputs(const Eigen::MatrixXd& rows) const {
  if (!enabled) return rows;
  return (rows.rowwise() - y_mean.transpose()).array().rowwise() / y_scale.transpose().array();
}

Eigen::MatrixXd Standardizer::restore_outputs(const Eigen::MatrixXd& rows) const {
  if (!enabled) return rows;
  return (rows.array().rowwise() * y_scale.transpose().array()).matrix().rowwise() + y_mean.transpose();
}

long CompositeNet::parameter_count() const {
  return nn::parameter_count(stage1) + nn::parameter_count(linear) + nn::parameter_count(nonlinear);
}

std::vector<nn::DenseLayer*> CompositeNet::layers() {
  std::vector<nn::DenseLayer*> out;
  for (auto* group : {&stage1, &linear, &nonlinear})
    for (auto& l : *group) out.push_back(&l);
  return out;
}

std::vector<const nn::DenseLayer*> CompositeNet::layers() const {
  std::vector<const nn::DenseLayer*> out;
  for (const auto* group : {&stage1, &linear, &nonlinear})
    for (const auto& l : *group) out.push_back(&l);
  return out;
}

CompositeNet build_composite(const CompositeNetConfig& config, std::uint64_t seed) {
  config.validate();
  CompositeNet net;
  net.config = config;
  const int concat = config.input_dim + config.lf_output_dim;
  net.stage1 = nn::build_chain(config.input_dim, with_output(config.stage1_widths, config.lf_output_dim),
                               tags(config.stage1_widths.size(), nn::Activation::Relu), mix_seed(seed, 1));
  net.linear = nn::build_chain(concat, with_output(config.linear_widths, config.hf_output_dim),
                               tags(config.linear_widths.size(), nn::Activation::Linear), mix_seed(seed, 2));
  net.nonlinear = nn::build_chain(concat, with_output(config.nonlinear_widths, config.hf_output_dim),
                                  tags(config.nonlinear_widths.size(), nn::Activation::Relu), mix_seed(seed, 3));
  return net;
}

CompositeOutput composite_forward(const CompositeNet& net, const Eigen::MatrixXd& x, CompositeCache* cache) {
  if (x.rows() != net.config.input_dim)
    throw DomainError(kModule, "expected " + std::to_string(net.config.input_dim) + " input features, got " +
                                   std::to_string(x.rows()));
  CompositeOutput out;
  out.lf = nn::forward(net.stage1, x, cache ? &cache->stage1 : nullptr);
  Eigen::MatrixXd concat(x.rows() + out.lf.rows(), x.cols());
  concat << x, out.lf;
  out.linear = nn::forward(net.linear, concat, cache ? &cache->linear : nullptr);
  out.nonlinear = nn::forward(net.nonlinear, concat, cache ? &cache->nonlinear : nullptr);
  const double a = net.alpha();
  out.hf = a * out.linear + (1.0 - a) * out.nonlinear;
  return out;
}

int FusedTrainingSet::pseudo_count() const {
  return static_cast<int>(std::count(is_pseudo.begin(), is_pseudo.end(), true));
}

FusedTrainingSet fill_pseudo_high_fidelity(const data::NestedSplit& split, const data::FidelityDataset& lf,
                                           const data::FidelityDataset& hf, const SampleWeights& weights) {
  if (lf.rows() != hf.rows()) throw ContractError(kModule, "LOW and HIGH datasets have different row counts");
  if (lf.responses.cols() != hf.responses.cols())
    throw ContractError(kModule, "LOW and HIGH responses have different widths");
  for (int id : split.hf_train)
    if (!std::binary_search(split.lf_train.begin(), split.lf_train.end(), id))
      throw ContractError(kModule, "HF-train row " + std::to_string(id) + " has no LF-train partner");
  split.validate(lf.rows());

  const int n = static_cast<int>(split.lf_train.size());
  FusedTrainingSet f;
  f.row_ids = split.lf_train;
  f.x.resize(n, lf.inputs.cols());
  f.y1.resize(n, lf.responses.cols());
  f.y2.resize(n, lf.responses.cols());
  f.is_pseudo.resize(n);
  f.beta1.resize(n);
  f.beta2.resize(n);
  for (int k = 0; k < n; ++k) {
    const int id = split.lf_train[k];
    f.x.row(k) = lf.inputs.row(id);
    f.y1.row(k) = lf.responses.row(id);
    const bool real = std::binary_search(split.hf_train.begin(), split.hf_train.end(), id);
    if (real && hf.inputs.row(id) != lf.inputs.row(id))
      throw ContractError(kModule, "row " + std::to_string(id) + " is not paired between fidelities");
    f.y2.row(k) = real ? hf.responses.row(id) : lf.responses.row(id);
    f.is_pseudo[k] = !real;
    f.beta1[k] = real ? weights.real_lf : weights.pseudo_lf;
    f.beta2[k] = real ? weights.real_hf : weights.pseudo_hf;
  }
  return f;
}

void TrainingPlan::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw DomainError(kModule, "gamma must lie in [0, 1]");
  if (epochs < 0) throw DomainError(kModule, "epoch count must be non-negative");
  if (batch_size < 1) throw DomainError(kModule, "batch size must be positive");
}

LossValue weighted_loss(const Eigen::MatrixXd& y1, const Eigen::MatrixXd& y2, const Eigen::MatrixXd& y1_hat,
                        const Eigen::MatrixXd& y2_hat, const Eigen::VectorXd& beta1, const Eigen::VectorXd& beta2,
                        double gamma, LossForm form, bool with_gradient) {
  const Eigen::Index b = y1.cols();
  if (b == 0) throw DomainError(kModule, "loss needs a nonempty batch");
  const Eigen::MatrixXd e1 = y1 - y1_hat;
  const Eigen::MatrixXd e2 = y2 - y2_hat;
  LossValue out;
  if (with_gradient) {
    out.grad_lf.resize(e1.rows(), b);
    out.grad_hf.resize(e2.rows(), b);
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    const double w1 = gamma * beta1[i], w2 = (1.0 - gamma) * beta2[i];
    if (form == LossForm::Separable) {
      total += w1 * e1.col(i).squaredNorm() + w2 * e2.col(i).squaredNorm();
      if (with_gradient) {
        out.grad_lf.col(i) = (-2.0 * w1 / b) * e1.col(i);
        out.grad_hf.col(i) = (-2.0 * w2 / b) * e2.col(i);
      }
    } else {
      const double n1 = e1.col(i).norm(), n2 = e2.col(i).norm();
      const double eta = w1 * n1 + w2 * n2;
      total += eta * eta;
      if (with_gradient) {
        out.grad_lf.col(i) = n1 > 0.0 ? Eigen::VectorXd((-2.0 * eta * w1 / (b * n1)) * e1.col(i))
                                      : Eigen::VectorXd::Zero(e1.rows());
        out.grad_hf.col(i) = n2 > 0.0 ? Eigen::VectorXd((-2.0 * eta * w2 / (b * n2)) * e2.col(i))
                                      : Eigen::VectorXd::Zero(e2.rows());
      }
    }
  }
  out.value = total / b;
  return out;
}

double training_loss(const FusedTrainingSet& fused, const std::vector<int>& ids, const CompositeNet& net,
                     const TrainingPlan& plan) {
  const auto out = composite_forward(net, gather_columns(fused.x, ids));
  return weighted_loss(gather_columns(fused.y1, ids), gather_columns(fused.y2, ids), out.lf, out.hf,
                       gather(fused.beta1, ids), gather(fused.beta2, ids), plan.gamma, plan.loss_form, false)
      .value;
}

std::vector<const nn::LayerGradient*> CompositeGradient::flat() const {
  std::vector<const nn::LayerGradient*> out;
  for (const auto* group : {&stage1, &linear, &nonlinear})
    for (const auto& g : *group) out.push_back(&g);
  return out;
}

CompositeGradient composite_gradient(const CompositeNet& net, const FusedTrainingSet& fused,
                                     const std::vector<int>& ids, const TrainingPlan& plan) {
  CompositeCache cache;
  const auto out = composite_forward(net, gather_columns(fused.x, ids), &cache);
  const auto loss = weighted_loss(gather_columns(fused.y1, ids), gather_columns(fused.y2, ids), out.lf, out.hf,
                                  gather(fused.beta1, ids), gather(fused.beta2, ids), plan.gamma, plan.loss_form,
                                  true);
  CompositeGradient g;
  g.loss = loss.value;
  g.stage1 = nn::zero_gradients(net.stage1);
  g.linear = nn::zero_gradients(net.linear);
  g.nonlinear = nn::zero_gradients(net.nonlinear);

  const double a = net.alpha();
  Eigen::MatrixXd d_concat = nn::backprop(net.linear, cache.linear, a * loss.grad_hf, g.linear);
  d_concat += nn::backprop(net.nonlinear, cache.nonlinear, (1.0 - a) * loss.grad_hf, g.nonlinear);
  const Eigen::MatrixXd d_lf = loss.grad_lf + d_concat.bottomRows(net.config.lf_output_dim);
  nn::backprop(net.stage1, cache.stage1, d_lf, g.stage1);
  return g;
}

TrainingResult train_composite(const FusedTrainingSet& raw, const CompositeNetConfig& config,
                               const TrainingPlan& plan) {
  plan.validate();
  if (raw.rows() == 0) throw DomainError(kModule, "fused training set is empty");
  if (raw.x.cols() != config.input_dim || raw.y1.cols() != config.lf_output_dim ||
      raw.y2.cols() != config.hf_output_dim)
    throw DomainError(kModule, "training data does not match the network dimensions");

  TrainingResult result;
  result.net = build_composite(config, plan.seed);
  auto& net = result.net;
  if (plan.standardize) {
    net.scaling.enabled = true;
    column_stats(raw.x, net.scaling.x_mean, net.scaling.x_scale);
    column_stats(raw.y1, net.scaling.y_mean, net.scaling.y_scale);
  }
  const FusedTrainingSet fused = standardized(raw, net.scaling);

  std::vector<int> all(fused.rows());
  for (int i = 0; i < fused.rows(); ++i) all[i] = i;
  result.initial_loss = training_loss(fused, all, net, plan);

  nn::AdamState adam(std::as_const(net).layers(), plan.adam);
  Rng rng(mix_seed(plan.seed, 0xba7c4));
  for (int epoch = 0; epoch < plan.epochs; ++epoch) {
    std::vector<int> order = all;
    shuffle(order, rng);
    double epoch_total = 0.0;
    int batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += plan.batch_size, ++batch_index) {
      const std::vector<int> ids(order.begin() + start,
                                 order.begin() + std::min(order.size(), start + plan.batch_size));
      const auto grad = composite_gradient(net, fused, ids, plan);
      if (!std::isfinite(grad.loss))
        throw SolverError(kModule, "non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                       std::to_string(batch_index));
      epoch_total += grad.loss * static_cast<double>(ids.size());
      adam.update(net.layers(), grad.flat());
    }
    result.epoch_loss.push_back(epoch_total / fused.rows());
  }
  return result;
}

Eigen::MatrixXd predict_high_fidelity(const CompositeNet& net, const Eigen::MatrixXd& theta_rows,
                                      Eigen::MatrixXd* lf_rows) {
  if (theta_rows.cols() != net.config.input_dim)
    throw DomainError(kModule, "theta rows must have " + std::to_string(net.config.input_dim) + " columns");
  const Eigen::MatrixXd x = net.scaling.inputs(theta_rows).transpose();
  const auto out = composite_forward(net, x);
  if (lf_rows) *lf_rows = net.scaling.restore_outputs(out.lf.transpose());
  return net.scaling.restore_outputs(out.hf.transpose());
}

void save_composite(const CompositeNet& net, const std::filesystem::path& stem, const nlohmann::json& extra) {
  const auto& c = net.config;
  nlohmann::json meta = {{"kind", "mfdf-cnn"},
                         {"alpha", c.alpha},
                         {"config",
                          {{"input_dim", c.input_dim},
                           {"stage1_widths", c.stage1_widths},
                           {"lf_output_dim", c.lf_output_dim},
                           {"linear_widths", c.linear_widths},
                           {"nonlinear_widths", c.nonlinear_widths},
                           {"hf_output_dim", c.hf_output_dim}}},
                         {"standardize", net.scaling.enabled},
                         {"extra", extra}};
  if (net.scaling.enabled) {
    meta["x_mean"] = to_json(net.scaling.x_mean);
    meta["x_scale"] = to_json(net.scaling.x_scale);
    meta["y_mean"] = to_json(net.scaling.y_mean);
    meta["y_scale"] = to_json(net.scaling.y_scale);
  }
  nn::save_network(stem, {{"stage1", net.stage1}, {"linear", net.linear}, {"nonlinear", net.nonlinear}}, meta);
}

CompositeNet load_composite(const std::filesystem::path& stem, nlohmann::json* extra) {
  nlohmann::json meta;
  auto groups = nn::load_network(stem, &meta);
  CompositeNet net;
  try {
    if (meta.at("kind") != "mfdf-cnn") throw FormatError(kModule, "network file is not a composite model");
    const auto& c = meta.at("config");
    net.config.input_dim = c.at("input_dim");
    net.config.stage1_widths = c.at("stage1_widths").get<std::vector<int>>();
    net.config.lf_output_dim = c.at("lf_output_dim");
    net.config.linear_widths = c.at("linear_widths").get<std::vector<int>>();
    net.config.nonlinear_widths = c.at("nonlinear_widths").get<std::vector<int>>();
    net.config.hf_output_dim = c.at("hf_output_dim");
    net.config.alpha = meta.at("alpha");
    net.config.validate();
    if (meta.at("standardize").get<bool>()) {
      net.scaling.enabled = true;
      net.scaling.x_mean = vector_from_json(meta.at("x_mean"));
      net.scaling.x_scale = vector_from_json(meta.at("x_scale"));
      net.scaling.y_mean = vector_from_json(meta.at("y_mean"));
      net.scaling.y_scale = vector_from_json(meta.at("y_scale"));
    }
    if (extra) *extra = meta.value("extra", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(kModule, stem.string() + ": " + e.what());
  }
  if (groups.size() != 3 || groups[0].first != "stage1" || groups[1].first != "linear" ||
      groups[2].first != "nonlinear")
    throw FormatError(kModule, stem.string() + ": unexpected layer groups");
  net.stage1 = std::move(groups[0].second);
  net.linear = std::move(groups[1].second);
  net.nonlinear = std::move(groups[2].second);
  const auto expect = build_composite(net.config, 0);
  auto same_shapes = [](const std::vector<nn::DenseLayer>& a, const std::vector<nn::DenseLayer>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t k = 0; k < a.size(); ++k)
      if (a[k].inputs() != b[k].inputs() || a[k].outputs() != b[k].outputs() || a[k].activation != b[k].activation)
        return false;
    return true;
  };
  if (!same_shapes(net.stage1, expect.stage1) || !same_shapes(net.linear, expect.linear) ||
      !same_shapes(net.nonlinear, expect.nonlinear))
    throw FormatError(kModule, stem.string() + ": layer shapes disagree with the stored configuration");
  return net;
}

}  // namespace vibefuse::mfdf
