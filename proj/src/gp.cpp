#include "vibefuse/gp.hpp"

#include "vibefuse/errors.hpp"
#include "vibefuse/parallel.hpp"
#include "vibefuse/random.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>

namespace vibefuse::gp {

namespace {
constexpr const char* kModule = "mlmrgp";
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_det_floored(const Eigen::MatrixXd& q) {
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(q, Eigen::EigenvaluesOnly);
  const double floor = std::max(1e-14 * std::max(q.diagonal().mean(), 0.0), 1e-300);
  double acc = 0.0;
  for (double ev : eig.eigenvalues()) acc += std::log(std::max(ev, floor));
  return acc;
}

nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < m.rows(); ++i) {
    std::vector<double> r(m.cols());
    for (int j = 0; j < m.cols(); ++j) r[j] = m(i, j);
    rows.push_back(r);
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  Eigen::MatrixXd m(rows.size(), rows.empty() ? 0 : rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (static_cast<Eigen::Index>(rows[i].size()) != m.cols()) throw FormatError(kModule, "ragged matrix in model file");
    for (std::size_t k = 0; k < rows[i].size(); ++k) m(i, k) = rows[i][k];
  }
  return m;
}

nlohmann::json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Eigen::VectorXd pow10(const Eigen::VectorXd& v) { return v.unaryExpr([](double t) { return std::pow(10.0, t); }); }

nlohmann::json level_json(const MrgpLevel& level) {
  return {{"roughness", vector_json(level.roughness())},
          {"jitter", level.jitter()},
          {"inputs", matrix_json(level.inputs())},
          {"outputs", matrix_json(level.outputs())},
          {"beta", matrix_json(level.beta())},
          {"q", matrix_json(level.response_covariance())},
          {"log_likelihood", level.log_likelihood()}};
}

MrgpLevel level_from_json(const nlohmann::json& j) {
  return MrgpLevel(matrix_from_json(j.at("inputs")), matrix_from_json(j.at("outputs")),
                   vector_from_json(j.at("roughness")), j.at("jitter").get<double>());
}
}  // namespace

double squared_exp_kernel(const Eigen::VectorXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& roughness) {
  if (x.size() != y.size() || x.size() != roughness.size()) throw DomainError(kModule, "kernel dimension mismatch");
  return std::exp(-(roughness.array() * (x - y).array().square()).sum());
}

Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const Eigen::VectorXd& roughness) {
  if (a.cols() != roughness.size() || b.cols() != roughness.size())
    throw DomainError(kModule, "kernel dimension mismatch");
  Eigen::MatrixXd k(a.rows(), b.rows());
  for (int j = 0; j < b.rows(); ++j)
    for (int i = 0; i < a.rows(); ++i)
      k(i, j) = std::exp(-(roughness.transpose().array() * (a.row(i) - b.row(j)).array().square()).sum());
  return k;
}

Eigen::MatrixXd linear_basis(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd h(x.rows(), x.cols() + 1);
  h.col(0).setOnes();
  h.rightCols(x.cols()) = x;
  return h;
}

void PsoConfig::validate() const {
  if (particles < 1 || iterations < 0) throw DomainError(kModule, "PSO needs at least one particle");
  if (!std::isfinite(inertia) || !std::isfinite(cognitive) || !std::isfinite(social))
    throw DomainError(kModule, "PSO coefficients must be finite");
}

PsoResult pso_optimize(const std::function<double(const Eigen::VectorXd&)>& objective,
                       const Eigen::VectorXd& lower, const Eigen::VectorXd& upper, const PsoConfig& config,
                       unsigned jobs) {
  config.validate();
  const int dims = static_cast<int>(lower.size());
  if (upper.size() != dims || dims == 0) throw DomainError(kModule, "PSO bounds must be nonempty and aligned");
  if (!lower.allFinite() || !upper.allFinite() || !(upper.array() >= lower.array()).all())
    throw DomainError(kModule, "PSO bounds must be finite with lower <= upper");

  const int np = config.particles;
  const Eigen::VectorXd span = upper - lower;
  Rng rng(config.seed);
  Eigen::MatrixXd pos(np, dims), vel = Eigen::MatrixXd::Zero(np, dims);
  for (int i = 0; i < np; ++i)
    for (int k = 0; k < dims; ++k) pos(i, k) = lower[k] + uniform01(rng) * span[k];

  Eigen::VectorXd values(np);
  auto evaluate = [&] {
    parallel_for(np, jobs, [&](std::size_t i) {
      const double v = objective(pos.row(i).transpose());
      values[i] = std::isnan(v) ? kNegInf : v;
    });
  };
  evaluate();

  PsoResult result;
  result.initial_positions = pos;
  result.initial_values = values;
  Eigen::MatrixXd pbest = pos;
  Eigen::VectorXd pbest_value = values;
  int g = 0;
  for (int i = 1; i < np; ++i)
    if (values[i] > values[g]) g = i;
  Eigen::VectorXd gbest = pos.row(g).transpose();
  double gbest_value = values[g];

  for (int it = 0; it < config.iterations; ++it) {
    for (int i = 0; i < np; ++i)
      for (int k = 0; k < dims; ++k) {
        const double r1 = uniform01(rng), r2 = uniform01(rng);
        double v = config.inertia * vel(i, k) + config.cognitive * r1 * (pbest(i, k) - pos(i, k)) +
                   config.social * r2 * (gbest[k] - pos(i, k));
        v = std::clamp(v, -span[k], span[k]);
        double x = pos(i, k) + v;
        if (x < lower[k] || x > upper[k]) {
          x = std::clamp(x, lower[k], upper[k]);
          v = 0.0;
        }
        pos(i, k) = x;
        vel(i, k) = v;
      }
    evaluate();
    for (int i = 0; i < np; ++i) {
      if (values[i] > pbest_value[i]) {
        pbest_value[i] = values[i];
        pbest.row(i) = pos.row(i);
      }
      if (values[i] > gbest_value) {
        gbest_value = values[i];
        gbest = pos.row(i).transpose();
      }
    }
  }
  result.best = gbest;
  result.best_value = gbest_value;
  return result;
}

LengthscaleGroups LengthscaleGroups::per_dimension(int dims) {
  LengthscaleGroups g;
  g.group_count = dims;
  for (int k = 0; k < dims; ++k) g.group_of_dim.push_back(k);
  return g;
}

LengthscaleGroups LengthscaleGroups::paired(int dims) {
  if (dims % 2 != 0) throw DomainError(kModule, "paired lengthscales need an even input dimension");
  LengthscaleGroups g;
  g.group_count = dims / 2;
  for (int k = 0; k < dims; ++k) g.group_of_dim.push_back(k / 2);
  return g;
}

Eigen::VectorXd LengthscaleGroups::expand(const Eigen::VectorXd& grouped) const {
  if (grouped.size() != group_count) throw DomainError(kModule, "wrong number of grouped roughness values");
  Eigen::VectorXd out(group_of_dim.size());
  for (std::size_t k = 0; k < group_of_dim.size(); ++k) out[k] = grouped[group_of_dim[k]];
  return out;
}

MrgpLevel::MrgpLevel(Eigen::MatrixXd x, Eigen::MatrixXd y, Eigen::VectorXd roughness, double jitter)
    : x_(std::move(x)), y_(std::move(y)), roughness_(std::move(roughness)), jitter_(jitter) {
  const Eigen::Index n = x_.rows(), d = y_.cols(), q = x_.cols() + 1;
  if (y_.rows() != n) throw DomainError(kModule, "input and output row counts differ");
  if (n < q + 1) throw DomainError(kModule, "a level needs at least " + std::to_string(q + 1) + " rows");
  if (!(jitter_ > 0.0)) throw DomainError(kModule, "jitter must be positive");
  if (!(roughness_.array() >= 0.0).all()) throw DomainError(kModule, "roughness must be non-negative");

  Eigen::MatrixXd sigma = kernel_matrix(x_, x_, roughness_);
  sigma.diagonal().array() += jitter_;
  sigma_.compute(sigma);
  if (sigma_.info() != Eigen::Success) throw SolverError(kModule, "kernel matrix is not positive definite");

  h_ = linear_basis(x_);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(h_);
  if (qr.rank() < q) throw DomainError(kModule, "mean basis is rank-deficient");
  sigma_inv_h_ = sigma_.solve(h_);
  gls_.compute(h_.transpose() * sigma_inv_h_);
  if (gls_.info() != Eigen::Success) throw DomainError(kModule, "mean basis is rank-deficient");

  beta_ = gls_.solve(sigma_inv_h_.transpose() * y_);
  const Eigen::MatrixXd resid = y_ - h_ * beta_;
  weights_ = sigma_.solve(resid);
  q_ = resid.transpose() * weights_ / static_cast<double>(n);
  q_ = 0.5 * (q_ + q_.transpose()).eval();

  const double log_det_sigma = 2.0 * Eigen::MatrixXd(sigma_.matrixL()).diagonal().array().log().sum();
  log_likelihood_ = -0.5 * d * log_det_sigma - 0.5 * n * log_det_floored(q_);
}

Eigen::MatrixXd MrgpLevel::mean(const Eigen::MatrixXd& x) const {
  return linear_basis(x) * beta_ + kernel_matrix(x, x_, roughness_) * weights_;
}

Eigen::VectorXd MrgpLevel::spatial_factor(const Eigen::MatrixXd& x) const {
  const Eigen::MatrixXd k = kernel_matrix(x_, x, roughness_);  // n x m
  const Eigen::MatrixXd v = sigma_.matrixL().solve(k);
  const Eigen::MatrixXd u = linear_basis(x).transpose() - sigma_inv_h_.transpose() * k;  // q x m
  const Eigen::MatrixXd a_inv_u = gls_.solve(u);
  Eigen::VectorXd c(x.rows());
  for (int i = 0; i < x.rows(); ++i)
    c[i] = std::max(0.0, 1.0 - v.col(i).squaredNorm() + u.col(i).dot(a_inv_u.col(i)));
  return c;
}

Eigen::MatrixXd MrgpLevel::variance(const Eigen::MatrixXd& x) const {
  return spatial_factor(x) * q_.diagonal().transpose();
}

double profile_log_likelihood(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const Eigen::VectorXd& roughness,
                              double jitter) {
  try {
    const double l = MrgpLevel(x, y, roughness, jitter).log_likelihood();
    return std::isfinite(l) ? l : kNegInf;
  } catch (const SolverError&) {
    return kNegInf;
  }
}

MrgpLevel fit_level(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const LengthscaleGroups& groups,
                    const LevelBounds& bounds, const PsoConfig& pso, double jitter, unsigned jobs,
                    PsoResult* trace) {
  if (static_cast<Eigen::Index>(groups.group_of_dim.size()) != x.cols())
    throw DomainError(kModule, "lengthscale grouping does not match the input dimension");
  // Surface structural problems (too few rows, rank) before the search.
  MrgpLevel probe(x, y, Eigen::VectorXd::Ones(x.cols()), jitter);
  (void)probe;
  const Eigen::VectorXd lo = Eigen::VectorXd::Constant(groups.group_count, bounds.log10_lower);
  const Eigen::VectorXd hi = Eigen::VectorXd::Constant(groups.group_count, bounds.log10_upper);
  auto objective = [&](const Eigen::VectorXd& t) { return profile_log_likelihood(x, y, groups.expand(pow10(t)), jitter); };
  const auto res = pso_optimize(objective, lo, hi, pso, jobs);
  if (!std::isfinite(res.best_value)) throw SolverError(kModule, "no admissible roughness found for a level");
  if (trace) *trace = res;
  return MrgpLevel(x, y, groups.expand(pow10(res.best)), jitter);
}

void MlmrgpConfig::validate() const {
  pso.validate();
  if (!(jitter > 0.0)) throw DomainError(kModule, "jitter must be positive");
  if (!(roughness_bounds.log10_lower <= roughness_bounds.log10_upper) || !(rho_lower <= rho_upper))
    throw DomainError(kModule, "hyperparameter bounds are inverted");
}

Eigen::MatrixXd DataScaling::inputs(const Eigen::MatrixXd& rows) const {
  return (rows.rowwise() - x_min.transpose()).array().rowwise() / x_range.transpose().array();
}

Eigen::MatrixXd DataScaling::outputs(const Eigen::MatrixXd& rows) const {
  return (rows.rowwise() - y_mean.transpose()).array().rowwise() / y_scale.transpose().array();
}

Eigen::MatrixXd DataScaling::restore(const Eigen::MatrixXd& rows) const {
  return (rows.array().rowwise() * y_scale.transpose().array()).matrix().rowwise() + y_mean.transpose();
}

MlmrgpModel fit_two_level(const Eigen::MatrixXd& lf_x, const Eigen::MatrixXd& lf_y, const Eigen::MatrixXd& hf_x,
                          const Eigen::MatrixXd& hf_y, const MlmrgpConfig& config, unsigned jobs) {
  config.validate();
  if (lf_x.rows() != lf_y.rows() || hf_x.rows() != hf_y.rows() || lf_x.cols() != hf_x.cols() ||
      lf_y.cols() != hf_y.cols())
    throw DomainError(kModule, "training matrices are not aligned");

  std::vector<int> partner(hf_x.rows(), -1);
  for (int i = 0; i < hf_x.rows(); ++i) {
    for (int j = 0; j < lf_x.rows() && partner[i] < 0; ++j)
      if (lf_x.row(j) == hf_x.row(i)) partner[i] = j;
    if (partner[i] < 0)
      throw ContractError(kModule, "HF training row " + std::to_string(i) + " is not among the LF inputs");
  }

  MlmrgpModel model;
  const int m = static_cast<int>(lf_x.cols()), d = static_cast<int>(lf_y.cols());
  auto& s = model.scaling;
  if (config.scale_data) {
    s.x_min = lf_x.colwise().minCoeff().transpose();
    s.x_range = (lf_x.colwise().maxCoeff().transpose() - s.x_min).unaryExpr([](double r) { return r > 0 ? r : 1.0; });
    s.y_mean = lf_y.colwise().mean().transpose();
    s.y_scale.resize(d);
    for (int k = 0; k < d; ++k) {
      const double sd = std::sqrt((lf_y.col(k).array() - s.y_mean[k]).square().mean());
      s.y_scale[k] = sd > 0.0 ? sd : 1.0;
    }
  } else {
    s.x_min = Eigen::VectorXd::Zero(m);
    s.x_range = Eigen::VectorXd::Ones(m);
    s.y_mean = Eigen::VectorXd::Zero(d);
    s.y_scale = Eigen::VectorXd::Ones(d);
  }

  const auto groups = config.grouping == Grouping::PerDimension ? LengthscaleGroups::per_dimension(m)
                                                                 : LengthscaleGroups::paired(m);
  const Eigen::MatrixXd x1 = s.inputs(lf_x), y1 = s.outputs(lf_y);
  PsoConfig pso1 = config.pso;
  pso1.seed = mix_seed(config.pso.seed, 1);
  model.low = fit_level(x1, y1, groups, config.roughness_bounds, pso1, config.jitter, jobs);

  const Eigen::MatrixXd x2 = s.inputs(hf_x), y2 = s.outputs(hf_y);
  Eigen::MatrixXd y1_at_2(hf_x.rows(), d);
  for (int i = 0; i < hf_x.rows(); ++i) y1_at_2.row(i) = y1.row(partner[i]);

  const int g = groups.group_count;
  const bool free_rho = !config.fixed_rho.has_value();
  const int dims = g + (free_rho ? 1 : 0);
  Eigen::VectorXd lo(dims), hi(dims);
  lo.head(g).setConstant(config.roughness_bounds.log10_lower);
  hi.head(g).setConstant(config.roughness_bounds.log10_upper);
  if (free_rho) {
    lo[g] = config.rho_lower;
    hi[g] = config.rho_upper;
  }
  auto rho_of = [&](const Eigen::VectorXd& t) { return free_rho ? t[g] : *config.fixed_rho; };
  auto objective = [&](const Eigen::VectorXd& t) {
    return profile_log_likelihood(x2, y2 - rho_of(t) * y1_at_2, groups.expand(pow10(t.head(g))), config.jitter);
  };
  PsoConfig pso2 = config.pso;
  pso2.seed = mix_seed(config.pso.seed, 2);
  const auto res = pso_optimize(objective, lo, hi, pso2, jobs);
  if (!std::isfinite(res.best_value)) throw SolverError(kModule, "no admissible discrepancy hyperparameters found");
  model.rho = rho_of(res.best);
  model.discrepancy =
      MrgpLevel(x2, y2 - model.rho * y1_at_2, groups.expand(pow10(res.best.head(g))), config.jitter);
  model.hyperparameter_count = 2 * g + (free_rho ? 1 : 0);
  return model;
}

TwoLevelPrediction predict_two_level(const MlmrgpModel& model, const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd xs = model.scaling.inputs(x);
  const double rho = model.rho;
  TwoLevelPrediction p;
  p.mean = model.scaling.restore(rho * model.low.mean(xs) + model.discrepancy.mean(xs));
  const Eigen::MatrixXd var = rho * rho * model.low.variance(xs) + model.discrepancy.variance(xs);
  p.variance = var.array().rowwise() * model.scaling.y_scale.transpose().array().square();
  return p;
}

Eigen::MatrixXd discrepancy_mean(const MlmrgpModel& model, const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd d = model.discrepancy.mean(model.scaling.inputs(x));
  return (d.array().rowwise() * model.scaling.y_scale.transpose().array()).matrix().rowwise() +
         ((1.0 - model.rho) * model.scaling.y_mean).transpose();
}

nlohmann::json to_json(const MlmrgpModel& model) {
  return {{"kind", "mlmrgp"},
          {"version", 1},
          {"rho", model.rho},
          {"hyperparameter_count", model.hyperparameter_count},
          {"scaling",
           {{"x_min", vector_json(model.scaling.x_min)},
            {"x_range", vector_json(model.scaling.x_range)},
            {"y_mean", vector_json(model.scaling.y_mean)},
            {"y_scale", vector_json(model.scaling.y_scale)}}},
          {"low", level_json(model.low)},
          {"discrepancy", level_json(model.discrepancy)}};
}

MlmrgpModel mlmrgp_from_json(const nlohmann::json& j) {
  try {
    if (j.at("kind") != "mlmrgp" || j.at("version") != 1) throw FormatError(kModule, "not a version 1 MLMRGP model");
    MlmrgpModel m;
    m.rho = j.at("rho").get<double>();
    m.hyperparameter_count = j.at("hyperparameter_count").get<int>();
    const auto& s = j.at("scaling");
    m.scaling.x_min = vector_from_json(s.at("x_min"));
    m.scaling.x_range = vector_from_json(s.at("x_range"));
    m.scaling.y_mean = vector_from_json(s.at("y_mean"));
    m.scaling.y_scale = vector_from_json(s.at("y_scale"));
    m.low = level_from_json(j.at("low"));
    m.discrepancy = level_from_json(j.at("discrepancy"));
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(kModule, e.what());
  }
}

}  // namespace vibefuse::gp
