#include "vibefuse/eval.hpp"

#include "vibefuse/errors.hpp"
#include "vibefuse/parallel.hpp"
#include "vibefuse/random.hpp"

#include <cmath>
#include <fstream>
#include <limits>

namespace vibefuse::eval {

namespace {
constexpr const char* kModule = "eval-harness";
using data::format_double;

std::ofstream open_csv(const std::filesystem::path& path, const char* header) {
  std::ofstream out(path);
  if (!out) throw FormatError(kModule, "cannot write " + path.string());
  out << header << '\n';
  return out;
}

double mean_row_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() == 0) return 0.0;
  return (a - b).rowwise().norm().mean();
}

std::string log_text(double v) { return std::isinf(v) ? "-inf" : format_double(v); }
}  // namespace

std::string tag(Emulator e) { return e == Emulator::MfdfCnn ? "mfdfcnn" : "mlmrgp"; }

Eigen::VectorXd per_frequency_mse(const Eigen::MatrixXd& predictions, const Eigen::MatrixXd& truth) {
  if (predictions.rows() != truth.rows() || predictions.cols() != truth.cols())
    throw DomainError(kModule, "predictions and test set do not share rows and grid");
  if (truth.rows() == 0) throw DomainError(kModule, "empty test set");
  Eigen::VectorXd mse(truth.cols());
  for (int r = 0; r < truth.cols(); ++r) {
    double acc = 0.0;
    for (int k = 0; k < truth.rows(); ++k) {
      const double e = truth(k, r) - predictions(k, r);
      acc += e * e;
    }
    mse[r] = acc / truth.rows();
  }
  return mse;
}

EvalReport make_report(Emulator emulator, const Eigen::MatrixXd& predictions, const Eigen::MatrixXd& truth,
                       std::uint64_t split_seed, int run) {
  EvalReport r;
  r.emulator = emulator;
  r.split_seed = split_seed;
  r.run = run;
  r.mse = per_frequency_mse(predictions, truth);
  r.log_mse.resize(r.mse.size());
  for (int i = 0; i < r.mse.size(); ++i) {
    if (r.mse[i] == 0.0) {
      r.log_mse[i] = -std::numeric_limits<double>::infinity();
      r.has_log_of_zero = true;
    } else {
      r.log_mse[i] = std::log(r.mse[i]);
    }
  }
  return r;
}

StudyReport log_mse_aggregate(const std::vector<EvalReport>& reports, StudyKind kind) {
  if (reports.empty()) throw DomainError(kModule, "nothing to aggregate");
  StudyReport s;
  s.kind = kind;
  s.emulator = reports.front().emulator;
  s.runs = reports;
  s.mean_log_mse = Eigen::VectorXd::Zero(reports.front().log_mse.size());
  for (const auto& r : reports) {
    if (r.emulator != s.emulator) throw DomainError(kModule, "reports mix emulators");
    if (r.log_mse.size() != s.mean_log_mse.size()) throw DomainError(kModule, "reports have different grids");
    s.mean_log_mse += r.log_mse;
    s.has_log_of_zero = s.has_log_of_zero || r.has_log_of_zero;
  }
  s.mean_log_mse /= static_cast<double>(reports.size());
  return s;
}

double mean_log(const EvalReport& r) { return r.log_mse.mean(); }

mfdf::TrainingResult train_cnn(const StudyInputs& in, const data::NestedSplit& split, int run_salt) {
  const auto fused = mfdf::fill_pseudo_high_fidelity(split, *in.low, *in.high, in.mfdf.weights);
  auto plan = in.mfdf.plan;
  plan.seed = mix_seed(plan.seed, static_cast<std::uint64_t>(run_salt));
  try {
    return mfdf::train_composite(fused, in.mfdf.net, plan);
  } catch (const Error& e) {
    throw Error(e.module(), std::string("[mfdfcnn] ") + e.what());
  }
}

gp::MlmrgpModel train_gp(const StudyInputs& in, const data::NestedSplit& split, unsigned jobs, int run_salt) {
  const auto lf = in.low->subset(split.lf_train);
  const auto hf = in.high->subset(split.hf_train);
  auto cfg = in.mlmrgp;
  cfg.pso.seed = mix_seed(cfg.pso.seed, static_cast<std::uint64_t>(run_salt));
  try {
    return gp::fit_two_level(lf.inputs, lf.responses, hf.inputs, hf.responses, cfg, jobs);
  } catch (const Error& e) {
    throw Error(e.module(), std::string("[mlmrgp] ") + e.what());
  }
}

ComparisonResult run_comparison(const StudyInputs& in, const data::NestedSplit& split, int run) {
  if (!in.high || !in.low) throw DomainError(kModule, "comparison needs both datasets");
  split.validate(in.high->rows());
  if (split.hf_test.empty()) throw DomainError(kModule, "split has no test rows");
  ComparisonResult res;
  res.split = split;
  const auto test_hi = in.high->subset(split.hf_test);
  const auto test_lo = in.low->subset(split.hf_test);
  res.truth = test_hi.responses;
  res.low = test_lo.responses;

  auto trained = train_cnn(in, split, run);
  res.cnn_epoch_loss = trained.epoch_loss;
  res.cnn_initial_loss = trained.initial_loss;
  res.net = std::move(trained.net);
  res.pred_cnn = mfdf::predict_high_fidelity(res.net, test_hi.inputs);

  res.gp_model = train_gp(in, split, in.jobs, run);
  res.pred_gp = gp::predict_two_level(res.gp_model, test_hi.inputs).mean;

  res.cnn = make_report(Emulator::MfdfCnn, res.pred_cnn, res.truth, split.seed, run);
  res.gp = make_report(Emulator::Mlmrgp, res.pred_gp, res.truth, split.seed, run);
  res.mean_error_cnn = mean_row_error(res.pred_cnn, res.truth);
  res.mean_error_gp = mean_row_error(res.pred_gp, res.truth);
  res.mean_error_low = mean_row_error(res.low, res.truth);
  return res;
}

RobustnessResult run_robustness(const StudyInputs& in, int runs, std::uint64_t base_seed, int lf_train,
                                int hf_train) {
  if (runs < 1) throw DomainError(kModule, "robustness study needs at least one run");
  RobustnessResult out;
  out.runs.resize(runs);
  StudyInputs inner = in;
  inner.jobs = 1;
  const auto& work = runs > 1 && in.jobs > 1 ? inner : in;
  parallel_for(static_cast<std::size_t>(runs), runs > 1 ? in.jobs : 1u, [&](std::size_t t) {
    const auto split = data::split_nested(*in.high, *in.low, lf_train, hf_train, base_seed + t);
    out.runs[t] = run_comparison(work, split, static_cast<int>(t));
  });
  std::vector<EvalReport> cnn, gp;
  for (const auto& r : out.runs) {
    cnn.push_back(r.cnn);
    gp.push_back(r.gp);
  }
  out.cnn = log_mse_aggregate(cnn, StudyKind::Robustness);
  out.gp = log_mse_aggregate(gp, StudyKind::Robustness);
  return out;
}

SweepResult run_hf_fraction_sweep(const StudyInputs& in, const data::NestedSplit& base,
                                  const std::vector<double>& fractions) {
  SweepResult out;
  out.kind = StudyKind::HfFraction;
  out.points.resize(fractions.size());
  const auto truth = in.high->subset(base.hf_test);
  StudyInputs inner = in;
  inner.jobs = 1;
  const bool outer = fractions.size() > 1 && in.jobs > 1;
  parallel_for(fractions.size(), outer ? in.jobs : 1u, [&](std::size_t i) {
    const auto& work = outer ? inner : in;
    const double f = fractions[i];
    const int lf = static_cast<int>(base.lf_train.size());
    const int hf = static_cast<int>(std::lround(f * lf));
    if (hf < 1 || hf > lf) throw DomainError(kModule, "HF fraction yields an empty or oversized HF-train set");
    const auto split = data::resplit_hf(base, hf, mix_seed(base.seed, i + 1));
    SweepPoint p;
    p.value = f;
    p.hf_train = hf;
    const auto net = train_cnn(work, split, static_cast<int>(i)).net;
    p.cnn = make_report(Emulator::MfdfCnn, mfdf::predict_high_fidelity(net, truth.inputs), truth.responses,
                        split.seed, static_cast<int>(i));
    const auto model = train_gp(work, split, work.jobs, static_cast<int>(i));
    p.gp = make_report(Emulator::Mlmrgp, gp::predict_two_level(model, truth.inputs).mean, truth.responses,
                       split.seed, static_cast<int>(i));
    out.points[i] = std::move(p);
  });
  return out;
}

SweepResult run_alpha_sweep(const StudyInputs& in, const data::NestedSplit& split, const std::vector<double>& alphas) {
  SweepResult out;
  out.kind = StudyKind::Alpha;
  out.points.resize(alphas.size());
  const auto truth = in.high->subset(split.hf_test);
  parallel_for(alphas.size(), alphas.size() > 1 ? in.jobs : 1u, [&](std::size_t i) {
    StudyInputs local = in;
    local.mfdf.net.alpha = alphas[i];
    SweepPoint p;
    p.value = alphas[i];
    p.hf_train = static_cast<int>(split.hf_train.size());
    // Same initialization and batch order for every alpha.
    const auto net = train_cnn(local, split, 0).net;
    p.cnn = make_report(Emulator::MfdfCnn, mfdf::predict_high_fidelity(net, truth.inputs), truth.responses,
                        split.seed, static_cast<int>(i));
    out.points[i] = std::move(p);
  });
  return out;
}

void write_comparison(const ComparisonResult& result, const std::vector<double>& freqs, int curve_samples,
                      std::uint64_t curve_seed, const std::filesystem::path& dir) {
  const int cols = static_cast<int>(result.truth.cols());
  const int n_out = cols / static_cast<int>(freqs.size());
  auto freq_of = [&](int c) { return freqs[c / n_out]; };
  {
    auto out = open_csv(dir / "comparison.csv", "freq_point,freq_hz,mse_mfdfcnn,mse_mlmrgp");
    for (int c = 0; c < cols; ++c)
      out << c + 1 << ',' << format_double(freq_of(c)) << ',' << format_double(result.cnn.mse[c]) << ','
          << format_double(result.gp.mse[c]) << '\n';
  }
  {
    auto out = open_csv(dir / "scatter.csv", "freq_point,freq_hz,sample,hf,pred_mfdfcnn,pred_mlmrgp");
    for (int c = 0; c < cols; ++c)
      for (int k = 0; k < result.truth.rows(); ++k)
        out << c + 1 << ',' << format_double(freq_of(c)) << ',' << result.split.hf_test[k] << ','
            << format_double(result.truth(k, c)) << ',' << format_double(result.pred_cnn(k, c)) << ','
            << format_double(result.pred_gp(k, c)) << '\n';
  }
  Rng rng(curve_seed);
  auto order = permutation(static_cast<int>(result.truth.rows()), rng);
  const int count = std::min<int>(curve_samples, static_cast<int>(order.size()));
  for (int s = 0; s < count; ++s) {
    const int k = order[s];
    auto out = open_csv(dir / ("curves_" + std::to_string(s + 1) + ".csv"), "freq_hz,lf,hf,pred_mfdfcnn,pred_mlmrgp");
    for (int c = 0; c < cols; ++c)
      out << format_double(freq_of(c)) << ',' << format_double(result.low(k, c)) << ','
          << format_double(result.truth(k, c)) << ',' << format_double(result.pred_cnn(k, c)) << ','
          << format_double(result.pred_gp(k, c)) << '\n';
  }
}

void write_robustness(const RobustnessResult& result, const std::filesystem::path& path) {
  auto out = open_csv(path, "run,freq_point,emulator,log_mse");
  for (std::size_t t = 0; t < result.runs.size(); ++t)
    for (const auto* rep : {&result.runs[t].cnn, &result.runs[t].gp})
      for (int c = 0; c < rep->log_mse.size(); ++c)
        out << t + 1 << ',' << c + 1 << ',' << tag(rep->emulator) << ',' << log_text(rep->log_mse[c]) << '\n';
  for (const auto* s : {&result.cnn, &result.gp})
    for (int c = 0; c < s->mean_log_mse.size(); ++c)
      out << "mean," << c + 1 << ',' << tag(s->emulator) << ',' << log_text(s->mean_log_mse[c]) << '\n';
}

void write_sweep(const SweepResult& result, const std::vector<double>& freqs, const std::filesystem::path& path) {
  const bool alpha = result.kind == StudyKind::Alpha;
  auto out = open_csv(path, alpha ? "alpha,freq_point,freq_hz,log_mse"
                                  : "hf_fraction,hf_train,freq_point,freq_hz,emulator,log_mse");
  for (const auto& p : result.points) {
    const int cols = static_cast<int>(p.cnn.log_mse.size());
    const int n_out = cols / static_cast<int>(freqs.size());
    for (const auto* rep : {&p.cnn, p.gp ? &*p.gp : nullptr}) {
      if (!rep) continue;
      for (int c = 0; c < cols; ++c) {
        if (alpha)
          out << format_double(p.value) << ',' << c + 1 << ',' << format_double(freqs[c / n_out]) << ','
              << log_text(rep->log_mse[c]) << '\n';
        else
          out << format_double(p.value) << ',' << p.hf_train << ',' << c + 1 << ','
              << format_double(freqs[c / n_out]) << ',' << tag(rep->emulator) << ',' << log_text(rep->log_mse[c])
              << '\n';
      }
    }
  }
}

}  // namespace vibefuse::eval
