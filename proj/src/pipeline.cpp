#include "vibefuse/pipeline.hpp"

#include "vibefuse/errors.hpp"
#include "vibefuse/parallel.hpp"
#include "vibefuse/sampling.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

namespace vibefuse::pipeline {

namespace {
constexpr const char* kModule = "cli";
namespace fs = std::filesystem;
using nlohmann::json;
using data::format_double;

std::ostream& log(const Context& ctx) {
  static std::ostream null(nullptr);
  return ctx.log ? *ctx.log : null;
}

std::string file_hash(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return config::fnv1a_hex(ss.str());
}

/// Records artifacts and the config hash in <out>/manifest.json.
void record(const Context& ctx, std::initializer_list<std::string> names) {
  const fs::path path = ctx.out_dir / "manifest.json";
  json m = json::object();
  if (fs::exists(path)) {
    std::ifstream in(path);
    try {
      m = json::parse(in);
    } catch (const json::exception&) {
      m = json::object();
    }
  }
  if (m.value("config_hash", "") != ctx.config.hash()) m = json::object();
  m["config_hash"] = ctx.config.hash();
  m["model_hash"] = ctx.config.model_hash();
  for (const auto& n : names)
    if (fs::exists(ctx.out_dir / n)) m["artifacts"][n] = file_hash(ctx.out_dir / n);
  std::ofstream out(path);
  out << m.dump(1) << '\n';
}

void write_matrix_csv(const fs::path& path, const std::string& prefix, const Eigen::MatrixXd& m,
                      const std::vector<int>* row_ids = nullptr) {
  std::ofstream out(path);
  if (!out) throw FormatError(kModule, "cannot write " + path.string());
  if (row_ids) out << "row,";
  for (int j = 0; j < m.cols(); ++j) out << (j ? "," : "") << prefix << j + 1;
  out << '\n';
  for (int i = 0; i < m.rows(); ++i) {
    if (row_ids) out << (*row_ids)[i] << ',';
    for (int j = 0; j < m.cols(); ++j) out << (j ? "," : "") << format_double(m(i, j));
    out << '\n';
  }
}

Eigen::MatrixXd read_theta_csv(const fs::path& path, int params) {
  std::ifstream in(path);
  if (!in) throw FormatError(kModule, "cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(data::parse_double(cell));
    if (static_cast<int>(row.size()) < params)
      throw FormatError(kModule, path.string() + ": expected at least " + std::to_string(params) + " columns");
    rows.push_back(std::move(row));
  }
  Eigen::MatrixXd m(rows.size(), params);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (int j = 0; j < params; ++j) m(i, j) = rows[i][j];
  return m;
}

data::DatasetPair load_datasets(const Context& ctx) {
  data::DatasetPair p{data::load_dataset(ctx.out_dir / "high"), data::load_dataset(ctx.out_dir / "low")};
  for (const auto* ds : {&p.high, &p.low})
    if (ds->metadata.model_hash != ctx.config.model_hash())
      throw ConfigError(kModule, "datasets in " + ctx.out_dir.string() +
                                     " were generated from a different model configuration; run simulate again");
  return p;
}

data::NestedSplit load_or_make_split(const Context& ctx, const data::DatasetPair& d) {
  const auto path = ctx.out_dir / "split.json";
  if (fs::exists(path)) {
    auto s = data::load_split(path);
    s.validate(d.high.rows());
    return s;
  }
  return data::split_nested(d.high, d.low, ctx.config.split.lf_train, ctx.config.split.hf_train,
                            ctx.config.split.seed);
}

eval::StudyInputs study_inputs(const Context& ctx, const data::DatasetPair& d) {
  eval::StudyInputs in;
  in.high = &d.high;
  in.low = &d.low;
  in.mfdf = ctx.config.mfdf;
  in.mlmrgp = ctx.config.mlmrgp;
  in.jobs = ctx.jobs;
  return in;
}

void write_loss(const fs::path& path, const std::vector<double>& losses, double initial) {
  std::ofstream out(path);
  out << "epoch,loss\n0," << format_double(initial) << '\n';
  for (std::size_t e = 0; e < losses.size(); ++e) out << e + 1 << ',' << format_double(losses[e]) << '\n';
}

json model_extra(const Context& ctx, const data::NestedSplit& split) {
  return {{"config_hash", ctx.config.hash()}, {"model_hash", ctx.config.model_hash()}, {"split_seed", split.seed},
          {"lf_train", split.lf_train}, {"hf_train", split.hf_train}};
}
}  // namespace

fs::path resolve_out_dir(const std::optional<std::string>& flag, const config::PipelineConfig& cfg) {
  if (flag) return *flag;
  if (const char* env = std::getenv("VIBEFUSE_OUT"); env && *env) return env;
  return cfg.out_dir;
}

int mesh(const Context& ctx) {
  sim::StructuralModel model(ctx.config.model, ctx.config.reduction);
  const int modes = std::min(ctx.config.model.mode_count, model.partition().master_count());
  const auto cmp = model.compare_modes(modes);
  std::ofstream full(ctx.out_dir / "modes.csv"), both(ctx.out_dir / "modes_guyan.csv");
  full << "mode,full_hz\n";
  both << "mode,full_hz,guyan_hz,rel_error\n";
  for (int i = 0; i < modes; ++i) {
    const double diff = cmp.guyan_hz[i] - cmp.full_hz[i];
    full << i + 1 << ',' << format_double(cmp.full_hz[i]) << '\n';
    both << i + 1 << ',' << format_double(cmp.full_hz[i]) << ',' << format_double(cmp.guyan_hz[i]) << ','
         << format_double(diff == 0.0 ? 0.0 : diff / cmp.full_hz[i]) << '\n';
  }
  log(ctx) << "N = " << model.dof_count() << "\n"
           << "masters = " << model.partition().master_count() << "\n";
  for (int i = 0; i < modes; ++i)
    log(ctx) << "mode " << i + 1 << ": full " << cmp.full_hz[i] << " Hz, guyan " << cmp.guyan_hz[i] << " Hz\n";
  record(ctx, {"modes.csv", "modes_guyan.csv"});
  return model.dof_count();
}

Eigen::MatrixXd sample(const Context& ctx) {
  const auto theta = sampling::lhs_normal_samples(ctx.config.sampling);
  write_matrix_csv(ctx.out_dir / "samples.csv", "theta_", theta);
  record(ctx, {"samples.csv"});
  log(ctx) << "samples: " << theta.rows() << " x " << theta.cols() << "\n";
  return theta;
}

data::DatasetPair simulate(const Context& ctx) {
  const auto theta = sample(ctx);
  sim::StructuralModel model(ctx.config.model, ctx.config.reduction);
  log(ctx) << "simulating " << theta.rows() << " samples at both fidelities (N = " << model.dof_count()
           << ", masters = " << model.partition().master_count() << ")\n";
  auto pair = data::generate_datasets(model, theta, ctx.jobs,
                                      {ctx.config.sampling.seed, ctx.config.model_hash(), data::utc_timestamp()});
  data::save_dataset(pair.high, ctx.out_dir / "high");
  data::save_dataset(pair.low, ctx.out_dir / "low");
  const int bins = ctx.config.eval.histogram_bins;
  data::write_summary(data::summarize(pair.high, bins), ctx.out_dir / "summary_high.csv",
                      ctx.out_dir / "histogram_high.csv");
  data::write_summary(data::summarize(pair.low, bins), ctx.out_dir / "summary_low.csv",
                      ctx.out_dir / "histogram_low.csv");
  record(ctx, {"high.csv", "low.csv", "summary_high.csv", "histogram_high.csv", "summary_low.csv",
               "histogram_low.csv"});
  log(ctx) << "mean relative LF/HF discrepancy: " << data::mean_relative_discrepancy(pair.low, pair.high) << "\n";
  return pair;
}

data::NestedSplit split(const Context& ctx) {
  const auto d = load_datasets(ctx);
  const auto s = data::split_nested(d.high, d.low, ctx.config.split.lf_train, ctx.config.split.hf_train,
                                    ctx.config.split.seed);
  data::save_split(s, ctx.out_dir / "split.json", ctx.config.hash());
  record(ctx, {"split.json"});
  log(ctx) << "split: LF-train " << s.lf_train.size() << ", HF-train " << s.hf_train.size() << ", HF-test "
           << s.hf_test.size() << "\n";
  return s;
}

void train_cnn(const Context& ctx) {
  const auto d = load_datasets(ctx);
  const auto s = load_or_make_split(ctx, d);
  const auto res = eval::train_cnn(study_inputs(ctx, d), s);
  mfdf::save_composite(res.net, ctx.out_dir / "model_mfdfcnn", model_extra(ctx, s));
  write_loss(ctx.out_dir / "loss_mfdfcnn.csv", res.epoch_loss, res.initial_loss);
  record(ctx, {"model_mfdfcnn.bin", "loss_mfdfcnn.csv"});
  log(ctx) << "MFDF-CNN trained: " << res.net.parameter_count() << " parameters, loss " << res.initial_loss
           << " -> " << (res.epoch_loss.empty() ? res.initial_loss : res.epoch_loss.back()) << "\n";
}

void train_gp(const Context& ctx) {
  const auto d = load_datasets(ctx);
  const auto s = load_or_make_split(ctx, d);
  const auto model = eval::train_gp(study_inputs(ctx, d), s, ctx.jobs);
  json j = gp::to_json(model);
  j["extra"] = model_extra(ctx, s);
  std::ofstream(ctx.out_dir / "model_mlmrgp.json") << j.dump(1) << '\n';
  record(ctx, {"model_mlmrgp.json"});
  log(ctx) << "MLMRGP trained: rho = " << model.rho << ", " << model.hyperparameter_count << " hyperparameters\n";
}

namespace {
mfdf::CompositeNet load_cnn(const Context& ctx) {
  json extra;
  auto net = mfdf::load_composite(ctx.out_dir / "model_mfdfcnn", &extra);
  if (extra.value("model_hash", "") != ctx.config.model_hash())
    throw ConfigError(kModule, "saved MFDF-CNN model belongs to a different model configuration");
  return net;
}

gp::MlmrgpModel load_gp(const Context& ctx) {
  std::ifstream in(ctx.out_dir / "model_mlmrgp.json");
  if (!in) throw FormatError(kModule, "no trained MLMRGP model in " + ctx.out_dir.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(kModule, std::string("model_mlmrgp.json: ") + e.what());
  }
  if (j.value("extra", json::object()).value("model_hash", "") != ctx.config.model_hash())
    throw ConfigError(kModule, "saved MLMRGP model belongs to a different model configuration");
  return gp::mlmrgp_from_json(j);
}
}  // namespace

void predict(const Context& ctx, const std::string& emulator, const std::optional<std::string>& input_csv) {
  Eigen::MatrixXd theta;
  std::vector<int> ids;
  if (input_csv) {
    theta = read_theta_csv(*input_csv, fem::kParameterCount);
    for (int i = 0; i < theta.rows(); ++i) ids.push_back(i);
  } else {
    const auto d = load_datasets(ctx);
    const auto s = load_or_make_split(ctx, d);
    ids = s.hf_test;
    theta = d.high.subset(ids).inputs;
  }
  Eigen::MatrixXd pred;
  std::string name;
  if (emulator == "mfdf-cnn") {
    pred = mfdf::predict_high_fidelity(load_cnn(ctx), theta);
    name = "predictions_mfdfcnn.csv";
  } else if (emulator == "mlmrgp") {
    pred = gp::predict_two_level(load_gp(ctx), theta).mean;
    name = "predictions_mlmrgp.csv";
  } else {
    throw ConfigError(kModule, "unknown emulator '" + emulator + "'");
  }
  write_matrix_csv(ctx.out_dir / name, "u_", pred, &ids);
  record(ctx, {name});
  log(ctx) << "wrote " << pred.rows() << " predictions to " << (ctx.out_dir / name).string() << "\n";
}

eval::ComparisonResult evaluate(const Context& ctx) {
  const auto d = load_datasets(ctx);
  const auto s = load_or_make_split(ctx, d);
  eval::ComparisonResult r;
  r.split = s;
  const auto test_hi = d.high.subset(s.hf_test);
  r.truth = test_hi.responses;
  r.low = d.low.subset(s.hf_test).responses;
  r.pred_cnn = mfdf::predict_high_fidelity(load_cnn(ctx), test_hi.inputs);
  r.pred_gp = gp::predict_two_level(load_gp(ctx), test_hi.inputs).mean;
  r.cnn = eval::make_report(eval::Emulator::MfdfCnn, r.pred_cnn, r.truth, s.seed, 0);
  r.gp = eval::make_report(eval::Emulator::Mlmrgp, r.pred_gp, r.truth, s.seed, 0);
  r.mean_error_cnn = (r.pred_cnn - r.truth).rowwise().norm().mean();
  r.mean_error_gp = (r.pred_gp - r.truth).rowwise().norm().mean();
  r.mean_error_low = (r.low - r.truth).rowwise().norm().mean();
  eval::write_comparison(r, d.high.frequencies_hz, ctx.config.eval.curve_samples, ctx.config.eval.seed, ctx.out_dir);
  record(ctx, {"comparison.csv", "scatter.csv", "curves_1.csv", "curves_2.csv", "curves_3.csv", "curves_4.csv",
               "curves_5.csv", "curves_6.csv"});
  log(ctx) << "mean test-row error: MFDF-CNN " << r.mean_error_cnn << ", MLMRGP " << r.mean_error_gp
           << ", raw LF " << r.mean_error_low << "\n";
  return r;
}

eval::RobustnessResult study_robustness(const Context& ctx) {
  const auto d = load_datasets(ctx);
  const auto res = eval::run_robustness(study_inputs(ctx, d), ctx.config.eval.robustness_runs, ctx.config.split.seed,
                                        ctx.config.split.lf_train, ctx.config.split.hf_train);
  eval::write_robustness(res, ctx.out_dir / "robustness.csv");
  record(ctx, {"robustness.csv"});
  log(ctx) << "robustness: " << res.runs.size() << " runs\n";
  return res;
}

eval::SweepResult study_hf_fraction(const Context& ctx) {
  const auto d = load_datasets(ctx);
  const auto s = load_or_make_split(ctx, d);
  const auto res = eval::run_hf_fraction_sweep(study_inputs(ctx, d), s, ctx.config.eval.hf_fractions);
  eval::write_sweep(res, d.high.frequencies_hz, ctx.out_dir / "sweep_hf.csv");
  record(ctx, {"sweep_hf.csv"});
  for (const auto& p : res.points)
    log(ctx) << "HF fraction " << p.value << ": mean log-MSE MFDF-CNN " << eval::mean_log(p.cnn) << ", MLMRGP "
             << eval::mean_log(*p.gp) << "\n";
  return res;
}

eval::SweepResult study_alpha(const Context& ctx) {
  const auto d = load_datasets(ctx);
  const auto s = load_or_make_split(ctx, d);
  const auto res = eval::run_alpha_sweep(study_inputs(ctx, d), s, ctx.config.eval.alpha_grid);
  eval::write_sweep(res, d.high.frequencies_hz, ctx.out_dir / "sweep_alpha.csv");
  record(ctx, {"sweep_alpha.csv"});
  for (const auto& p : res.points)
    log(ctx) << "alpha " << p.value << ": mean log-MSE " << eval::mean_log(p.cnn) << "\n";
  return res;
}

void run_all(const Context& ctx) {
  mesh(ctx);
  simulate(ctx);
  split(ctx);
  train_cnn(ctx);
  train_gp(ctx);
  evaluate(ctx);
  study_robustness(ctx);
  study_hf_fraction(ctx);
  study_alpha(ctx);
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-fidelity frequency-response data generation and fusion emulators"};
  app.name(args.empty() ? "vibefuse" : args[0]);
  app.fallthrough();
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  int jobs = 0;
  std::optional<std::string> out_flag;
  app.add_option("-c,--config", config_path, "Pipeline configuration (JSON)")->required();
  app.add_option("--seed", seed, "Override the global seed");
  app.add_option("-j,--jobs", jobs, "Worker threads (0 = all cores)");
  app.add_option("-o,--out", out_flag, "Output directory (default: $VIBEFUSE_OUT, then io.out_dir)");

  auto* c_mesh = app.add_subcommand("mesh", "Build the model, report N and natural frequencies");
  auto* c_sample = app.add_subcommand("sample", "Draw the Latin hypercube parameter samples");
  auto* c_sim = app.add_subcommand("simulate", "Generate HIGH and LOW fidelity datasets");
  auto* c_split = app.add_subcommand("split", "Draw the nested train/test split");
  auto* c_train = app.add_subcommand("train", "Train an emulator");
  c_train->require_subcommand(1);
  auto* c_train_cnn = c_train->add_subcommand("mfdf-cnn", "Composite multi-fidelity network");
  auto* c_train_gp = c_train->add_subcommand("mlmrgp", "Two-level multi-response Gaussian process");
  auto* c_predict = app.add_subcommand("predict", "Predict high-fidelity responses with a trained emulator");
  std::string emulator;
  std::optional<std::string> input;
  c_predict->add_option("emulator", emulator, "mfdf-cnn or mlmrgp")->required()->check(
      CLI::IsMember({"mfdf-cnn", "mlmrgp"}));
  c_predict->add_option("--input", input, "CSV of theta rows (default: the HF-test rows)");
  auto* c_eval = app.add_subcommand("evaluate", "Compare trained emulators on the HF-test rows");
  auto* c_study = app.add_subcommand("study", "Run a robustness or sweep study");
  c_study->require_subcommand(1);
  auto* c_rob = c_study->add_subcommand("robustness", "Repeated random splits");
  auto* c_hf = c_study->add_subcommand("hf-fraction", "Vary the HF training fraction");
  auto* c_alpha = c_study->add_subcommand("alpha", "Vary the linearity weight");
  auto* c_all = app.add_subcommand("all", "Run the full pipeline end to end");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    Context ctx;
    ctx.config = config::load_config(config_path, seed);
    ctx.out_dir = resolve_out_dir(out_flag, ctx.config);
    ctx.jobs = resolve_jobs(jobs);
    ctx.log = &out;
    fs::create_directories(ctx.out_dir);
    out << "config hash " << ctx.config.hash() << "\n";

    if (c_mesh->parsed()) mesh(ctx);
    else if (c_sample->parsed()) sample(ctx);
    else if (c_sim->parsed()) simulate(ctx);
    else if (c_split->parsed()) split(ctx);
    else if (c_train_cnn->parsed()) train_cnn(ctx);
    else if (c_train_gp->parsed()) train_gp(ctx);
    else if (c_predict->parsed()) predict(ctx, emulator, input);
    else if (c_eval->parsed()) evaluate(ctx);
    else if (c_rob->parsed()) study_robustness(ctx);
    else if (c_hf->parsed()) study_hf_fraction(ctx);
    else if (c_alpha->parsed()) study_alpha(ctx);
    else if (c_all->parsed()) run_all(ctx);
    return 0;
  } catch (const Error& e) {
    err << "error [" << e.module() << "]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace vibefuse::pipeline
