#include "vibefuse/dataset.hpp"

#include "vibefuse/errors.hpp"
#include "vibefuse/parallel.hpp"
#include "vibefuse/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <numeric>
#include <sstream>

namespace vibefuse::data {

namespace {
constexpr const char* kModule = "dataset-io";
constexpr const char* kFormat = "vibefuse-dataset";
constexpr int kVersion = 1;

using nlohmann::json;

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  if (!out.empty() && !out.back().empty() && out.back().back() == '\r') out.back().pop_back();
  return out;
}

std::vector<std::string> dataset_header(int params, int responses) {
  std::vector<std::string> h;
  for (int i = 1; i <= params; ++i) h.push_back("theta_" + std::to_string(i));
  for (int i = 1; i <= responses; ++i) h.push_back("u_" + std::to_string(i));
  return h;
}

std::vector<int> sorted(std::vector<int> v) {
  std::sort(v.begin(), v.end());
  return v;
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(kModule, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(kModule, path.string() + ": " + e.what());
  }
}
}  // namespace

std::string to_string(Fidelity f) { return f == Fidelity::High ? "HIGH" : "LOW"; }

Fidelity fidelity_from_string(const std::string& s) {
  if (s == "HIGH") return Fidelity::High;
  if (s == "LOW") return Fidelity::Low;
  throw FormatError(kModule, "unknown fidelity tag '" + s + "'");
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw FormatError(kModule, "malformed number '" + s + "'");
  return v;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void FidelityDataset::validate() const {
  if (inputs.rows() != responses.rows()) throw FormatError(kModule, "input and response row counts differ");
  if (responses.cols() != response_length())
    throw FormatError(kModule, "response width does not match outputs x frequencies");
  if (!std::is_sorted(frequencies_hz.begin(), frequencies_hz.end()) ||
      std::adjacent_find(frequencies_hz.begin(), frequencies_hz.end()) != frequencies_hz.end())
    throw FormatError(kModule, "frequency grid must be strictly increasing");
  if (!responses.allFinite() || !inputs.allFinite()) throw FormatError(kModule, "non-finite value in dataset");
  if ((responses.array() <= 0.0).any()) throw FormatError(kModule, "response magnitudes must be positive");

  std::vector<int> order(rows());
  std::iota(order.begin(), order.end(), 0);
  auto less = [&](int a, int b) {
    for (int j = 0; j < inputs.cols(); ++j)
      if (inputs(a, j) != inputs(b, j)) return inputs(a, j) < inputs(b, j);
    return false;
  };
  std::sort(order.begin(), order.end(), less);
  for (std::size_t i = 1; i < order.size(); ++i)
    if (!less(order[i - 1], order[i]))
      throw FormatError(kModule, "duplicate theta rows " + std::to_string(order[i - 1]) + " and " +
                                     std::to_string(order[i]));
}

FidelityDataset FidelityDataset::subset(const std::vector<int>& ids) const {
  FidelityDataset out;
  out.fidelity = fidelity;
  out.frequencies_hz = frequencies_hz;
  out.output_dofs = output_dofs;
  out.metadata = metadata;
  out.inputs.resize(static_cast<Eigen::Index>(ids.size()), inputs.cols());
  out.responses.resize(static_cast<Eigen::Index>(ids.size()), responses.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= rows()) throw DomainError(kModule, "row id out of range");
    out.inputs.row(i) = inputs.row(ids[i]);
    out.responses.row(i) = responses.row(ids[i]);
  }
  return out;
}

DatasetPair generate_datasets(const sim::StructuralModel& model, const Eigen::MatrixXd& theta, unsigned jobs,
                              const DatasetMetadata& metadata) {
  if (theta.cols() != model.parameter_count())
    throw DomainError(kModule, "theta matrix must have " + std::to_string(model.parameter_count()) + " columns");
  const int rows = static_cast<int>(theta.rows());
  const int width = model.response_length();

  DatasetPair out;
  for (auto* ds : {&out.high, &out.low}) {
    ds->frequencies_hz = model.request().frequencies_hz;
    ds->output_dofs = model.request().outputs;
    ds->inputs = theta;
    ds->responses.resize(rows, width);
    ds->metadata = metadata;
  }
  out.high.fidelity = Fidelity::High;
  out.low.fidelity = Fidelity::Low;

  parallel_for(static_cast<std::size_t>(rows), jobs, [&](std::size_t i) {
    try {
      const Eigen::VectorXd x = theta.row(i).transpose();
      out.high.responses.row(i) = model.high_fidelity(x).transpose();
      out.low.responses.row(i) = model.low_fidelity(x).transpose();
    } catch (const Error& e) {
      throw Error(e.module(), std::string("sample ") + std::to_string(i) + ": " +
                                  std::string(e.what()).substr(e.module().size() + 2));
    }
  });
  out.high.validate();
  out.low.validate();
  return out;
}

void NestedSplit::validate(int rows) const {
  auto check = [&](const std::vector<int>& ids, const char* name) {
    if (!std::is_sorted(ids.begin(), ids.end()) || std::adjacent_find(ids.begin(), ids.end()) != ids.end())
      throw ContractError(kModule, std::string(name) + " ids must be strictly ascending");
    for (int id : ids)
      if (id < 0 || id >= rows) throw ContractError(kModule, std::string(name) + " id out of range");
  };
  check(lf_train, "LF-train");
  check(hf_train, "HF-train");
  check(hf_test, "HF-test");
  if (!std::includes(lf_train.begin(), lf_train.end(), hf_train.begin(), hf_train.end()))
    throw ContractError(kModule, "HF-train rows must be a subset of LF-train rows");
  std::vector<int> common;
  std::set_intersection(hf_train.begin(), hf_train.end(), hf_test.begin(), hf_test.end(),
                        std::back_inserter(common));
  if (!common.empty()) throw ContractError(kModule, "HF-test overlaps HF-train");
}

NestedSplit split_nested(const FidelityDataset& hf, const FidelityDataset& lf, int lf_train, int hf_train,
                         std::uint64_t seed) {
  if (hf.rows() != lf.rows()) throw DomainError(kModule, "HIGH and LOW datasets must have the same rows");
  if (hf.inputs != lf.inputs) throw DomainError(kModule, "HIGH and LOW datasets are not paired by theta");
  const int rows = hf.rows();
  if (lf_train < 1 || lf_train > rows) throw DomainError(kModule, "LF-train size must be in [1, rows]");
  if (hf_train < 1 || hf_train > lf_train) throw DomainError(kModule, "HF-train size must be in [1, LF-train]");

  Rng rng(seed);
  const std::vector<int> perm = permutation(rows, rng);
  NestedSplit split;
  split.seed = seed;
  split.lf_train = sorted({perm.begin(), perm.begin() + lf_train});
  split.hf_test = sorted({perm.begin() + lf_train, perm.end()});
  // HF rows are the first hf_train of the shuffled LF-train draw.
  split.hf_train = sorted({perm.begin(), perm.begin() + hf_train});
  split.validate(rows);
  return split;
}

NestedSplit resplit_hf(const NestedSplit& base, int hf_train, std::uint64_t seed) {
  if (hf_train < 1 || hf_train > static_cast<int>(base.lf_train.size()))
    throw DomainError(kModule, "HF-train size must be in [1, LF-train]");
  NestedSplit out = base;
  out.seed = seed;
  std::vector<int> pool = base.lf_train;
  Rng rng(seed);
  shuffle(pool, rng);
  out.hf_train = sorted({pool.begin(), pool.begin() + hf_train});
  return out;
}

void save_split(const NestedSplit& split, const std::filesystem::path& path, const std::string& config_hash) {
  json j = {{"format", "vibefuse-split"}, {"version", kVersion},       {"seed", split.seed},
            {"config_hash", config_hash},  {"lf_train", split.lf_train}, {"hf_train", split.hf_train},
            {"hf_test", split.hf_test}};
  std::ofstream out(path);
  if (!out) throw FormatError(kModule, "cannot write " + path.string());
  out << j.dump(1) << '\n';
}

NestedSplit load_split(const std::filesystem::path& path) {
  const json j = read_json(path);
  try {
    if (j.at("format") != "vibefuse-split" || j.at("version") != kVersion)
      throw FormatError(kModule, path.string() + ": not a version " + std::to_string(kVersion) + " split file");
    NestedSplit s;
    s.seed = j.at("seed").get<std::uint64_t>();
    s.lf_train = j.at("lf_train").get<std::vector<int>>();
    s.hf_train = j.at("hf_train").get<std::vector<int>>();
    s.hf_test = j.at("hf_test").get<std::vector<int>>();
    return s;
  } catch (const json::exception& e) {
    throw FormatError(kModule, path.string() + ": " + e.what());
  }
}

void save_dataset(const FidelityDataset& ds, const std::filesystem::path& stem) {
  ds.validate();
  auto csv_path = stem;
  csv_path += ".csv";
  auto json_path = stem;
  json_path += ".json";

  std::ofstream csv(csv_path);
  if (!csv) throw FormatError(kModule, "cannot write " + csv_path.string());
  const auto header = dataset_header(static_cast<int>(ds.inputs.cols()), ds.response_length());
  for (std::size_t i = 0; i < header.size(); ++i) csv << (i ? "," : "") << header[i];
  csv << '\n';
  for (int r = 0; r < ds.rows(); ++r) {
    for (int j = 0; j < ds.inputs.cols(); ++j) csv << (j ? "," : "") << format_double(ds.inputs(r, j));
    for (int j = 0; j < ds.responses.cols(); ++j) csv << ',' << format_double(ds.responses(r, j));
    csv << '\n';
  }
  if (!csv) throw FormatError(kModule, "write failed for " + csv_path.string());

  json meta = {{"format", kFormat},
               {"version", kVersion},
               {"fidelity", to_string(ds.fidelity)},
               {"frequencies_hz", ds.frequencies_hz},
               {"output_dofs", ds.output_dofs},
               {"parameter_count", ds.inputs.cols()},
               {"response_length", ds.response_length()},
               {"rows", ds.rows()},
               {"seed", ds.metadata.seed},
               {"model_hash", ds.metadata.model_hash},
               {"timestamp", ds.metadata.timestamp}};
  std::ofstream side(json_path);
  if (!side) throw FormatError(kModule, "cannot write " + json_path.string());
  side << meta.dump(1) << '\n';
}

FidelityDataset load_dataset(const std::filesystem::path& stem) {
  auto csv_path = stem;
  csv_path += ".csv";
  auto json_path = stem;
  json_path += ".json";

  const json meta = read_json(json_path);
  FidelityDataset ds;
  int params = 0, rows = 0;
  try {
    if (meta.at("format") != kFormat) throw FormatError(kModule, json_path.string() + ": not a dataset sidecar");
    if (meta.at("version") != kVersion)
      throw FormatError(kModule, json_path.string() + ": unsupported version " + meta.at("version").dump());
    ds.fidelity = fidelity_from_string(meta.at("fidelity").get<std::string>());
    ds.frequencies_hz = meta.at("frequencies_hz").get<std::vector<double>>();
    ds.output_dofs = meta.at("output_dofs").get<std::vector<int>>();
    params = meta.at("parameter_count").get<int>();
    rows = meta.at("rows").get<int>();
    if (meta.at("response_length").get<int>() != ds.response_length())
      throw FormatError(kModule, json_path.string() + ": response_length inconsistent with grid and DOFs");
    ds.metadata.seed = meta.at("seed").get<std::uint64_t>();
    ds.metadata.model_hash = meta.at("model_hash").get<std::string>();
    ds.metadata.timestamp = meta.at("timestamp").get<std::string>();
  } catch (const json::exception& e) {
    throw FormatError(kModule, json_path.string() + ": " + e.what());
  }

  std::ifstream csv(csv_path);
  if (!csv) throw FormatError(kModule, "cannot open " + csv_path.string());
  std::string line;
  if (!std::getline(csv, line)) throw FormatError(kModule, csv_path.string() + ": missing header");
  const int width = ds.response_length();
  if (split_csv_line(line) != dataset_header(params, width))
    throw FormatError(kModule, csv_path.string() + ": header does not match the sidecar schema");

  ds.inputs.resize(rows, params);
  ds.responses.resize(rows, width);
  int r = 0;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    if (r >= rows) throw FormatError(kModule, csv_path.string() + ": more rows than the sidecar declares");
    const auto cells = split_csv_line(line);
    if (static_cast<int>(cells.size()) != params + width)
      throw FormatError(kModule, csv_path.string() + ": row " + std::to_string(r + 1) + " has " +
                                     std::to_string(cells.size()) + " columns");
    for (int j = 0; j < params; ++j) ds.inputs(r, j) = parse_double(cells[j]);
    for (int j = 0; j < width; ++j) ds.responses(r, j) = parse_double(cells[params + j]);
    ++r;
  }
  if (r != rows) throw FormatError(kModule, csv_path.string() + ": fewer rows than the sidecar declares");
  ds.validate();
  return ds;
}

std::vector<PointSummary> summarize(const FidelityDataset& ds, int bins) {
  if (ds.rows() == 0) throw DomainError(kModule, "cannot summarize an empty dataset");
  if (bins < 1) throw DomainError(kModule, "histogram needs at least one bin");
  const int n_out = static_cast<int>(ds.output_dofs.size());
  const double rows = ds.rows();
  std::vector<PointSummary> out;
  for (int c = 0; c < ds.responses.cols(); ++c) {
    const auto col = ds.responses.col(c);
    PointSummary s;
    s.freq_hz = ds.frequencies_hz[c / n_out];
    s.output = c % n_out;
    s.min = col.minCoeff();
    s.max = col.maxCoeff();
    s.mean = col.sum() / rows;
    const Eigen::ArrayXd dev = col.array() - s.mean;
    const double m2 = dev.square().sum() / rows;
    s.std = std::sqrt(m2);
    if (m2 > 0.0) {
      s.skewness = dev.cube().sum() / rows / std::pow(m2, 1.5);
      s.excess_kurtosis = dev.square().square().sum() / rows / (m2 * m2) - 3.0;
    }
    const double width = (s.max - s.min) / bins;
    s.bin_edges.resize(bins + 1);
    for (int b = 0; b <= bins; ++b) s.bin_edges[b] = b == bins ? s.max : s.min + b * width;
    s.counts.assign(bins, 0);
    for (double v : col) {
      int b = width > 0.0 ? static_cast<int>((v - s.min) / width) : 0;
      ++s.counts[std::clamp(b, 0, bins - 1)];
    }
    out.push_back(std::move(s));
  }
  return out;
}

void write_summary(const std::vector<PointSummary>& summary, const std::filesystem::path& envelope_csv,
                   const std::filesystem::path& histogram_csv) {
  std::ofstream env(envelope_csv), hist(histogram_csv);
  if (!env || !hist) throw FormatError(kModule, "cannot write summary files");
  env << "freq_hz,min,max,mean,std\n";
  hist << "freq_hz,bin_lo,bin_hi,count\n";
  for (const auto& s : summary) {
    env << format_double(s.freq_hz) << ',' << format_double(s.min) << ',' << format_double(s.max) << ','
        << format_double(s.mean) << ',' << format_double(s.std) << '\n';
    for (std::size_t b = 0; b < s.counts.size(); ++b)
      hist << format_double(s.freq_hz) << ',' << format_double(s.bin_edges[b]) << ','
           << format_double(s.bin_edges[b + 1]) << ',' << s.counts[b] << '\n';
  }
}

double mean_relative_discrepancy(const FidelityDataset& low, const FidelityDataset& high) {
  if (low.rows() != high.rows() || low.responses.cols() != high.responses.cols())
    throw DomainError(kModule, "datasets are not aligned");
  if (high.rows() == 0) return 0.0;
  double acc = 0.0;
  for (int r = 0; r < high.rows(); ++r)
    acc += (low.responses.row(r) - high.responses.row(r)).norm() / high.responses.row(r).norm();
  return acc / high.rows();
}

}  // namespace vibefuse::data
