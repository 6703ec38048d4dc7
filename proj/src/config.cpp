#include "vibefuse/config.hpp"

#include "vibefuse/errors.hpp"
#include "vibefuse/random.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace vibefuse::config {

namespace {
constexpr const char* kModule = "cli";
using nlohmann::json;

/// Best-effort source line of a JSON pointer-ish path such as /model/forces/2/point.
int line_of(const std::string& text, const std::vector<std::string>& keys) {
  std::size_t pos = 0;
  for (const auto& key : keys) {
    if (!key.empty() && std::isdigit(static_cast<unsigned char>(key[0]))) continue;
    const auto found = text.find('"' + key + '"', pos);
    if (found == std::string::npos) break;
    pos = found;
  }
  if (pos == 0) return 0;
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(pos), '\n'));
}

class Reader {
 public:
  Reader(const json& node, std::vector<std::string> path, const std::string& text, const std::string& source)
      : node_(node), path_(std::move(path)), text_(text), source_(source) {
    if (!node_.is_object()) fail("expected an object");
  }

  [[noreturn]] void fail(const std::string& message, const std::string& key = {}) const {
    auto keys = path_;
    if (!key.empty()) keys.push_back(key);
    std::string p;
    for (const auto& k : keys) p += "/" + k;
    if (p.empty()) p = "/";
    const int line = line_of(text_, keys);
    throw ConfigError(kModule, source_ + ": " + p + (line > 0 ? " (line " + std::to_string(line) + ")" : "") + ": " +
                                   message);
  }

  bool has(const std::string& key) {
    return node_.contains(key);
  }

  const json& raw(const std::string& key) {
    seen_.push_back(key);
    return node_.at(key);
  }

  template <class T>
  T get(const std::string& key, T fallback) {
    if (!node_.contains(key)) return fallback;
    return require<T>(key);
  }

  template <class T>
  T require(const std::string& key) {
    if (!node_.contains(key)) fail("missing required key", key);
    seen_.push_back(key);
    try {
      return node_.at(key).get<T>();
    } catch (const json::exception&) {
      fail("wrong type (got " + std::string(node_.at(key).type_name()) + ")", key);
    }
  }

  template <class T>
  std::optional<T> optional(const std::string& key) {
    if (!node_.contains(key) || node_.at(key).is_null()) {
      if (node_.contains(key)) seen_.push_back(key);
      return std::nullopt;
    }
    return require<T>(key);
  }

  Reader child(const std::string& key) {
    seen_.push_back(key);
    auto p = path_;
    p.push_back(key);
    return Reader(node_.at(key), p, text_, source_);
  }

  std::vector<Reader> children(const std::string& key) {
    seen_.push_back(key);
    const auto& arr = node_.at(key);
    if (!arr.is_array()) fail("expected an array", key);
    std::vector<Reader> out;
    for (std::size_t i = 0; i < arr.size(); ++i) {
      auto p = path_;
      p.push_back(key);
      p.push_back(std::to_string(i));
      out.emplace_back(arr[i], p, text_, source_);
    }
    return out;
  }

  void finish() const {
    for (const auto& [key, value] : node_.items())
      if (std::find(seen_.begin(), seen_.end(), key) == seen_.end()) fail("unknown key", key);
  }

 private:
  const json& node_;
  std::vector<std::string> path_;
  const std::string& text_;
  const std::string& source_;
  std::vector<std::string> seen_;
};

fem::Vec3 vec3(Reader& r, const std::string& key) {
  const auto v = r.require<std::vector<double>>(key);
  if (v.size() != 3) r.fail("expected 3 numbers", key);
  return {v[0], v[1], v[2]};
}

std::array<std::optional<double>, 3> bounds3(Reader& r, const std::string& key) {
  std::array<std::optional<double>, 3> out;
  if (!r.has(key)) return out;
  const json& arr = r.raw(key);
  if (!arr.is_array() || arr.size() != 3) r.fail("expected 3 entries (number or null)", key);
  for (int i = 0; i < 3; ++i) {
    if (arr[i].is_null()) continue;
    if (!arr[i].is_number()) r.fail("expected number or null", key);
    out[i] = arr[i].get<double>();
  }
  return out;
}

fem::Region region(Reader r) {
  fem::Region reg;
  reg.lower = bounds3(r, "lower");
  reg.upper = bounds3(r, "upper");
  r.finish();
  return reg;
}

int direction(Reader& r) {
  const auto d = r.get<std::string>("direction", "z");
  if (d == "x") return 0;
  if (d == "y") return 1;
  if (d == "z") return 2;
  r.fail("direction must be x, y or z", "direction");
}

sim::DofSelector selector(Reader r, bool with_amplitude) {
  sim::DofSelector s;
  if (r.has("point")) s.point = vec3(r, "point");
  s.dof = r.optional<int>("dof");
  if (s.point.has_value() == s.dof.has_value()) r.fail("give exactly one of point or dof");
  s.direction = direction(r);
  if (with_amplitude) s.amplitude = r.get<double>("amplitude", 1.0);
  r.finish();
  return s;
}

sim::ModelSpec parse_model(Reader r) {
  sim::ModelSpec m;
  for (auto& p : r.children("panels")) {
    fem::PanelSpec panel;
    panel.origin = vec3(p, "origin");
    panel.extents = vec3(p, "extents");
    const auto div = p.require<std::vector<int>>("divisions");
    if (div.size() != 3) p.fail("expected 3 integers", "divisions");
    panel.divisions = {div[0], div[1], div[2]};
    p.finish();
    m.geometry.panels.push_back(panel);
  }
  m.geometry.merge_tolerance = r.get<double>("merge_tolerance", 1e-9);
  if (r.has("fixed_nodes"))
    for (auto& f : r.children("fixed_nodes")) m.geometry.fixed_nodes.push_back(region(f));
  for (auto& s : r.children("segment_regions")) m.geometry.segment_regions.push_back(region(s));
  m.geometry.free_free = r.get<bool>("free_free", false);

  if (r.has("material")) {
    auto mat = r.child("material");
    m.material.density = mat.get<double>("density", m.material.density);
    m.material.youngs_modulus = mat.get<double>("youngs_modulus", m.material.youngs_modulus);
    m.material.poisson_ratio = mat.get<double>("poisson_ratio", m.material.poisson_ratio);
    m.material.mass_damping = mat.get<double>("mass_damping", m.material.mass_damping);
    m.material.stiffness_damping = mat.get<double>("stiffness_damping", m.material.stiffness_damping);
    mat.finish();
  }
  for (auto& f : r.children("forces")) m.forces.push_back(selector(f, true));
  for (auto& o : r.children("outputs")) m.outputs.push_back(selector(o, false));
  if (r.has("frequency")) {
    auto f = r.child("frequency");
    m.freq_start_hz = f.get<double>("start_hz", m.freq_start_hz);
    m.freq_stop_hz = f.get<double>("stop_hz", m.freq_stop_hz);
    m.freq_count = f.get<int>("count", m.freq_count);
    f.finish();
  }
  m.mode_count = r.get<int>("modes", m.mode_count);
  if (m.mode_count < 1) r.fail("must be at least 1", "modes");
  r.finish();
  return m;
}

std::pair<double, double> pair_of(Reader& r, const std::string& key, std::pair<double, double> fallback) {
  if (!r.has(key)) return fallback;
  const auto v = r.require<std::vector<double>>(key);
  if (v.size() != 2 || !(v[0] <= v[1])) r.fail("expected [lower, upper]", key);
  return {v[0], v[1]};
}

json region_json(const fem::Region& reg) {
  auto side = [](const std::array<std::optional<double>, 3>& b) {
    json a = json::array();
    for (const auto& v : b) a.push_back(v ? json(*v) : json(nullptr));
    return a;
  };
  return {{"lower", side(reg.lower)}, {"upper", side(reg.upper)}};
}

json selector_json(const sim::DofSelector& s, bool with_amplitude) {
  json j;
  if (s.point) j["point"] = {(*s.point)[0], (*s.point)[1], (*s.point)[2]};
  if (s.dof) j["dof"] = *s.dof;
  j["direction"] = std::string(1, "xyz"[s.direction]);
  if (with_amplitude) j["amplitude"] = s.amplitude;
  return j;
}
}  // namespace

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

PipelineConfig parse_config(const std::string& text, const std::string& source,
                            std::optional<std::uint64_t> seed_override) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto upto = std::min<std::size_t>(e.byte, text.size());
    const int line = 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(upto), '\n'));
    throw ConfigError(kModule, source + ": line " + std::to_string(line) + ": invalid JSON (" + e.what() + ")");
  }
  Reader r(root, {}, text, source);

  PipelineConfig c;
  c.seed = r.get<std::uint64_t>("seed", 0);
  if (seed_override) c.seed = *seed_override;
  if (!r.has("model")) r.fail("missing required section", "model");
  c.model = parse_model(r.child("model"));

  if (r.has("reduction")) {
    auto red = r.child("reduction");
    c.reduction.master_count = red.optional<int>("master_count");
    c.reduction.explicit_masters = red.get<std::vector<int>>("masters", {});
    c.reduction.all_masters = red.get<bool>("all_masters", false);
    red.finish();
  }

  c.sampling = sampling::SamplingSpec::isotropic(fem::kParameterCount, 0.10, 1000, mix_seed(c.seed, 1));
  if (r.has("sampling")) {
    auto s = r.child("sampling");
    c.sampling.count = s.get<int>("count", c.sampling.count);
    c.sampling.stds.setConstant(s.get<double>("std", 0.10));
    c.sampling.seed = s.get<std::uint64_t>("seed", c.sampling.seed);
    s.finish();
  }

  c.split.seed = mix_seed(c.seed, 2);
  if (r.has("split")) {
    auto s = r.child("split");
    c.split.lf_train = s.get<int>("lf_train", c.split.lf_train);
    c.split.hf_train = s.get<int>("hf_train", c.split.hf_train);
    c.split.seed = s.get<std::uint64_t>("seed", c.split.seed);
    s.finish();
  }

  const int width = static_cast<int>(c.model.outputs.size()) * c.model.freq_count;
  auto& net = c.mfdf.net;
  net.input_dim = fem::kParameterCount;
  net.lf_output_dim = net.hf_output_dim = width;
  auto& plan = c.mfdf.plan;
  plan.seed = mix_seed(c.seed, 3);
  if (r.has("mfdf_cnn")) {
    auto s = r.child("mfdf_cnn");
    net.stage1_widths = s.get<std::vector<int>>("stage1_widths", net.stage1_widths);
    net.linear_widths = s.get<std::vector<int>>("linear_widths", net.linear_widths);
    net.nonlinear_widths = s.get<std::vector<int>>("nonlinear_widths", net.nonlinear_widths);
    net.alpha = s.get<double>("alpha", net.alpha);
    plan.gamma = s.get<double>("gamma", plan.gamma);
    plan.epochs = s.get<int>("epochs", plan.epochs);
    plan.batch_size = s.get<int>("batch_size", plan.batch_size);
    plan.seed = s.get<std::uint64_t>("seed", plan.seed);
    plan.standardize = s.get<bool>("standardize", plan.standardize);
    const auto form = s.get<std::string>("loss_form", "separable");
    if (form == "separable") plan.loss_form = mfdf::LossForm::Separable;
    else if (form == "literal") plan.loss_form = mfdf::LossForm::LiteralSquaredSum;
    else s.fail("expected \"separable\" or \"literal\"", "loss_form");
    if (s.has("adam")) {
      auto a = s.child("adam");
      plan.adam.learning_rate = a.get<double>("learning_rate", plan.adam.learning_rate);
      plan.adam.beta1 = a.get<double>("beta1", plan.adam.beta1);
      plan.adam.beta2 = a.get<double>("beta2", plan.adam.beta2);
      plan.adam.epsilon = a.get<double>("epsilon", plan.adam.epsilon);
      a.finish();
    }
    if (s.has("sample_weights")) {
      auto w = s.child("sample_weights");
      auto& sw = c.mfdf.weights;
      sw.real_lf = w.get<double>("real_lf", sw.real_lf);
      sw.real_hf = w.get<double>("real_hf", sw.real_hf);
      sw.pseudo_lf = w.get<double>("pseudo_lf", sw.pseudo_lf);
      sw.pseudo_hf = w.get<double>("pseudo_hf", sw.pseudo_hf);
      w.finish();
    }
    s.finish();
  }

  auto& gpc = c.mlmrgp;
  gpc.pso.seed = mix_seed(c.seed, 4);
  if (r.has("mlmrgp")) {
    auto s = r.child("mlmrgp");
    const auto grouping = s.get<std::string>("lengthscale_grouping", "per_dimension");
    if (grouping == "per_dimension") gpc.grouping = gp::Grouping::PerDimension;
    else if (grouping == "segment_tied") gpc.grouping = gp::Grouping::SegmentTied;
    else s.fail("expected \"per_dimension\" or \"segment_tied\"", "lengthscale_grouping");
    gpc.jitter = s.get<double>("jitter", gpc.jitter);
    gpc.scale_data = s.get<bool>("scale_data", gpc.scale_data);
    const auto rb = pair_of(s, "roughness_bounds", {1e-4, 1e3});
    if (!(rb.first > 0.0)) s.fail("roughness bounds must be positive", "roughness_bounds");
    gpc.roughness_bounds.log10_lower = std::log10(rb.first);
    gpc.roughness_bounds.log10_upper = std::log10(rb.second);
    std::tie(gpc.rho_lower, gpc.rho_upper) = pair_of(s, "rho_bounds", {gpc.rho_lower, gpc.rho_upper});
    if (s.has("pso")) {
      auto p = s.child("pso");
      gpc.pso.particles = p.get<int>("particles", gpc.pso.particles);
      gpc.pso.iterations = p.get<int>("iterations", gpc.pso.iterations);
      gpc.pso.inertia = p.get<double>("inertia", gpc.pso.inertia);
      gpc.pso.cognitive = p.get<double>("cognitive", gpc.pso.cognitive);
      gpc.pso.social = p.get<double>("social", gpc.pso.social);
      gpc.pso.seed = p.get<std::uint64_t>("seed", gpc.pso.seed);
      p.finish();
    }
    s.finish();
  }

  c.eval.seed = mix_seed(c.seed, 5);
  if (r.has("eval")) {
    auto s = r.child("eval");
    c.eval.robustness_runs = s.get<int>("robustness_runs", c.eval.robustness_runs);
    c.eval.hf_fractions = s.get<std::vector<double>>("hf_fractions", c.eval.hf_fractions);
    c.eval.alpha_grid = s.get<std::vector<double>>("alpha_grid", c.eval.alpha_grid);
    c.eval.curve_samples = s.get<int>("curve_samples", c.eval.curve_samples);
    c.eval.histogram_bins = s.get<int>("histogram_bins", c.eval.histogram_bins);
    c.eval.seed = s.get<std::uint64_t>("seed", c.eval.seed);
    s.finish();
  }

  if (r.has("io")) {
    auto s = r.child("io");
    c.out_dir = s.get<std::string>("out_dir", c.out_dir);
    s.finish();
  }
  r.finish();

  try {
    c.model.geometry.validate();
    c.model.material.validate();
    c.sampling.validate();
    net.validate();
    plan.validate();
    gpc.validate();
  } catch (const Error& e) {
    throw ConfigError(kModule, source + ": " + e.what());
  }
  if (c.model.freq_count < 1) throw ConfigError(kModule, source + ": /model/frequency/count must be positive");
  if (c.split.lf_train > c.sampling.count || c.split.hf_train > c.split.lf_train || c.split.hf_train < 1)
    throw ConfigError(kModule, source + ": /split sizes must satisfy 1 <= hf_train <= lf_train <= sampling count");
  if (c.eval.robustness_runs < 1) throw ConfigError(kModule, source + ": /eval/robustness_runs must be positive");
  for (double a : c.eval.alpha_grid)
    if (!(a >= 0.0 && a <= 1.0)) throw ConfigError(kModule, source + ": /eval/alpha_grid entries must lie in [0, 1]");
  for (double f : c.eval.hf_fractions)
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError(kModule, source + ": /eval/hf_fractions entries must lie in (0, 1]");
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override) {
  std::ifstream in(path);
  if (!in) throw ConfigError(kModule, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string(), seed_override);
}

json PipelineConfig::effective() const {
  json model;
  json panels = json::array();
  for (const auto& p : this->model.geometry.panels)
    panels.push_back({{"origin", {p.origin[0], p.origin[1], p.origin[2]}},
                      {"extents", {p.extents[0], p.extents[1], p.extents[2]}},
                      {"divisions", {p.divisions[0], p.divisions[1], p.divisions[2]}}});
  model["panels"] = panels;
  model["merge_tolerance"] = this->model.geometry.merge_tolerance;
  model["fixed_nodes"] = json::array();
  for (const auto& f : this->model.geometry.fixed_nodes) model["fixed_nodes"].push_back(region_json(f));
  model["segment_regions"] = json::array();
  for (const auto& s : this->model.geometry.segment_regions) model["segment_regions"].push_back(region_json(s));
  model["free_free"] = this->model.geometry.free_free;
  const auto& mat = this->model.material;
  model["material"] = {{"density", mat.density},
                       {"youngs_modulus", mat.youngs_modulus},
                       {"poisson_ratio", mat.poisson_ratio},
                       {"mass_damping", mat.mass_damping},
                       {"stiffness_damping", mat.stiffness_damping}};
  model["forces"] = json::array();
  for (const auto& f : this->model.forces) model["forces"].push_back(selector_json(f, true));
  model["outputs"] = json::array();
  for (const auto& o : this->model.outputs) model["outputs"].push_back(selector_json(o, false));
  model["frequency"] = {{"start_hz", this->model.freq_start_hz},
                        {"stop_hz", this->model.freq_stop_hz},
                        {"count", this->model.freq_count}};
  model["modes"] = this->model.mode_count;

  json reduction = {{"masters", this->reduction.explicit_masters}, {"all_masters", this->reduction.all_masters}};
  reduction["master_count"] = this->reduction.master_count ? json(*this->reduction.master_count) : json(nullptr);

  const auto& net = mfdf.net;
  const auto& plan = mfdf.plan;
  const auto& w = mfdf.weights;
  json cnn = {{"stage1_widths", net.stage1_widths},
              {"linear_widths", net.linear_widths},
              {"nonlinear_widths", net.nonlinear_widths},
              {"alpha", net.alpha},
              {"gamma", plan.gamma},
              {"epochs", plan.epochs},
              {"batch_size", plan.batch_size},
              {"seed", plan.seed},
              {"standardize", plan.standardize},
              {"loss_form", plan.loss_form == mfdf::LossForm::Separable ? "separable" : "literal"},
              {"adam",
               {{"learning_rate", plan.adam.learning_rate},
                {"beta1", plan.adam.beta1},
                {"beta2", plan.adam.beta2},
                {"epsilon", plan.adam.epsilon}}},
              {"sample_weights",
               {{"real_lf", w.real_lf}, {"real_hf", w.real_hf}, {"pseudo_lf", w.pseudo_lf}, {"pseudo_hf", w.pseudo_hf}}}};

  json gpj = {{"lengthscale_grouping", mlmrgp.grouping == gp::Grouping::PerDimension ? "per_dimension" : "segment_tied"},
              {"jitter", mlmrgp.jitter},
              {"scale_data", mlmrgp.scale_data},
              {"roughness_bounds",
               {std::pow(10.0, mlmrgp.roughness_bounds.log10_lower), std::pow(10.0, mlmrgp.roughness_bounds.log10_upper)}},
              {"rho_bounds", {mlmrgp.rho_lower, mlmrgp.rho_upper}},
              {"pso",
               {{"particles", mlmrgp.pso.particles},
                {"iterations", mlmrgp.pso.iterations},
                {"inertia", mlmrgp.pso.inertia},
                {"cognitive", mlmrgp.pso.cognitive},
                {"social", mlmrgp.pso.social},
                {"seed", mlmrgp.pso.seed}}}};

  return {{"seed", seed},
          {"model", model},
          {"reduction", reduction},
          {"sampling", {{"count", sampling.count}, {"std", sampling.stds[0]}, {"seed", sampling.seed}}},
          {"split", {{"lf_train", split.lf_train}, {"hf_train", split.hf_train}, {"seed", split.seed}}},
          {"mfdf_cnn", cnn},
          {"mlmrgp", gpj},
          {"eval",
           {{"robustness_runs", eval.robustness_runs},
            {"hf_fractions", eval.hf_fractions},
            {"alpha_grid", eval.alpha_grid},
            {"curve_samples", eval.curve_samples},
            {"histogram_bins", eval.histogram_bins},
            {"seed", eval.seed}}},
          {"io", {{"out_dir", out_dir}}}};
}

std::string PipelineConfig::hash() const {
  json e = effective();
  e.erase("io");
  return fnv1a_hex(e.dump());
}

std::string PipelineConfig::model_hash() const {
  const json e = effective();
  return fnv1a_hex(json{{"model", e["model"]}, {"reduction", e["reduction"]}, {"sampling", e["sampling"]}}.dump());
}

}  // namespace vibefuse::config
