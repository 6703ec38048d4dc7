#include "vibefuse/config.hpp"
#include "vibefuse/errors.hpp"
#include "vibefuse/pipeline.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

using namespace vibefuse;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigs = fs::path(VIBEFUSE_SOURCE_DIR) / "configs";

const char* kMinimal = R"({
  "seed": 7,
  "model": {
    "panels": [{"origin": [0, 0, 0], "extents": [0.2, 0.1, 0.01], "divisions": [6, 4, 1]}],
    "fixed_nodes": [{"upper": [1e-9, null, null]}],
    "segment_regions": [
      {"upper": [0.1, 0.05, null]},
      {"lower": [null, 0.05, null], "upper": [0.1, null, null]},
      {"lower": [0.1, null, null], "upper": [0.15, 0.05, null]},
      {"lower": [0.1, 0.05, null], "upper": [0.15, null, null]},
      {"lower": [0.15, null, null], "upper": [null, 0.05, null]},
      {"lower": [0.15, 0.05, null]}
    ],
    "forces": [{"point": [0.2, 0.0, 0.01]}],
    "outputs": [{"point": [0.2, 0.05, 0.01], "direction": "z"}]
  },
  "sampling": {"count": 50},
  "split": {"lf_train": 40, "hf_train": 20}
})";

std::string replace_once(std::string text, const std::string& from, const std::string& to) {
  const auto pos = text.find(from);
  REQUIRE(pos != std::string::npos);
  return text.replace(pos, from.size(), to);
}

std::string error_of(const std::string& text) {
  try {
    config::parse_config(text, "test.json");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

struct CliRun {
  int status;
  std::string out, err;
};

CliRun cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  std::vector<std::string> full{"vibefuse"};
  full.insert(full.end(), args.begin(), args.end());
  const int status = pipeline::run_cli(full, out, err);
  return {status, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("minimal config takes defaults") {
  const auto c = config::parse_config(kMinimal);
  CHECK(c.seed == 7);
  CHECK(c.model.geometry.panels.size() == 1);
  CHECK(c.model.freq_count == 10);
  CHECK(c.model.freq_start_hz == 120.0);
  CHECK(c.sampling.count == 50);
  CHECK(c.sampling.stds[3] == 0.1);
  CHECK(c.split.lf_train == 40);
  CHECK(c.mfdf.net.stage1_widths == std::vector<int>{512, 512, 512});
  CHECK(c.mfdf.net.lf_output_dim == 10);
  CHECK(c.mfdf.net.alpha == 0.6);
  CHECK(c.mfdf.plan.gamma == 0.8);
  CHECK(c.mfdf.plan.epochs == 40);
  CHECK(c.mfdf.plan.batch_size == 5);
  CHECK_FALSE(c.mfdf.plan.standardize);
  CHECK(c.mlmrgp.grouping == gp::Grouping::PerDimension);
  CHECK(c.mlmrgp.pso.particles == 30);
  CHECK(c.eval.robustness_runs == 5);
  CHECK(c.eval.alpha_grid.size() == 11);
}

TEST_CASE("section seeds derive from the global seed") {
  const auto a = config::parse_config(kMinimal);
  const auto b = config::parse_config(kMinimal, "x", 8);
  CHECK(b.seed == 8);
  CHECK(a.sampling.seed != b.sampling.seed);
  CHECK(a.split.seed != b.split.seed);
  CHECK(a.mfdf.plan.seed != b.mfdf.plan.seed);
  CHECK(a.mlmrgp.pso.seed != b.mlmrgp.pso.seed);
  std::set<std::uint64_t> seeds{a.sampling.seed, a.split.seed, a.mfdf.plan.seed, a.mlmrgp.pso.seed, a.eval.seed};
  CHECK(seeds.size() == 5);
  CHECK(config::parse_config(kMinimal).hash() == a.hash());
  CHECK(b.hash() != a.hash());
}

TEST_CASE("hashes ignore io and separate the dataset inputs") {
  const auto base = config::parse_config(kMinimal);
  const auto with_io = config::parse_config(replace_once(kMinimal, "\"seed\": 7,", "\"seed\": 7, \"io\": {\"out_dir\": \"elsewhere\"},"));
  CHECK(with_io.out_dir == "elsewhere");
  CHECK(with_io.hash() == base.hash());

  const auto other_net = config::parse_config(
      replace_once(kMinimal, "\"sampling\"", "\"mfdf_cnn\": {\"alpha\": 0.3}, \"sampling\""));
  CHECK(other_net.hash() != base.hash());
  CHECK(other_net.model_hash() == base.model_hash());

  const auto other_count = config::parse_config(replace_once(kMinimal, "\"count\": 50", "\"count\": 60"));
  CHECK(other_count.model_hash() != base.model_hash());
  CHECK(config::fnv1a_hex("") == "cbf29ce484222325");
  CHECK(config::fnv1a_hex("a") == "af63dc4c8601ec8c");
}

TEST_CASE("unknown keys name their path and line") {
  const auto text = replace_once(kMinimal, "\"forces\"", "\"bogus\": 1,\n    \"forces\"");
  const auto msg = error_of(text);
  CHECK(msg.find("/model/bogus") != std::string::npos);
  CHECK(msg.find("line 14") != std::string::npos);
  CHECK(msg.find("unknown key") != std::string::npos);
  CHECK(msg.find("test.json") != std::string::npos);

  const auto nested = error_of(replace_once(kMinimal, "\"count\": 50", "\"count\": 50, \"cuont\": 3"));
  CHECK(nested.find("/sampling/cuont") != std::string::npos);
  CHECK(nested.find("line 17") != std::string::npos);

  const auto top = error_of(replace_once(kMinimal, "\"seed\": 7,", "\"seed\": 7, \"extra\": true,"));
  CHECK(top.find("/extra") != std::string::npos);
}

TEST_CASE("malformed configs are rejected") {
  const auto syntax = error_of(replace_once(kMinimal, "\"sampling\": {\"count\": 50},", "\"sampling\": {\"count\": 50,"));
  CHECK(syntax.find("invalid JSON") != std::string::npos);
  CHECK(syntax.find("line ") != std::string::npos);

  CHECK(error_of(R"({"seed": 1})").find("/model") != std::string::npos);
  const auto type = error_of(replace_once(kMinimal, "\"count\": 50", "\"count\": \"many\""));
  CHECK(type.find("/sampling/count") != std::string::npos);
  CHECK(type.find("wrong type") != std::string::npos);

  CHECK_FALSE(error_of(replace_once(kMinimal, "\"direction\": \"z\"", "\"direction\": \"w\"")).empty());
  CHECK_FALSE(error_of(replace_once(kMinimal, "\"hf_train\": 20", "\"hf_train\": 41")).empty());
  CHECK_FALSE(error_of(replace_once(kMinimal, "\"lf_train\": 40", "\"lf_train\": 51")).empty());
  CHECK_FALSE(error_of(replace_once(kMinimal, "\"sampling\"", "\"eval\": {\"alpha_grid\": [1.5]}, \"sampling\"")).empty());
  CHECK_FALSE(error_of(replace_once(kMinimal, "\"sampling\"", "\"mfdf_cnn\": {\"loss_form\": \"l1\"}, \"sampling\"")).empty());
  CHECK_FALSE(error_of(replace_once(kMinimal, "\"sampling\"", "\"mlmrgp\": {\"lengthscale_grouping\": \"x\"}, \"sampling\"")).empty());
  CHECK_FALSE(error_of(replace_once(kMinimal, "\"sampling\"", "\"mlmrgp\": {\"roughness_bounds\": [0, 1]}, \"sampling\"")).empty());
  CHECK_FALSE(error_of(replace_once(kMinimal, "[0.2, 0.0, 0.01]}", "[0.2, 0.0, 0.01], \"dof\": 3}")).empty());
  CHECK_THROWS_AS(config::load_config("/nonexistent/vibefuse.json"), ConfigError);
}

TEST_CASE("shipped presets parse") {
  for (const char* name : {"benchmark.json", "ci.json", "one_element.json"}) {
    CAPTURE(name);
    const auto c = config::load_config(kConfigs / name);
    CHECK(c.model.geometry.segment_regions.size() == 6);
  }
  const auto bench = config::load_config(kConfigs / "benchmark.json");
  CHECK(bench.sampling.count == 1000);
  CHECK(bench.split.lf_train == 400);
  CHECK(bench.split.hf_train == 40);
  CHECK(bench.model.freq_start_hz == 120.0);
  CHECK(bench.model.freq_stop_hz == 170.0);
}

TEST_CASE("output directory precedence") {
  config::PipelineConfig c;
  c.out_dir = "from_config";
  ::unsetenv("VIBEFUSE_OUT");
  CHECK(pipeline::resolve_out_dir(std::nullopt, c) == "from_config");
  ::setenv("VIBEFUSE_OUT", "from_env", 1);
  CHECK(pipeline::resolve_out_dir(std::nullopt, c) == "from_env");
  CHECK(pipeline::resolve_out_dir(std::string("from_flag"), c) == "from_flag");
  ::unsetenv("VIBEFUSE_OUT");
}

TEST_CASE("mesh on the one-element preset") {
  const auto dir = fresh_dir("vibefuse_cli_mesh");
  const auto r = cli({"--config", (kConfigs / "one_element.json").string(), "--out", dir.string(), "mesh"});
  CHECK(r.status == 0);
  CHECK(r.out.find("N = 24\n") != std::string::npos);
  CHECK(fs::exists(dir / "modes.csv"));
  CHECK(slurp(dir / "modes_guyan.csv").rfind("mode,full_hz,guyan_hz,rel_error\n", 0) == 0);
  const auto manifest = slurp(dir / "manifest.json");
  CHECK(manifest.find(config::load_config(kConfigs / "one_element.json").hash()) != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("command-line errors") {
  CHECK(cli({}).status != 0);
  CHECK(cli({"mesh"}).status != 0);
  CHECK(cli({"--config", (kConfigs / "ci.json").string(), "frobnicate"}).status != 0);

  const auto missing = cli({"--config", "/nonexistent/vibefuse.json", "mesh"});
  CHECK(missing.status == 1);
  CHECK(missing.err.find("error [cli]") != std::string::npos);

  const auto dir = fresh_dir("vibefuse_cli_errors");
  const auto no_data = cli({"--config", (kConfigs / "ci.json").string(), "--out", dir.string(), "split"});
  CHECK(no_data.status == 1);
  CHECK(no_data.err.find("error [dataset-io]") != std::string::npos);

  const auto bad_emulator =
      cli({"--config", (kConfigs / "ci.json").string(), "--out", dir.string(), "predict", "kriging"});
  CHECK(bad_emulator.status != 0);
  fs::remove_all(dir);
}

TEST_CASE("end-to-end run on the CI preset is reproducible") {
  const auto a = fresh_dir("vibefuse_cli_all_a");
  const auto b = fresh_dir("vibefuse_cli_all_b");
  const auto cfg = (kConfigs / "ci.json").string();
  REQUIRE(cli({"--config", cfg, "--out", a.string(), "-j", "1", "all"}).status == 0);
  REQUIRE(cli({"--config", cfg, "--out", b.string(), "-j", "1", "all"}).status == 0);

  const auto comparison = slurp(a / "comparison.csv");
  CHECK(std::count(comparison.begin(), comparison.end(), '\n') == 11);
  CHECK(comparison.rfind("freq_point,freq_hz,mse_mfdfcnn,mse_mlmrgp\n", 0) == 0);

  int csvs = 0;
  for (const auto& entry : fs::directory_iterator(a)) {
    if (entry.path().extension() != ".csv") continue;
    ++csvs;
    CAPTURE(entry.path().filename().string());
    CHECK(slurp(entry.path()) == slurp(b / entry.path().filename()));
  }
  CHECK(csvs >= 20);
  CHECK(slurp(a / "model_mfdfcnn.bin") == slurp(b / "model_mfdfcnn.bin"));
  CHECK(slurp(a / "model_mlmrgp.json") == slurp(b / "model_mlmrgp.json"));

  const auto predicted = cli({"--config", cfg, "--out", a.string(), "predict", "mlmrgp"});
  CHECK(predicted.status == 0);
  CHECK(fs::exists(a / "predictions_mlmrgp.csv"));
  fs::remove_all(a);
  fs::remove_all(b);
}
