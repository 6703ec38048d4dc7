#include "vibefuse/config.hpp"
#include "vibefuse/dataset.hpp"
#include "vibefuse/errors.hpp"
#include "vibefuse/gp.hpp"
#include "vibefuse/mfdf.hpp"
#include "vibefuse/pipeline.hpp"
#include "vibefuse/sampling.hpp"
#include "vibefuse/simulation.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <fstream>
#include <sstream>

namespace py = pybind11;
using namespace vibefuse;

namespace {

struct Config {
  config::PipelineConfig cfg;
};

struct Model {
  explicit Model(const Config& c) : model(c.cfg.model, c.cfg.reduction) {}
  sim::StructuralModel model;
};

gp::MlmrgpModel load_gp(const std::filesystem::path& path) {
  std::ifstream in(path);
  return gp::mlmrgp_from_json(nlohmann::json::parse(in));
}

}  // namespace

PYBIND11_MODULE(_vibefuse, m) {
  m.doc() = "Multi-fidelity vibration emulators for segmented plate structures";

  py::class_<Config>(m, "Config")
      .def_static(
          "load", [](const std::filesystem::path& p) { return Config{config::load_config(p)}; }, py::arg("path"))
      .def_static(
          "parse", [](const std::string& text) { return Config{config::parse_config(text)}; }, py::arg("text"))
      .def_property_readonly("hash", [](const Config& c) { return c.cfg.hash(); })
      .def_property_readonly("model_hash", [](const Config& c) { return c.cfg.model_hash(); })
      .def_property_readonly("seed", [](const Config& c) { return c.cfg.seed; })
      .def("effective_json", [](const Config& c) { return c.cfg.effective().dump(); });

  py::class_<Model>(m, "StructuralModel")
      .def(py::init<const Config&>(), py::arg("config"))
      .def_property_readonly("dof_count", [](const Model& s) { return s.model.dof_count(); })
      .def_property_readonly("master_count", [](const Model& s) { return s.model.partition().master_count(); })
      .def_property_readonly("parameter_count", [](const Model& s) { return s.model.parameter_count(); })
      .def_property_readonly("response_length", [](const Model& s) { return s.model.response_length(); })
      .def("high_fidelity", [](const Model& s, const Eigen::VectorXd& theta) { return s.model.high_fidelity(theta); })
      .def("low_fidelity", [](const Model& s, const Eigen::VectorXd& theta) { return s.model.low_fidelity(theta); })
      .def(
          "natural_frequencies",
          [](const Model& s, int count) {
            const auto c = s.model.compare_modes(count);
            return py::make_tuple(c.full_hz, c.guyan_hz);
          },
          py::arg("count") = 5);

  m.def("normal_quantile", &sampling::normal_quantile, py::arg("p"));
  m.def(
      "lhs_normal",
      [](int dimension, double std, int count, std::uint64_t seed) {
        return sampling::lhs_normal_samples(sampling::SamplingSpec::isotropic(dimension, std, count, seed));
      },
      py::arg("dimension"), py::arg("std"), py::arg("count"), py::arg("seed"));

  m.def(
      "load_dataset",
      [](const std::filesystem::path& stem) {
        auto ds = data::load_dataset(stem);
        return py::make_tuple(ds.inputs, ds.responses, ds.frequencies_hz);
      },
      py::arg("stem"));

  m.def(
      "predict_mfdfcnn",
      [](const std::filesystem::path& stem, const Eigen::MatrixXd& theta) {
        return mfdf::predict_high_fidelity(mfdf::load_composite(stem), theta);
      },
      py::arg("stem"), py::arg("theta"));
  m.def(
      "predict_mlmrgp",
      [](const std::filesystem::path& path, const Eigen::MatrixXd& theta) {
        const auto p = gp::predict_two_level(load_gp(path), theta);
        return py::make_tuple(p.mean, p.variance);
      },
      py::arg("path"), py::arg("theta"));

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        std::vector<std::string> argv{"vibefuse"};
        argv.insert(argv.end(), args.begin(), args.end());
        int code;
        {
          py::gil_scoped_release release;
          code = pipeline::run_cli(argv, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));

  py::register_exception<Error>(m, "VibefuseError");
}
