#include "faultguard/attacks.hpp"
#include "faultguard/dataset.hpp"
#include "faultguard/harness.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace faultguard;

namespace {

py::dict row_dict(const harness::ReportRow& r) {
  py::dict d;
  d["task"] = r.task;
  d["defense"] = r.defense.key();
  d["attack"] = r.attack;
  d["epsilon"] = r.epsilon ? py::cast(*r.epsilon) : py::none();
  d["batches"] = r.batches ? py::cast(*r.batches) : py::none();
  d["metric"] = r.metric;
  d["value"] = r.value;
  d["std"] = r.std;
  d["n_seeds"] = r.n_seeds;
  return d;
}

// windows as a list of (time x feature) arrays, labels for the requested task
py::tuple split_part(const std::vector<dataset::GridWindow>& part, Task task) {
  return py::make_tuple(dataset::window_data(part), dataset::labels(part, task));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "FaultGuard core bindings";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);

  m.attr("NUM_FEATURES") = kNumFeatures;
  m.attr("WINDOW_LEN") = kDefaultWindowLen;

  m.def("combinatorial_accuracy", &harness::combinatorial_accuracy, py::arg("accuracy"), py::arg("batches"));
  m.def("false_alarm_probability", &harness::false_alarm_probability, py::arg("accuracy"), py::arg("batches"));
  m.def(
      "asr_from_predictions",
      [](const std::vector<int>& p, int n_classes) { return attacks::asr_from_predictions(p, n_classes); },
      py::arg("predictions"), py::arg("n_classes"));

  m.def(
      "project",
      [](Window v, const Window& x, double eps) {
        attacks::project(v, x, eps, attacks::DataBox{});
        return v;
      },
      py::arg("candidate"), py::arg("original"), py::arg("epsilon"));

  m.def(
      "synth_dataset",
      [](int n_classes, int n_windows, double separation, std::uint64_t seed, const std::string& task) {
        const auto s = dataset::synth_dataset(n_classes, n_windows, separation, seed);
        const Task t = parse_task(task);
        py::dict d;
        d["train"] = split_part(s.train, t);
        d["validation"] = split_part(s.validation, t);
        d["test"] = split_part(s.test, t);
        d["fingerprint"] = s.fingerprint();
        return d;
      },
      py::arg("n_classes") = 4, py::arg("n_windows") = 400, py::arg("separation") = 3.0, py::arg("seed") = 0,
      py::arg("task") = "zone");

  py::class_<harness::ExperimentConfig>(m, "ExperimentConfig")
      .def(py::init<>())
      .def_static("parse", &harness::ExperimentConfig::parse, py::arg("text"))
      .def_static("load", [](const std::string& p) { return harness::ExperimentConfig::load(p); }, py::arg("path"))
      .def("validate", &harness::ExperimentConfig::validate)
      .def("to_text", &harness::ExperimentConfig::to_text)
      .def("hash", &harness::ExperimentConfig::hash)
      .def("seeds", &harness::ExperimentConfig::seeds)
      .def_readwrite("seed", &harness::ExperimentConfig::seed)
      .def_readwrite("n_seeds", &harness::ExperimentConfig::n_seeds)
      .def_readwrite("out_dir", &harness::ExperimentConfig::out_dir);

  m.def(
      "run_pipeline",
      [](const harness::ExperimentConfig& config) {
        harness::ExperimentReport rep;
        {
          py::gil_scoped_release release;
          rep = harness::run_full_pipeline(config);
        }
        py::list rows;
        for (const auto& r : rep.rows)
          if (!r.is_timing()) rows.append(row_dict(r));
        return py::make_tuple(rows, harness::to_csv(rep.rows, false));
      },
      py::arg("config"));
}
