#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "h2sr/checkpoint.hpp"
#include "h2sr/dataset.hpp"
#include "h2sr/errors.hpp"
#include "h2sr/eval.hpp"
#include "h2sr/manifold.hpp"
#include "h2sr/pipeline.hpp"
#include "h2sr/run_config.hpp"

namespace py = pybind11;
using namespace h2sr;

namespace {

RunConfig config_from(const std::string& json) {
  RunConfig cfg;
  if (!json.empty()) cfg.merge_json(json);
  cfg.validate();
  return cfg;
}

std::vector<py::dict> report_rows(const eval::MetricsReport& rep) {
  std::vector<py::dict> rows;
  for (const auto& r : rep.rows) {
    py::dict d;
    d["metric"] = r.metric;
    d["k"] = r.k;
    d["negatives"] = r.negatives;
    d["value"] = r.value;
    d["n_users"] = r.n_users;
    rows.push_back(std::move(d));
  }
  return rows;
}

eval::Target target_from(const std::string& name) {
  if (name == "test") return eval::Target::test;
  if (name == "validation") return eval::Target::validation;
  throw ConfigError("unknown target '" + name + "'");
}

/// A loaded interaction log with its leave-last-two split.
struct PyDataset {
  std::shared_ptr<const Dataset> data;
};

/// A trained recommender; keeps its dataset alive.
struct PyModel {
  std::shared_ptr<const Dataset> data;
  RunConfig config;
  TrainRun run;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Hierarchical hyperbolic hypergraph sequential recommender";

  py::register_exception<Error>(m, "H2srError", PyExc_RuntimeError);

  m.def("_default_config", [] { return RunConfig{}.to_json(); });
  m.def("_resolve_config", [](const std::string& json) { return config_from(json).to_json(); });
  m.def("_synthesize", [](const std::string& json) { return format_log(synthesize(config_from(json).synthetic())); });

  m.def("lift", [](const std::vector<double>& v, double c) { return manifold::Hyperboloid(v.size(), c).lift(v).coords; },
        py::arg("tangent"), py::arg("c") = 1.0, "Point on the hyperboloid for an origin tangent.");
  m.def("log_origin",
        [](const std::vector<double>& x, double c) {
          if (x.empty()) throw DimensionError("log_origin: empty point");
          return manifold::Hyperboloid(x.size() - 1, c).log_origin({x});
        },
        py::arg("point"), py::arg("c") = 1.0);
  m.def("distance",
        [](const std::vector<double>& x, const std::vector<double>& y, double c) {
          if (x.empty()) throw DimensionError("distance: empty point");
          return manifold::Hyperboloid(x.size() - 1, c).distance({x}, {y});
        },
        py::arg("x"), py::arg("y"), py::arg("c") = 1.0);
  m.def("rank_target", [](double target, const std::vector<double>& negatives) {
    return eval::rank_target(target, negatives);
  });

  py::class_<PyDataset>(m, "Dataset")
      .def_static("from_tsv",
                  [](const std::string& path, std::size_t min_interactions) {
                    return PyDataset{std::make_shared<const Dataset>(load_dataset(path, min_interactions))};
                  },
                  py::arg("path"), py::arg("min_interactions") = 5)
      .def_property_readonly("n_users", [](const PyDataset& d) { return d.data->log.n_users(); })
      .def_property_readonly("n_items", [](const PyDataset& d) { return d.data->log.n_items(); })
      .def_property_readonly("n_records", [](const PyDataset& d) { return d.data->log.size(); });

  m.def("_pretrain",
        [](const PyDataset& d, const std::string& json, const std::string& out) {
          const PretrainRun run = pretrain_items(config_from(json), *d.data);
          save_checkpoint(out, run.checkpoint);
          return run.result.epoch_loss;
        });

  py::class_<PyModel>(m, "Model")
      .def_property_readonly("loss_trace", [](const PyModel& p) { return p.run.result.loss_trace; })
      .def_property_readonly("config", [](const PyModel& p) { return p.config.to_json(); })
      .def("evaluate",
           [](const PyModel& p, const std::string& target) {
             return report_rows(p.run.model->evaluate(p.config.evaluation(), target_from(target)));
           },
           py::arg("target") = "test")
      .def("save", [](const PyModel& p, const std::string& path) { save_checkpoint(path, p.run.checkpoint); });

  m.def("_train", [](const PyDataset& d, const std::string& json, const std::string& pretrained) {
    RunConfig cfg = config_from(json);
    std::optional<Tensor> table;
    if (!pretrained.empty()) {
      table = pretrained_items(load_checkpoint(pretrained, d.data->log.vocabulary_hash()), d.data->log, cfg.dim);
    }
    py::gil_scoped_release release;
    TrainRun run = train_model(cfg, *d.data, std::move(table));
    return PyModel{d.data, std::move(cfg), std::move(run)};
  });
}
