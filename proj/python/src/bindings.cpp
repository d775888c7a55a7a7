// SPDX-License-Identifier: Apache-2.0
#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "naepro/error.hpp"
#include "naepro/evalgen.hpp"
#include "naepro/fragments.hpp"
#include "naepro/io.hpp"
#include "naepro/model.hpp"
#include "naepro/synthetic.hpp"
#include "naepro/training.hpp"

namespace py = pybind11;
using namespace naepro;

namespace {

py::array_t<double> to_numpy(const Tensor& t) {
  py::array_t<double> a({t.rows(), t.cols()});
  std::copy(t.values().begin(), t.values().end(), a.mutable_data());
  return a;
}

py::dict epoch_dict(const training::EpochLog& e) {
  py::dict d;
  d["epoch"] = e.epoch;
  d["train_loss"] = e.train_loss;
  d["val_loss"] = e.val_loss ? py::cast(*e.val_loss) : py::none();
  d["anneal_fraction"] = e.anneal_fraction;
  d["steps"] = e.steps;
  d["wall_seconds"] = e.wall_seconds;
  return d;
}

py::object json_loads(const std::string& text) { return py::module_::import("json").attr("loads")(text); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "NAEPro: sequence and structure co-design with fragment-anchored equivariant layers";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());

  py::class_<ProteinRecord>(m, "Record")
      .def(py::init([](std::string id, std::string sequence, geometry::Coordinates coords,
                       std::vector<std::size_t> fragments) {
             ProteinRecord r{std::move(id), std::move(sequence), std::move(coords), std::move(fragments)};
             validate_record(r);
             return r;
           }),
           py::arg("id"), py::arg("sequence"), py::arg("coords"), py::arg("fragments") = std::vector<std::size_t>{})
      .def_readwrite("id", &ProteinRecord::id)
      .def_readwrite("sequence", &ProteinRecord::sequence)
      .def_readwrite("coords", &ProteinRecord::coords)
      .def_readwrite("fragments", &ProteinRecord::fragments, "0-based fragment positions")
      .def("__len__", &ProteinRecord::size)
      .def("__repr__", [](const ProteinRecord& r) {
        return "<Record " + r.id + " N=" + std::to_string(r.size()) + " fragments=" +
               std::to_string(r.fragments.size()) + ">";
      });

  m.def("load_records", &io::load_records, py::arg("path"));
  m.def("parse_records", [](const std::string& text) { return io::parse_records(text); }, py::arg("text"));
  m.def("save_records", [](const std::string& path, const std::vector<ProteinRecord>& r) { io::save_records(path, r); },
        py::arg("path"), py::arg("records"));
  m.def("synthetic_dataset", &synthetic_dataset, py::arg("count"), py::arg("n"),
        py::arg("num_fragments"), py::arg("seed"), py::arg("prefix") = "synthetic");

  m.def(
      "mine_fragments",
      [](const std::string& fasta_path, double tau) {
        const auto mask = fragments::mine_fragments(io::load_aligned_fasta(fasta_path), tau);
        py::dict out;
        for (const auto& s : mask.sequences) out[py::str(s.id)] = s.indices;
        return out;
      },
      py::arg("fasta_path"), py::arg("tau"), "Conserved positions per sequence (0-based).");
  m.def(
      "column_identity",
      [](const std::vector<std::string>& rows, std::size_t col) {
        fragments::Alignment a;
        for (std::size_t i = 0; i < rows.size(); ++i) a.rows.push_back({"s" + std::to_string(i + 1), rows[i]});
        a.validate();
        return fragments::column_identity(a, col);
      },
      py::arg("rows"), py::arg("column"));

  py::class_<model::ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("layers", &model::ModelConfig::layers)
      .def_readwrite("d", &model::ModelConfig::d)
      .def_readwrite("heads", &model::ModelConfig::heads)
      .def_readwrite("k", &model::ModelConfig::k)
      .def_readwrite("lambda_half", &model::ModelConfig::lambda_half)
      .def_readwrite("freeze_fragments", &model::ModelConfig::freeze_fragments)
      .def_readwrite("seed", &model::ModelConfig::seed)
      .def_property(
          "variant", [](const model::ModelConfig& c) { return std::string(layers::to_string(c.variant)); },
          [](model::ModelConfig& c, const std::string& v) { c.variant = layers::parse_variant(v); })
      .def("validate", &model::ModelConfig::validate);

  py::class_<model::Model>(m, "Model")
      .def_static("create", &model::Model::create, py::arg("config"))
      .def_static("load", &model::load_checkpoint, py::arg("path"))
      .def_static("from_json", [](const std::string& text) { return model::parse_checkpoint(text); })
      .def("save", [](model::Model& self, const std::string& path) { model::save_checkpoint(self, path); })
      .def("to_json", [](model::Model& self) { return model::serialize_checkpoint(self); })
      .def_readonly("config", &model::Model::config)
      .def("parameter_count", &model::Model::parameter_count)
      .def(
          "predict",
          [](model::Model& self, const ProteinRecord& r, std::optional<geometry::Coordinates> x0) {
            const auto p = x0 ? model::predict(self, r, *x0) : model::predict(self, r);
            py::dict d;
            d["sequence"] = p.sequence;
            d["coords"] = p.coords;
            d["probabilities"] = to_numpy(p.probabilities);
            d["logits"] = to_numpy(p.logits);
            return d;
          },
          py::arg("record"), py::arg("x0") = py::none())
      .def("loss", [](model::Model& self, const ProteinRecord& r) {
        const auto visible = r.fragments;
        return model::loss(model::predict(self, r), r, visible, self.config.lambda_half);
      });

  m.def("initial_coordinates",
        [](const model::Model& mdl, const ProteinRecord& r) {
          return model::initial_coordinates(r, r.fragments, mdl.config.seed);
        },
        py::arg("model"), py::arg("record"));

  py::class_<training::TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("epochs", &training::TrainConfig::epochs)
      .def_readwrite("batch_size", &training::TrainConfig::batch_size)
      .def_readwrite("learning_rate", &training::TrainConfig::learning_rate)
      .def_readwrite("anneal_epochs", &training::TrainConfig::anneal_epochs)
      .def_readwrite("anneal_max_fraction", &training::TrainConfig::anneal_max_fraction)
      .def_readwrite("grad_clip_norm", &training::TrainConfig::grad_clip_norm)
      .def_readwrite("anneal_literal", &training::TrainConfig::anneal_literal)
      .def_readwrite("resample_init", &training::TrainConfig::resample_init)
      .def_readwrite("seed", &training::TrainConfig::seed)
      .def("validate", &training::TrainConfig::validate);

  m.def("anneal_fraction", &training::anneal_fraction, py::arg("epoch"), py::arg("config"));

  py::class_<training::FitResult>(m, "FitResult")
      .def_readonly("final_model", &training::FitResult::final_model)
      .def_readonly("best_model", &training::FitResult::best_model)
      .def_readonly("best_epoch", &training::FitResult::best_epoch)
      .def_readonly("best_loss", &training::FitResult::best_loss)
      .def_property_readonly("log", [](const training::FitResult& f) {
        py::list out;
        for (const auto& e : f.log) out.append(epoch_dict(e));
        return out;
      });

  m.def(
      "fit",
      [](const model::Model& mdl, const std::vector<ProteinRecord>& train,
         const std::vector<ProteinRecord>& validation, const training::TrainConfig& config,
         std::optional<std::function<void(py::dict)>> on_epoch) {
        training::EpochCallback cb;
        if (on_epoch) cb = [&](const training::EpochLog& e) { (*on_epoch)(epoch_dict(e)); };
        return training::fit(mdl, train, validation, config, cb);
      },
      py::arg("model"), py::arg("train"), py::arg("validation") = std::vector<ProteinRecord>{}, py::arg("config"),
      py::arg("on_epoch") = py::none());

  m.def(
      "evaluate",
      [](model::Model& mdl, const std::vector<ProteinRecord>& records) {
        return json_loads(evalgen::evaluate(mdl, records).to_json());
      },
      py::arg("model"), py::arg("records"));

  m.def(
      "certify_equivariance",
      [](model::Model& mdl, std::size_t trials, double tolerance, double probability_tolerance, std::uint64_t seed) {
        evalgen::CertifyOptions o;
        o.trials = trials;
        o.tolerance = tolerance;
        o.probability_tolerance = probability_tolerance;
        o.seed = seed;
        return json_loads(evalgen::certify_equivariance(mdl, o).to_json());
      },
      py::arg("model"), py::arg("trials") = 20, py::arg("tolerance") = 1e-7, py::arg("probability_tolerance") = 1e-8,
      py::arg("seed") = 0);

  m.def(
      "bench",
      [](std::vector<std::size_t> sizes, std::vector<std::size_t> ks, std::size_t d, std::size_t repetitions,
         std::uint64_t seed) {
        evalgen::BenchOptions o;
        o.sizes = std::move(sizes);
        o.ks = std::move(ks);
        o.d = d;
        o.repetitions = repetitions;
        o.seed = seed;
        return json_loads(evalgen::bench_graphs(o).to_json());
      },
      py::arg("sizes"), py::arg("ks") = std::vector<std::size_t>{30}, py::arg("d") = 32, py::arg("repetitions") = 5,
      py::arg("seed") = 0);

  m.def("kabsch_rmsd", &geometry::kabsch_rmsd, py::arg("a"), py::arg("b"));
}
