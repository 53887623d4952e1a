#include "oisa/error.hpp"
#include "oisa/pipeline.hpp"
#include "oisa/report.hpp"
#include "oisa/training.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace oisa;
using nlohmann::json;

namespace {

using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

data::MaskGrid to_grid(const U8Array& a) {
  if (a.ndim() != 2) throw DataError("mask must be a 2-D array");
  data::MaskGrid g(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  const auto* p = a.data();
  for (std::size_t i = 0; i < g.cells.size(); ++i) g.cells[i] = p[i] != 0;
  return g;
}

U8Array to_array(const data::MaskGrid& g) {
  U8Array a({g.height, g.width});
  std::copy(g.cells.begin(), g.cells.end(), a.mutable_data());
  return a;
}

// Python dicts cross the boundary as JSON text; keeps one schema for CLI and bindings.
json to_json_obj(const py::object& o) {
  if (o.is_none()) return json::object();
  return json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

py::object from_json_obj(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

py::dict score_dict(const eval::SplitSummary& s) {
  py::dict d;
  d["count"] = s.count;
  d["J"] = s.j;
  d["F"] = s.f;
  d["JF"] = s.jf;
  d["meteor_count"] = s.meteor_count;
  d["METEOR"] = s.meteor;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Omnimodal referring audio-visual segmentation core";

  auto base = py::register_exception<Error>(m, "OisaError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());

  m.def(
      "encode_rle",
      [](const U8Array& mask) {
        const auto r = data::encode_rle(to_grid(mask));
        return py::make_tuple(r.height, r.width, r.counts);
      },
      py::arg("mask"), "Canonical RLE: (height, width, counts) starting with a background run.");
  m.def(
      "decode_rle",
      [](int height, int width, std::vector<std::uint32_t> counts) {
        return to_array(data::decode_rle({height, width, std::move(counts)}));
      },
      py::arg("height"), py::arg("width"), py::arg("counts"));

  m.def("region_j", [](const U8Array& p, const U8Array& g) { return eval::region_j(to_grid(p), to_grid(g)); },
        py::arg("pred"), py::arg("gt"));
  m.def(
      "boundary_f",
      [](const U8Array& p, const U8Array& g, std::optional<double> tol) {
        const auto a = to_grid(p), b = to_grid(g);
        return eval::boundary_f(a, b, tol.value_or(eval::default_tolerance(a.height, a.width)));
      },
      py::arg("pred"), py::arg("gt"), py::arg("tolerance") = py::none());
  m.def("default_tolerance", &eval::default_tolerance, py::arg("height"), py::arg("width"));
  m.def("meteor", &eval::meteor_score, py::arg("candidate"), py::arg("reference"),
        "METEOR score, or None for an empty reference.");
  m.def("porter_stem", &eval::porter_stem, py::arg("word"));

  m.def(
      "sample_frames",
      [](int n_frames, int count, int dense) {
        const auto s = train::sample_frames(n_frames, count, dense);
        return py::make_tuple(s.indices, s.dense);
      },
      py::arg("n_frames"), py::arg("count"), py::arg("dense"));

  m.def(
      "synth",
      [](const std::filesystem::path& out, const py::object& config, const std::string& split) {
        synth::DatasetConfig dc = to_json_obj(config).get<synth::DatasetConfig>();
        const auto samples = synth::generate_dataset(dc, Vocabulary(ModelConfig{}.lm.vocab));
        synth::write_dataset(out, samples, split == "test" ? data::Split::test : data::Split::train);
        return static_cast<int>(samples.size());
      },
      py::arg("out"), py::arg("config") = py::none(), py::arg("split") = "train",
      "Writes a synthetic dataset; config follows the dataset section of the CLI config.");

  py::class_<Model>(m, "Model")
      .def_static(
          "create",
          [](const py::object& config, std::uint64_t seed) {
            auto cfg = to_json_obj(config).get<ModelConfig>();
            cfg.validate();
            return Model::create(cfg, seed);
          },
          py::arg("config") = py::none(), py::arg("seed") = 0)
      .def_static("load", &Model::load, py::arg("checkpoint"))
      .def("save", &Model::save, py::arg("checkpoint"))
      .def_property_readonly("config", [](const Model& mdl) { return from_json_obj(json(mdl.config())); })
      .def_property_readonly("parameter_count", [](const Model& mdl) { return mdl.params().count(); })
      .def("set_regime", [](Model& mdl, const std::string& r) { mdl.set_regime(mask::parse_regime(r)); })
      .def("set_layout", [](Model& mdl, const std::string& l) { mdl.set_layout(assembly::parse_layout(l)); });

  m.def(
      "train",
      [](Model& model, const std::filesystem::path& data, const py::object& config) {
        const auto tc = to_json_obj(config).get<train::TrainConfig>();
        const auto corpus = train::load_corpus(data);
        py::list history;
        py::gil_scoped_release release;
        if (tc.stage == train::Stage::tune) {
          const auto h = train::run_tune(model, corpus, tc);
          py::gil_scoped_acquire acquire;
          for (const auto& l : h) history.append(l.total);
        } else {
          const auto pairs = train::transcript_corpus(corpus, model.vocab());
          const auto h = tc.stage == train::Stage::pretrain ? train::pretrain_language_model(model, pairs, tc)
                                                            : train::align_audio_stage(model, pairs, tc);
          py::gil_scoped_acquire acquire;
          for (double v : h) history.append(v);
        }
        return history;
      },
      py::arg("model"), py::arg("data"), py::arg("config") = py::none(),
      "Runs one training stage in place; returns the per-step total loss.");

  m.def(
      "infer",
      [](const Model& model, const std::filesystem::path& data, const std::filesystem::path& out,
         const py::object& config) {
        const auto tc = to_json_obj(config).get<train::TrainConfig>();
        const auto corpus = train::load_corpus(data);
        py::dict answers;
        for (std::size_t s = 0; s < corpus.samples.size(); ++s) {
          const auto outputs = predict_sample(model, corpus.samples[s], corpus.media[s], tc);
          write_sample_predictions(out, corpus.samples[s], outputs);
          for (const auto& o : outputs) answers[py::str(corpus.samples[s].id + "/" + o.expression_id)] = o.answer;
        }
        return answers;
      },
      py::arg("model"), py::arg("data"), py::arg("out"), py::arg("config") = py::none(),
      "Writes prediction dumps; returns the answer text per sample/expression.");

  m.def(
      "evaluate",
      [](const std::filesystem::path& manifest, const std::filesystem::path& pred, std::optional<double> tol) {
        const auto rep = eval::evaluate_dataset(data::read_manifest(manifest), pred, tol);
        py::dict d;
        d["overall"] = score_dict(rep.overall);
        py::dict splits;
        for (const auto& [form, s] : rep.splits) splits[py::str(data::to_string(form))] = score_dict(s);
        d["splits"] = splits;
        d["missing"] = rep.missing;
        d["warnings"] = rep.warnings;
        return d;
      },
      py::arg("manifest"), py::arg("predictions"), py::arg("tolerance") = py::none());
}
