#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "ragforge/config.hpp"
#include "ragforge/defense.hpp"
#include "ragforge/generation.hpp"
#include "ragforge/pipeline.hpp"
#include "ragforge/shadow.hpp"
#include "ragforge/text.hpp"

namespace py = pybind11;
using namespace ragforge;

namespace {

// Reports cross the boundary as JSON text; the Python side parses them.
std::string transfer_json(Experiment& ex) {
  Report r = ex.base_report();
  r.transfer = ex.transfer();
  r.ks = {r.transfer->k};
  return report_to_json(r);
}

std::string sweep_json(Experiment& ex) {
  Report r = ex.base_report();
  r.sweep = ex.sweep();
  return report_to_json(r);
}

Experiment open_experiment(const std::filesystem::path& config, std::optional<std::filesystem::path> artifact_dir,
                           std::optional<std::uint64_t> seed) {
  RunConfig c = load_config(config);
  if (seed) c.seed = *seed;
  return Experiment(std::move(c), std::move(artifact_dir));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Retrieval poisoning toolkit: craft, inject, evaluate";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());

  m.def("split_tokens", &split_tokens, py::arg("text"));
  m.def("normalize_url", &normalize_url, py::arg("url"));
  m.def("extract_urls", &extract_urls, py::arg("text"));
  m.def("lexical_f1", &lexical_f1, py::arg("query"), py::arg("doc"));
  m.def("normalize_for_dedup", &normalize_for_dedup, py::arg("text"));
  m.def(
      "allocate_budgets",
      [](std::size_t n, double p, const std::vector<std::size_t>& sizes) {
        const auto b = allocate_budgets(n, p, sizes);
        return py::make_tuple(b.budgets, b.total, b.shares);
      },
      py::arg("n"), py::arg("p"), py::arg("topic_sizes"),
      "Largest-remainder budgets. p is a fraction. Returns (budgets, total, shares).");

  m.def("config_json", [](const std::filesystem::path& p) { return config_to_json(load_config(p)); }, py::arg("path"));
  m.def("config_hash", [](const std::filesystem::path& p) { return config_hash(load_config(p)); }, py::arg("path"));

  py::class_<Experiment>(m, "Experiment")
      .def(py::init(&open_experiment), py::arg("config"), py::arg("artifact_dir") = py::none(),
           py::arg("seed") = py::none())
      .def("vocab_size", [](Experiment& ex) { return ex.vocab()->size(); })
      .def("encoder_fingerprint", [](Experiment& ex) { return ex.retriever()->fingerprint(); })
      .def("anchors", [](Experiment& ex) { return ex.anchors(); })
      .def("topic_sizes", [](Experiment& ex) { return ex.partition().sizes(); })
      .def("split_sizes",
           [](Experiment& ex) { return py::make_tuple(ex.split().shadow.size(), ex.split().eval.size()); })
      .def(
          "craft",
          [](Experiment& ex, std::optional<double> rate, bool include_freq, bool include_adv) {
            CraftRequest req;
            req.poison_rate_percent = rate;
            req.options = CraftOptions{include_freq, include_adv};
            std::vector<PoisonDocument> docs;
            {
              py::gil_scoped_release release;
              docs = ex.craft(req).flatten();
            }
            py::list out;
            for (const auto& p : docs) {
              py::dict d;
              d["id"] = p.doc.id;
              d["text"] = p.doc.text;
              d["topic"] = p.topic;
              d["loss"] = p.loss;
              out.append(d);
            }
            return out;
          },
          py::arg("poison_rate_percent") = py::none(), py::arg("include_freq") = true, py::arg("include_adv") = true)
      .def("evaluate_json", [](Experiment& ex) { return report_to_json(ex.evaluate(ex.poison_set())); },
           py::call_guard<py::gil_scoped_release>())
      .def("transfer_json", &transfer_json, py::call_guard<py::gil_scoped_release>())
      .def("sweep_json", &sweep_json, py::call_guard<py::gil_scoped_release>());
}
