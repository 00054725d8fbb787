#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "duel/data/dataset.hpp"
#include "duel/data/lexicon.hpp"
#include "duel/data/mini_scan.hpp"
#include "duel/error.hpp"
#include "duel/eval/exact_match.hpp"
#include "duel/experiment/config.hpp"
#include "duel/experiment/runner.hpp"
#include "duel/splits/compounds.hpp"
#include "duel/splits/split.hpp"
#include "duel/train/procedures.hpp"

namespace py = pybind11;
using namespace duel;

namespace {

data::Dataset to_dataset(const std::vector<std::tuple<std::string, std::string, std::optional<std::string>>>& rows,
                         std::string name) {
  data::Dataset d{std::move(name), {}};
  for (const auto& [in, out, cat] : rows) d.examples.push_back({in, out, cat});
  return d;
}

}  // namespace

PYBIND11_MODULE(_duel, m) {
  m.doc() = "Pre-finetuning lab: data, splits, training, and evaluation";

  static py::exception<Error> error(m, "Error");
  py::register_exception<ShapeError>(m, "ShapeError", error.ptr());
  py::register_exception<NumericError>(m, "NumericError", error.ptr());
  py::register_exception<UsageError>(m, "UsageError", error.ptr());
  py::register_exception<InputError>(m, "InputError", error.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", error.ptr());

  py::class_<data::Example>(m, "Example")
      .def(py::init<>())
      .def(py::init([](std::string in, std::string out, std::optional<std::string> cat) {
             return data::Example{std::move(in), std::move(out), std::move(cat)};
           }),
           py::arg("input"), py::arg("output"), py::arg("category") = std::nullopt)
      .def_readwrite("input", &data::Example::input)
      .def_readwrite("output", &data::Example::output)
      .def_readwrite("category", &data::Example::category)
      .def("__eq__", [](const data::Example& a, const data::Example& b) { return a == b; })
      .def("__repr__", [](const data::Example& e) { return "Example(" + e.input + " -> " + e.output + ")"; });

  py::class_<data::Dataset>(m, "Dataset")
      .def(py::init<>())
      .def(py::init(&to_dataset), py::arg("rows"), py::arg("name") = "data")
      .def_readwrite("name", &data::Dataset::name)
      .def_readwrite("examples", &data::Dataset::examples)
      .def("__len__", &data::Dataset::size)
      .def("__eq__", [](const data::Dataset& a, const data::Dataset& b) { return a == b; })
      .def("to_tsv", [](const data::Dataset& d) { return data::to_tsv(d); });
  m.def("parse_tsv", &data::parse_tsv, py::arg("text"), py::arg("name") = "data");
  m.def("apply_prompt", &data::apply_prompt, py::arg("dataset"), py::arg("tag"));

  py::class_<data::MiniScanConfig>(m, "MiniScanConfig")
      .def(py::init<>())
      .def_readwrite("primitives", &data::MiniScanConfig::primitives)
      .def_readwrite("turn", &data::MiniScanConfig::turn)
      .def_readwrite("directions", &data::MiniScanConfig::directions)
      .def_readwrite("opposite", &data::MiniScanConfig::opposite)
      .def_readwrite("around", &data::MiniScanConfig::around)
      .def_readwrite("repetition", &data::MiniScanConfig::repetition)
      .def_readwrite("conjunctions", &data::MiniScanConfig::conjunctions)
      .def_readwrite("max_examples", &data::MiniScanConfig::max_examples);
  m.def("generate_mini_scan", &data::generate_mini_scan, py::arg("config") = data::MiniScanConfig{},
        py::arg("seed") = 1, py::arg("name") = "scan");
  m.def("interpret_scan", &data::interpret_scan, py::arg("command"));

  py::class_<data::LexiconTable>(m, "LexiconTable")
      .def_static("parse", &data::LexiconTable::parse, py::arg("text"))
      .def("to_text", &data::LexiconTable::to_text)
      .def("__len__", [](const data::LexiconTable& t) { return t.entries().size(); });
  py::class_<data::LexicalVariant>(m, "LexicalVariant")
      .def_readonly("dataset", &data::LexicalVariant::dataset)
      .def_readonly("mapping", &data::LexicalVariant::mapping)
      .def_readonly("stem_mapping", &data::LexicalVariant::stem_mapping);
  m.def("make_lexical_variant", &data::make_lexical_variant, py::arg("dataset"), py::arg("lexicon"),
        py::arg("seed"), py::arg("name") = "");

  m.def("chernoff_coefficient", &splits::chernoff_coefficient, py::arg("p"), py::arg("q"), py::arg("alpha"));
  m.def("compound_divergence",
        [](const data::Dataset& train, const data::Dataset& test, double alpha) {
          splits::DivergenceConfig cfg{alpha};
          return splits::compound_divergence(splits::extract_profile(train, {}), splits::extract_profile(test, {}),
                                             cfg);
        },
        py::arg("train"), py::arg("test"), py::arg("alpha") = 0.1);

  py::class_<splits::SplitPair>(m, "SplitPair")
      .def_readonly("train", &splits::SplitPair::train)
      .def_readonly("test", &splits::SplitPair::test)
      .def_readonly("train_indices", &splits::SplitPair::train_indices)
      .def_readonly("test_indices", &splits::SplitPair::test_indices)
      .def_readonly("trace", &splits::SplitPair::trace)
      .def_property_readonly("divergence", [](const splits::SplitPair& s) { return s.metrics.compound_divergence; })
      .def_property_readonly("atom_coverage", [](const splits::SplitPair& s) { return s.metrics.atom_coverage; });
  m.def("standard_split",
        [](const data::Dataset& d, double fraction, std::uint64_t seed) {
          return splits::standard_split(d, fraction, seed);
        },
        py::arg("dataset"), py::arg("train_fraction"), py::arg("seed"));
  m.def("length_split", [](const data::Dataset& d, double fraction) { return splits::length_split(d, fraction); },
        py::arg("dataset"), py::arg("train_fraction"));
  m.def("mcd_split",
        [](const data::Dataset& d, std::size_t train_size, std::size_t test_size, std::size_t iterations,
           int restarts, std::uint64_t seed) {
          splits::McdConfig cfg;
          cfg.train_size = train_size;
          cfg.test_size = test_size;
          cfg.iterations = iterations;
          cfg.restarts = restarts;
          return splits::mcd_split_search(d, cfg, seed);
        },
        py::arg("dataset"), py::arg("train_size"), py::arg("test_size"), py::arg("iterations") = 10000,
        py::arg("restarts") = 1, py::arg("seed") = 1);
  m.def("atoms_covered",
        [](const data::Dataset& d, const std::vector<std::size_t>& train, const std::vector<std::size_t>& test) {
          return splits::atoms_covered(d, train, test);
        },
        py::arg("dataset"), py::arg("train_indices"), py::arg("test_indices"));

  py::class_<train::EarlyStopMonitor>(m, "EarlyStopMonitor")
      .def(py::init([](int patience) { return train::EarlyStopMonitor{patience}; }), py::arg("patience") = 1)
      .def("update", [](train::EarlyStopMonitor& mon, double acc) { return train::accuracy_decreases(mon, acc); },
           py::arg("accuracy"))
      .def_readonly("best_accuracy", &train::EarlyStopMonitor::best_accuracy);

  py::class_<eval::CategoryStats>(m, "CategoryStats")
      .def_readonly("total", &eval::CategoryStats::total)
      .def_readonly("correct", &eval::CategoryStats::correct)
      .def_property_readonly("accuracy", &eval::CategoryStats::accuracy);
  py::class_<eval::EvalResult>(m, "EvalResult")
      .def_readonly("total", &eval::EvalResult::total)
      .def_readonly("correct", &eval::EvalResult::correct)
      .def_readonly("accuracy", &eval::EvalResult::accuracy)
      .def_readonly("per_category", &eval::EvalResult::per_category)
      .def_readonly("truncated", &eval::EvalResult::truncated);
  m.def("sequences_match", &eval::sequences_match, py::arg("reference"), py::arg("prediction"));
  m.def("score_predictions", &eval::score_predictions, py::arg("references"), py::arg("predictions"),
        py::arg("truncated") = std::vector<bool>{});

  py::class_<experiment::SeedResult>(m, "SeedResult")
      .def_readonly("seed", &experiment::SeedResult::seed)
      .def_readonly("ok", &experiment::SeedResult::ok)
      .def_readonly("error", &experiment::SeedResult::error)
      .def_readonly("eval", &experiment::SeedResult::eval);
  py::class_<experiment::RunReport>(m, "RunReport")
      .def_readonly("name", &experiment::RunReport::name)
      .def_property_readonly("method",
                             [](const experiment::RunReport& r) { return experiment::method_name(r.method); })
      .def_readonly("seeds", &experiment::RunReport::seeds)
      .def("mean_accuracy", &experiment::RunReport::mean_accuracy)
      .def("stddev_accuracy", &experiment::RunReport::stddev_accuracy)
      .def("to_text", [](const experiment::RunReport& r) { return experiment::to_text(r); });
  m.def("report_table", &experiment::report_table, py::arg("reports"));
  m.def("run_experiment",
        [](const std::string& config_text, const std::map<std::string, std::string>& overrides) {
          const auto cfg = experiment::parse_experiment_config(config_text, overrides);
          py::gil_scoped_release release;
          return experiment::run_experiment(cfg);
        },
        py::arg("config_text"), py::arg("overrides") = std::map<std::string, std::string>{});
}
