#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "mednli/abbrev.h"
#include "mednli/checkpoint.h"
#include "mednli/cli.h"
#include "mednli/error.h"
#include "mednli/eval.h"
#include "mednli/synth.h"
#include "mednli/tokenizer.h"

namespace py = pybind11;
using namespace mednli;

namespace {

py::dict example_to_dict(const NLIExample& e) {
  py::dict d;
  d["sentence1"] = e.premise;
  d["sentence2"] = e.hypothesis;
  d["gold_label"] = std::string(to_string(e.gold_label));
  d["pairID"] = e.pair_id;
  return d;
}

NLIExample example_from_dict(const py::dict& d) {
  return {d["sentence1"].cast<std::string>(), d["sentence2"].cast<std::string>(),
          parse_label(d["gold_label"].cast<std::string>()), d["pairID"].cast<std::string>()};
}

std::vector<NLIExample> examples_from(const py::list& rows) {
  std::vector<NLIExample> out;
  for (const auto& r : rows) out.push_back(example_from_dict(r.cast<py::dict>()));
  return out;
}

py::list examples_to(const std::vector<NLIExample>& examples) {
  py::list out;
  for (const auto& e : examples) out.append(example_to_dict(e));
  return out;
}

// Loaded checkpoint plus its model, kept together for predict().
class LoadedModel {
 public:
  explicit LoadedModel(const std::filesystem::path& path)
      : checkpoint_(load_checkpoint(path)), model_(model_from_checkpoint(checkpoint_)) {}

  std::string kind() const { return to_string(model_->kind()); }
  std::vector<std::string> provenance() const { return checkpoint_.provenance; }
  std::string header() const { return checkpoint_header(checkpoint_); }
  Probabilities predict(const std::string& premise, const std::string& hypothesis) const {
    return model_->predict(NLIExample{premise, hypothesis, Label::neutral, ""});
  }
  std::vector<std::string> listwise(const std::string& premise, const std::vector<std::string>& hypotheses) const {
    if (hypotheses.size() != kNumClasses) throw py::value_error("listwise needs exactly three hypotheses");
    ProbabilityMatrix probs;
    for (std::size_t k = 0; k < kNumClasses; ++k) probs[k] = predict(premise, hypotheses[k]);
    std::vector<std::string> out;
    for (Label l : assign_listwise(probs).labels) out.emplace_back(to_string(l));
    return out;
  }

 private:
  Checkpoint checkpoint_;
  std::unique_ptr<Model> model_;
};

}  // namespace

PYBIND11_MODULE(_mednli, m) {
  m.doc() = "Sentence-pair inference toolkit";

  auto error = py::register_exception<Error>(m, "Error");
  py::register_exception<ConfigError>(m, "ConfigError", error);
  py::register_exception<DataError>(m, "DataError", error);
  py::register_exception<ParseError>(m, "ParseError", error);
  py::register_exception<DimensionError>(m, "DimensionError", error);
  py::register_exception<NumericError>(m, "NumericError", error);
  py::register_exception<ContractError>(m, "ContractError", error);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = run_cli(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Run one subcommand; returns (exit_code, stdout, stderr).");

  m.def(
      "generate_corpus",
      [](std::size_t count, std::uint64_t seed, std::size_t vocab_size) {
        SynthSpec spec;
        spec.count = count;
        spec.seed = seed;
        spec.vocab_size = vocab_size;
        return examples_to(generate_corpus(spec));
      },
      py::arg("count") = 300, py::arg("seed") = 0, py::arg("vocab_size") = 24);
  m.def(
      "load_dataset", [](const std::filesystem::path& p) { return examples_to(load_dataset(p)); }, py::arg("path"));
  m.def(
      "save_dataset", [](const std::filesystem::path& p, const py::list& rows) { save_dataset(p, examples_from(rows)); },
      py::arg("path"), py::arg("examples"));

  m.def(
      "tokenize",
      [](const std::string& text, const std::vector<std::string>& corpus, const std::string& mode,
         std::size_t wordpiece_size) {
        Vocabulary vocab = parse_tokenizer_mode(mode) == TokenizerMode::wordpiece
                               ? train_wordpiece(corpus, wordpiece_size)
                               : build_word_vocabulary(corpus);
        return tokenize_to_strings(text, vocab);
      },
      py::arg("text"), py::arg("corpus"), py::arg("mode") = "word", py::arg("wordpiece_size") = 400,
      "Tokenize text with a vocabulary built from corpus.");

  m.def(
      "expand",
      [](const std::string& text, const std::string& table_text) { return expand(text, parse_table(table_text)); },
      py::arg("text"), py::arg("table"), "Expand abbreviations; table is surface<TAB>expansion lines.");
  m.def(
      "expand_with_table_file",
      [](const std::string& text, const std::filesystem::path& path) { return expand(text, load_table(path)); },
      py::arg("text"), py::arg("path"));

  m.def(
      "assign_listwise",
      [](const std::vector<std::array<double, 3>>& rows) {
        if (rows.size() != kNumClasses) throw py::value_error("expected a 3x3 probability matrix");
        ProbabilityMatrix probs;
        for (std::size_t k = 0; k < kNumClasses; ++k) probs[k] = rows[k];
        auto a = assign_listwise(probs);
        std::vector<std::string> labels;
        for (Label l : a.labels) labels.emplace_back(to_string(l));
        return py::make_tuple(labels, a.score);
      },
      py::arg("probs"), "Returns (labels, summed log-probability).");

  m.def(
      "agreement_partition",
      [](const std::vector<std::string>& gold, const std::vector<std::string>& a, const std::vector<std::string>& b) {
        if (a.size() != gold.size() || b.size() != gold.size()) throw py::value_error("label lists differ in length");
        std::vector<NLIExample> golds;
        std::vector<Prediction> pa, pb;
        for (std::size_t i = 0; i < gold.size(); ++i) {
          const std::string id = std::to_string(i);
          golds.push_back({"", "", parse_label(gold[i]), id});
          auto one_hot = [&](const std::string& name) {
            Probabilities p{};
            p[static_cast<std::size_t>(label_index(parse_label(name)))] = 1.0;
            return make_prediction(id, p);
          };
          pa.push_back(one_hot(a[i]));
          pb.push_back(one_hot(b[i]));
        }
        auto part = agreement_partition(pa, pb, golds);
        py::dict d;
        d["both"] = part.both;
        d["only_a"] = part.only_a;
        d["only_b"] = part.only_b;
        d["neither"] = part.neither;
        return d;
      },
      py::arg("gold"), py::arg("a"), py::arg("b"));

  py::class_<LoadedModel>(m, "Model")
      .def(py::init<const std::filesystem::path&>(), py::arg("checkpoint"))
      .def_property_readonly("kind", &LoadedModel::kind)
      .def_property_readonly("provenance", &LoadedModel::provenance)
      .def_property_readonly("header", &LoadedModel::header)
      .def("predict", &LoadedModel::predict, py::arg("premise"), py::arg("hypothesis"),
           "Probabilities in (entailment, contradiction, neutral) order.")
      .def("listwise", &LoadedModel::listwise, py::arg("premise"), py::arg("hypotheses"));
}
