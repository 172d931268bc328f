// SPDX-License-Identifier: Apache-2.0
#include <sstream>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "longsum/attention.hpp"
#include "longsum/bertscore.hpp"
#include "longsum/checkpoint.hpp"
#include "longsum/cli.hpp"
#include "longsum/corpus.hpp"
#include "longsum/generate.hpp"
#include "longsum/normalize.hpp"
#include "longsum/tokenizer.hpp"

namespace py = pybind11;
using namespace longsum;

namespace {

py::dict clean_to_dict(const CleanDocument& d) {
  py::dict out;
  out["id"] = d.id;
  out["title"] = d.title;
  out["body"] = d.body;
  out["summary"] = d.summary;
  out["category"] = d.category;
  out["front_matter_marker_line"] = d.front_matter_marker_line;
  return out;
}

py::dict generation_to_dict(const Generation& g) {
  py::dict out;
  out["tokens"] = g.tokens;
  out["log_prob"] = g.log_prob;
  out["score"] = g.score;
  out["finished_with_eos"] = g.finished_with_eos;
  return out;
}

class Model {
 public:
  explicit Model(const std::filesystem::path& path) : loaded_(load_parameters(path)) {}

  py::dict config() const {
    nlohmann::json j = loaded_.config;
    return py::module_::import("json").attr("loads")(j.dump());
  }

  py::dict generate(const std::vector<TokenId>& source, std::size_t beam_size, std::size_t max_output_len,
                    double length_penalty) const {
    const Encoding enc = make_encoding(source, Tokenizer::kDefaultGlobal);
    GenConfig g;
    g.beam_size = beam_size;
    g.max_output_len = max_output_len;
    g.length_penalty = length_penalty;
    py::gil_scoped_release release;
    const Generation out = beam_size == 1 ? greedy_decode(loaded_.params, loaded_.config, enc, g)
                                          : beam_search(loaded_.params, loaded_.config, enc, g);
    py::gil_scoped_acquire acquire;
    return generation_to_dict(out);
  }

  double loss(const std::vector<TokenId>& source, const std::vector<TokenId>& target) const {
    const Example ex{make_encoding(source, Tokenizer::kDefaultGlobal), make_encoding(target)};
    return sequence_loss(loaded_.params, loaded_.config, ex).mean();
  }

 private:
  LoadedModel loaded_;
};

}  // namespace

PYBIND11_MODULE(_longsum, m) {
  m.doc() = "Long-document Persian summarization core";

  m.attr("PAD") = Tokenizer::kPad;
  m.attr("SOS") = Tokenizer::kSos;
  m.attr("EOS") = Tokenizer::kEos;
  m.attr("UNK") = Tokenizer::kUnk;

  m.def(
      "normalize_document",
      [](const std::string& id, const std::string& body, const std::string& summary,
         std::optional<std::string> title, std::optional<std::string> category) -> py::object {
        const RawDocument doc{id, std::move(title), body, summary, std::move(category)};
        const auto r = normalize_document(doc, NormalizationRules::defaults());
        if (const auto* clean = std::get_if<CleanDocument>(&r)) return clean_to_dict(*clean);
        const auto& rej = std::get<Rejection>(r);
        py::dict out;
        out["id"] = rej.id;
        out["rejected"] = std::string(to_string(rej.reason));
        out["persian_ratio"] = rej.persian_ratio;
        return out;
      },
      py::arg("id"), py::arg("body"), py::arg("summary"), py::arg("title") = py::none(),
      py::arg("category") = py::none());
  m.def("persian_ratio", &persian_ratio, py::arg("text"));

  m.def(
      "assign_split",
      [](const std::string& id, std::uint64_t seed, std::tuple<double, double, double> ratios) {
        SplitRatios r{std::get<0>(ratios), std::get<1>(ratios), std::get<2>(ratios)};
        r.validate();
        return std::string(to_string(assign_split(id, seed, r)));
      },
      py::arg("id"), py::arg("seed"), py::arg("ratios") = std::make_tuple(0.90, 0.05, 0.05));

  py::class_<Tokenizer>(m, "Tokenizer")
      .def_static(
          "train", [](const std::vector<std::string>& texts, std::size_t vocab_size) {
            return Tokenizer::train(texts, vocab_size);
          },
          py::arg("texts"), py::arg("vocab_size"))
      .def_static("load", &Tokenizer::load_dir, py::arg("directory"))
      .def("save", &Tokenizer::save_dir, py::arg("directory"))
      .def(
          "encode",
          [](const Tokenizer& t, const std::string& text, std::size_t max_len) {
            const Encoding e = t.encode(text, max_len);
            return std::vector<TokenId>(e.ids.begin(), e.ids.begin() + static_cast<std::ptrdiff_t>(e.length));
          },
          py::arg("text"), py::arg("max_len") = 8192)
      .def(
          "decode", [](const Tokenizer& t, const std::vector<TokenId>& ids) { return t.decode(ids); },
          py::arg("ids"))
      .def_property_readonly("vocab_size", &Tokenizer::vocab_size);

  m.def(
      "sliding_window_attention",
      [](const Matrix& q, const Matrix& k, const Matrix& v, std::size_t window) {
        AttentionSpec spec;
        spec.window = window;
        return sliding_window_attention(q, k, v, spec);
      },
      py::arg("q"), py::arg("k"), py::arg("v"), py::arg("window"));
  m.def(
      "full_attention",
      [](const Matrix& q, const Matrix& k, const Matrix& v) { return full_attention_reference(q, k, v, {}); },
      py::arg("q"), py::arg("k"), py::arg("v"));

  m.def("f1", &f1, py::arg("precision"), py::arg("recall"));

  py::class_<Model>(m, "Model")
      .def(py::init<const std::filesystem::path&>(), py::arg("path"))
      .def_property_readonly("config", &Model::config)
      .def("generate", &Model::generate, py::arg("source"), py::arg("beam_size") = 2,
           py::arg("max_output_len") = 512, py::arg("length_penalty") = 0.0)
      .def("loss", &Model::loss, py::arg("source"), py::arg("target"));

  m.def(
      "run_command",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = run_command(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}
