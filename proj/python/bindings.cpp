#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "interloc/core.hpp"
#include "interloc/error.hpp"
#include "interloc/evalkit.hpp"
#include "interloc/labelgen.hpp"
#include "interloc/pipeline.hpp"
#include "interloc/refsample.hpp"

namespace py = pybind11;
using namespace interloc;

namespace {

using SpanTuple = std::tuple<double, double>;
using Bits = std::vector<std::uint8_t>;

Span to_span(const SpanTuple& t) { return Span{std::get<0>(t), std::get<1>(t)}; }

pipeline::PipelineConfig make_config(const std::optional<std::string>& config_json,
                                     std::optional<std::uint64_t> seed) {
  auto cfg = config_json ? pipeline::config_from_json(*config_json) : pipeline::PipelineConfig{};
  if (seed) cfg.seed = *seed;
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_interloc, m) {
  m.doc() = "Feedback-driven temporal localization engine";

  static py::exception<Error> base(m, "Error", PyExc_RuntimeError);
  static py::exception<Error> usage(m, "UsageError", base.ptr());
  static py::exception<Error> data(m, "DataError", base.ptr());
  static py::exception<Error> numeric(m, "NumericError", base.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      switch (e.category()) {
        case ErrorCategory::Usage: py::set_error(usage, e.what()); break;
        case ErrorCategory::Data: py::set_error(data, e.what()); break;
        case ErrorCategory::Numeric: py::set_error(numeric, e.what()); break;
      }
    }
  });

  m.def("tiou", [](const SpanTuple& a, const SpanTuple& b) { return tiou(to_span(a), to_span(b)); },
        py::arg("a"), py::arg("b"), "Temporal IoU of two (start, end) spans.");

  m.def(
      "recall_at_k",
      [](const std::vector<std::tuple<double, double, double>>& preds, const SpanTuple& gt, std::size_t k,
         double thresh) {
        SpanPrediction p;
        for (const auto& [s, e, score] : preds) p.push_back({Span{s, e}, score});
        return evalkit::recall_at_k(p, to_span(gt), k, thresh);
      },
      py::arg("preds"), py::arg("gt"), py::arg("k"), py::arg("tiou_thresh"),
      "1 if one of the top-k (start, end, score) predictions reaches the threshold.");

  m.def("smooth_and_normalize",
        [](const std::vector<double>& s, double sigma) { return labelgen::smooth_and_normalize(s, sigma); },
        py::arg("scores"), py::arg("sigma"));
  m.def("invert_not_contains", [](const std::vector<double>& s) { return labelgen::invert_not_contains(s); },
        py::arg("scores"));
  m.def(
      "gt_threshold",
      [](const std::vector<double>& s, const SpanTuple& gt) {
        const auto t = labelgen::gt_threshold(s, to_span(gt));
        return py::dict(py::arg("mean") = t.mean, py::arg("stddev") = t.stddev, py::arg("delta") = t.delta);
      },
      py::arg("scores"), py::arg("gt"));
  m.def("binarize",
        [](const std::vector<double>& s, const SpanTuple& gt) { return labelgen::binarize(s, to_span(gt)); },
        py::arg("scores"), py::arg("gt"));
  m.def(
      "temporal_labels",
      [](const SpanTuple& ref, const std::string& direction, std::size_t clips) {
        return labelgen::temporal_labels(to_span(ref), temporal_from_string(direction), clips);
      },
      py::arg("ref"), py::arg("direction"), py::arg("clips"));
  m.def("logical_and", [](const Bits& a, const Bits& b) { return labelgen::logical_and(a, b); });

  m.def(
      "fit_beta",
      [](const std::vector<double>& d) {
        const auto p = refsample::fit_beta(d);
        return py::dict(py::arg("a") = p.a, py::arg("b") = p.b, py::arg("dur_min") = p.dur_min,
                        py::arg("dur_max") = p.dur_max);
      },
      py::arg("durations"));
  m.def("auc", [](const std::vector<double>& s, const Bits& l) { return evalkit::auc(s, l); }, py::arg("scores"),
        py::arg("labels"));

  m.def("default_config_json", [] { return pipeline::config_to_json(pipeline::PipelineConfig{}); });
  m.def(
      "normalize_config_json",
      [](const std::string& text) { return pipeline::config_to_json(pipeline::config_from_json(text)); },
      py::arg("text"), "Fills defaults and rejects unknown keys.");
  m.def(
      "config_hash",
      [](const std::optional<std::string>& config_json, std::optional<std::uint64_t> seed) {
        return pipeline::config_hash(make_config(config_json, seed));
      },
      py::arg("config_json") = py::none(), py::arg("seed") = py::none());

  m.def(
      "run_all",
      [](const std::string& workdir, const std::optional<std::string>& config_json,
         std::optional<std::uint64_t> seed) {
        const auto cfg = make_config(config_json, seed);
        py::gil_scoped_release release;
        return pipeline::run_all(cfg, pipeline::Layout{workdir});
      },
      py::arg("workdir"), py::arg("config_json") = py::none(), py::arg("seed") = py::none(),
      "Runs every stage into workdir and returns the stage log.");
  m.def(
      "run_stage",
      [](const std::string& stage, const std::string& workdir, const std::string& mode, bool bypass,
         bool use_host) {
        const pipeline::Layout io{workdir};
        const auto cfg = pipeline::read_workdir_config(io);
        const auto eval_mode = stage == "eval" ? pipeline::eval_mode_from_string(mode) : pipeline::EvalMode::Feedback;
        py::gil_scoped_release release;
        if (stage == "sample-refs") return pipeline::stage_sample_refs(cfg, io, use_host);
        if (stage == "make-feedback") return pipeline::stage_make_feedback(cfg, io);
        if (stage == "make-labels") return pipeline::stage_make_labels(cfg, io);
        if (stage == "train-host") return pipeline::stage_train_host(cfg, io);
        if (stage == "train-falm") return pipeline::stage_train_falm(cfg, io);
        if (stage == "finetune") return pipeline::stage_finetune(cfg, io);
        if (stage == "eval") return pipeline::stage_eval(cfg, io, eval_mode, bypass);
        if (stage == "report") return pipeline::stage_report(cfg, io);
        throw UsageError("unknown stage '" + stage + "'");
      },
      py::arg("stage"), py::arg("workdir"), py::arg("mode") = "feedback", py::arg("bypass") = false,
      py::arg("use_host") = true, "Runs one stage against an existing work directory.");
  m.def(
      "generate",
      [](const std::string& workdir, const std::optional<std::string>& config_json,
         std::optional<std::uint64_t> seed) {
        const auto cfg = make_config(config_json, seed);
        py::gil_scoped_release release;
        return pipeline::stage_gen(cfg, pipeline::Layout{workdir});
      },
      py::arg("workdir"), py::arg("config_json") = py::none(), py::arg("seed") = py::none());
}
