// Python bindings for the label-contrastive training stack.  The module
// mirrors the CLI surface at function granularity: dataset synthesis and
// (de)serialization, a full training run driven from a config string, the
// retrieval metrics, and a few numeric primitives that are handy for
// inspecting model behaviour from notebooks.
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>
#include <vector>

#include "labelcl/checkpoint.hpp"
#include "labelcl/sarl.hpp"
#include "labelcl/trainer.hpp"

namespace py = pybind11;
using namespace labelcl;

namespace {

std::vector<std::vector<double>> rows_of(const Tensor<double>& t) {
    std::vector<std::vector<double>> out(static_cast<size_t>(t.rows()));
    for (int64_t i = 0; i < t.rows(); ++i) {
        out[static_cast<size_t>(i)].assign(t.data.begin() + i * t.cols(),
                                           t.data.begin() + (i + 1) * t.cols());
    }
    return out;
}

Tensor<double> tensor_of(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw ParamError("expected at least one row");
    const int64_t n = static_cast<int64_t>(rows.size());
    const int64_t m = static_cast<int64_t>(rows[0].size());
    Tensor<double> t({n, m});
    for (int64_t i = 0; i < n; ++i) {
        if (static_cast<int64_t>(rows[static_cast<size_t>(i)].size()) != m)
            throw ParamError("rows must all have the same length");
        std::copy(rows[static_cast<size_t>(i)].begin(), rows[static_cast<size_t>(i)].end(),
                  t.data.begin() + i * m);
    }
    return t;
}

py::dict metric_dict(const MetricReport& r) {
    py::dict d;
    d["mode"] = r.mode;
    d["num_classes"] = r.num_classes;
    d["classes_evaluated"] = r.classes_evaluated;
    d["map"] = r.map;
    d["cp"] = r.cp;
    d["cr"] = r.cr;
    d["cf1"] = r.cf1;
    d["op"] = r.op;
    d["or"] = r.orr;
    d["of1"] = r.of1;
    d["per_class_ap"] = r.per_class_ap;
    return d;
}

// Runs a complete (or stop_after-truncated) training session for one scalar
// type and packages the outcome for python.
template <typename S>
py::dict run_training(const RunConfig& cfg, const Dataset& data, int64_t stop_after,
                      const std::optional<std::string>& resume_path,
                      const std::optional<std::string>& checkpoint_out,
                      const py::object& on_iteration) {
    Trainer<S> trainer(cfg, data);
    if (resume_path) trainer.restore_state(load_checkpoint<S>(*resume_path));

    py::list history;
    trainer.train(
        [&](const LossReport& r) {
            py::tuple row = py::make_tuple(r.epoch, r.iteration, r.l_bce, r.l_s2s, r.l_p2s,
                                           r.l_total, r.lr);
            history.append(row);
            if (!on_iteration.is_none()) on_iteration(row);
        },
        nullptr, stop_after);

    if (checkpoint_out) save_checkpoint(*checkpoint_out, trainer.snapshot_state());

    auto [all, top3] = trainer.evaluate_split(data.test);
    py::dict out;
    out["epochs_done"] = trainer.epochs_done();
    out["iterations"] = trainer.iteration();
    out["history"] = history;
    out["metrics_all"] = metric_dict(all);
    out["metrics_top3"] = metric_dict(top3);
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "label-level contrastive multi-label training stack (native core)";
    m.attr("__version__") = "1.0.0";

    // ---- configs ---------------------------------------------------------
    m.def(
        "default_config_text", [] { return config_to_text(RunConfig{}); },
        "Serialized default configuration (key = value lines).");
    m.def(
        "normalize_config_text",
        [](const std::string& text) {
            RunConfig cfg = parse_config_text(text);
            cfg.validate();
            return config_to_text(cfg);
        },
        py::arg("text"),
        "Parse, validate and re-serialize a configuration; raises on unknown keys "
        "or invalid values.");

    // ---- datasets ---------------------------------------------------------
    py::class_<Dataset>(m, "Dataset", "An in-memory labelled grid dataset.")
        .def_property_readonly("num_classes",
                               [](const Dataset& d) { return d.spec.num_classes; })
        .def_property_readonly("train_size",
                               [](const Dataset& d) { return static_cast<int64_t>(d.train.size()); })
        .def_property_readonly("test_size",
                               [](const Dataset& d) { return static_cast<int64_t>(d.test.size()); })
        .def(
            "labels",
            [](const Dataset& d, const std::string& split, int64_t i) {
                const auto& v = split == "train" ? d.train : d.test;
                if (i < 0 || i >= static_cast<int64_t>(v.size()))
                    throw ParamError("sample index out of range");
                std::vector<int> out(v[static_cast<size_t>(i)].labels.begin(),
                                     v[static_cast<size_t>(i)].labels.end());
                return out;
            },
            py::arg("split"), py::arg("index"),
            "0/1 label vector of one sample ('train' or 'test').")
        .def(
            "grid",
            [](const Dataset& d, const std::string& split, int64_t i) {
                const auto& v = split == "train" ? d.train : d.test;
                if (i < 0 || i >= static_cast<int64_t>(v.size()))
                    throw ParamError("sample index out of range");
                const auto& g = v[static_cast<size_t>(i)].grid;
                py::tuple shape = py::make_tuple(g.shape[0], g.shape[1], g.shape[2]);
                return py::make_tuple(shape, g.data);
            },
            py::arg("split"), py::arg("index"),
            "((H, W, C), flat_values) of one sample's feature grid.")
        .def("save", [](const Dataset& d, const std::string& path) { save_dataset(d, path); },
             py::arg("path"));

    m.def(
        "generate_dataset",
        [](int num_classes, int grid_h, int grid_w, int grid_c, double kappa, double alpha,
           double noise, int train_count, int test_count, uint64_t seed) {
            SyntheticSpec spec;
            spec.num_classes = num_classes;
            spec.grid_h = grid_h;
            spec.grid_w = grid_w;
            spec.grid_c = grid_c;
            spec.kappa = kappa;
            spec.alpha = alpha;
            spec.noise = noise;
            spec.train_count = train_count;
            spec.test_count = test_count;
            spec.seed = seed;
            spec.validate();
            return generate(spec);
        },
        py::arg("num_classes") = 16, py::arg("grid_h") = 8, py::arg("grid_w") = 8,
        py::arg("grid_c") = 16, py::arg("kappa") = 2.9, py::arg("alpha") = 1.0,
        py::arg("noise") = 0.3, py::arg("train_count") = 2000, py::arg("test_count") = 500,
        py::arg("seed") = 1,
        "Deterministically synthesize a tiled multi-label dataset.");
    m.def("load_dataset", &load_dataset, py::arg("path"));

    // ---- training ---------------------------------------------------------
    m.def(
        "train",
        [](const std::string& config_text, int64_t stop_after,
           const std::optional<std::string>& dataset_path,
           const std::optional<std::string>& resume,
           const std::optional<std::string>& checkpoint_out, const py::object& on_iteration) {
            RunConfig cfg = parse_config_text(config_text);
            cfg.validate();
            const Dataset data =
                dataset_path ? load_dataset(*dataset_path) : generate(cfg.synth);
            if (cfg.precision == Precision::High)
                return run_training<double>(cfg, data, stop_after, resume, checkpoint_out,
                                            on_iteration);
            return run_training<float>(cfg, data, stop_after, resume, checkpoint_out,
                                       on_iteration);
        },
        py::arg("config_text"), py::arg("stop_after") = -1, py::arg("dataset_path") = py::none(),
        py::arg("resume") = py::none(), py::arg("checkpoint_out") = py::none(),
        py::arg("on_iteration") = py::none(),
        "Run training per the config string; returns history plus final test metrics. "
        "history rows are (epoch, iteration, l_bce, l_s2s, l_p2s, l_total, lr).");

    // ---- metrics ----------------------------------------------------------
    m.def(
        "average_precision",
        [](const std::vector<double>& scores,
           const std::vector<uint8_t>& labels) -> std::optional<double> {
            double ap = 0.0;
            if (!average_precision(scores, labels, ap)) return std::nullopt;
            return ap;
        },
        py::arg("scores"), py::arg("labels"),
        "Non-interpolated average precision; None when the class has no positives.");
    m.def(
        "evaluate_scores",
        [](const std::vector<double>& scores, const std::vector<uint8_t>& targets, int64_t n,
           int64_t num_classes, const std::string& mode, int k, double threshold) {
            EvalConfig cfg;
            if (mode == "all") {
                cfg.mode = EvalConfig::Mode::All;
                cfg.threshold = threshold;
            } else if (mode == "topk") {
                cfg.mode = EvalConfig::Mode::TopK;
                cfg.k = k;
            } else {
                throw ParamError("mode must be 'all' or 'topk'");
            }
            return metric_dict(evaluate(scores, targets, n, num_classes, cfg));
        },
        py::arg("scores"), py::arg("targets"), py::arg("n"), py::arg("num_classes"),
        py::arg("mode") = "all", py::arg("k") = 3, py::arg("threshold") = 0.5,
        "mAP / CF1 / OF1 and friends over flat row-major (n, num_classes) arrays.");

    // ---- numeric primitives ------------------------------------------------
    m.def(
        "softmax_rows",
        [](const std::vector<std::vector<double>>& rows) {
            auto v = softmax_rows(constant(tensor_of(rows)));
            return rows_of(v->value);
        },
        py::arg("rows"), "Numerically stable per-row softmax.");
    m.def(
        "l2_normalize_rows",
        [](const std::vector<std::vector<double>>& rows) {
            auto v = l2_normalize_rows(constant(tensor_of(rows)));
            return rows_of(v->value);
        },
        py::arg("rows"), "Scale each row to unit Euclidean norm.");
    m.def(
        "positional_encoding",
        [](int64_t h, int64_t w, int64_t d) { return rows_of(positional_encoding_2d<double>(h, w, d)); },
        py::arg("grid_h"), py::arg("grid_w"), py::arg("d_model"),
        "Fixed 2-D sinusoidal position table, one row per grid cell.");
}
