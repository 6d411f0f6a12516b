#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cil/runner.hpp"

namespace py = pybind11;
using namespace cil;

namespace {

Tensor<double> tensor_from_array(py::array_t<double, py::array::c_style | py::array::forcecast> a) {
    Shape shape(a.ndim());
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[i] = static_cast<int>(a.shape(i));
    Tensor<double> t(shape);
    std::copy(a.data(), a.data() + a.size(), t.data().begin());
    return t;
}

py::array_t<double> array_from_tensor(const Tensor<double>& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> a(shape);
    std::copy(t.data().begin(), t.data().end(), a.mutable_data());
    return a;
}

py::dict metrics_dict(const MetricsLog& log) {
    py::dict d;
    d["overall"] = log.overall;
    d["acc"] = log.acc;
    d["avg_incremental_accuracy"] = avg_incremental_accuracy(log);
    if (log.overall.size() >= 2) d["avg_forgetting"] = avg_forgetting(log);
    py::list per_class;
    for (const auto& m : log.per_class) per_class.append(py::cast(m));
    d["per_class"] = per_class;
    return d;
}

// thin wrapper demonstrating the expand -> train -> fuse lifecycle on one block
struct PyBlock {
    ConvBlock<double> blk;

    PyBlock(int in_channels, int out_channels, int stride, bool with_bn)
        : blk(in_channels, out_channels, stride, with_bn) {
        std::mt19937 rng(0);
        std::normal_distribution<double> dist(0.0, 0.1);
        for (auto& v : blk.main_weight.data()) v = dist(rng);
    }

    py::array_t<double> forward(py::array_t<double> x) {
        Tensor<double> t = tensor_from_array(x);
        return array_from_tensor(block_forward(blk, t, false, false).detached());
    }

    void expand_block(const std::string& kind) { expand(blk, adapter_kind_from_string(kind)); }
    void fuse_block() { fuse(blk); }
    bool expanded() const { return blk.adapter.has_value(); }
    size_t param_count() const { return blk.param_count(); }

    void set_adapter_weights(py::array_t<double> w, py::array_t<double> b) {
        if (!blk.adapter) throw state_error("block has no adapter");
        Tensor<double> wt = tensor_from_array(w);
        Tensor<double> bt = tensor_from_array(b);
        if (wt.shape() != blk.adapter->weight.shape() || bt.shape() != blk.adapter->bias.shape())
            throw shape_error("adapter parameter shape mismatch");
        blk.adapter->weight.data() = wt.data();
        blk.adapter->bias.data() = bt.data();
    }
};

}  // namespace

PYBIND11_MODULE(_cil, m) {
    m.doc() = "class-incremental training with expandable, re-fusable conv blocks";

    py::register_exception<config_error>(m, "ConfigError");
    py::register_exception<shape_error>(m, "ShapeError");
    py::register_exception<state_error>(m, "StateError");

    m.def(
        "run",
        [](const py::dict& config) {
            nlohmann::json j = nlohmann::json::parse(
                py::cast<std::string>(py::module_::import("json").attr("dumps")(config)));
            RunConfig rc = RunConfig::from_json(j);
            py::dict out;
            if (rc.precision == "f64") {
                auto st = run_from_config<double>(rc, false);
                out = metrics_dict(st.log);
            } else {
                auto st = run_from_config<float>(rc, false);
                out = metrics_dict(st.log);
            }
            out["config"] = py::module_::import("json").attr("loads")(rc.to_json().dump());
            return out;
        },
        py::arg("config"),
        "run the full phase protocol from a config dict; returns the metrics log");

    m.def("default_config", [] {
        return py::module_::import("json").attr("loads")(RunConfig{}.to_json().dump());
    });

    m.def(
        "fuse_conv_bn",
        [](py::array_t<double> w, py::array_t<double> b, py::array_t<double> gamma,
           py::array_t<double> beta, py::array_t<double> mean, py::array_t<double> var,
           double eps) {
            Tensor<double> wt = tensor_from_array(w);
            Tensor<double> bt = tensor_from_array(b);
            BatchNormState<double> bn(wt.dim(0), eps, 0.1);
            Tensor<double> g = tensor_from_array(gamma), be = tensor_from_array(beta);
            Tensor<double> mu = tensor_from_array(mean), v = tensor_from_array(var);
            bn.gamma.data() = g.data();
            bn.beta.data() = be.data();
            bn.running_mean = mu.data();
            bn.running_var = v.data();
            auto [wf, bf] = fuse_conv_bn(wt, bt, bn);
            return py::make_tuple(array_from_tensor(wf), array_from_tensor(bf));
        },
        py::arg("weight"), py::arg("bias"), py::arg("gamma"), py::arg("beta"), py::arg("mean"),
        py::arg("var"), py::arg("eps") = 1e-5,
        "fold batch-norm statistics into conv weight and bias");

    m.def(
        "partition",
        [](const std::vector<double>& scores, double sigma) {
            SelectionMasks masks = partition(scores, sigma);
            return py::make_tuple(masks.ce_mask, masks.kd_mask);
        },
        py::arg("scores"), py::arg("sigma"),
        "split samples into (ce_mask, kd_mask) by prototype-similarity threshold");

    m.def(
        "cosine_scores",
        [](py::array_t<double> features, const std::map<int, std::vector<double>>& prototypes) {
            Tensor<double> f = tensor_from_array(features);
            PrototypeStore<double> store;
            for (const auto& [c, p] : prototypes) store.insert(c, p, 1);
            return cosine_scores(f, store);
        },
        py::arg("features"), py::arg("prototypes"),
        "max cosine similarity of each feature row against the class prototypes");

    m.def(
        "avg_forgetting",
        [](const std::vector<std::vector<double>>& acc) {
            MetricsLog log;
            log.acc = acc;
            for (const auto& row : acc) log.overall.push_back(0.0);
            return avg_forgetting(log);
        },
        py::arg("acc"),
        "average forgetting from a lower-triangular per-task accuracy matrix");

    m.def(
        "avg_incremental_accuracy",
        [](const std::vector<double>& overall) {
            MetricsLog log;
            log.overall = overall;
            return avg_incremental_accuracy(log);
        },
        py::arg("overall"), "mean of the cumulative accuracies across phases");

    m.def(
        "parse_cifar100",
        [](py::bytes data) {
            std::string s = data;
            std::vector<uint8_t> bytes(s.begin(), s.end());
            auto images = parse_cifar100(bytes);
            py::list out;
            for (const auto& img : images) {
                py::array_t<float> a({img.channels, img.height, img.width});
                std::copy(img.pixels.begin(), img.pixels.end(), a.mutable_data());
                out.append(py::make_tuple(img.fine_label, img.coarse_label, a));
            }
            return out;
        },
        py::arg("data"), "parse binary records into (fine, coarse, pixels[C,H,W]) tuples");

    py::class_<PyBlock>(m, "ExpandableBlock")
        .def(py::init<int, int, int, bool>(), py::arg("in_channels"), py::arg("out_channels"),
             py::arg("stride") = 1, py::arg("with_bn") = true)
        .def("forward", &PyBlock::forward, py::arg("x"))
        .def("expand", &PyBlock::expand_block, py::arg("kind") = "conv1x1")
        .def("fuse", &PyBlock::fuse_block)
        .def("set_adapter_weights", &PyBlock::set_adapter_weights, py::arg("weight"),
             py::arg("bias"))
        .def_property_readonly("expanded", &PyBlock::expanded)
        .def_property_readonly("param_count", &PyBlock::param_count);
}
