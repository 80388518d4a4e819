#include <sstream>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cseg/checkpoint.hpp"
#include "cseg/cli.hpp"
#include "cseg/config.hpp"
#include "cseg/errors.hpp"
#include "cseg/metrics.hpp"
#include "cseg/ops.hpp"
#include "cseg/synthetic.hpp"
#include "cseg/train.hpp"

namespace py = pybind11;
using namespace cseg;

namespace {

using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using F32Array = py::array_t<float, py::array::c_style | py::array::forcecast>;
using LabelArray = py::array_t<std::int32_t, py::array::c_style | py::array::forcecast>;

template <typename T, typename Array>
Tensor<T> to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor<T>(std::move(shape), std::vector<T>(a.data(), a.data() + a.size()));
}

template <typename T>
py::array_t<T> to_array(const Tensor<T>& t) {
  py::array_t<T> a(t.shape());
  std::copy(t.data().begin(), t.data().end(), a.mutable_data());
  return a;
}

LabelMask to_mask(const LabelArray& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return LabelMask(std::move(shape), std::vector<std::int32_t>(a.data(), a.data() + a.size()));
}

py::array_t<std::int32_t> to_array(const LabelMask& m) {
  py::array_t<std::int32_t> a(m.shape);
  std::copy(m.data.begin(), m.data.end(), a.mutable_data());
  return a;
}

py::object distance(const Distance& d) { return d.defined ? py::object(py::float_(d.value)) : py::none(); }

ConvParams<double> conv_params(const F64Array& w, const std::optional<F64Array>& b, std::size_t stride,
                               std::size_t padding, bool transposed) {
  if (w.ndim() < 3) throw ShapeError("weights need (channels, channels, kernel...) extents");
  const std::size_t dims = static_cast<std::size_t>(w.ndim()) - 2;
  const auto a = static_cast<std::size_t>(w.shape(0));
  const auto c = static_cast<std::size_t>(w.shape(1));
  ConvParams<double> p;
  p.in_channels = transposed ? a : c;
  p.out_channels = transposed ? c : a;
  p.kernel.assign(w.shape() + 2, w.shape() + w.ndim());
  p.stride.assign(dims, stride);
  p.padding.assign(dims, padding);
  p.weights = to_tensor<double>(w);
  if (b) p.bias = to_tensor<double>(*b);
  return p;
}

py::list metrics_rows(const MetricsReport& report) {
  py::list rows;
  for (const auto& c : report.classes) {
    py::dict d;
    d["class"] = c.cls;
    d["dice"] = c.dice;
    d["adb_mm"] = distance(c.adb_mm);
    d["hd_mm"] = distance(c.hd_mm);
    d["iou"] = c.iou;
    d["f1"] = c.f1;
    d["flags"] = c.flags();
    rows.append(d);
  }
  return rows;
}

/// A network built from a run configuration, with its task and training setup.
class PyNetwork {
 public:
  explicit PyNetwork(const std::string& config_json)
      : cfg_(parse_config(config_json)), net_((validate(cfg_), cfg_.network)) {
    init_gaussian(net_, cfg_.train.init_std, cfg_.train.seed);
  }

  py::dict forward(const F32Array& x, bool train_mode) {
    const auto out = net_.forward(nullptr, to_tensor<float>(x), train_mode ? Mode::train : Mode::infer);
    py::dict d;
    d["fused"] = to_array(out.fused);
    d["fused_logits"] = to_array(out.fused_logits);
    py::list branches;
    for (const auto& b : out.branch_logits) branches.append(to_array(b));
    d["branch_logits"] = branches;
    return d;
  }

  py::list train(std::optional<std::size_t> steps) {
    auto tc = cfg_.train;
    if (steps) tc.steps = *steps;
    std::vector<TrainLogRow> log;
    {
      py::gil_scoped_release release;
      log = cseg::train(net_, samples(), cfg_.loss, tc);
    }
    py::list rows;
    for (const auto& r : log) {
      py::dict d;
      d["step"] = r.step;
      d["total_loss"] = r.total;
      d["L_g"] = r.global;
      d["branch_losses"] = r.branch;
      rows.append(d);
    }
    return rows;
  }

  py::list evaluate() {
    MetricsReport report;
    {
      py::gil_scoped_release release;
      report = cseg::evaluate(net_, samples(), resolved_spacing(cfg_.task), cfg_.train.batch);
    }
    return metrics_rows(report);
  }

  void save(const std::string& file) { save_checkpoint(file, net_); }
  void load(const std::string& file) { load_checkpoint(file, net_); }

  std::string graph_json() const { return net_.summary().to_json(); }
  std::size_t parameter_count() const { return net_.parameter_count(); }
  std::size_t num_branches() const { return net_.num_branches(); }
  std::string config_json() const { return serialize_config(cfg_); }

 private:
  const std::vector<Sample>& samples() {
    if (samples_.empty()) samples_ = generate_samples(cfg_.task, cfg_.task.num_samples);
    return samples_;
  }

  RunConfig cfg_;
  Network<float> net_;
  std::vector<Sample> samples_;
};

}  // namespace

PYBIND11_MODULE(_cseg, m) {
  m.doc() = "Cascade decoder segmentation networks: ops, metrics, training and the command-line driver.";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_RuntimeError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_RuntimeError);

  m.def(
      "conv",
      [](const F64Array& x, const F64Array& w, const std::optional<F64Array>& b, std::size_t stride,
         std::size_t padding) {
        return to_array(conv_forward<double>(nullptr, to_tensor<double>(x), conv_params(w, b, stride, padding, false)));
      },
      "Convolution of an (N, C, spatial...) array with (out, in, kernel...) weights.", py::arg("x"), py::arg("w"),
      py::arg("b") = py::none(), py::arg("stride") = 1, py::arg("padding") = 0);
  m.def(
      "deconv",
      [](const F64Array& x, const F64Array& w, const std::optional<F64Array>& b, std::size_t stride,
         std::size_t padding) {
        return to_array(deconv_forward<double>(nullptr, to_tensor<double>(x), conv_params(w, b, stride, padding, true)));
      },
      "Transposed convolution with (in, out, kernel...) weights.", py::arg("x"), py::arg("w"),
      py::arg("b") = py::none(), py::arg("stride") = 2, py::arg("padding") = 1);
  m.def(
      "maxpool",
      [](const F64Array& x, std::size_t window) {
        const Extents e(static_cast<std::size_t>(x.ndim()) - 2, window);
        return to_array(cseg::maxpool<double>(nullptr, to_tensor<double>(x), e, e));
      },
      "Non-overlapping max pooling over the spatial axes.", py::arg("x"), py::arg("window") = 2);
  m.def(
      "softmax", [](const F64Array& x) { return to_array(softmax_channels<double>(nullptr, to_tensor<double>(x))); },
      "Softmax over the channel axis.", py::arg("x"));

  m.def(
      "dice", [](const LabelArray& p, const LabelArray& g, std::int32_t cls) { return dice_score(to_mask(p), to_mask(g), cls); },
      "Dice score of class `cls`.", py::arg("pred"), py::arg("gt"), py::arg("cls"));
  m.def(
      "boundary_distances",
      [](const LabelArray& p, const LabelArray& g, std::int32_t cls, std::vector<double> spacing) {
        if (spacing.empty()) spacing.assign(static_cast<std::size_t>(p.ndim()), 1.0);
        const auto d = cseg::boundary_distances(to_mask(p), to_mask(g), cls, spacing);
        return py::make_tuple(distance(d.adb), distance(d.hd));
      },
      "(average boundary distance, Hausdorff distance) of class `cls`; None when undefined.", py::arg("pred"),
      py::arg("gt"), py::arg("cls"), py::arg("spacing") = std::vector<double>{});

  m.def(
      "generate_samples",
      [](const std::string& config_json, std::size_t count) {
        const auto cfg = parse_config(config_json);
        validate(cfg.task);
        py::list out;
        for (const auto& s : cseg::generate_samples(cfg.task, count))
          out.append(py::make_tuple(to_array(s.image), to_array(s.label)));
        return out;
      },
      "(image, label) pairs of the configured synthetic task.", py::arg("config_json"), py::arg("count"));

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      "Runs a command-line invocation in-process; returns (exit code, stdout, stderr).", py::arg("args"));

  py::class_<PyNetwork>(m, "Network")
      .def(py::init<const std::string&>(), py::arg("config_json"))
      .def("forward", &PyNetwork::forward, py::arg("x"), py::arg("train_mode") = false)
      .def("train", &PyNetwork::train, py::arg("steps") = py::none())
      .def("evaluate", &PyNetwork::evaluate)
      .def("save", &PyNetwork::save, py::arg("file"))
      .def("load", &PyNetwork::load, py::arg("file"))
      .def("graph_json", &PyNetwork::graph_json)
      .def("config_json", &PyNetwork::config_json)
      .def_property_readonly("parameter_count", &PyNetwork::parameter_count)
      .def_property_readonly("num_branches", &PyNetwork::num_branches);
}
