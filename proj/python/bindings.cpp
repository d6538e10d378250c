#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <tuple>

#include "sdpoint/checkpoint.hpp"
#include "sdpoint/cost_model.hpp"
#include "sdpoint/error.hpp"
#include "sdpoint/evaluation.hpp"
#include "sdpoint/sdpoint.hpp"

namespace py = pybind11;
using namespace sdpoint;

namespace {

using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using F32Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

Shape shape4(const py::buffer_info& info) {
  if (info.ndim != 4) throw UsageError("expected a 4-d array (n, c, h, w)");
  return {static_cast<std::size_t>(info.shape[0]), static_cast<std::size_t>(info.shape[1]),
          static_cast<std::size_t>(info.shape[2]), static_cast<std::size_t>(info.shape[3])};
}

template <typename T>
BasicTensor4<T> to_tensor(const py::array_t<T, py::array::c_style | py::array::forcecast>& a) {
  const py::buffer_info info = a.request();
  BasicTensor4<T> t(shape4(info));
  std::memcpy(t.data().data(), info.ptr, t.size() * sizeof(T));
  return t;
}

template <typename T>
py::array_t<T> to_array(const BasicTensor4<T>& t) {
  const Shape& s = t.shape();
  py::array_t<T> out(std::vector<py::ssize_t>{static_cast<py::ssize_t>(s.n), static_cast<py::ssize_t>(s.c),
                                             static_cast<py::ssize_t>(s.h), static_cast<py::ssize_t>(s.w)});
  std::memcpy(out.mutable_data(), t.data().data(), t.size() * sizeof(T));
  return out;
}

// A loaded checkpoint ready for inference on raw [0, 1] images.
class Model {
 public:
  explicit Model(const std::string& path) : ckpt_(load_checkpoint(path)), net_(network_from_checkpoint(ckpt_)) {
    targets_ = eval_targets(ckpt_.spec, ckpt_.mode, ckpt_.ratios);
  }

  std::vector<std::string> instance_ids() const {
    std::vector<std::string> ids;
    for (const EvalTarget& t : targets_) ids.push_back(t.id);
    return ids;
  }

  std::uint64_t flops(const std::string& id) const { return target_flops(ckpt_.spec, find_target(targets_, id)); }

  py::array_t<int> predict(const F32Array& images, const std::string& id, const std::string& bn) {
    Tensor4 x = to_tensor<float>(images);
    const Shape& s = x.shape();
    if (s.c != 3) throw UsageError("images must have 3 channels");
    for (std::size_t i = 0; i < x.size(); ++i) {
      const std::size_t c = (i / s.spatial()) % 3;
      x[i] = (x[i] - ckpt_.norm.mean[c]) / ckpt_.norm.std[c];
    }
    const BnSelection selection = parse_bn_selection(bn);
    const InstanceBNStore* store = ckpt_.store ? &*ckpt_.store : nullptr;
    Predictions p;
    {
      py::gil_scoped_release release;
      p = sdpoint::predict(net_, find_target(targets_, id), selection, store, x);
    }
    return py::array_t<int>(static_cast<py::ssize_t>(p.predicted.size()), p.predicted.data());
  }

  py::dict storage() const {
    const StorageReport r = storage_overhead_report(ckpt_);
    py::dict d;
    d["checkpoint_bytes"] = r.checkpoint_bytes;
    d["store_bytes"] = r.store_bytes;
    d["param_bytes"] = r.param_bytes;
    d["overhead_vs_params"] = r.overhead_vs_params();
    return d;
  }

  std::string mode() const { return std::string(train_mode_name(ckpt_.mode)); }
  bool calibrated() const { return ckpt_.store.has_value(); }
  std::uint64_t params() const { return param_count(ckpt_.spec); }

 private:
  Checkpoint ckpt_;
  Network<float> net_;
  std::vector<EvalTarget> targets_;
};

}  // namespace

PYBIND11_MODULE(_sdpoint, m) {
  m.doc() = "Stochastic downsampling CNN: pooling, instance catalog, cost model and checkpoint inference.";

  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_IOError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  m.def("target_size", &target_size, py::arg("in_size"), py::arg("ratio"));
  m.def(
      "pool_windows",
      [](std::size_t in, std::size_t out) {
        std::vector<std::pair<std::size_t, std::size_t>> w;
        for (const PoolWindow& p : pool_windows(in, out)) w.emplace_back(p.start, p.end);
        return w;
      },
      py::arg("in_size"), py::arg("out_size"), "Half-open [start, end) input range per output cell.");
  m.def(
      "adaptive_avg_pool",
      [](const F64Array& x, std::size_t out_h, std::size_t out_w) {
        return to_array(adaptive_avg_pool_forward(to_tensor<double>(x), out_h, out_w));
      },
      py::arg("x"), py::arg("out_h"), py::arg("out_w"));
  m.def(
      "adaptive_avg_pool_backward",
      [](const F64Array& grad_out, std::tuple<std::size_t, std::size_t, std::size_t, std::size_t> input_shape) {
        const auto [n, c, h, w] = input_shape;
        const BasicTensor4<double> g = to_tensor<double>(grad_out);
        AdaptivePoolCache cache{Shape{n, c, h, w}, g.shape().h, g.shape().w};
        return to_array(adaptive_avg_pool_backward(g, cache));
      },
      py::arg("grad_out"), py::arg("input_shape"));
  m.def("padded_pixel_ratio", &padded_pixel_ratio, py::arg("h"), py::arg("w"), py::arg("kernel"), py::arg("pad"));

  m.def(
      "catalog_ids", [](std::size_t n, std::vector<double> ratios) { return enumerate_instances(n, ratios).ids(); },
      py::arg("num_points"), py::arg("ratios") = std::vector<double>{0.5, 0.75});

  m.def(
      "cost_table",
      [](std::size_t depth, std::size_t widen, std::vector<double> ratios, std::size_t input_size,
         std::size_t classes) {
        const NetworkSpec spec = wide_resnet_spec(depth, widen, classes);
        std::vector<std::pair<std::string, std::uint64_t>> rows;
        for (const Instance& inst : enumerate_instances(spec.num_blocks(), ratios).instances)
          rows.emplace_back(inst.id(), instance_cost(spec, inst, input_size).flops);
        return rows;
      },
      py::arg("depth"), py::arg("widen"), py::arg("ratios") = std::vector<double>{0.5, 0.75},
      py::arg("input_size") = 32, py::arg("classes") = 10, "(instance id, FLOPs) for every catalog entry.");
  m.def(
      "param_count",
      [](std::size_t depth, std::size_t widen, std::size_t classes) {
        return param_count(wide_resnet_spec(depth, widen, classes));
      },
      py::arg("depth"), py::arg("widen"), py::arg("classes") = 10);

  m.def(
      "pareto_filter",
      [](const std::vector<std::tuple<std::string, std::uint64_t, double>>& points) {
        std::vector<CurvePoint> in;
        for (const auto& [id, flops, error] : points) in.push_back(CurvePoint{id, flops, error});
        std::vector<std::tuple<std::string, std::uint64_t, double>> out;
        for (const CurvePoint& p : pareto_filter(in)) out.emplace_back(p.id, p.flops, p.error);
        return out;
      },
      py::arg("points"), "Keeps (id, flops, error) points whose error beats every cheaper point.");

  py::class_<Model>(m, "Model")
      .def(py::init<const std::string&>(), py::arg("path"))
      .def_property_readonly("mode", &Model::mode)
      .def_property_readonly("calibrated", &Model::calibrated)
      .def_property_readonly("params", &Model::params)
      .def("instance_ids", &Model::instance_ids)
      .def("flops", &Model::flops, py::arg("instance"))
      .def("predict", &Model::predict, py::arg("images"), py::arg("instance") = "p0", py::arg("bn") = "instance",
           "Class predictions for (n, 3, h, w) images scaled to [0, 1].")
      .def("storage", &Model::storage);
}
