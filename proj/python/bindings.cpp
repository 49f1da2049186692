#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "omnipose/commands.hpp"
#include "omnipose/error.hpp"
#include "omnipose/gdm.hpp"
#include "omnipose/heatmap.hpp"
#include "omnipose/io.hpp"
#include "omnipose/metrics.hpp"
#include "omnipose/model.hpp"
#include "omnipose/ops.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace omnipose;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array a(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), a.mutable_data());
  return a;
}

Hw to_hw(const std::pair<std::size_t, std::size_t>& p) { return {p.first, p.second}; }

// [K, 3] rows of (x, y, v).
std::vector<Keypoint> to_keypoints(const Array& a) {
  if (a.ndim() != 2 || a.shape(1) != 3) throw ShapeError("keypoints must have shape [K, 3]");
  std::vector<Keypoint> out;
  for (py::ssize_t i = 0; i < a.shape(0); ++i) {
    out.push_back({a.at(i, 0), a.at(i, 1), static_cast<int>(a.at(i, 2))});
  }
  return out;
}

Array from_keypoints(const std::vector<Keypoint>& kps) {
  Array a({static_cast<py::ssize_t>(kps.size()), py::ssize_t{3}});
  for (std::size_t i = 0; i < kps.size(); ++i) {
    a.mutable_at(i, 0) = kps[i].x;
    a.mutable_at(i, 1) = kps[i].y;
    a.mutable_at(i, 2) = kps[i].v;
  }
  return a;
}

ConvLayer make_layer(const Array& weights, const std::optional<Array>& bias, const std::string& mode,
                     std::pair<std::size_t, std::size_t> stride, std::pair<std::size_t, std::size_t> dilation,
                     std::pair<std::size_t, std::size_t> padding, const std::optional<Array>& pointwise_weights,
                     const std::optional<Array>& pointwise_bias) {
  ConvLayer l{to_tensor(weights)};
  if (bias) l.bias = to_tensor(*bias);
  if (pointwise_weights) l.pointwise_weights = to_tensor(*pointwise_weights);
  if (pointwise_bias) l.pointwise_bias = to_tensor(*pointwise_bias);
  l.mode = conv_mode_from_string(mode);
  l.stride = to_hw(stride);
  l.dilation = to_hw(dilation);
  l.padding = to_hw(padding);
  return l;
}

py::dict ap_dict(const metrics::ApReport& r) {
  py::dict d;
  d["ap"] = r.ap;
  d["ap50"] = r.ap50;
  d["ap75"] = r.ap75;
  d["ap_m"] = r.ap_medium;
  d["ap_l"] = r.ap_large;
  d["ar"] = r.ar;
  d["thresholds"] = r.thresholds;
  d["ap_per_threshold"] = r.ap_per_threshold;
  d["ar_per_threshold"] = r.ar_per_threshold;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "OmniPose computational core";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<SchemaError>(m, "SchemaError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  const auto one = std::make_pair<std::size_t, std::size_t>(1, 1);
  const auto zero = std::make_pair<std::size_t, std::size_t>(0, 0);

  m.def(
      "conv2d",
      [](const Array& x, const Array& weights, const std::optional<Array>& bias, const std::string& mode,
         std::pair<std::size_t, std::size_t> stride, std::pair<std::size_t, std::size_t> dilation,
         std::pair<std::size_t, std::size_t> padding, const std::optional<Array>& pointwise_weights,
         const std::optional<Array>& pointwise_bias) {
        const ConvLayer l = make_layer(weights, bias, mode, stride, dilation, padding, pointwise_weights, pointwise_bias);
        return to_array(conv2d(to_tensor(x), l));
      },
      py::arg("x"), py::arg("weights"), py::arg("bias") = py::none(), py::arg("mode") = "standard",
      py::arg("stride") = one, py::arg("dilation") = one, py::arg("padding") = zero,
      py::arg("pointwise_weights") = py::none(), py::arg("pointwise_bias") = py::none());

  m.def(
      "transposed_conv2d",
      [](const Array& x, const Array& weights, const std::optional<Array>& bias, const std::string& mode,
         std::pair<std::size_t, std::size_t> stride, std::pair<std::size_t, std::size_t> dilation,
         std::pair<std::size_t, std::size_t> padding, std::pair<std::size_t, std::size_t> output_padding) {
        const ConvLayer l = make_layer(weights, bias, mode, stride, dilation, padding, std::nullopt, std::nullopt);
        return to_array(transposed_conv2d(to_tensor(x), l, to_hw(output_padding)));
      },
      py::arg("x"), py::arg("weights"), py::arg("bias") = py::none(), py::arg("mode") = "standard",
      py::arg("stride") = one, py::arg("dilation") = one, py::arg("padding") = zero,
      py::arg("output_padding") = zero);

  m.def("avg_pool_global", [](const Array& x) { return to_array(avg_pool_global(to_tensor(x))); }, py::arg("x"));

  m.def(
      "modulate",
      [](const Array& x, std::size_t kernel_size, double sigma) {
        gdm::GdmConfig cfg;
        cfg.kernel_size = kernel_size;
        cfg.sigma = sigma;
        return to_array(gdm::modulate(to_tensor(x), cfg));
      },
      py::arg("x"), py::arg("kernel_size") = 7, py::arg("sigma") = 2.0);

  m.def(
      "encode",
      [](const Array& keypoints, std::size_t height, std::size_t width, std::size_t stride, double sigma,
         double offset_x, double offset_y) {
        PoseAnnotation a;
        a.keypoints = to_keypoints(keypoints);
        const auto t = codec::encode(a, codec::HeatmapMeta{stride, offset_x, offset_y, sigma}, height, width);
        return py::make_tuple(to_array(t.heatmaps), t.mask);
      },
      py::arg("keypoints"), py::arg("height"), py::arg("width"), py::arg("stride") = 4, py::arg("sigma") = 3.0,
      py::arg("offset_x") = 0.0, py::arg("offset_y") = 0.0,
      "Render [K, H, W] target heatmaps for [K, 3] keypoints; returns (heatmaps, mask).");

  m.def(
      "decode",
      [](const Array& heatmaps, std::size_t stride, double offset_x, double offset_y, const std::string& refinement) {
        const auto joints = codec::decode(to_tensor(heatmaps), codec::HeatmapMeta{stride, offset_x, offset_y, 3.0},
                                          codec::refinement_from_string(refinement));
        std::vector<Keypoint> kps;
        std::vector<double> conf;
        for (const auto& j : joints) {
          kps.push_back(j.keypoint);
          conf.push_back(j.confidence);
        }
        return py::make_tuple(from_keypoints(kps), conf);
      },
      py::arg("heatmaps"), py::arg("stride") = 4, py::arg("offset_x") = 0.0, py::arg("offset_y") = 0.0,
      py::arg("refinement") = "taylor", "Decode [K, H, W] heatmaps; returns ([K, 3] keypoints, confidences).");

  m.def(
      "oks",
      [](const Array& pred, const Array& gt, double area, const std::vector<double>& k) {
        PoseAnnotation p, g;
        p.keypoints = to_keypoints(pred);
        g.keypoints = to_keypoints(gt);
        g.area = area;
        return metrics::oks(p, g, k);
      },
      py::arg("pred"), py::arg("gt"), py::arg("area"), py::arg("k"));

  m.def(
      "pckh",
      [](const std::vector<std::optional<Array>>& preds, const std::vector<Array>& gts,
         const std::vector<double>& head_sizes, double alpha) {
        if (preds.size() != gts.size() || head_sizes.size() != gts.size()) {
          throw ShapeError("preds, gts and head_sizes must have the same length");
        }
        std::vector<std::optional<PoseAnnotation>> p;
        std::vector<PoseAnnotation> g;
        for (std::size_t i = 0; i < gts.size(); ++i) {
          PoseAnnotation a;
          a.keypoints = to_keypoints(gts[i]);
          a.head_size = head_sizes[i];
          g.push_back(a);
          if (preds[i]) {
            PoseAnnotation b;
            b.keypoints = to_keypoints(*preds[i]);
            p.push_back(b);
          } else {
            p.push_back(std::nullopt);
          }
        }
        const auto r = metrics::pckh(p, g, alpha);
        py::dict d;
        d["mean"] = r.mean;
        d["per_joint"] = r.per_joint;
        d["correct"] = r.correct;
        d["labeled"] = r.labeled;
        return d;
      },
      py::arg("preds"), py::arg("gts"), py::arg("head_sizes"), py::arg("alpha") = 0.5);

  m.def(
      "oks_ap",
      [](const std::vector<std::tuple<Array, std::int64_t, double>>& preds,
         const std::vector<std::tuple<Array, std::int64_t, double>>& gts, const std::vector<double>& k) {
        std::vector<PoseAnnotation> p, g;
        for (std::size_t i = 0; i < preds.size(); ++i) {
          PoseAnnotation a;
          a.id = static_cast<std::int64_t>(i);
          a.keypoints = to_keypoints(std::get<0>(preds[i]));
          a.image_id = std::get<1>(preds[i]);
          a.score = std::get<2>(preds[i]);
          p.push_back(a);
        }
        for (std::size_t i = 0; i < gts.size(); ++i) {
          PoseAnnotation a;
          a.id = static_cast<std::int64_t>(i);
          a.keypoints = to_keypoints(std::get<0>(gts[i]));
          a.image_id = std::get<1>(gts[i]);
          a.area = std::get<2>(gts[i]);
          g.push_back(a);
        }
        metrics::OksConfig cfg;
        cfg.k = k;
        return ap_dict(metrics::match_and_ap(p, g, cfg));
      },
      py::arg("preds"), py::arg("gts"), py::arg("k"),
      "COCO-style AP. preds are (keypoints, image_id, score), gts are (keypoints, image_id, area).");

  py::class_<model::Model>(m, "Model")
      .def(py::init([](const std::optional<std::string>& config_json, bool zero_init) {
             const model::ModelConfig cfg = config_json ? io::parse_model_config(*config_json) : model::default_config();
             return model::make_model(cfg, zero_init ? model::Init::zeros : model::Init::uniform);
           }),
           py::arg("config_json") = py::none(), py::arg("zero_init") = false)
      .def("forward", [](const model::Model& self, const Array& image) {
        return to_array(model::forward(self, to_tensor(image)));
      })
      .def("load_weights", [](model::Model& self, const fs::path& dir) { io::read_weights(dir, self); })
      .def("save_weights", [](const model::Model& self, const fs::path& dir) { io::write_weights(dir, self); })
      .def_property_readonly("parameter_count", [](const model::Model& self) { return model::parameter_count(self); })
      .def_property_readonly("config_json", [](const model::Model& self) { return io::serialize_model_config(self.config); });

  m.def("read_tensor", [](const fs::path& path) { return to_array(io::read_tensor(path)); }, py::arg("path"));
  m.def(
      "write_tensor",
      [](const fs::path& path, const Array& a, const std::string& dtype) {
        io::write_tensor(path, to_tensor(a), io::dtype_from_string(dtype));
      },
      py::arg("path"), py::arg("array"), py::arg("dtype") = "f64");

  m.def(
      "evaluate_files",
      [](const fs::path& predictions, const fs::path& ground_truth, const std::string& metric, double alpha,
         const std::optional<fs::path>& oks_config) {
        cli::EvalOptions o;
        o.predictions = predictions;
        o.ground_truth = ground_truth;
        o.metric = cli::metric_from_string(metric);
        o.alpha = alpha;
        o.oks_config = oks_config;
        o.json_to_stdout = true;
        std::ostringstream out;
        cli::cmd_eval(o, out);
        return out.str();
      },
      py::arg("predictions"), py::arg("ground_truth"), py::arg("metric") = "pckh", py::arg("alpha") = 0.5,
      py::arg("oks_config") = py::none(), "Run the eval command; returns the JSON report text.");

  m.def(
      "count_file",
      [](const fs::path& config, const std::optional<std::pair<std::size_t, std::size_t>>& input_size) {
        cli::CountOptions o;
        o.config = config;
        if (input_size) o.input_size = to_hw(*input_size);
        o.json_to_stdout = true;
        std::ostringstream out;
        cli::cmd_count(o, out);
        return out.str();
      },
      py::arg("config"), py::arg("input_size") = py::none(), "Run the count command; returns the JSON report text.");

  m.def(
      "selftest",
      [](bool verbose) {
        std::ostringstream out;
        const int failures = cli::cmd_selftest(out, verbose);
        return py::make_tuple(failures, out.str());
      },
      py::arg("verbose") = false);
}
