#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "ptseg/checkpoint.hpp"
#include "ptseg/config.hpp"
#include "ptseg/error.hpp"
#include "ptseg/eval.hpp"
#include "ptseg/geometry.hpp"
#include "ptseg/model.hpp"
#include "ptseg/scene.hpp"
#include "ptseg/tusimple.hpp"
#include "ptseg/warp.hpp"

namespace py = pybind11;
using namespace ptseg;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using IntArray = py::array_t<int, py::array::c_style | py::array::forcecast>;

// (H, W) or (C, H, W) arrays; 2-D inputs come back 2-D.
warp::FeatureMap to_feature_map(const Array& a) {
  if (a.ndim() != 2 && a.ndim() != 3) throw py::value_error("expected a (H, W) or (C, H, W) array");
  const int c = a.ndim() == 3 ? static_cast<int>(a.shape(0)) : 1;
  const int h = static_cast<int>(a.shape(a.ndim() - 2));
  const int w = static_cast<int>(a.shape(a.ndim() - 1));
  return warp::FeatureMap(warp::Shape3{c, h, w},
                          std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const warp::FeatureMap& fm, bool squeeze) {
  std::vector<py::ssize_t> shape{fm.shape.channels, fm.shape.height, fm.shape.width};
  if (squeeze) shape.erase(shape.begin());
  Array out(shape);
  std::copy(fm.values.begin(), fm.values.end(), out.mutable_data());
  return out;
}

LabelMap to_label_map(const IntArray& a) {
  if (a.ndim() != 2) throw py::value_error("expected a (H, W) label array");
  return LabelMap(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
                  std::vector<int>(a.data(), a.data() + a.size()));
}

IntArray to_array(const LabelMap& m) {
  IntArray out({m.height, m.width});
  std::copy(m.values.begin(), m.values.end(), out.mutable_data());
  return out;
}

tusimple::Record to_record(const py::dict& d) {
  tusimple::Record r;
  r.lanes = d["lanes"].cast<std::vector<std::vector<double>>>();
  r.h_samples = d["h_samples"].cast<std::vector<int>>();
  if (d.contains("raw_file")) r.raw_file = d["raw_file"].cast<std::string>();
  r.validate();
  return r;
}

py::dict to_dict(const tusimple::Record& r) {
  py::dict d;
  d["lanes"] = r.lanes;
  d["h_samples"] = r.h_samples;
  d["raw_file"] = r.raw_file;
  return d;
}

std::vector<tusimple::Record> to_records(const py::list& l) {
  std::vector<tusimple::Record> out;
  for (const auto& item : l) out.push_back(to_record(item.cast<py::dict>()));
  return out;
}

eval::LaneOptions lane_options(double threshold, double match_ratio) {
  eval::LaneOptions o;
  o.threshold = threshold;
  o.lane_match_ratio = match_ratio;
  return o;
}

geometry::Vec3 point(const std::pair<double, double>& p) { return {p.first, p.second, 1.0}; }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Lane segmentation with consecutive perspective transforms";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());

  py::class_<geometry::ViewSpec>(m, "ViewSpec")
      .def(py::init([](double f, double cx, double cy, int width, int height) {
             geometry::ViewSpec v{{f, cx, cy}, width, height};
             v.validate();
             return v;
           }),
           py::arg("f"), py::arg("cx"), py::arg("cy"), py::arg("width"), py::arg("height"))
      .def_property_readonly("f", [](const geometry::ViewSpec& v) { return v.intrinsics.f; })
      .def_property_readonly("cx", [](const geometry::ViewSpec& v) { return v.intrinsics.cx; })
      .def_property_readonly("cy", [](const geometry::ViewSpec& v) { return v.intrinsics.cy; })
      .def_readonly("width", &geometry::ViewSpec::width)
      .def_readonly("height", &geometry::ViewSpec::height)
      .def_property_readonly("K", [](const geometry::ViewSpec& v) { return v.intrinsics.matrix(); })
      .def("__eq__", [](const geometry::ViewSpec& a, const geometry::ViewSpec& b) { return a == b; })
      .def("__repr__", [](const geometry::ViewSpec& v) {
        return "ViewSpec(f=" + std::to_string(v.intrinsics.f) + ", cx=" +
               std::to_string(v.intrinsics.cx) + ", cy=" + std::to_string(v.intrinsics.cy) +
               ", width=" + std::to_string(v.width) + ", height=" + std::to_string(v.height) + ")";
      });

  py::class_<geometry::Homography>(m, "Homography")
      .def(py::init<const geometry::Mat3&, geometry::ViewSpec, geometry::ViewSpec>(),
           py::arg("matrix"), py::arg("source"), py::arg("target"))
      .def_static("identity", &geometry::Homography::identity, py::arg("view"))
      .def_property_readonly("matrix", &geometry::Homography::matrix)
      .def_property_readonly("source", &geometry::Homography::source)
      .def_property_readonly("target", &geometry::Homography::target)
      .def("transfer",
           [](const geometry::Homography& h, double x, double y) {
             const auto p = h.transfer(x, y);
             return std::pair{p.x(), p.y()};
           },
           py::arg("x"), py::arg("y"))
      .def("inverse", &geometry::Homography::inverse)
      .def("after", &geometry::Homography::after, py::arg("first"),
           "self after `first`: apply `first`, then self.");

  py::class_<geometry::ChainStep>(m, "ChainStep")
      .def_property_readonly("rotation",
                             [](const geometry::ChainStep& s) { return s.rotation.matrix(); })
      .def_readonly("homography", &geometry::ChainStep::homography);

  py::class_<geometry::PTLChain>(m, "Chain")
      .def_readonly("steps", &geometry::PTLChain::steps)
      .def_readonly("integral", &geometry::PTLChain::integral)
      .def_property_readonly("source", &geometry::PTLChain::source)
      .def_property_readonly("target", &geometry::PTLChain::target)
      .def("composed", &geometry::PTLChain::composed)
      .def("composition_residual", &geometry::PTLChain::composition_residual)
      .def("inverse", &geometry::invert_chain)
      .def("__len__", &geometry::PTLChain::size);

  m.def(
      "build_chain",
      [](const geometry::ViewSpec& view,
         const std::pair<std::pair<double, double>, std::pair<double, double>>& horizon,
         const std::vector<std::pair<double, double>>& keypoints, int steps,
         std::vector<int> widths) {
        std::vector<geometry::Vec3> pts;
        for (const auto& p : keypoints) pts.push_back(point(p));
        if (widths.empty()) widths.assign(static_cast<std::size_t>(steps), view.width);
        return geometry::build_ptl_chain(view, {point(horizon.first), point(horizon.second)},
                                         geometry::KeyPointSet(pts), steps, widths);
      },
      py::arg("view"), py::arg("horizon"), py::arg("keypoints"), py::arg("steps"),
      py::arg("widths") = std::vector<int>{},
      "Split the front-to-BEV rotation into `steps` pure rotations. `horizon` is "
      "((x0, y0), (x1, y1)); `widths` defaults to the input width for every step.");

  m.def("horizon_to_ground_normal",
        [](const geometry::ViewSpec& view, const std::pair<double, double>& left,
           const std::pair<double, double>& right) {
          const auto& k = view.intrinsics;
          return geometry::horizon_to_ground_normal(k.unproject(left.first, left.second),
                                                    k.unproject(right.first, right.second));
        },
        py::arg("view"), py::arg("left"), py::arg("right"));
  m.def("ground_normal_to_axis_angle", &geometry::ground_normal_to_axis_angle, py::arg("normal"));
  m.def("axis_angle_to_rotation",
        [](const geometry::Vec3& w) { return geometry::axis_angle_to_rotation(w).matrix(); },
        py::arg("omega"));

  m.def(
      "warp",
      [](const Array& a, const geometry::Homography& h) {
        return to_array(warp::warp_forward(to_feature_map(a), h), a.ndim() == 2);
      },
      py::arg("features"), py::arg("homography"),
      "Bilinear inverse warp of a (H, W) or (C, H, W) array into the target view.");
  m.def(
      "warp_adjoint",
      [](const Array& g, const geometry::Homography& h) {
        const auto fm = to_feature_map(g);
        const auto& s = h.source();
        return to_array(
            warp::warp_backward(fm, h, warp::Shape3{fm.shape.channels, s.height, s.width}),
            g.ndim() == 2);
      },
      py::arg("grad"), py::arg("homography"),
      "Transpose of warp: maps a target-view gradient back to the source view.");
  m.def("scale_homography_for_stride", &warp::scale_homography_for_stride, py::arg("homography"),
        py::arg("stride"));

  m.def(
      "tusimple_accuracy",
      [](const py::list& preds, const py::list& gts, double threshold, double match_ratio) {
        return eval::tusimple_accuracy(to_records(preds), to_records(gts),
                                       lane_options(threshold, match_ratio))
            .accuracy;
      },
      py::arg("predictions"), py::arg("ground_truth"), py::arg("threshold") = 20.0,
      py::arg("match_ratio") = 0.85,
      "Records are dicts with 'lanes', 'h_samples' and optionally 'raw_file'.");
  m.def(
      "tusimple_fp_fn",
      [](const py::list& preds, const py::list& gts, double threshold, double match_ratio) {
        const auto r = eval::tusimple_fp_fn(to_records(preds), to_records(gts),
                                            lane_options(threshold, match_ratio));
        return std::pair{r.fp, r.fn};
      },
      py::arg("predictions"), py::arg("ground_truth"), py::arg("threshold") = 20.0,
      py::arg("match_ratio") = 0.85);
  m.def(
      "miou",
      [](const IntArray& pred, const IntArray& gt, const std::vector<int>& classes, int ignore) {
        const auto r = eval::miou(to_label_map(pred), to_label_map(gt), classes, ignore);
        return std::pair{r.miou, r.iou};
      },
      py::arg("prediction"), py::arg("ground_truth"), py::arg("classes"), py::arg("ignore") = -1,
      "Returns (mIoU, per-class IoU); classes with an empty union are NaN.");

  m.def(
      "render_dataset",
      [](std::size_t count, std::uint64_t seed, const std::string& config_text) {
        const auto cfg = config::parse(config_text);
        const auto ds = scene::render_dataset(cfg.data.scene, count, seed);
        py::list out;
        for (const auto& s : ds.samples) {
          py::dict d;
          d["image"] = to_array(s.image, false);
          d["semantic"] = to_array(s.semantic);
          d["instance"] = to_array(s.instance);
          d["lanes"] = to_dict(s.lanes);
          out.append(d);
        }
        return out;
      },
      py::arg("count"), py::arg("seed") = 1, py::arg("config") = "",
      "Synthetic road scenes; `config` is INI text (the [camera] section applies).");

  py::class_<model::PTSegModel>(m, "Model")
      .def_static(
          "load",
          [](const std::string& path) {
            return model::model_from_checkpoint(ad::load_checkpoint(path));
          },
          py::arg("path"))
      .def_property_readonly("warp_ops_per_forward", &model::PTSegModel::warp_ops_per_forward)
      .def_property_readonly("parameter_count", &model::PTSegModel::parameter_count)
      .def_property_readonly("chain", &model::PTSegModel::chain)
      .def(
          "predict",
          [](const model::PTSegModel& self, const Array& image) {
            if (image.ndim() != 3) throw py::value_error("expected a (3, H, W) image");
            const auto p = model::predict(self, to_feature_map(image));
            return std::pair{to_array(p.semantic), to_array(p.instance)};
          },
          py::arg("image"), "Returns (semantic, instance) label maps for a (3, H, W) image in [0, 1].");

  m.def(
      "lanes_from_instances",
      [](const IntArray& instance, const std::vector<int>& h_samples, int min_pixels) {
        return to_dict(model::lanes_from_instances(to_label_map(instance), h_samples, min_pixels));
      },
      py::arg("instance"), py::arg("h_samples"), py::arg("min_pixels") = 10,
      "TuSimple record with the mean column of each instance on every sampled row.");
}
