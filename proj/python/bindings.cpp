#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "cli.hpp"
#include "siammask/checkpoint.hpp"
#include "siammask/errors.hpp"
#include "siammask/eval.hpp"
#include "siammask/geom.hpp"
#include "siammask/model.hpp"
#include "siammask/synthdata.hpp"
#include "siammask/track.hpp"

namespace py = pybind11;
using namespace siammask;

namespace {

using MaskArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

BinaryMask to_mask(const MaskArray& a) {
  if (a.ndim() != 2) throw ShapeError("mask must be a 2-D array");
  const auto* p = a.data();
  std::vector<std::uint8_t> v(p, p + a.size());
  for (auto& x : v) x = x != 0;
  return BinaryMask(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), std::move(v));
}

py::array_t<std::uint8_t> from_mask(const BinaryMask& m) {
  py::array_t<std::uint8_t> out({m.height(), m.width()});
  std::copy(m.values().begin(), m.values().end(), out.mutable_data());
  return out;
}

py::array_t<std::uint8_t> from_frame(const cv::Mat& f) {
  py::array_t<std::uint8_t> out({f.rows, f.cols, 3});
  std::memcpy(out.mutable_data(), f.data, f.total() * 3);
  return out;
}

cv::Mat to_frame(const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw ShapeError("frame must be an H x W x 3 array");
  cv::Mat m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), CV_8UC3);
  std::memcpy(m.data, a.data(), m.total() * 3);
  return m;
}

py::tuple axis_tuple(const AxisBox& b) { return py::make_tuple(b.x_min, b.y_min, b.x_max, b.y_max); }
py::tuple rotated_tuple(const RotatedBox& b) { return py::make_tuple(b.cx, b.cy, b.w, b.h, b.angle); }
RotatedBox rotated_from(const std::array<double, 5>& v) { return {v[0], v[1], v[2], v[3], v[4]}; }

py::dict sequence_dict(const Sequence& s) {
  py::list frames, objects;
  for (const cv::Mat& f : s.frames) frames.append(from_frame(f));
  for (const ObjectAnnotation& o : s.objects) {
    py::list masks, boxes, rotated;
    for (std::size_t t = 0; t < o.masks.size(); ++t) {
      masks.append(from_mask(o.masks[t]));
      boxes.append(axis_tuple(o.boxes[t]));
      rotated.append(rotated_tuple(o.rotated[t]));
    }
    py::dict d;
    d["id"] = o.id;
    d["class_tag"] = o.class_tag;
    d["masks"] = masks;
    d["boxes"] = boxes;
    d["rotated"] = rotated;
    objects.append(d);
  }
  py::dict out;
  out["name"] = s.name;
  out["frames"] = frames;
  out["objects"] = objects;
  return out;
}

ModelConfig config_named(const std::string& name) {
  if (name == "paper") return ModelConfig::paper();
  if (name == "toy") return ModelConfig::toy();
  throw ConfigError("unknown model config '" + name + "' (paper or toy)");
}

// Per-RoW output sizes on the default exemplar and search sides.
py::dict response_shapes(const std::string& config, const std::string& variant) {
  const SiamMaskModel m(config_named(config), variant_from_string(variant), 1);
  const ModelConfig& c = m.config();
  nn::NoGradGuard guard;
  const nn::Var z(nn::Tensor(3, c.exemplar_side, c.exemplar_side, 0.1));
  const nn::Var x(nn::Tensor(3, c.search_side, c.search_side, 0.1));
  const nn::Var corr = nn::depthwise_xcorr(m.adjust_search(m.backbone_forward(x).final),
                                           m.adjust_exemplar(m.backbone_forward(z).final));
  const ResponseGrid g = m.heads_forward(corr, true);
  py::dict out;
  out["grid"] = py::make_tuple(g.scores.value().h, g.scores.value().w);
  out["score"] = g.scores.value().c;
  out["mask"] = g.mask_logits.value().c;
  if (m.variant() == Variant::three_branch) out["box"] = g.box_deltas.value().c;
  return out;
}

class PyTracker {
 public:
  PyTracker(const std::filesystem::path& checkpoint, const std::string& strategy)
      : model_(load_checkpoint(checkpoint).model) {
    TrackerOptions o;
    o.strategy = box_strategy_from_string(strategy);
    tracker_ = std::make_unique<SiamMaskTracker>(model_, o);
  }
  void init(const py::array_t<std::uint8_t>& frame, const std::array<double, 4>& box) {
    tracker_->init(to_frame(frame), {box[0], box[1], box[2], box[3]});
  }
  py::dict track(const py::array_t<std::uint8_t>& frame) {
    const FrameResult r = tracker_->track(to_frame(frame));
    py::dict d;
    d["mask"] = from_mask(r.mask);
    d["box"] = axis_tuple(r.box.axis);
    d["rotated"] = rotated_tuple(r.box.rotated);
    d["score"] = r.score;
    return d;
  }

 private:
  SiamMaskModel model_;
  std::unique_ptr<SiamMaskTracker> tracker_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Mask-producing Siamese tracker: geometry, metrics, synthetic data and tracking.";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<EmptyMaskError>(m, "EmptyMaskError", PyExc_ValueError);

  m.def("iou_mask", [](const MaskArray& a, const MaskArray& b) { return iou_mask(to_mask(a), to_mask(b)); });
  m.def("min_max_box", [](const MaskArray& a) { return axis_tuple(min_max_box(to_mask(a))); },
        "Tightest axis-aligned box (x_min, y_min, x_max, y_max) in pixel-edge coordinates.");
  m.def("mbr", [](const MaskArray& a) { return rotated_tuple(mbr(to_mask(a))); },
        "Minimum-area rotated rectangle (cx, cy, w, h, angle).");
  m.def("iou_rotated", [](const std::array<double, 5>& a, const std::array<double, 5>& b) {
    return iou_rotated(rotated_from(a), rotated_from(b));
  });
  m.def(
      "hungarian",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
        if (a.ndim() != 2) throw ShapeError("affinity must be a 2-D array");
        AffinityMatrix mat(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
        std::copy(a.data(), a.data() + a.size(), mat.values.begin());
        const Assignment s = hungarian(mat);
        return py::make_tuple(s.pairs, s.total);
      },
      "Maximum-affinity assignment: ([(row, col), ...], total).");

  m.def("curve_stats", [](const std::vector<double>& v) {
    const CurveStats s = curve_stats(v);
    return py::dict(py::arg("mean") = s.mean, py::arg("recall") = s.recall, py::arg("decay") = s.decay);
  });
  m.def("contour_fmeasure",
        [](const MaskArray& a, const MaskArray& b) { return contour_fmeasure(to_mask(a), to_mask(b)); });

  m.def(
      "random_sequence",
      [](std::uint64_t seed, int objects, int frames) {
        RandomSceneOptions o;
        o.objects = objects;
        o.frames = frames;
        return sequence_dict(generate(random_scene(seed, o), "seq"));
      },
      py::arg("seed"), py::arg("objects") = 1, py::arg("frames") = 30);

  m.def("response_shapes", &response_shapes, py::arg("config") = "paper", py::arg("variant") = "three_branch");

  py::class_<PyTracker>(m, "Tracker")
      .def(py::init<const std::filesystem::path&, const std::string&>(), py::arg("checkpoint"),
           py::arg("strategy") = "min_max")
      .def("init", &PyTracker::init)
      .def("track", &PyTracker::track);

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "siammask");
        std::ostringstream out, err;
        const int code = cli::run(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      "Runs one command line in-process: (exit code, stdout, stderr).");
}
