#include "siammask/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <opencv2/imgproc.hpp>

#include "siammask/errors.hpp"

namespace siammask {

namespace {

double mean_of(std::span<const double> v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

cv::Mat to_mat(const BinaryMask& m) {
  cv::Mat out(m.height(), m.width(), CV_8UC1);
  const auto v = m.values();
  for (std::size_t i = 0; i < v.size(); ++i) out.data[i] = v[i] ? 255 : 0;
  return out;
}

// Foreground pixels with a background 8-neighbour; outside the image counts as background.
cv::Mat boundary(const BinaryMask& m) {
  const cv::Mat img = to_mat(m);
  cv::Mat eroded;
  cv::erode(img, eroded, cv::getStructuringElement(cv::MORPH_RECT, {3, 3}), {-1, -1}, 1, cv::BORDER_CONSTANT,
            cv::Scalar(0));
  return img - eroded;
}

// Fraction of `from` boundary pixels within `tol` of the `to` boundary.
double matched_fraction(const cv::Mat& from, const cv::Mat& to, int tol) {
  const int total = cv::countNonZero(from);
  if (total == 0) return 0.0;
  cv::Mat inverted = to == 0;
  cv::Mat dist;
  cv::distanceTransform(inverted, dist, cv::DIST_L2, cv::DIST_MASK_PRECISE);
  int hit = 0;
  for (int y = 0; y < from.rows; ++y) {
    const auto* f = from.ptr<std::uint8_t>(y);
    const auto* d = dist.ptr<float>(y);
    for (int x = 0; x < from.cols; ++x) hit += f[x] && d[x] <= tol + 1e-4;
  }
  return static_cast<double>(hit) / total;
}

}  // namespace

CurveStats curve_stats(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("curve_stats: empty sequence");
  CurveStats s;
  s.mean = mean_of(v);
  s.recall = static_cast<double>(std::count_if(v.begin(), v.end(), [](double x) { return x > 0.5; })) /
             static_cast<double>(v.size());
  const std::size_t q = std::max<std::size_t>(1, v.size() / 4);
  s.decay = mean_of(v.first(q)) - mean_of(v.last(q));
  return s;
}

double region_similarity(const BinaryMask& pred, const BinaryMask& gt) {
  if (!pred.same_size(gt)) throw ShapeError("region_similarity: mask sizes differ");
  if (pred.empty() && gt.empty()) return 1.0;
  return iou_mask(pred, gt);
}

int contour_tolerance(int height, int width) {
  return std::max(1, static_cast<int>(std::ceil(0.008 * std::hypot(height, width))));
}

double contour_fmeasure(const BinaryMask& pred, const BinaryMask& gt) {
  if (!pred.same_size(gt)) throw ShapeError("contour_fmeasure: mask sizes differ");
  const cv::Mat bp = boundary(pred), bg = boundary(gt);
  const bool ep = cv::countNonZero(bp) == 0, eg = cv::countNonZero(bg) == 0;
  if (ep && eg) return 1.0;
  if (ep || eg) return 0.0;
  const int tol = contour_tolerance(pred.height(), pred.width());
  const double precision = matched_fraction(bp, bg, tol);
  const double recall = matched_fraction(bg, bp, tol);
  if (precision + recall == 0.0) return 0.0;
  return 2 * precision * recall / (precision + recall);
}

SuccessStats success_map(const std::vector<std::vector<double>>& per_sequence, const std::vector<double>& thresholds) {
  SuccessStats s;
  for (double t : thresholds) s.ap[t] = 0.0;
  int used = 0;
  for (const auto& ious : per_sequence) {
    if (ious.empty()) continue;
    ++used;
    s.miou += mean_of(ious);
    for (double t : thresholds) {
      const auto hits = std::count_if(ious.begin(), ious.end(), [t](double x) { return x >= t; });
      s.ap[t] += static_cast<double>(hits) / static_cast<double>(ious.size());
    }
  }
  if (used > 0) {
    s.miou /= used;
    for (auto& [t, v] : s.ap) v /= used;
  }
  return s;
}

double box_iou(const RotatedBox& a, const RotatedBox& b) { return iou_rotated(a, b); }

ResetRun run_reset_protocol(Tracker& tracker, const Sequence& seq, int object_id, const ResetOptions& opt) {
  const ObjectAnnotation& obj = seq.object(object_id);
  const int n = seq.frame_count();
  ResetRun run;
  run.overlaps.assign(n, 0.0);
  run.counted.assign(n, false);
  int next_init = 0;
  bool active = false, reinit = false;
  int init_frame = 0;
  for (int t = 0; t < n; ++t) {
    if (!active) {
      if (t < next_init || !obj.visible(t)) continue;
      tracker.init(seq.frames[t], obj.boxes[t]);
      active = true;
      init_frame = t;
      run.overlaps[t] = 1.0;
      continue;
    }
    const FrameResult r = tracker.track(seq.frames[t]);
    if (!obj.visible(t)) continue;
    const double o = iou_mask(r.mask, obj.masks[t]);
    run.overlaps[t] = o;
    if (o == 0.0) {
      ++run.failures;
      active = false;
      reinit = true;
      next_init = t + opt.reinit_gap;
      continue;
    }
    run.counted[t] = !reinit || t - init_frame > opt.burn_in;
  }
  return run;
}

AccuracyRobustness accuracy_robustness(std::span<const ResetRun> runs) {
  AccuracyRobustness out;
  double sum = 0.0;
  int frames = 0;
  for (const ResetRun& r : runs) {
    out.failures += r.failures;
    for (std::size_t t = 0; t < r.overlaps.size(); ++t) {
      if (!r.counted[t]) continue;
      sum += r.overlaps[t];
      ++frames;
    }
  }
  out.accuracy = frames > 0 ? sum / frames : 0.0;
  return out;
}

OracleReport representation_oracles(const std::vector<Sequence>& data) {
  std::vector<std::vector<double>> fixed, minmax, rect;
  for (const Sequence& seq : data) {
    for (const ObjectAnnotation& obj : seq.objects) {
      std::vector<double> f, m, r;
      double aspect = 0.0;
      for (int t = 0; t < seq.frame_count(); ++t) {
        if (!obj.visible(t)) continue;
        const RotatedBox& gt = obj.rotated[t];
        const AxisBox& axis = obj.boxes[t];
        if (aspect == 0.0) aspect = axis.width() / axis.height();
        const double w = std::sqrt(gt.area() * aspect), h = std::sqrt(gt.area() / aspect);
        f.push_back(box_iou(RotatedBox::from_axis(AxisBox::from_center(gt.cx, gt.cy, w, h)), gt));
        m.push_back(box_iou(RotatedBox::from_axis(axis), gt));
        r.push_back(box_iou(mbr(obj.masks[t]), gt));
      }
      fixed.push_back(std::move(f));
      minmax.push_back(std::move(m));
      rect.push_back(std::move(r));
    }
  }
  OracleReport out;
  out.fixed_aspect = success_map(fixed);
  out.min_max = success_map(minmax);
  out.mbr = success_map(rect);
  out.sequences = static_cast<int>(data.size());
  return out;
}

MetricsReport evaluate(const std::vector<Sequence>& data, const std::vector<ObjectResult>& results) {
  MetricsReport rep;
  std::vector<std::vector<double>> box_ious;
  std::vector<CurveStats> js, fs;
  // [seen/unseen][J/F]
  std::vector<CurveStats> parts[2][2];
  for (const ObjectResult& res : results) {
    const auto seq_it = std::find_if(data.begin(), data.end(), [&](const Sequence& s) { return s.name == res.sequence; });
    if (seq_it == data.end()) throw ConfigError("evaluate: unknown sequence '" + res.sequence + "'");
    const Sequence& seq = *seq_it;
    const auto obj_it = std::find_if(seq.objects.begin(), seq.objects.end(),
                                     [&](const ObjectAnnotation& o) { return o.id == res.object_id; });
    if (obj_it == seq.objects.end()) {
      throw ConfigError("evaluate: sequence '" + res.sequence + "' has no object " + std::to_string(res.object_id));
    }
    const ObjectAnnotation& obj = *obj_it;
    const auto n = static_cast<std::size_t>(seq.frame_count());
    if (res.masks.size() != n || res.boxes.size() != n) {
      throw ConfigError("evaluate: " + res.sequence + "/" + std::to_string(res.object_id) + " has " +
                        std::to_string(res.masks.size()) + " masks and " + std::to_string(res.boxes.size()) +
                        " boxes for " + std::to_string(n) + " frames");
    }
    std::vector<double> jv, fv, bv;
    bool started = false;
    for (std::size_t t = 0; t < n; ++t) {
      if (!started) {
        started = obj.visible(static_cast<int>(t));
        continue;
      }
      jv.push_back(region_similarity(res.masks[t], obj.masks[t]));
      fv.push_back(contour_fmeasure(res.masks[t], obj.masks[t]));
      if (obj.visible(static_cast<int>(t))) bv.push_back(box_iou(res.boxes[t], obj.rotated[t]));
    }
    if (jv.empty()) continue;
    ++rep.objects;
    rep.frames += static_cast<int>(jv.size());
    const CurveStats j = curve_stats(jv), f = curve_stats(fv);
    js.push_back(j);
    fs.push_back(f);
    parts[seq.seen ? 0 : 1][0].push_back(j);
    parts[seq.seen ? 0 : 1][1].push_back(f);
    box_ious.push_back(std::move(bv));
  }
  auto average = [](const std::vector<CurveStats>& v) {
    CurveStats s;
    for (const CurveStats& c : v) {
      s.mean += c.mean / v.size();
      s.recall += c.recall / v.size();
      s.decay += c.decay / v.size();
    }
    return s;
  };
  rep.j = average(js);
  rep.f = average(fs);
  rep.boxes = success_map(box_ious);
  if (!parts[0][0].empty()) {
    rep.j_seen = average(parts[0][0]);
    rep.f_seen = average(parts[0][1]);
  }
  if (!parts[1][0].empty()) {
    rep.j_unseen = average(parts[1][0]);
    rep.f_unseen = average(parts[1][1]);
  }
  if (rep.j_seen && rep.j_unseen) {
    rep.overall = (rep.j_seen->mean + rep.j_unseen->mean + rep.f_seen->mean + rep.f_unseen->mean) / 4.0;
  }
  return rep;
}

void to_json(nlohmann::json& j, const CurveStats& s) {
  j = nlohmann::json{{"mean", s.mean}, {"recall", s.recall}, {"decay", s.decay}};
}

void to_json(nlohmann::json& j, const SuccessStats& s) {
  nlohmann::json ap = nlohmann::json::object();
  for (const auto& [t, v] : s.ap) {
    char key[16];
    std::snprintf(key, sizeof key, "%.2f", t);
    ap[key] = v;
  }
  j = nlohmann::json{{"miou", s.miou}, {"ap", ap}};
}

void to_json(nlohmann::json& j, const AccuracyRobustness& s) {
  j = nlohmann::json{{"accuracy", s.accuracy}, {"failures", s.failures}};
}

void to_json(nlohmann::json& j, const OracleReport& r) {
  j = nlohmann::json{{"fixed_aspect", r.fixed_aspect}, {"min_max", r.min_max}, {"mbr", r.mbr}, {"sequences", r.sequences}};
}

void to_json(nlohmann::json& j, const MetricsReport& r) {
  auto opt = [](const auto& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  j = nlohmann::json{{"boxes", r.boxes},       {"j", r.j},
                     {"f", r.f},               {"j_seen", opt(r.j_seen)},
                     {"j_unseen", opt(r.j_unseen)}, {"f_seen", opt(r.f_seen)},
                     {"f_unseen", opt(r.f_unseen)}, {"overall", opt(r.overall)},
                     {"reset", opt(r.reset)},  {"objects", r.objects},
                     {"frames", r.frames}};
}

}  // namespace siammask
