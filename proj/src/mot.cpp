#include "siammask/mot.hpp"

#include <algorithm>
#include <random>

#include <opencv2/imgproc.hpp>

#include "siammask/errors.hpp"

namespace siammask {

Detection make_detection(BinaryMask mask, double confidence) {
  Detection d;
  d.box = min_max_box(mask);
  d.mask = std::move(mask);
  d.confidence = confidence;
  return d;
}

std::vector<Detection> oracle_detector(const Sequence& seq, int frame, const OracleDetectorOptions& opt) {
  std::mt19937_64 rng(opt.seed * 7919 + static_cast<std::uint64_t>(frame));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Detection> out;
  for (const ObjectAnnotation& obj : seq.objects) {
    // Draw for every object so dropout of one does not shift the others.
    const bool drop = u(rng) < opt.dropout;
    if (drop || !obj.visible(frame)) continue;
    BinaryMask m = obj.masks[frame];
    if (opt.erosion > 0) {
      cv::Mat img(m.height(), m.width(), CV_8UC1);
      const auto v = m.values();
      std::copy(v.begin(), v.end(), img.data);
      cv::erode(img, img, cv::getStructuringElement(cv::MORPH_RECT, {3, 3}), {-1, -1}, opt.erosion,
                cv::BORDER_CONSTANT, cv::Scalar(0));
      m = BinaryMask(m.height(), m.width(), std::vector<std::uint8_t>(img.data, img.data + img.total()));
      if (m.empty()) continue;
    }
    out.push_back(make_detection(std::move(m)));
  }
  return out;
}

bool operator==(const MotOptions& a, const MotOptions& b) { return nlohmann::json(a) == nlohmann::json(b); }

void to_json(nlohmann::json& j, const MotOptions& o) {
  j = nlohmann::json{{"spawn_threshold", o.spawn_threshold},
                     {"max_lost", o.max_lost},
                     {"min_affinity", o.min_affinity},
                     {"affinity", o.affinity == AffinityKind::mask ? "mask" : "box"},
                     {"tracker", o.tracker}};
}

void from_json(const nlohmann::json& j, MotOptions& o) {
  const nlohmann::json defaults = MotOptions{};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!defaults.contains(it.key())) throw ConfigError("mot: unknown key '" + it.key() + "'");
  }
  nlohmann::json m = defaults;
  m.update(j);
  MotOptions d;
  m.at("spawn_threshold").get_to(d.spawn_threshold);
  m.at("max_lost").get_to(d.max_lost);
  m.at("min_affinity").get_to(d.min_affinity);
  const std::string kind = m.at("affinity").get<std::string>();
  if (kind != "mask" && kind != "box") throw ConfigError("mot: affinity must be 'mask' or 'box'");
  d.affinity = kind == "mask" ? AffinityKind::mask : AffinityKind::box;
  d.tracker = m.at("tracker").get<TrackerOptions>();
  if (d.max_lost < 0 || d.min_affinity < 0 || d.min_affinity > 1) throw ConfigError("mot: lifecycle constants out of range");
  o = d;
}

BinaryMask cascade_predict(MotTrack& track, const cv::Mat& frame) {
  track.prediction = track.tracker->track_cascade(frame, &track.stage_one);
  return track.prediction.mask;
}

MultiObjectTracker::MultiObjectTracker(const SiamMaskModel& model, MotOptions options)
    : model_(model), options_(std::move(options)) {
  if (model.variant() != Variant::three_branch) throw ConfigError("mot: the cascade needs a three-branch model");
}

MotStep MultiObjectTracker::step(const cv::Mat& frame, const std::vector<Detection>& detections) {
  MotStep out;
  const int n_det = static_cast<int>(detections.size());
  const int n_trk = static_cast<int>(tracks_.size());
  std::vector<BinaryMask> predicted;
  for (MotTrack& t : tracks_) {
    predicted.push_back(cascade_predict(t, frame));
    out.track_ids.push_back(t.id);
  }

  out.affinity = AffinityMatrix(n_det, n_trk);
  for (int i = 0; i < n_det; ++i) {
    for (int j = 0; j < n_trk; ++j) {
      const double a = options_.affinity == AffinityKind::mask
                           ? iou_mask(detections[i].mask, predicted[j])
                           : (predicted[j].empty() ? 0.0 : iou_axis(detections[i].box, min_max_box(predicted[j])));
      out.affinity.at(i, j) = a >= options_.min_affinity ? a : 0.0;
    }
  }
  // Weak overlaps are zeroed, and zero-affinity pairs never match.
  out.assignment = hungarian(out.affinity);

  std::vector<bool> det_used(n_det, false), trk_used(n_trk, false);
  for (const auto& [i, j] : out.assignment.pairs) {
    det_used[i] = trk_used[j] = true;
    MotTrack& t = tracks_[j];
    t.status = TrackStatus::active;
    t.lost_age = 0;
    t.mask = detections[i].mask;
    t.box = detections[i].box;
    t.tracker->set_target(CenterBox::from_axis(detections[i].box));
  }
  for (int j = 0; j < n_trk; ++j) {
    if (trk_used[j]) continue;
    MotTrack& t = tracks_[j];
    t.status = TrackStatus::lost;
    ++t.lost_age;
    t.mask = BinaryMask(frame.rows, frame.cols);
  }
  for (const MotTrack& t : tracks_) {
    if (t.lost_age > options_.max_lost) out.removed.push_back(t.id);
  }
  std::erase_if(tracks_, [&](const MotTrack& t) { return t.lost_age > options_.max_lost; });

  for (int i = 0; i < n_det; ++i) {
    if (det_used[i] || detections[i].confidence < options_.spawn_threshold) continue;
    const AxisBox& b = detections[i].box;
    if (b.width() < 2 || b.height() < 2) continue;
    MotTrack t;
    t.id = next_id_++;
    t.mask = detections[i].mask;
    t.box = b;
    t.tracker = std::make_shared<SiamMaskTracker>(model_, options_.tracker);
    t.tracker->init(frame, b);
    out.spawned.push_back(t.id);
    tracks_.push_back(std::move(t));
  }
  return out;
}

}  // namespace siammask
