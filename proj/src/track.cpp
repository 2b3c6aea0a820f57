#include "siammask/track.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include <opencv2/imgcodecs.hpp>

#include "siammask/errors.hpp"

namespace siammask {

using nn::Tensor;
using nn::Var;

std::string to_string(BoxStrategy s) {
  switch (s) {
    case BoxStrategy::min_max: return "min_max";
    case BoxStrategy::mbr: return "mbr";
    case BoxStrategy::opt: return "opt";
  }
  return "?";
}

BoxStrategy box_strategy_from_string(const std::string& s) {
  for (BoxStrategy b : {BoxStrategy::min_max, BoxStrategy::mbr, BoxStrategy::opt}) {
    if (to_string(b) == s) return b;
  }
  throw ConfigError("unknown box strategy '" + s + "'");
}

bool operator==(const TrackerOptions& a, const TrackerOptions& b) {
  return nlohmann::json(a) == nlohmann::json(b);
}

void to_json(nlohmann::json& j, const TrackerOptions& o) {
  j = nlohmann::json{{"strategy", to_string(o.strategy)},
                     {"mask_path", to_string(o.mask_path)},
                     {"context_amount", o.context_amount},
                     {"size_damping", o.size_damping},
                     {"window_influence", o.window_influence},
                     {"score_floor", o.score_floor},
                     {"min_target_side", o.min_target_side},
                     {"anchor_ratios", o.anchors.anchor_ratios},
                     {"anchor_size", o.anchors.anchor_size}};
}

void from_json(const nlohmann::json& j, TrackerOptions& o) {
  const nlohmann::json defaults = TrackerOptions{};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!defaults.contains(it.key())) throw ConfigError("track: unknown key '" + it.key() + "'");
  }
  nlohmann::json m = defaults;
  m.update(j);
  TrackerOptions d;
  d.strategy = box_strategy_from_string(m.at("strategy").get<std::string>());
  d.mask_path = mask_path_from_string(m.at("mask_path").get<std::string>());
  m.at("context_amount").get_to(d.context_amount);
  m.at("size_damping").get_to(d.size_damping);
  m.at("window_influence").get_to(d.window_influence);
  m.at("score_floor").get_to(d.score_floor);
  m.at("min_target_side").get_to(d.min_target_side);
  m.at("anchor_ratios").get_to(d.anchors.anchor_ratios);
  m.at("anchor_size").get_to(d.anchors.anchor_size);
  o = d;
}

GeneratedBox generate_box(const BinaryMask& mask, BoxStrategy strategy, const GeneratedBox& previous) {
  if (mask.empty()) {
    GeneratedBox g = previous;
    g.strategy = strategy;
    g.fallback = true;
    return g;
  }
  GeneratedBox g;
  g.strategy = strategy;
  g.axis = min_max_box(mask);
  switch (strategy) {
    case BoxStrategy::min_max: g.rotated = RotatedBox::from_axis(g.axis); break;
    case BoxStrategy::mbr: g.rotated = mbr(mask); break;
    case BoxStrategy::opt: g.rotated = opt_box(mask); break;
  }
  return g;
}

int argmax_row(std::span<const double> scores) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(scores.size()); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

// ---------------------------------------------------------------------------

SiamMaskTracker::SiamMaskTracker(const SiamMaskModel& model, TrackerOptions options)
    : model_(model), options_(std::move(options)) {
  if (model_.variant() == Variant::three_branch) anchors_ = make_anchors(model_.config(), options_.anchors);
}

CropWindow SiamMaskTracker::search_window(const CenterBox& around) const {
  const ModelConfig& c = model_.config();
  const double side = context_side(around.w, around.h, options_.context_amount) * c.search_side / c.exemplar_side;
  return {around.cx, around.cy, side, c.search_side};
}

void SiamMaskTracker::init(const cv::Mat& frame, const AxisBox& box) {
  if (box.width() < 2 || box.height() < 2) throw std::invalid_argument("tracker init: box thinner than 2 px");
  const Point2 c = box.center();
  if (c.x < 0 || c.y < 0 || c.x > frame.cols || c.y > frame.rows) {
    throw std::invalid_argument("tracker init: box centre outside the frame");
  }
  const ModelConfig& mc = model_.config();
  target_ = CenterBox::from_axis(box);
  const CropWindow win{c.x, c.y, context_side(box.width(), box.height(), options_.context_amount), mc.exemplar_side};
  const cv::Mat patch = crop_patch(frame, win);
  nn::NoGradGuard guard;
  const Tensor z = model_.normalize_patch({patch.data, patch.total() * 3}, mc.exemplar_side);
  exemplar_ = model_.adjust_exemplar(model_.backbone_forward(Var(z)).final).value();
  last_box_ = GeneratedBox{options_.strategy, box, RotatedBox::from_axis(box), false};
}

FrameResult SiamMaskTracker::track(const cv::Mat& frame) { return run(frame, target_, true); }

FrameResult SiamMaskTracker::track_cascade(const cv::Mat& frame, FrameResult* stage_one) {
  const FrameResult first = run(frame, target_, false);
  if (stage_one) *stage_one = first;
  if (first.low_score) {
    FrameResult r = first;
    r.mask = BinaryMask(frame.rows, frame.cols);
    r.box = generate_box(r.mask, options_.strategy, last_box_);
    return r;
  }
  return run(frame, CenterBox::from_axis(first.coarse_box), true);
}

FrameResult SiamMaskTracker::run(const cv::Mat& frame, const CenterBox& around, bool update) {
  if (!initialized()) throw std::logic_error("tracker used before init");
  const ModelConfig& mc = model_.config();
  const int R = mc.response_side;
  const CropWindow win = search_window(around);
  const cv::Mat patch = crop_patch(frame, win);

  nn::NoGradGuard guard;
  const Tensor x = model_.normalize_patch({patch.data, patch.total() * 3}, mc.search_side);
  const FeaturePyramid xf = model_.backbone_forward(Var(x));
  const Var corr = nn::depthwise_xcorr(model_.adjust_search(xf.final), Var(exemplar_));
  const ResponseGrid grid = model_.heads_forward(corr, false);

  std::vector<double> score(R * R);
  std::vector<int> best_anchor(R * R, 0);
  const Tensor& s = grid.scores.value();
  for (int cell = 0; cell < R * R; ++cell) {
    if (model_.variant() == Variant::two_branch) {
      score[cell] = s.data[cell];
      continue;
    }
    double best = -1e300;
    for (int a = 0; a < mc.anchors_per_cell; ++a) {
      const double logit = s.channel(2 * a + 1)[cell] - s.channel(2 * a)[cell];
      if (logit > best) {
        best = logit;
        best_anchor[cell] = a;
      }
    }
    score[cell] = best;
  }
  std::vector<double> ranked = score;
  if (options_.window_influence > 0) {
    for (int cell = 0; cell < R * R; ++cell) {
      const double wy = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * (cell / R + 0.5) / R);
      const double wx = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * (cell % R + 0.5) / R);
      ranked[cell] = (1 - options_.window_influence) * score[cell] + options_.window_influence * wy * wx;
    }
  }
  const int cell = argmax_row(ranked);

  FrameResult r;
  r.row = cell;
  r.anchor = best_anchor[cell];
  r.score = score[cell];
  r.low_score = r.score < options_.score_floor;

  Tensor logits;
  if (options_.mask_path == MaskPath::refined) {
    logits = model_.refine_mask(cell, corr, xf).value();
  } else {
    const int cells[1] = {cell};
    logits = nn::reshape(model_.mask_head(corr, cells), 1, mc.mask_side, mc.mask_side).value();
  }
  const Tensor probs = nn::sigmoid(logits);
  cv::Mat pm(probs.h, probs.w, CV_64FC1, const_cast<double*>(probs.data.data()));

  const AxisBox rw = row_window(mc, cell);
  const Point2 fc = win.to_frame(rw.center());
  r.footprint = {fc.x, fc.y, rw.width() / win.scale(), probs.h};
  cv::Mat full(frame.rows, frame.cols, CV_64FC1, cv::Scalar(0.0));
  paste_probabilities(pm, r.footprint, full);
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(frame.rows) * frame.cols);
  for (int y = 0; y < frame.rows; ++y) {
    const double* row = full.ptr<double>(y);
    for (int x0 = 0; x0 < frame.cols; ++x0) bits[static_cast<std::size_t>(y) * frame.cols + x0] = row[x0] > 0.5;
  }
  r.mask = BinaryMask(frame.rows, frame.cols, std::move(bits));
  r.box = generate_box(r.mask, options_.strategy, last_box_);

  std::optional<AxisBox> measured;
  if (model_.variant() == Variant::three_branch) {
    const Tensor& d = grid.box_deltas.value();
    const int a = r.anchor;
    const DeltaVector delta{d.channel(4 * a)[cell], d.channel(4 * a + 1)[cell], d.channel(4 * a + 2)[cell],
                            d.channel(4 * a + 3)[cell]};
    r.coarse_box = win.to_frame(decode_deltas(anchors_.at(a, cell), delta).to_axis());
    measured = r.coarse_box;
  } else if (!r.mask.empty()) {
    r.coarse_box = r.box.axis;
    measured = r.coarse_box;
  } else {
    r.coarse_box = around.to_axis();
  }

  if (update) {
    if (measured) {
      const double dmp = options_.size_damping;
      const CenterBox m = CenterBox::from_axis(*measured);
      target_.cx = m.cx;
      target_.cy = m.cy;
      target_.w = (1 - dmp) * target_.w + dmp * m.w;
      target_.h = (1 - dmp) * target_.h + dmp * m.h;
    }
    target_.cx = std::clamp(target_.cx, 0.0, double(frame.cols));
    target_.cy = std::clamp(target_.cy, 0.0, double(frame.rows));
    target_.w = std::clamp(target_.w, options_.min_target_side, double(frame.cols));
    target_.h = std::clamp(target_.h, options_.min_target_side, double(frame.rows));
    last_box_ = r.box;
  }
  return r;
}

// ---------------------------------------------------------------------------

std::vector<FrameResult> track_sequence(Tracker& tracker, const Sequence& seq, int object_id) {
  const ObjectAnnotation& obj = seq.object(object_id);
  std::vector<FrameResult> out;
  int t0 = -1;
  for (int t = 0; t < seq.frame_count(); ++t) {
    if (t0 < 0 && obj.visible(t)) {
      t0 = t;
      tracker.init(seq.frames[t], obj.boxes[t]);
      FrameResult r;
      r.mask = obj.masks[t];
      r.box = generate_box(r.mask, BoxStrategy::min_max, {});
      r.coarse_box = obj.boxes[t];
      out.push_back(r);
    } else if (t0 < 0) {
      FrameResult r;
      r.mask = BinaryMask(seq.height(), seq.width());
      r.box.fallback = true;
      out.push_back(r);
    } else {
      out.push_back(tracker.track(seq.frames[t]));
    }
  }
  return out;
}

void write_result_stream(const std::filesystem::path& dir, const std::vector<FrameResult>& results) {
  std::filesystem::create_directories(dir / "masks");
  std::ofstream boxes(dir / "boxes.txt");
  if (!boxes) throw ConfigError("cannot write " + (dir / "boxes.txt").string());
  char line[256];
  for (std::size_t t = 0; t < results.size(); ++t) {
    const FrameResult& r = results[t];
    cv::Mat img(r.mask.height(), r.mask.width(), CV_8UC1);
    const auto v = r.mask.values();
    for (std::size_t i = 0; i < v.size(); ++i) img.data[i] = v[i] ? 255 : 0;
    char name[32];
    std::snprintf(name, sizeof name, "%05zu.png", t);
    cv::imwrite((dir / "masks" / name).string(), img);
    if (r.box.strategy == BoxStrategy::min_max) {
      const AxisBox& b = r.box.axis;
      std::snprintf(line, sizeof line, "%.6f %.6f %.6f %.6f %.6f\n", b.x_min, b.y_min, b.width(), b.height(), r.score);
    } else {
      const auto c = r.box.rotated.corners();
      std::snprintf(line, sizeof line, "%.6f %.6f %.6f %.6f %.6f %.6f %.6f %.6f %.6f\n", c[0].x, c[0].y, c[1].x,
                    c[1].y, c[2].x, c[2].y, c[3].x, c[3].y, r.score);
    }
    boxes << line;
  }
}

}  // namespace siammask
