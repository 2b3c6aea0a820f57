#pragma once

// Online single-object tracking with a frozen model.

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

#include "siammask/crop.hpp"
#include "siammask/dataset.hpp"
#include "siammask/model.hpp"
#include "siammask/train.hpp"

namespace siammask {

enum class BoxStrategy { min_max, mbr, opt };

std::string to_string(BoxStrategy s);
BoxStrategy box_strategy_from_string(const std::string& s);

struct TrackerOptions {
  BoxStrategy strategy = BoxStrategy::min_max;
  MaskPath mask_path = MaskPath::refined;
  double context_amount = 0.5;
  /// Weight of the new size measurement: size = (1 - d) * old + d * measured.
  double size_damping = 0.35;
  /// Hanning-window penalty mixed into the score map; 0 disables.
  double window_influence = 0.0;
  /// Scores below this are reported as low-confidence frames.
  double score_floor = -1e9;
  double min_target_side = 8.0;
  /// Anchor geometry for the three-branch box update.
  TrainConfig anchors;

  friend bool operator==(const TrackerOptions& a, const TrackerOptions& b);
};

void to_json(nlohmann::json& j, const TrackerOptions& o);
void from_json(const nlohmann::json& j, TrackerOptions& o);

struct GeneratedBox {
  BoxStrategy strategy = BoxStrategy::min_max;
  AxisBox axis;
  RotatedBox rotated;  // from_axis(axis) for min_max
  /// Set when the mask was empty and the previous box was reused.
  bool fallback = false;
};

/// Delegates to min_max_box / mbr / opt_box; an empty mask yields `previous` with fallback set.
GeneratedBox generate_box(const BinaryMask& mask, BoxStrategy strategy, const GeneratedBox& previous);

/// Index of the largest score; ties go to the first in row-major order.
int argmax_row(std::span<const double> scores);

struct FrameResult {
  BinaryMask mask;
  GeneratedBox box;
  /// Highest classification logit (foreground-minus-background for three branches).
  double score = 0.0;
  int row = 0;     // chosen RoW, row-major index into the response grid
  int anchor = 0;  // best anchor of that RoW (three-branch)
  bool low_score = false;
  /// Frame-space square the chosen RoW's mask was pasted into.
  CropWindow footprint;
  /// Box-branch output in frame coordinates (three-branch), else the mask box.
  AxisBox coarse_box;
};

/// Anything that can follow one object through a video.
class Tracker {
 public:
  virtual ~Tracker() = default;
  virtual void init(const cv::Mat& frame, const AxisBox& box) = 0;
  virtual FrameResult track(const cv::Mat& frame) = 0;
};

class SiamMaskTracker : public Tracker {
 public:
  /// The model must outlive the tracker and is never modified.
  SiamMaskTracker(const SiamMaskModel& model, TrackerOptions options);

  /// Throws std::invalid_argument for a box thinner than 2 px or outside the frame.
  void init(const cv::Mat& frame, const AxisBox& box) override;
  FrameResult track(const cv::Mat& frame) override;

  /// Two-stage variant: track, then re-crop at the stage-one box and decode the mask again.
  FrameResult track_cascade(const cv::Mat& frame, FrameResult* stage_one = nullptr);

  const nn::Tensor& exemplar_features() const { return exemplar_; }
  CenterBox target() const { return target_; }
  void set_target(const CenterBox& t) { target_ = t; }
  bool initialized() const { return !exemplar_.empty(); }

 private:
  FrameResult run(const cv::Mat& frame, const CenterBox& around, bool update);
  CropWindow search_window(const CenterBox& around) const;

  const SiamMaskModel& model_;
  TrackerOptions options_;
  AnchorGrid anchors_;
  nn::Tensor exemplar_;
  CenterBox target_;
  GeneratedBox last_box_;
};

/// Initializes on the first frame where the object is visible and tracks the rest.
/// Frames before that, and the init frame itself, echo the ground truth.
std::vector<FrameResult> track_sequence(Tracker& tracker, const Sequence& seq, int object_id);

/// Per-frame mask PNGs plus boxes.txt: 4 numbers (x y w h) for min_max or 8 corner
/// coordinates otherwise, followed by the score.
void write_result_stream(const std::filesystem::path& dir, const std::vector<FrameResult>& results);

}  // namespace siammask
