#pragma once

// Region/contour statistics, box success rates, the reset protocol and the
// ground-truth representation oracles.

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "siammask/dataset.hpp"
#include "siammask/geom.hpp"
#include "siammask/track.hpp"

namespace siammask {

/// Mean, recall (fraction above 0.5) and decay (first quartile minus last quartile).
struct CurveStats {
  double mean = 0.0;
  double recall = 0.0;
  double decay = 0.0;
};

/// Quartiles hold floor(n / 4) frames each (at least one). Throws std::invalid_argument when empty.
CurveStats curve_stats(std::span<const double> per_frame);
inline CurveStats jaccard_stats(std::span<const double> ious) { return curve_stats(ious); }

/// Mask IoU for evaluation: two empty masks agree perfectly.
double region_similarity(const BinaryMask& pred, const BinaryMask& gt);

/// Boundary tolerance in pixels: ceil(0.008 * diagonal), at least 1.
int contour_tolerance(int height, int width);
/// Boundary F-measure; a boundary pixel counts as matched when the other boundary lies
/// within the tolerance. Throws ShapeError on a size mismatch.
double contour_fmeasure(const BinaryMask& pred, const BinaryMask& gt);

struct SuccessStats {
  double miou = 0.0;
  /// Threshold -> fraction of frames with IoU >= threshold.
  std::map<double, double> ap;
};

/// Per-sequence IoU lists in, sequence-averaged mIoU and success rates out.
SuccessStats success_map(const std::vector<std::vector<double>>& per_sequence_ious,
                         const std::vector<double>& thresholds = {0.5, 0.7});

/// Box overlap; axis boxes are rotated boxes at angle 0, so every pair is compared exactly.
double box_iou(const RotatedBox& a, const RotatedBox& b);

// --- reset protocol --------------------------------------------------------------

struct ResetOptions {
  /// Frames skipped after a failure before re-initializing.
  int reinit_gap = 5;
  /// Frames after a re-initialization excluded from accuracy.
  int burn_in = 10;
};

struct ResetRun {
  std::vector<double> overlaps;  // mask IoU per frame, 0 where not tracked
  std::vector<bool> counted;     // contributes to accuracy
  int failures = 0;
};

/// Tracks one object; a frame with zero mask overlap is a failure and the tracker is
/// re-initialized from ground truth `reinit_gap` frames later.
ResetRun run_reset_protocol(Tracker& tracker, const Sequence& seq, int object_id, const ResetOptions& opt = {});

struct AccuracyRobustness {
  double accuracy = 0.0;  // 0 when no frame counts
  int failures = 0;
};

AccuracyRobustness accuracy_robustness(std::span<const ResetRun> runs);

// --- representation oracles --------------------------------------------------------

struct OracleReport {
  SuccessStats fixed_aspect;
  SuccessStats min_max;
  SuccessStats mbr;
  int sequences = 0;
};

/// Evaluates three boxes built from the ground-truth mask against the ground-truth rotated box:
/// the first-frame aspect ratio with the current centre and area, the min-max box, and the MBR.
OracleReport representation_oracles(const std::vector<Sequence>& data);

// --- full report ----------------------------------------------------------------------

/// Predictions for one object of one sequence, one entry per frame.
struct ObjectResult {
  std::string sequence;
  int object_id = 0;
  std::vector<BinaryMask> masks;
  std::vector<RotatedBox> boxes;
};

struct MetricsReport {
  SuccessStats boxes;
  CurveStats j;
  CurveStats f;
  std::optional<CurveStats> j_seen, j_unseen, f_seen, f_unseen;
  /// Mean of the four seen/unseen means when both splits are present.
  std::optional<double> overall;
  std::optional<AccuracyRobustness> reset;
  int objects = 0;
  int frames = 0;
};

/// Frames before and including the first visible one are skipped. Throws ConfigError when a
/// result names an unknown sequence or object or has the wrong length.
MetricsReport evaluate(const std::vector<Sequence>& data, const std::vector<ObjectResult>& results);

void to_json(nlohmann::json& j, const CurveStats& s);
void to_json(nlohmann::json& j, const SuccessStats& s);
void to_json(nlohmann::json& j, const AccuracyRobustness& s);
void to_json(nlohmann::json& j, const OracleReport& r);
void to_json(nlohmann::json& j, const MetricsReport& r);

}  // namespace siammask
