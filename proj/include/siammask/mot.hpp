#pragma once

// Multi-object tracking: per-object two-stage SiamMask predictions associated with
// detector masks by maximum-affinity matching.

#include <cstdint>
#include <memory>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

#include "siammask/dataset.hpp"
#include "siammask/geom.hpp"
#include "siammask/track.hpp"

namespace siammask {

struct Detection {
  BinaryMask mask;
  AxisBox box;  // min_max_box(mask)
  double confidence = 1.0;
};

/// Throws EmptyMaskError on an empty mask.
Detection make_detection(BinaryMask mask, double confidence = 1.0);

struct OracleDetectorOptions {
  /// Probability that a visible object is not reported.
  double dropout = 0.0;
  /// Boundary erosion in pixels (3x3 square element).
  int erosion = 0;
  std::uint64_t seed = 0;
};

/// Ground-truth masks of the visible objects, in object order, after optional noise.
/// Deterministic for a given seed and frame.
std::vector<Detection> oracle_detector(const Sequence& seq, int frame, const OracleDetectorOptions& options = {});

enum class AffinityKind { mask, box };

struct MotOptions {
  double spawn_threshold = 0.5;
  int max_lost = 10;
  /// Matches below this affinity are discarded.
  double min_affinity = 0.1;
  AffinityKind affinity = AffinityKind::mask;
  TrackerOptions tracker;

  friend bool operator==(const MotOptions& a, const MotOptions& b);
};

void to_json(nlohmann::json& j, const MotOptions& o);
void from_json(const nlohmann::json& j, MotOptions& o);

enum class TrackStatus { active, lost };

struct MotTrack {
  int id = 0;
  TrackStatus status = TrackStatus::active;
  int lost_age = 0;
  BinaryMask mask;
  AxisBox box;
  /// Latest cascade output and its stage-one result.
  FrameResult prediction;
  FrameResult stage_one;
  std::shared_ptr<SiamMaskTracker> tracker;
};

struct MotStep {
  /// Rows are detections, columns are the tracks alive before the step; entries below
  /// min_affinity are zeroed.
  AffinityMatrix affinity;
  Assignment assignment;
  std::vector<int> track_ids;  // column -> track id
  std::vector<int> spawned;
  std::vector<int> removed;
};

/// Stage one localizes with the box branch, stage two re-crops there and decodes the mask.
BinaryMask cascade_predict(MotTrack& track, const cv::Mat& frame);

class MultiObjectTracker {
 public:
  /// Needs a three-branch model, which must outlive the tracker.
  MultiObjectTracker(const SiamMaskModel& model, MotOptions options);

  MotStep step(const cv::Mat& frame, const std::vector<Detection>& detections);
  const std::vector<MotTrack>& tracks() const { return tracks_; }

 private:
  const SiamMaskModel& model_;
  MotOptions options_;
  std::vector<MotTrack> tracks_;
  int next_id_ = 1;
};

}  // namespace siammask
