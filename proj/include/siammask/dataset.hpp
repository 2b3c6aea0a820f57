#pragma once

// In-memory annotated video sequences, shared by the synthetic generator, the
// on-disk loader, training and every evaluation path.

#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "siammask/geom.hpp"

namespace siammask {

struct ObjectAnnotation {
  int id = 0;
  std::string class_tag;
  /// One mask per frame; an empty mask means the object is not visible.
  std::vector<BinaryMask> masks;
  /// Derived from masks: min_max_box and mbr. Meaningless where the mask is empty.
  std::vector<AxisBox> boxes;
  std::vector<RotatedBox> rotated;

  bool visible(int frame) const { return !masks[frame].empty(); }
};

struct Sequence {
  std::string name;
  /// Seen/unseen split tag used by the YouTube-VOS style average.
  bool seen = true;
  std::vector<cv::Mat> frames;  // CV_8UC3, BGR
  std::vector<ObjectAnnotation> objects;

  int frame_count() const { return static_cast<int>(frames.size()); }
  int height() const { return frames.empty() ? 0 : frames.front().rows; }
  int width() const { return frames.empty() ? 0 : frames.front().cols; }
  const ObjectAnnotation& object(int id) const;
};

/// Fills boxes/rotated from masks.
void derive_boxes(ObjectAnnotation& object);

/// Instance-ID image (0 = background) for one frame; later objects win on overlap.
cv::Mat instance_image(const Sequence& seq, int frame);
BinaryMask mask_from_ids(const cv::Mat& ids, int id);

}  // namespace siammask
