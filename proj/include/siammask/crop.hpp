#pragma once

// Square crops between frame coordinates and fixed-size network patches.

#include <opencv2/core.hpp>

#include "siammask/geom.hpp"

namespace siammask {

/// The frame square [cx - side/2, cx + side/2] x [cy - side/2, cy + side/2], resampled to out_side.
struct CropWindow {
  double cx = 0.0;
  double cy = 0.0;
  double side = 1.0;
  int out_side = 1;

  double scale() const { return out_side / side; }
  Point2 to_patch(Point2 p) const { return {(p.x - cx) * scale() + 0.5 * out_side, (p.y - cy) * scale() + 0.5 * out_side}; }
  Point2 to_frame(Point2 p) const { return {(p.x - 0.5 * out_side) / scale() + cx, (p.y - 0.5 * out_side) / scale() + cy}; }
  AxisBox to_patch(const AxisBox& b) const;
  AxisBox to_frame(const AxisBox& b) const;
};

/// SiamFC context rule: side = sqrt((w + p)(h + p)) with p = context * (w + h).
double context_side(double w, double h, double context);

/// Bilinear crop; pixels outside the frame take the frame's mean colour.
cv::Mat crop_patch(const cv::Mat& frame, const CropWindow& win);
/// Nearest-neighbour crop of a mask by pixel-centre lookup; outside is background.
BinaryMask crop_mask(const BinaryMask& mask, const CropWindow& win);
/// Nearest-neighbour paste of a patch-space probability map back into the frame.
/// Frame pixels whose centre falls outside the patch are left untouched in `out`.
void paste_probabilities(const cv::Mat& patch_probs, const CropWindow& win, cv::Mat& out);

}  // namespace siammask
