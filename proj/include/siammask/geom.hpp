#pragma once

// Mask and box geometry shared by training, tracking and evaluation.
//
// Pixel convention: pixel (row r, col c) covers the unit cell [c, c+1] x [r, r+1].
// A box is rasterized by testing pixel centres (c + 0.5, r + 0.5).

#include <array>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace siammask {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

class BinaryMask {
 public:
  BinaryMask() = default;
  /// All-background mask.
  BinaryMask(int height, int width);
  /// Row-major values, nonzero means foreground.
  BinaryMask(int height, int width, std::vector<std::uint8_t> values);

  int height() const { return height_; }
  int width() const { return width_; }
  bool at(int row, int col) const { return values_[static_cast<std::size_t>(row) * width_ + col] != 0; }
  std::span<const std::uint8_t> values() const { return values_; }

  std::int64_t count() const { return count_; }
  bool empty() const { return count_ == 0; }
  bool same_size(const BinaryMask& other) const {
    return height_ == other.height_ && width_ == other.width_;
  }

  friend bool operator==(const BinaryMask& a, const BinaryMask& b) {
    return a.height_ == b.height_ && a.width_ == b.width_ && a.values_ == b.values_;
  }

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> values_;
  std::int64_t count_ = 0;
};

struct AxisBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  Point2 center() const { return {0.5 * (x_min + x_max), 0.5 * (y_min + y_max)}; }

  static AxisBox from_center(double cx, double cy, double w, double h) {
    return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
  }
  friend bool operator==(const AxisBox&, const AxisBox&) = default;
};

struct RotatedBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;
  /// Direction of the width axis, radians in [0, pi/2).
  double angle = 0.0;

  /// Folds any (w, h, angle) into the canonical [0, pi/2) angle range.
  static RotatedBox canonical(double cx, double cy, double w, double h, double angle);
  static RotatedBox from_axis(const AxisBox& box);

  double area() const { return w * h; }
  /// Corners in counter-clockwise order (for the y-down image frame: clockwise on screen).
  std::array<Point2, 4> corners() const;
};

using Polygon = std::vector<Point2>;

double polygon_area(const Polygon& poly);
/// Andrew's monotone chain; counter-clockwise, no collinear points.
Polygon convex_hull(std::vector<Point2> points);
/// Intersection of two convex counter-clockwise polygons.
Polygon clip_convex(const Polygon& subject, const Polygon& clip);

/// Minimum-area rectangle enclosing a point set; one side is collinear with a hull edge.
RotatedBox min_area_rect(const std::vector<Point2>& points);
/// Smallest rectangle at a fixed orientation enclosing a point set.
RotatedBox enclosing_rect_at(const std::vector<Point2>& points, double angle);

/// Corners of every boundary foreground pixel cell, enough to span the mask's hull.
std::vector<Point2> mask_cell_corners(const BinaryMask& mask);

BinaryMask rasterize(const AxisBox& box, int height, int width);
BinaryMask rasterize(const RotatedBox& box, int height, int width);
BinaryMask rasterize(const Polygon& convex_ccw, int height, int width);

double iou_axis(const AxisBox& a, const AxisBox& b);
/// Throws ShapeError on size mismatch; 0 when both masks are empty.
double iou_mask(const BinaryMask& a, const BinaryMask& b);
double iou_rotated(const RotatedBox& a, const RotatedBox& b);

/// The three box-generation strategies. All throw EmptyMaskError on an empty mask.
AxisBox min_max_box(const BinaryMask& mask);
RotatedBox mbr(const BinaryMask& mask);
RotatedBox opt_box(const BinaryMask& mask);

/// Mask-IoU between a mask and the raster of a rotated box, the objective opt_box maximizes.
double fit_objective(const BinaryMask& mask, const RotatedBox& box);

struct AffinityMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;

  AffinityMatrix() = default;
  AffinityMatrix(int rows, int cols) : rows(rows), cols(cols), values(static_cast<std::size_t>(rows) * cols, 0.0) {}
  double& at(int i, int j) { return values[static_cast<std::size_t>(i) * cols + j]; }
  double at(int i, int j) const { return values[static_cast<std::size_t>(i) * cols + j]; }
};

struct Assignment {
  /// (row, col) pairs sorted by row.
  std::vector<std::pair<int, int>> pairs;
  double total = 0.0;
};

/// Maximum-weight bipartite matching; rows and columns are each used at most once.
/// Pairs with non-positive affinity are dropped since they never raise the total.
Assignment hungarian(const AffinityMatrix& affinity);

}  // namespace siammask
