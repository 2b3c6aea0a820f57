#include "siammask/crop.hpp"

#include <cmath>

#include <opencv2/imgproc.hpp>

namespace siammask {

AxisBox CropWindow::to_patch(const AxisBox& b) const {
  const Point2 a = to_patch(Point2{b.x_min, b.y_min});
  const Point2 c = to_patch(Point2{b.x_max, b.y_max});
  return {a.x, a.y, c.x, c.y};
}

AxisBox CropWindow::to_frame(const AxisBox& b) const {
  const Point2 a = to_frame(Point2{b.x_min, b.y_min});
  const Point2 c = to_frame(Point2{b.x_max, b.y_max});
  return {a.x, a.y, c.x, c.y};
}

double context_side(double w, double h, double context) {
  const double p = context * (w + h);
  return std::sqrt((w + p) * (h + p));
}

cv::Mat crop_patch(const cv::Mat& frame, const CropWindow& win) {
  // Continuous coordinates put pixel centres at +0.5; OpenCV puts them at integers.
  const double s = win.scale();
  const double tx = (0.5 - win.cx) * s + 0.5 * win.out_side - 0.5;
  const double ty = (0.5 - win.cy) * s + 0.5 * win.out_side - 0.5;
  const cv::Mat m = (cv::Mat_<double>(2, 3) << s, 0, tx, 0, s, ty);
  cv::Mat out;
  cv::warpAffine(frame, out, m, cv::Size(win.out_side, win.out_side), cv::INTER_LINEAR, cv::BORDER_CONSTANT,
                 cv::mean(frame));
  return out;
}

BinaryMask crop_mask(const BinaryMask& mask, const CropWindow& win) {
  const int n = win.out_side;
  std::vector<std::uint8_t> v(static_cast<std::size_t>(n) * n, 0);
  for (int r = 0; r < n; ++r) {
    const int fy = static_cast<int>(std::floor(win.to_frame(Point2{0.0, r + 0.5}).y));
    if (fy < 0 || fy >= mask.height()) continue;
    for (int c = 0; c < n; ++c) {
      const int fx = static_cast<int>(std::floor(win.to_frame(Point2{c + 0.5, 0.0}).x));
      if (fx >= 0 && fx < mask.width()) v[static_cast<std::size_t>(r) * n + c] = mask.at(fy, fx);
    }
  }
  return BinaryMask(n, n, std::move(v));
}

void paste_probabilities(const cv::Mat& patch_probs, const CropWindow& win, cv::Mat& out) {
  CV_Assert(patch_probs.type() == CV_64FC1 && out.type() == CV_64FC1);
  const double half = 0.5 * win.side;
  const int x0 = std::max(0, static_cast<int>(std::floor(win.cx - half)));
  const int x1 = std::min(out.cols, static_cast<int>(std::ceil(win.cx + half)));
  const int y0 = std::max(0, static_cast<int>(std::floor(win.cy - half)));
  const int y1 = std::min(out.rows, static_cast<int>(std::ceil(win.cy + half)));
  for (int y = y0; y < y1; ++y) {
    const int pr = static_cast<int>(std::floor(win.to_patch(Point2{0.0, y + 0.5}).y));
    if (pr < 0 || pr >= patch_probs.rows) continue;
    for (int x = x0; x < x1; ++x) {
      const int pc = static_cast<int>(std::floor(win.to_patch(Point2{x + 0.5, 0.0}).x));
      if (pc >= 0 && pc < patch_probs.cols) out.at<double>(y, x) = patch_probs.at<double>(pr, pc);
    }
  }
}

}  // namespace siammask
