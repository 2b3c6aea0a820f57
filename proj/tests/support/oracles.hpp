#pragma once

// Independent reference computations used by the unit and acceptance suites.
// Nothing here calls into the routine it is used to check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include "siammask/geom.hpp"

namespace siammask::oracle {

/// Exhaustive maximum over partial matchings (row i picks a distinct column or nothing).
inline double brute_force_assignment(const AffinityMatrix& a) {
  std::vector<char> used(a.cols, 0);
  double best = 0.0;
  auto rec = [&](auto&& self, int row, double acc) -> void {
    if (row == a.rows) {
      best = std::max(best, acc);
      return;
    }
    self(self, row + 1, acc);
    for (int j = 0; j < a.cols; ++j) {
      if (used[j]) continue;
      used[j] = 1;
      self(self, row + 1, acc + a.at(row, j));
      used[j] = 0;
    }
  };
  rec(rec, 0, 0.0);
  return best;
}

/// Area of the smallest enclosing rectangle found by sweeping orientations in fixed steps.
inline double swept_min_area(const std::vector<Point2>& pts, double step_deg, double* best_angle = nullptr) {
  double best = std::numeric_limits<double>::infinity();
  for (double deg = 0.0; deg < 90.0; deg += step_deg) {
    const double t = deg * std::numbers::pi / 180.0;
    const double c = std::cos(t), s = std::sin(t);
    double a0 = 1e300, a1 = -1e300, b0 = 1e300, b1 = -1e300;
    for (const auto& p : pts) {
      const double a = p.x * c + p.y * s;
      const double b = -p.x * s + p.y * c;
      a0 = std::min(a0, a);
      a1 = std::max(a1, a);
      b0 = std::min(b0, b);
      b1 = std::max(b1, b);
    }
    const double area = (a1 - a0) * (b1 - b0);
    if (area < best) {
      best = area;
      if (best_angle) *best_angle = t;
    }
  }
  return best;
}

/// Corner points of every foreground pixel cell.
inline std::vector<Point2> all_cell_corners(const BinaryMask& m) {
  std::vector<Point2> pts;
  for (int r = 0; r < m.height(); ++r) {
    for (int c = 0; c < m.width(); ++c) {
      if (!m.at(r, c)) continue;
      pts.push_back({double(c), double(r)});
      pts.push_back({double(c + 1), double(r)});
      pts.push_back({double(c), double(r + 1)});
      pts.push_back({double(c + 1), double(r + 1)});
    }
  }
  return pts;
}

inline bool inside_rotated(const RotatedBox& b, double x, double y) {
  const double dx = x - b.cx, dy = y - b.cy;
  const double c = std::cos(b.angle), s = std::sin(b.angle);
  return std::abs(dx * c + dy * s) <= 0.5 * b.w && std::abs(-dx * s + dy * c) <= 0.5 * b.h;
}

/// IoU by sampling an n x n grid over the joint bounding square.
inline double dense_iou_rotated(const RotatedBox& a, const RotatedBox& b, int n) {
  double lo_x = 1e300, hi_x = -1e300, lo_y = 1e300, hi_y = -1e300;
  for (const auto& box : {a, b}) {
    for (const auto& p : box.corners()) {
      lo_x = std::min(lo_x, p.x);
      hi_x = std::max(hi_x, p.x);
      lo_y = std::min(lo_y, p.y);
      hi_y = std::max(hi_y, p.y);
    }
  }
  std::int64_t inter = 0, uni = 0;
  for (int i = 0; i < n; ++i) {
    const double y = lo_y + (i + 0.5) * (hi_y - lo_y) / n;
    for (int j = 0; j < n; ++j) {
      const double x = lo_x + (j + 0.5) * (hi_x - lo_x) / n;
      const bool ia = inside_rotated(a, x, y), ib = inside_rotated(b, x, y);
      inter += ia && ib;
      uni += ia || ib;
    }
  }
  return uni ? double(inter) / double(uni) : 0.0;
}

/// Filled convex polygon from random points around a centre, pixel-centre sampled.
inline BinaryMask random_convex_mask(std::mt19937_64& rng, int height, int width) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double cx = width * (0.35 + 0.3 * u(rng)), cy = height * (0.35 + 0.3 * u(rng));
  const double rx = 4.0 + (width * 0.3) * u(rng), ry = 4.0 + (height * 0.3) * u(rng);
  const double rot = u(rng) * std::numbers::pi;
  const int n = 5 + static_cast<int>(u(rng) * 10);
  std::vector<Point2> pts;
  for (int i = 0; i < n; ++i) {
    const double t = u(rng) * 2.0 * std::numbers::pi;
    const double rr = 0.6 + 0.4 * u(rng);
    const double px = rr * rx * std::cos(t), py = rr * ry * std::sin(t);
    pts.push_back({cx + px * std::cos(rot) - py * std::sin(rot), cy + px * std::sin(rot) + py * std::cos(rot)});
  }
  const Polygon hull = convex_hull(pts);
  std::vector<std::uint8_t> v(static_cast<std::size_t>(height) * width, 0);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      bool in = true;
      for (std::size_t i = 0; i < hull.size() && in; ++i) {
        const Point2& a = hull[i];
        const Point2& b = hull[(i + 1) % hull.size()];
        in = (b.x - a.x) * (r + 0.5 - a.y) - (b.y - a.y) * (c + 0.5 - a.x) >= 0.0;
      }
      v[static_cast<std::size_t>(r) * width + c] = in;
    }
  }
  BinaryMask m(height, width, std::move(v));
  if (m.empty()) {
    std::vector<std::uint8_t> one(static_cast<std::size_t>(height) * width, 0);
    one[static_cast<std::size_t>(height / 2) * width + width / 2] = 1;
    return BinaryMask(height, width, std::move(one));
  }
  return m;
}

/// Central finite differences of a scalar function of a parameter vector.
template <typename Fn>
double central_difference(std::vector<double>& x, std::size_t i, double eps, Fn&& f) {
  const double saved = x[i];
  x[i] = saved + eps;
  const double up = f();
  x[i] = saved - eps;
  const double down = f();
  x[i] = saved;
  return (up - down) / (2.0 * eps);
}

}  // namespace siammask::oracle
