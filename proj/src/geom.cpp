#include "siammask/geom.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "siammask/errors.hpp"

namespace siammask {

namespace {

constexpr double kHalfPi = std::numbers::pi / 2.0;
constexpr double kInsideEps = 1e-9;

double cross(const Point2& o, const Point2& a, const Point2& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

double signed_area(const Polygon& poly) {
  double s = 0.0;
  for (std::size_t i = 0, n = poly.size(); i < n; ++i) {
    const Point2& p = poly[i];
    const Point2& q = poly[(i + 1) % n];
    s += p.x * q.y - q.x * p.y;
  }
  return 0.5 * s;
}

Polygon ccw(Polygon poly) {
  if (signed_area(poly) < 0.0) std::reverse(poly.begin(), poly.end());
  return poly;
}

Point2 segment_line_intersection(const Point2& p, const Point2& q, const Point2& a, const Point2& b) {
  const double d1 = cross(a, b, p);
  const double d2 = cross(a, b, q);
  const double t = d1 / (d1 - d2);
  return {p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)};
}

struct PixelWindow {
  int r0, r1, c0, c1;  // half-open
};

PixelWindow window_of(const std::array<Point2, 4>& corners, int height, int width) {
  double xmin = corners[0].x, xmax = corners[0].x, ymin = corners[0].y, ymax = corners[0].y;
  for (const auto& p : corners) {
    xmin = std::min(xmin, p.x);
    xmax = std::max(xmax, p.x);
    ymin = std::min(ymin, p.y);
    ymax = std::max(ymax, p.y);
  }
  PixelWindow w{};
  w.c0 = std::clamp(static_cast<int>(std::floor(xmin)) - 1, 0, width);
  w.c1 = std::clamp(static_cast<int>(std::ceil(xmax)) + 1, 0, width);
  w.r0 = std::clamp(static_cast<int>(std::floor(ymin)) - 1, 0, height);
  w.r1 = std::clamp(static_cast<int>(std::ceil(ymax)) + 1, 0, height);
  return w;
}

// Visits every pixel whose centre lies inside the box.
template <typename Fn>
void for_each_inside(const RotatedBox& box, int height, int width, Fn&& fn) {
  const PixelWindow win = window_of(box.corners(), height, width);
  const double ux = std::cos(box.angle), uy = std::sin(box.angle);
  const double hw = 0.5 * box.w + kInsideEps, hh = 0.5 * box.h + kInsideEps;
  for (int r = win.r0; r < win.r1; ++r) {
    const double dy = r + 0.5 - box.cy;
    for (int c = win.c0; c < win.c1; ++c) {
      const double dx = c + 0.5 - box.cx;
      const double along = dx * ux + dy * uy;
      const double across = -dx * uy + dy * ux;
      if (std::abs(along) <= hw && std::abs(across) <= hh) fn(r, c);
    }
  }
}

}  // namespace

BinaryMask::BinaryMask(int height, int width)
    : BinaryMask(height, width, std::vector<std::uint8_t>(static_cast<std::size_t>(std::max(height, 0)) * std::max(width, 0), 0)) {}

BinaryMask::BinaryMask(int height, int width, std::vector<std::uint8_t> values)
    : height_(height), width_(width), values_(std::move(values)) {
  if (height <= 0 || width <= 0) throw ShapeError("mask dimensions must be positive");
  if (values_.size() != static_cast<std::size_t>(height) * width) throw ShapeError("mask value count does not match dimensions");
  for (auto& v : values_) {
    v = v ? 1 : 0;
    count_ += v;
  }
}

RotatedBox RotatedBox::canonical(double cx, double cy, double w, double h, double angle) {
  double a = std::fmod(angle, std::numbers::pi);
  if (a < 0.0) a += std::numbers::pi;
  if (a >= kHalfPi) {
    a -= kHalfPi;
    std::swap(w, h);
  }
  if (a >= kHalfPi - 1e-12) {
    a = 0.0;
    std::swap(w, h);
  }
  return {cx, cy, w, h, a};
}

RotatedBox RotatedBox::from_axis(const AxisBox& box) {
  const Point2 c = box.center();
  return {c.x, c.y, box.width(), box.height(), 0.0};
}

std::array<Point2, 4> RotatedBox::corners() const {
  const double ux = std::cos(angle) * 0.5 * w, uy = std::sin(angle) * 0.5 * w;
  const double vx = -std::sin(angle) * 0.5 * h, vy = std::cos(angle) * 0.5 * h;
  return {Point2{cx - ux - vx, cy - uy - vy}, Point2{cx + ux - vx, cy + uy - vy},
          Point2{cx + ux + vx, cy + uy + vy}, Point2{cx - ux + vx, cy - uy + vy}};
}

double polygon_area(const Polygon& poly) { return std::abs(signed_area(poly)); }

Polygon convex_hull(std::vector<Point2> pts) {
  std::sort(pts.begin(), pts.end(), [](const Point2& a, const Point2& b) {
    return a.x < b.x || (a.x == b.x && a.y < b.y);
  });
  pts.erase(std::unique(pts.begin(), pts.end(), [](const Point2& a, const Point2& b) {
              return a.x == b.x && a.y == b.y;
            }),
            pts.end());
  if (pts.size() < 3) return pts;
  Polygon hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0.0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

Polygon clip_convex(const Polygon& subject, const Polygon& clip) {
  Polygon out = ccw(subject);
  const Polygon c = ccw(clip);
  for (std::size_t i = 0; i < c.size() && !out.empty(); ++i) {
    const Point2& a = c[i];
    const Point2& b = c[(i + 1) % c.size()];
    Polygon in = std::move(out);
    out.clear();
    for (std::size_t j = 0; j < in.size(); ++j) {
      const Point2& p = in[j];
      const Point2& q = in[(j + 1) % in.size()];
      const bool p_in = cross(a, b, p) >= 0.0;
      const bool q_in = cross(a, b, q) >= 0.0;
      if (p_in) out.push_back(p);
      if (p_in != q_in) out.push_back(segment_line_intersection(p, q, a, b));
    }
  }
  return out;
}

RotatedBox enclosing_rect_at(const std::vector<Point2>& points, double angle) {
  const double ux = std::cos(angle), uy = std::sin(angle);
  double a_lo = std::numeric_limits<double>::infinity(), a_hi = -a_lo;
  double b_lo = a_lo, b_hi = -a_lo;
  for (const auto& p : points) {
    const double a = p.x * ux + p.y * uy;
    const double b = -p.x * uy + p.y * ux;
    a_lo = std::min(a_lo, a);
    a_hi = std::max(a_hi, a);
    b_lo = std::min(b_lo, b);
    b_hi = std::max(b_hi, b);
  }
  const double am = 0.5 * (a_lo + a_hi), bm = 0.5 * (b_lo + b_hi);
  return RotatedBox::canonical(am * ux - bm * uy, am * uy + bm * ux, a_hi - a_lo, b_hi - b_lo, angle);
}

RotatedBox min_area_rect(const std::vector<Point2>& points) {
  if (points.empty()) throw EmptyMaskError("min_area_rect: no points");
  const Polygon hull = convex_hull(points);
  if (hull.size() < 3) return enclosing_rect_at(hull, 0.0);
  RotatedBox best{};
  double best_area = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const Point2& p = hull[i];
    const Point2& q = hull[(i + 1) % hull.size()];
    const RotatedBox r = enclosing_rect_at(hull, std::atan2(q.y - p.y, q.x - p.x));
    if (r.area() < best_area - 1e-9) {
      best_area = r.area();
      best = r;
    }
  }
  return best;
}

std::vector<Point2> mask_cell_corners(const BinaryMask& mask) {
  std::vector<Point2> pts;
  for (int r = 0; r < mask.height(); ++r) {
    int lo = -1, hi = -1;
    for (int c = 0; c < mask.width(); ++c) {
      if (mask.at(r, c)) {
        if (lo < 0) lo = c;
        hi = c;
      }
    }
    if (lo < 0) continue;
    pts.push_back({double(lo), double(r)});
    pts.push_back({double(lo), double(r + 1)});
    pts.push_back({double(hi + 1), double(r)});
    pts.push_back({double(hi + 1), double(r + 1)});
  }
  return pts;
}

BinaryMask rasterize(const AxisBox& box, int height, int width) {
  std::vector<std::uint8_t> v(static_cast<std::size_t>(height) * width, 0);
  for (int r = 0; r < height; ++r) {
    if (r + 0.5 < box.y_min || r + 0.5 > box.y_max) continue;
    for (int c = 0; c < width; ++c) {
      if (c + 0.5 >= box.x_min && c + 0.5 <= box.x_max) v[static_cast<std::size_t>(r) * width + c] = 1;
    }
  }
  return BinaryMask(height, width, std::move(v));
}

BinaryMask rasterize(const RotatedBox& box, int height, int width) {
  std::vector<std::uint8_t> v(static_cast<std::size_t>(height) * width, 0);
  for_each_inside(box, height, width, [&](int r, int c) { v[static_cast<std::size_t>(r) * width + c] = 1; });
  return BinaryMask(height, width, std::move(v));
}

BinaryMask rasterize(const Polygon& convex, int height, int width) {
  const Polygon poly = ccw(convex);
  std::vector<std::uint8_t> v(static_cast<std::size_t>(height) * width, 0);
  if (poly.size() >= 3) {
    for (int r = 0; r < height; ++r) {
      for (int c = 0; c < width; ++c) {
        const Point2 p{c + 0.5, r + 0.5};
        bool inside = true;
        for (std::size_t i = 0; i < poly.size() && inside; ++i) {
          inside = cross(poly[i], poly[(i + 1) % poly.size()], p) >= -kInsideEps;
        }
        if (inside) v[static_cast<std::size_t>(r) * width + c] = 1;
      }
    }
  }
  return BinaryMask(height, width, std::move(v));
}

double iou_axis(const AxisBox& a, const AxisBox& b) {
  const double iw = std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  const double ih = std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double iou_mask(const BinaryMask& a, const BinaryMask& b) {
  if (!a.same_size(b)) {
    throw ShapeError("iou_mask: " + std::to_string(a.height()) + "x" + std::to_string(a.width()) + " vs " +
                     std::to_string(b.height()) + "x" + std::to_string(b.width()));
  }
  std::int64_t inter = 0;
  const auto va = a.values(), vb = b.values();
  for (std::size_t i = 0; i < va.size(); ++i) inter += va[i] & vb[i];
  const std::int64_t uni = a.count() + b.count() - inter;
  return uni > 0 ? double(inter) / double(uni) : 0.0;
}

double iou_rotated(const RotatedBox& a, const RotatedBox& b) {
  const auto ca = a.corners(), cb = b.corners();
  const double inter = polygon_area(clip_convex(Polygon(ca.begin(), ca.end()), Polygon(cb.begin(), cb.end())));
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

AxisBox min_max_box(const BinaryMask& mask) {
  if (mask.empty()) throw EmptyMaskError("min_max_box: mask has no foreground pixels");
  int r0 = mask.height(), r1 = -1, c0 = mask.width(), c1 = -1;
  for (int r = 0; r < mask.height(); ++r) {
    for (int c = 0; c < mask.width(); ++c) {
      if (!mask.at(r, c)) continue;
      r0 = std::min(r0, r);
      r1 = std::max(r1, r);
      c0 = std::min(c0, c);
      c1 = std::max(c1, c);
    }
  }
  return {double(c0), double(r0), double(c1 + 1), double(r1 + 1)};
}

RotatedBox mbr(const BinaryMask& mask) {
  if (mask.empty()) throw EmptyMaskError("mbr: mask has no foreground pixels");
  return min_area_rect(mask_cell_corners(mask));
}

namespace {

struct FitCounts {
  std::int64_t inter = 0;
  std::int64_t uni = 1;
};

FitCounts fit_counts(const BinaryMask& mask, const RotatedBox& box) {
  std::int64_t inter = 0, raster = 0;
  for_each_inside(box, mask.height(), mask.width(), [&](int r, int c) {
    ++raster;
    inter += mask.at(r, c);
  });
  return {inter, mask.count() + raster - inter};
}

}  // namespace

double fit_objective(const BinaryMask& mask, const RotatedBox& box) {
  const FitCounts f = fit_counts(mask, box);
  return f.uni > 0 ? double(f.inter) / double(f.uni) : 0.0;
}

RotatedBox opt_box(const BinaryMask& mask) {
  if (mask.empty()) throw EmptyMaskError("opt_box: mask has no foreground pixels");
  const Polygon hull = convex_hull(mask_cell_corners(mask));
  const RotatedBox seed = min_area_rect(hull);

  RotatedBox best = seed;
  FitCounts best_fit = fit_counts(mask, seed);
  // inter_a / uni_a > inter_b / uni_b, compared exactly.
  auto better = [](const FitCounts& a, const FitCounts& b) { return a.inter * b.uni > b.inter * a.uni; };
  auto same = [](const FitCounts& a, const FitCounts& b) { return a.inter * b.uni == b.inter * a.uni; };

  for (int deg = 0; deg < 90; ++deg) {
    const RotatedBox base =
        deg == 0 ? seed : enclosing_rect_at(hull, seed.angle + deg * std::numbers::pi / 180.0);
    for (int step = 0; step <= 20; ++step) {
      const double s = 0.80 + 0.02 * step;
      const RotatedBox cand{base.cx, base.cy, base.w * s, base.h * s, base.angle};
      const FitCounts f = fit_counts(mask, cand);
      if (better(f, best_fit) || (same(f, best_fit) && cand.area() < best.area())) {
        best = cand;
        best_fit = f;
      }
    }
  }
  return best;
}

Assignment hungarian(const AffinityMatrix& aff) {
  Assignment out;
  const int n = std::max(aff.rows, aff.cols);
  if (aff.rows == 0 || aff.cols == 0) return out;

  // Minimization over cost = -max(a, 0) on an n x n padding, 1-indexed potentials.
  auto cost = [&](int i, int j) -> double {
    if (i >= aff.rows || j >= aff.cols) return 0.0;
    return -std::max(aff.at(i, j), 0.0);
  };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<int> col_of_row(aff.rows, -1);
  for (int j = 1; j <= n; ++j) {
    const int i = p[j] - 1;
    if (i < aff.rows && j - 1 < aff.cols) col_of_row[i] = j - 1;
  }
  for (int i = 0; i < aff.rows; ++i) {
    const int j = col_of_row[i];
    if (j < 0 || aff.at(i, j) <= 0.0) continue;
    out.pairs.emplace_back(i, j);
    out.total += aff.at(i, j);
  }
  return out;
}

}  // namespace siammask
