#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "oracles.hpp"
#include "siammask/errors.hpp"
#include "siammask/geom.hpp"

using namespace siammask;

namespace {

BinaryMask block(int h, int w, int r0, int c0, int bh, int bw) {
  std::vector<std::uint8_t> v(static_cast<std::size_t>(h) * w, 0);
  for (int r = r0; r < r0 + bh; ++r)
    for (int c = c0; c < c0 + bw; ++c) v[static_cast<std::size_t>(r) * w + c] = 1;
  return BinaryMask(h, w, std::move(v));
}

BinaryMask diamond(int side, int radius) {
  std::vector<std::uint8_t> v(static_cast<std::size_t>(side) * side, 0);
  const double c = side / 2.0;
  for (int r = 0; r < side; ++r)
    for (int col = 0; col < side; ++col)
      v[static_cast<std::size_t>(r) * side + col] = std::abs(r + 0.5 - c) + std::abs(col + 0.5 - c) <= radius;
  return BinaryMask(side, side, std::move(v));
}

double angle_mod_half_pi(double a) {
  const double m = std::fmod(a, std::numbers::pi / 2);
  return std::min(m, std::numbers::pi / 2 - m);
}

}  // namespace

TEST(IouAxis, IdentityDisjointAndHandComputed) {
  EXPECT_DOUBLE_EQ(iou_axis({0, 0, 1, 1}, {0, 0, 1, 1}), 1.0);
  EXPECT_DOUBLE_EQ(iou_axis({0, 0, 1, 1}, {2, 2, 3, 3}), 0.0);
  // Intersection 1x1, union 2 + 2 - 1.
  EXPECT_NEAR(iou_axis({0, 0, 2, 1}, {1, 0, 3, 1}), 1.0 / 3.0, 1e-15);
  EXPECT_DOUBLE_EQ(iou_axis({1, 1, 1, 1}, {1, 1, 1, 1}), 0.0);
}

TEST(IouMask, ShiftedBlockMatchesPixelCount) {
  const BinaryMask a = block(30, 30, 5, 5, 10, 10);
  const BinaryMask b = block(30, 30, 5, 10, 10, 10);
  int inter = 0, uni = 0;
  for (int r = 0; r < 30; ++r)
    for (int c = 0; c < 30; ++c) {
      inter += a.at(r, c) && b.at(r, c);
      uni += a.at(r, c) || b.at(r, c);
    }
  EXPECT_DOUBLE_EQ(iou_mask(a, b), double(inter) / uni);
  EXPECT_DOUBLE_EQ(iou_mask(a, b), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(iou_mask(a, a), 1.0);
  EXPECT_DOUBLE_EQ(iou_mask(a, block(30, 30, 20, 20, 5, 5)), 0.0);
  EXPECT_DOUBLE_EQ(iou_mask(BinaryMask(4, 4), BinaryMask(4, 4)), 0.0);
  EXPECT_THROW(iou_mask(a, BinaryMask(30, 31)), ShapeError);
}

TEST(IouRotated, SymmetryCases) {
  const RotatedBox a{10, 10, 6, 3, 0.3};
  EXPECT_NEAR(iou_rotated(a, a), 1.0, 1e-12);
  const RotatedBox sq{0, 0, 2, 2, 0.0};
  const RotatedBox sq90 = RotatedBox::canonical(0, 0, 2, 2, std::numbers::pi / 2);
  EXPECT_NEAR(iou_rotated(sq, sq90), 1.0, 1e-12);
}

TEST(IouRotated, UnitSquareVersus45DegreesMatchesDenseRaster) {
  const RotatedBox a{0, 0, 1, 1, 0.0};
  const RotatedBox b{0, 0, 1, 1, std::numbers::pi / 4};
  const double expected = oracle::dense_iou_rotated(a, b, 2000);
  EXPECT_NEAR(iou_rotated(a, b), expected, 1e-3);
  // Octagon of area 2(sqrt2 - 1) over union 2 - octagon.
  EXPECT_NEAR(iou_rotated(a, b), 0.70710678, 1e-6);
}

TEST(MinMaxBox, Examples) {
  std::vector<std::uint8_t> v(100, 0);
  v[4 * 10 + 3] = 1;
  const AxisBox single = min_max_box(BinaryMask(10, 10, v));
  EXPECT_EQ(single, (AxisBox{3, 4, 4, 5}));
  EXPECT_EQ(min_max_box(block(30, 30, 0, 0, 10, 20)), (AxisBox{0, 0, 20, 10}));
  std::vector<std::uint8_t> two(100, 0);
  two[0] = 1;
  two[99] = 1;
  EXPECT_EQ(min_max_box(BinaryMask(10, 10, two)), (AxisBox{0, 0, 10, 10}));
  EXPECT_THROW(min_max_box(BinaryMask(5, 5)), EmptyMaskError);
}

TEST(Mbr, AxisAlignedRectangle) {
  const RotatedBox r = mbr(block(40, 40, 3, 5, 10, 20));
  EXPECT_NEAR(r.area(), 200.0, 1e-9);
  EXPECT_NEAR(angle_mod_half_pi(r.angle), 0.0, 1e-9);
}

TEST(Mbr, DiamondMatchesAngleSweep) {
  const BinaryMask d = diamond(64, 20);
  const RotatedBox r = mbr(d);
  double sweep_angle = 0.0;
  const double sweep = oracle::swept_min_area(oracle::all_cell_corners(d), 0.5, &sweep_angle);
  EXPECT_NEAR(r.angle, std::numbers::pi / 4, 2.0 * std::numbers::pi / 180);
  EXPECT_NEAR(r.area(), sweep, 0.01 * sweep);
  EXPECT_LE(r.area(), sweep + 1e-9);
}

TEST(Mbr, SinglePixel) {
  std::vector<std::uint8_t> v(25, 0);
  v[2 * 5 + 3] = 1;
  const RotatedBox r = mbr(BinaryMask(5, 5, v));
  EXPECT_NEAR(r.cx, 3.5, 1e-12);
  EXPECT_NEAR(r.cy, 2.5, 1e-12);
  EXPECT_NEAR(r.w, 1.0, 1e-12);
  EXPECT_NEAR(r.h, 1.0, 1e-12);
  EXPECT_THROW(mbr(BinaryMask(5, 5)), EmptyMaskError);
}

TEST(OptBox, RectangleIsExact) {
  const BinaryMask m = block(40, 40, 4, 6, 12, 25);
  EXPECT_DOUBLE_EQ(fit_objective(m, opt_box(m)), 1.0);
}

TEST(OptBox, DiamondNotWorseThanMbr) {
  const BinaryMask d = diamond(50, 15);
  EXPECT_GE(fit_objective(d, opt_box(d)), fit_objective(d, mbr(d)));
}

TEST(OptBox, RingIsHandled) {
  std::vector<std::uint8_t> v(60 * 60, 0);
  for (int r = 0; r < 60; ++r)
    for (int c = 0; c < 60; ++c) {
      const double d = std::hypot(r + 0.5 - 30, c + 0.5 - 30);
      v[r * 60 + c] = d >= 12 && d <= 20;
    }
  const BinaryMask ring(60, 60, v);
  EXPECT_GT(fit_objective(ring, opt_box(ring)), 0.0);
  EXPECT_THROW(opt_box(BinaryMask(3, 3)), EmptyMaskError);
}

TEST(GeomProperties, RandomConvexMasks) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const BinaryMask m = oracle::random_convex_mask(rng, 48, 56);
    const AxisBox mm = min_max_box(m);
    // Contains every pixel and is tight on each side.
    bool top = false, bottom = false, left = false, right = false;
    for (int r = 0; r < m.height(); ++r)
      for (int c = 0; c < m.width(); ++c) {
        if (!m.at(r, c)) continue;
        ASSERT_TRUE(c >= mm.x_min && c + 1 <= mm.x_max && r >= mm.y_min && r + 1 <= mm.y_max);
        top |= r == mm.y_min;
        bottom |= r + 1 == mm.y_max;
        left |= c == mm.x_min;
        right |= c + 1 == mm.x_max;
      }
    EXPECT_TRUE(top && bottom && left && right);

    const RotatedBox r = mbr(m);
    const double sweep = oracle::swept_min_area(oracle::all_cell_corners(m), 0.5);
    EXPECT_LE(r.area(), sweep * 1.01);
    EXPECT_GE(r.area(), sweep * 0.99);
    EXPECT_LE(r.area(), mm.area() + 1e-9);
    EXPECT_GE(fit_objective(m, opt_box(m)), fit_objective(m, r));

    const BinaryMask other = oracle::random_convex_mask(rng, 48, 56);
    const double ab = iou_mask(m, other);
    EXPECT_DOUBLE_EQ(ab, iou_mask(other, m));
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0);
    const RotatedBox r2 = mbr(other);
    EXPECT_NEAR(iou_rotated(r, r2), iou_rotated(r2, r), 1e-12);
  }
}

TEST(Hungarian, Examples) {
  AffinityMatrix a(2, 2);
  a.values = {0.9, 0.1, 0.2, 0.8};
  const Assignment s = hungarian(a);
  ASSERT_EQ(s.pairs.size(), 2u);
  EXPECT_EQ(s.pairs[0], std::make_pair(0, 0));
  EXPECT_EQ(s.pairs[1], std::make_pair(1, 1));
  EXPECT_DOUBLE_EQ(s.total, oracle::brute_force_assignment(a));
  EXPECT_NEAR(s.total, 1.7, 1e-15);

  AffinityMatrix eye(3, 3);
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  const Assignment d = hungarian(eye);
  ASSERT_EQ(d.pairs.size(), 3u);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(d.pairs[i], std::make_pair(i, i));

  AffinityMatrix wide(1, 2);
  wide.values = {0.3, 0.7};
  const Assignment w = hungarian(wide);
  ASSERT_EQ(w.pairs.size(), 1u);
  EXPECT_EQ(w.pairs[0], std::make_pair(0, 1));
  EXPECT_DOUBLE_EQ(w.total, 0.7);

  EXPECT_TRUE(hungarian(AffinityMatrix(0, 3)).pairs.empty());
}

TEST(Hungarian, MatchesBruteForceOnRandomMatrices) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> dim(1, 6);
  std::uniform_real_distribution<double> val(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    AffinityMatrix a(dim(rng), dim(rng));
    for (auto& v : a.values) v = val(rng) < 0.2 ? 0.0 : val(rng);
    const Assignment s = hungarian(a);
    EXPECT_DOUBLE_EQ(s.total, oracle::brute_force_assignment(a)) << "trial " << trial;
    std::vector<int> rows(a.rows, 0), cols(a.cols, 0);
    for (auto [i, j] : s.pairs) {
      ASSERT_EQ(++rows[i], 1);
      ASSERT_EQ(++cols[j], 1);
    }
  }
}
