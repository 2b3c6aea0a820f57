#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "siammask/errors.hpp"
#include "siammask/eval.hpp"
#include "siammask/synthdata.hpp"
#include "oracles.hpp"

using namespace siammask;

namespace {

BinaryMask square(int h, int w, int r0, int c0, int side) {
  std::vector<std::uint8_t> v(static_cast<std::size_t>(h) * w, 0);
  for (int r = r0; r < r0 + side; ++r)
    for (int c = c0; c < c0 + side; ++c) v[static_cast<std::size_t>(r) * w + c] = 1;
  return BinaryMask(h, w, std::move(v));
}

// Slow reference: explicit 8-neighbour boundary and exhaustive nearest-pixel search.
double brute_contour_f(const BinaryMask& a, const BinaryMask& b) {
  auto edge = [](const BinaryMask& m) {
    std::vector<std::pair<int, int>> out;
    for (int r = 0; r < m.height(); ++r)
      for (int c = 0; c < m.width(); ++c) {
        if (!m.at(r, c)) continue;
        bool border = false;
        for (int dr = -1; dr <= 1; ++dr)
          for (int dc = -1; dc <= 1; ++dc) {
            const int rr = r + dr, cc = c + dc;
            if (rr < 0 || cc < 0 || rr >= m.height() || cc >= m.width() || !m.at(rr, cc)) border = true;
          }
        if (border) out.emplace_back(r, c);
      }
    return out;
  };
  const auto ea = edge(a), eb = edge(b);
  if (ea.empty() && eb.empty()) return 1.0;
  if (ea.empty() || eb.empty()) return 0.0;
  const double tol = std::max(1.0, std::ceil(0.008 * std::hypot(a.height(), a.width())));
  auto frac = [tol](const auto& from, const auto& to) {
    int hit = 0;
    for (auto [r, c] : from) {
      double best = 1e300;
      for (auto [r2, c2] : to) best = std::min(best, std::hypot(r - r2, c - c2));
      hit += best <= tol;
    }
    return double(hit) / from.size();
  };
  const double p = frac(ea, eb), r = frac(eb, ea);
  return p + r == 0 ? 0.0 : 2 * p * r / (p + r);
}

// Replays ground truth except on the listed frames, where it returns an empty mask.
class ScriptedTracker : public Tracker {
 public:
  ScriptedTracker(const Sequence& seq, std::vector<int> blank) : seq_(seq), blank_(std::move(blank)) {}
  void init(const cv::Mat&, const AxisBox&) override { ++inits; }
  FrameResult track(const cv::Mat& frame) override {
    int t = 0;
    while (seq_.frames[t].data != frame.data) ++t;
    FrameResult r;
    const bool blank = std::find(blank_.begin(), blank_.end(), t) != blank_.end();
    r.mask = blank ? BinaryMask(seq_.height(), seq_.width()) : seq_.objects[0].masks[t];
    return r;
  }
  int inits = 0;

 private:
  const Sequence& seq_;
  std::vector<int> blank_;
};

Sequence scene(std::uint64_t seed, int frames) {
  RandomSceneOptions o;
  o.frames = frames;
  return generate(random_scene(seed, o));
}

ObjectResult perfect(const Sequence& s) {
  ObjectResult r{s.name, s.objects[0].id, s.objects[0].masks, s.objects[0].rotated};
  return r;
}

}  // namespace

TEST(CurveStats, ConstantHasNoDecay) {
  const std::vector<double> v(40, 0.7);
  const CurveStats s = curve_stats(v);
  EXPECT_DOUBLE_EQ(s.mean, 0.7);
  EXPECT_DOUBLE_EQ(s.recall, 1.0);
  EXPECT_DOUBLE_EQ(s.decay, 0.0);
}

TEST(CurveStats, LinearRampDecay) {
  std::vector<double> v(100);
  for (int i = 0; i < 100; ++i) v[i] = 1.0 - i / 100.0;
  const CurveStats s = curve_stats(v);
  EXPECT_NEAR(s.decay, 0.75, 1e-12);
  EXPECT_NEAR(s.mean, 0.505, 1e-12);
  EXPECT_DOUBLE_EQ(s.recall, 0.5);  // strictly above 0.5
}

TEST(CurveStats, AllZeroAndEmpty) {
  const std::vector<double> z(7, 0.0);
  const CurveStats s = curve_stats(z);
  EXPECT_EQ(s.mean, 0.0);
  EXPECT_EQ(s.recall, 0.0);
  EXPECT_EQ(s.decay, 0.0);
  EXPECT_THROW(curve_stats(std::vector<double>{}), std::invalid_argument);
  // Short sequences still have one frame per quartile.
  const std::vector<double> two{1.0, 0.25};
  EXPECT_DOUBLE_EQ(curve_stats(two).decay, 0.75);
}

TEST(RegionSimilarity, EmptyPairsAgree) {
  EXPECT_EQ(region_similarity(BinaryMask(10, 10), BinaryMask(10, 10)), 1.0);
  EXPECT_EQ(region_similarity(square(10, 10, 2, 2, 3), BinaryMask(10, 10)), 0.0);
  EXPECT_THROW(region_similarity(BinaryMask(10, 10), BinaryMask(10, 11)), ShapeError);
}

TEST(Contour, ToleranceRule) {
  EXPECT_EQ(contour_tolerance(10, 10), 1);
  EXPECT_EQ(contour_tolerance(100, 100), 2);  // 0.008 * 141.4 = 1.13
  EXPECT_EQ(contour_tolerance(480, 854), 8);  // 0.008 * 979.7 = 7.84
}

TEST(Contour, IdentitySymmetryAndExtremes) {
  const BinaryMask a = square(100, 100, 20, 20, 30);
  EXPECT_EQ(contour_fmeasure(a, a), 1.0);
  // One-pixel dilation stays inside the 2 px tolerance.
  EXPECT_EQ(contour_fmeasure(square(100, 100, 19, 19, 32), a), 1.0);
  EXPECT_EQ(contour_fmeasure(square(100, 100, 70, 70, 20), a), 0.0);
  EXPECT_EQ(contour_fmeasure(BinaryMask(100, 100), BinaryMask(100, 100)), 1.0);
  EXPECT_EQ(contour_fmeasure(BinaryMask(100, 100), a), 0.0);
  const BinaryMask b = square(100, 100, 25, 30, 30);
  EXPECT_DOUBLE_EQ(contour_fmeasure(a, b), contour_fmeasure(b, a));
  EXPECT_THROW(contour_fmeasure(a, BinaryMask(100, 99)), ShapeError);
}

TEST(Contour, MatchesBruteForce) {
  std::mt19937_64 rng(17);
  for (int k = 0; k < 12; ++k) {
    const BinaryMask a = oracle::random_convex_mask(rng, 60, 70);
    const BinaryMask b = oracle::random_convex_mask(rng, 60, 70);
    EXPECT_NEAR(contour_fmeasure(a, b), brute_contour_f(a, b), 1e-12) << "case " << k;
    EXPECT_NEAR(contour_fmeasure(a, a), 1.0, 1e-12);
  }
}

TEST(SuccessMap, AveragesOverSequences) {
  const SuccessStats s = success_map({{0.4, 0.6, 0.8}, {1.0}, {}});
  EXPECT_NEAR(s.miou, 0.8, 1e-12);
  EXPECT_NEAR(s.ap.at(0.5), (2.0 / 3 + 1) / 2, 1e-12);
  EXPECT_NEAR(s.ap.at(0.7), (1.0 / 3 + 1) / 2, 1e-12);
  // Threshold is inclusive.
  EXPECT_EQ(success_map({{0.5}}).ap.at(0.5), 1.0);
}

TEST(BoxIou, MatchesDenseSampling) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> pos(20, 40), size(5, 30), ang(0, 1.5);
  for (int k = 0; k < 20; ++k) {
    const RotatedBox a{pos(rng), pos(rng), size(rng), size(rng), ang(rng)};
    const RotatedBox b{pos(rng), pos(rng), size(rng), size(rng), k % 2 ? ang(rng) : 0.0};
    EXPECT_NEAR(box_iou(a, b), oracle::dense_iou_rotated(a, b, 800), 5e-3);
    EXPECT_NEAR(box_iou(a, b), box_iou(b, a), 1e-12);
  }
}

TEST(ResetProtocol, PerfectTrackerNeverFails) {
  const Sequence seq = scene(5, 30);
  ScriptedTracker t(seq, {});
  const ResetRun run = run_reset_protocol(t, seq, seq.objects[0].id);
  EXPECT_EQ(run.failures, 0);
  EXPECT_EQ(t.inits, 1);
  EXPECT_EQ(std::count(run.counted.begin(), run.counted.end(), true), 29);
  const AccuracyRobustness ar = accuracy_robustness(std::span<const ResetRun>(&run, 1));
  EXPECT_DOUBLE_EQ(ar.accuracy, 1.0);
  EXPECT_EQ(ar.failures, 0);
}

TEST(ResetProtocol, FailureGapAndBurnIn) {
  const Sequence seq = scene(6, 30);
  ScriptedTracker t(seq, {5});
  const ResetRun run = run_reset_protocol(t, seq, seq.objects[0].id);
  EXPECT_EQ(run.failures, 1);
  EXPECT_EQ(t.inits, 2);
  // Counted: 1..4 before the failure, then 21..29 after the re-init at 10 and its burn-in.
  for (int f = 0; f < 30; ++f) {
    const bool expected = (f >= 1 && f <= 4) || f >= 21;
    EXPECT_EQ(run.counted[f], expected) << "frame " << f;
  }
  for (int f = 6; f < 10; ++f) EXPECT_EQ(run.overlaps[f], 0.0);
  EXPECT_EQ(run.overlaps[10], 1.0);
}

TEST(ResetProtocol, EmptyTrackerFailsRepeatedly) {
  const Sequence seq = scene(7, 30);
  std::vector<int> all(30);
  for (int i = 0; i < 30; ++i) all[i] = i;
  ScriptedTracker t(seq, all);
  const ResetRun run = run_reset_protocol(t, seq, seq.objects[0].id);
  // Init at 0, 6, 12, 18, 24 each followed by an immediate failure.
  EXPECT_EQ(run.failures, 5);
  const AccuracyRobustness ar = accuracy_robustness(std::span<const ResetRun>(&run, 1));
  EXPECT_EQ(ar.accuracy, 0.0);
}

TEST(Oracles, NonRotatingRectanglesAgree) {
  SceneSpec s;
  s.frames = 10;
  ObjectSpec o;
  o.velocity = {2.0, 1.0};  // whole pixels keep the raster size fixed
  s.objects = {o};
  const OracleReport r = representation_oracles({generate(s)});
  EXPECT_NEAR(r.mbr.miou, 1.0, 1e-9);
  EXPECT_NEAR(r.min_max.miou, 1.0, 1e-9);
  EXPECT_NEAR(r.fixed_aspect.miou, 1.0, 1e-9);
  EXPECT_EQ(r.sequences, 1);
}

TEST(Oracles, RotatingElongatedOrdering) {
  RandomSceneOptions o;
  o.min_rotation_rate = 0.05;
  o.max_rotation_rate = 0.1;
  o.min_aspect = 2.0;
  std::vector<Sequence> data;
  for (int i = 0; i < 4; ++i) data.push_back(generate(random_scene(500 + i, o)));
  const OracleReport r = representation_oracles(data);
  EXPECT_LT(r.fixed_aspect.miou, r.min_max.miou);
  EXPECT_LT(r.min_max.miou, r.mbr.miou);
  // MBR never does worse than min-max on the same mask.
  EXPECT_GE(r.mbr.ap.at(0.7), r.min_max.ap.at(0.7));
}

TEST(Evaluate, PerfectResultsAndSplits) {
  Sequence a = scene(11, 12), b = scene(12, 12);
  a.name = "a";
  b.name = "b";
  b.seen = false;
  const MetricsReport r = evaluate({a, b}, {perfect(a), perfect(b)});
  EXPECT_DOUBLE_EQ(r.j.mean, 1.0);
  EXPECT_DOUBLE_EQ(r.f.mean, 1.0);
  EXPECT_NEAR(r.boxes.miou, 1.0, 1e-9);
  ASSERT_TRUE(r.overall.has_value());
  EXPECT_DOUBLE_EQ(*r.overall, 1.0);
  EXPECT_EQ(r.objects, 2);
  EXPECT_EQ(r.frames, 22);  // the init frame is skipped
  const nlohmann::json j = r;
  EXPECT_TRUE(j.contains("j"));
}

TEST(Evaluate, RejectsMismatchedResults) {
  Sequence a = scene(13, 6);
  a.name = "a";
  ObjectResult r = perfect(a);
  r.sequence = "missing";
  EXPECT_THROW(evaluate({a}, {r}), ConfigError);
  r = perfect(a);
  r.object_id = 99;
  EXPECT_THROW(evaluate({a}, {r}), ConfigError);
  r = perfect(a);
  r.masks.pop_back();
  EXPECT_THROW(evaluate({a}, {r}), ConfigError);
}
