#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "siammask/crop.hpp"
#include "siammask/synthdata.hpp"
#include "siammask/track.hpp"

using namespace siammask;

namespace {

Sequence small_scene(std::uint64_t seed, int frames = 8) {
  RandomSceneOptions opt;
  opt.frames = frames;
  return generate(random_scene(seed, opt));
}

std::vector<nn::Tensor> snapshot(const SiamMaskModel& m) {
  std::vector<nn::Tensor> out;
  for (const auto& [name, v] : m.params().entries()) out.push_back(v.value());
  return out;
}

BinaryMask solid(int h, int w, int r0, int c0, int bh, int bw) {
  std::vector<std::uint8_t> v(static_cast<std::size_t>(h) * w, 0);
  for (int r = r0; r < r0 + bh; ++r)
    for (int c = c0; c < c0 + bw; ++c) v[static_cast<std::size_t>(r) * w + c] = 1;
  return BinaryMask(h, w, std::move(v));
}

}  // namespace

TEST(Crop, ContextRule) {
  EXPECT_DOUBLE_EQ(context_side(40, 40, 0.5), 80.0);
  EXPECT_DOUBLE_EQ(context_side(30, 10, 0.5), std::sqrt(50.0 * 30.0));
  const CropWindow w{100.5, 60.25, 80, 127};
  const Point2 p = w.to_frame(w.to_patch(Point2{90.0, 77.0}));
  EXPECT_NEAR(p.x, 90.0, 1e-12);
  EXPECT_NEAR(p.y, 77.0, 1e-12);
  EXPECT_NEAR(w.to_patch(Point2{100.5, 60.25}).x, 63.5, 1e-12);
}

TEST(Crop, PatchAndMaskGeometry) {
  cv::Mat frame(100, 120, CV_8UC3, cv::Scalar(10, 20, 30));
  const cv::Mat inside = crop_patch(frame, {60, 50, 40, 31});
  ASSERT_EQ(inside.rows, 31);
  for (int y = 0; y < 31; ++y)
    for (int x = 0; x < 31; ++x) EXPECT_EQ(inside.at<cv::Vec3b>(y, x), cv::Vec3b(10, 20, 30));
  // Padding uses the mean colour, which equals the constant here.
  const cv::Mat outside = crop_patch(frame, {0, 0, 80, 31});
  for (int c = 0; c < 3; ++c) EXPECT_EQ(outside.at<cv::Vec3b>(0, 0)[c], frame.at<cv::Vec3b>(0, 0)[c]);

  const BinaryMask m = solid(100, 120, 40, 50, 20, 20);  // centre (60, 50)
  const BinaryMask c = crop_mask(m, {60, 50, 40, 40});
  EXPECT_EQ(min_max_box(c), (AxisBox{10, 10, 30, 30}));
}

TEST(Argmax, CentreAndTies) {
  std::vector<double> s(289, 0.0);
  s[8 * 17 + 8] = 1.0;
  EXPECT_EQ(argmax_row(s), 8 * 17 + 8);
  std::fill(s.begin(), s.end(), 0.5);
  EXPECT_EQ(argmax_row(s), 0);
  s[40] = s[200] = 0.9;
  EXPECT_EQ(argmax_row(s), 40);
}

TEST(GenerateBox, Strategies) {
  const BinaryMask rect = solid(60, 60, 10, 20, 15, 25);
  const GeneratedBox a = generate_box(rect, BoxStrategy::min_max, {});
  EXPECT_EQ(a.axis, (AxisBox{20, 10, 45, 25}));
  EXPECT_FALSE(a.fallback);

  std::vector<std::uint8_t> v(61 * 61, 0);
  for (int r = 0; r < 61; ++r)
    for (int c = 0; c < 61; ++c) v[r * 61 + c] = std::abs(r - 30) + std::abs(c - 30) <= 20;
  const GeneratedBox d = generate_box(BinaryMask(61, 61, v), BoxStrategy::mbr, {});
  EXPECT_NEAR(d.rotated.angle, std::numbers::pi / 4, 1e-9);

  const GeneratedBox f = generate_box(BinaryMask(60, 60), BoxStrategy::mbr, d);
  EXPECT_TRUE(f.fallback);
  EXPECT_EQ(f.rotated.angle, d.rotated.angle);
  EXPECT_EQ(f.axis, d.axis);
}

TEST(Tracker, InitErrorsAndCachedFeatures) {
  const Sequence seq = small_scene(1, 2);
  const SiamMaskModel model(ModelConfig::toy(), Variant::three_branch, 3);
  SiamMaskTracker t(model, {});
  EXPECT_THROW(t.init(seq.frames[0], {10, 10, 11, 11}), std::invalid_argument);
  EXPECT_THROW(t.init(seq.frames[0], {-50, -50, -20, -20}), std::invalid_argument);
  EXPECT_THROW(t.track(seq.frames[0]), std::logic_error);
  t.init(seq.frames[0], seq.objects[0].boxes[0]);
  const nn::Tensor first = t.exemplar_features();
  t.init(seq.frames[0], seq.objects[0].boxes[0]);
  EXPECT_EQ(first.data, t.exemplar_features().data);
}

TEST(Tracker, ZeroLogitsGiveEmptyMaskAndFallback) {
  const Sequence seq = small_scene(2, 3);
  SiamMaskModel model(ModelConfig::toy(), Variant::two_branch, 3);
  for (auto& [name, v] : model.params().entries()) std::fill(v.mutable_value().data.begin(), v.mutable_value().data.end(), 0.0);
  for (MaskPath p : {MaskPath::plain, MaskPath::refined}) {
    TrackerOptions o;
    o.mask_path = p;
    SiamMaskTracker t(model, o);
    t.init(seq.frames[0], seq.objects[0].boxes[0]);
    const FrameResult r = t.track(seq.frames[1]);
    EXPECT_TRUE(r.mask.empty());
    EXPECT_TRUE(r.box.fallback);
    EXPECT_EQ(r.box.axis, seq.objects[0].boxes[0]);
    EXPECT_EQ(r.row, 0);  // all scores tie
  }
}

TEST(Tracker, FrozenParamsFootprintAndDeterminism) {
  const Sequence seq = small_scene(3, 6);
  for (Variant v : {Variant::two_branch, Variant::three_branch}) {
    SiamMaskModel model(ModelConfig::toy(), v, 4);
    // Push the mask logits positive so the random model yields non-empty masks.
    nn::Var bias = model.params().get("refine.out.bias");
    bias.mutable_value().data[0] = 0.3;
    const auto before = snapshot(model);
    SiamMaskTracker a(model, {}), b(model, {});
    const auto ra = track_sequence(a, seq, seq.objects[0].id);
    const auto rb = track_sequence(b, seq, seq.objects[0].id);
    const auto after = snapshot(model);
    for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(before[i].data, after[i].data);
    ASSERT_EQ(ra.size(), 6u);
    EXPECT_EQ(ra[0].mask, seq.objects[0].masks[0]);
    for (std::size_t t = 1; t < ra.size(); ++t) {
      EXPECT_EQ(ra[t].mask, rb[t].mask);
      EXPECT_EQ(ra[t].score, rb[t].score);
      EXPECT_EQ(ra[t].row, rb[t].row);
      EXPECT_FALSE(ra[t].mask.empty());
      const CropWindow& f = ra[t].footprint;
      for (int y = 0; y < seq.height(); ++y)
        for (int x = 0; x < seq.width(); ++x) {
          if (!ra[t].mask.at(y, x)) continue;
          EXPECT_LE(std::abs(x + 0.5 - f.cx), f.side / 2 + 1e-9);
          EXPECT_LE(std::abs(y + 0.5 - f.cy), f.side / 2 + 1e-9);
        }
      // The search centre never leaves the frame.
      EXPECT_GE(a.target().cx, 0);
      EXPECT_LE(a.target().cx, seq.width());
    }
  }
}

TEST(Tracker, CascadeReportsStageOne) {
  const Sequence seq = small_scene(4, 3);
  SiamMaskModel model(ModelConfig::toy(), Variant::three_branch, 5);
  SiamMaskTracker t(model, {});
  t.init(seq.frames[0], seq.objects[0].boxes[0]);
  FrameResult first;
  const FrameResult second = t.track_cascade(seq.frames[1], &first);
  EXPECT_GT(first.coarse_box.width(), 0);
  EXPECT_EQ(second.mask.height(), seq.height());

  TrackerOptions floor;
  floor.score_floor = 1e9;
  SiamMaskTracker low(model, floor);
  low.init(seq.frames[0], seq.objects[0].boxes[0]);
  const FrameResult r = low.track_cascade(seq.frames[1]);
  EXPECT_TRUE(r.low_score);
  EXPECT_TRUE(r.mask.empty());
}

TEST(ResultStream, LineFormats) {
  const auto dir = std::filesystem::temp_directory_path() / "siammask_stream_test";
  std::filesystem::remove_all(dir);
  FrameResult a;
  a.mask = solid(20, 30, 2, 3, 4, 5);
  a.box = generate_box(a.mask, BoxStrategy::min_max, {});
  a.score = 0.25;
  FrameResult b = a;
  b.box = generate_box(a.mask, BoxStrategy::mbr, {});
  write_result_stream(dir, {a, b});
  std::ifstream in(dir / "boxes.txt");
  std::string l1, l2;
  std::getline(in, l1);
  std::getline(in, l2);
  auto count = [](const std::string& s) {
    std::istringstream ss(s);
    int n = 0;
    for (double x; ss >> x;) ++n;
    return n;
  };
  EXPECT_EQ(count(l1), 5);
  EXPECT_EQ(count(l2), 9);
  EXPECT_EQ(l1.rfind("3.000000 2.000000 5.000000 4.000000 0.250000", 0), 0u);
  EXPECT_TRUE(std::filesystem::exists(dir / "masks" / "00001.png"));
  std::filesystem::remove_all(dir);
}

TEST(TrackerOptionsJson, RoundTrip) {
  TrackerOptions o;
  o.strategy = BoxStrategy::opt;
  o.size_damping = 0.2;
  const nlohmann::json j = o;
  EXPECT_EQ(j.get<TrackerOptions>(), o);
  nlohmann::json bad = j;
  bad["damping"] = 1;
  EXPECT_ANY_THROW(bad.get<TrackerOptions>());
}
