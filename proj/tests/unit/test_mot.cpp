#include <gtest/gtest.h>

#include "oracles.hpp"
#include "siammask/errors.hpp"
#include "siammask/mot.hpp"
#include "siammask/synthdata.hpp"

using namespace siammask;

namespace {

Sequence three_objects(std::uint64_t seed, int frames = 6) {
  RandomSceneOptions o;
  o.objects = 3;
  o.frames = frames;
  return generate(random_scene(seed, o));
}

std::vector<Detection> truth(const Sequence& s, int t) { return oracle_detector(s, t); }

const SiamMaskModel& model() {
  static const SiamMaskModel m(ModelConfig::toy(), Variant::three_branch, 21);
  return m;
}

bool subset(const BinaryMask& a, const BinaryMask& b) {
  for (int r = 0; r < a.height(); ++r)
    for (int c = 0; c < a.width(); ++c)
      if (a.at(r, c) && !b.at(r, c)) return false;
  return true;
}

}  // namespace

TEST(OracleDetector, NoiseModes) {
  const Sequence s = three_objects(1);
  const auto clean = truth(s, 2);
  ASSERT_EQ(clean.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(clean[i].mask, s.objects[i].masks[2]);
    EXPECT_EQ(clean[i].box, s.objects[i].boxes[2]);
  }
  EXPECT_TRUE(oracle_detector(s, 2, {1.0, 0, 0}).empty());

  const auto eroded = oracle_detector(s, 2, {0.0, 2, 0});
  ASSERT_EQ(eroded.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_TRUE(subset(eroded[i].mask, clean[i].mask));
    EXPECT_LT(eroded[i].mask.count(), clean[i].mask.count());
  }

  const OracleDetectorOptions half{0.5, 0, 9};
  for (int t = 0; t < s.frame_count(); ++t) {
    const auto a = oracle_detector(s, t, half), b = oracle_detector(s, t, half);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].mask, b[i].mask);
  }
  EXPECT_THROW(make_detection(BinaryMask(10, 10)), EmptyMaskError);
}

TEST(Mot, NeedsThreeBranches) {
  const SiamMaskModel two(ModelConfig::toy(), Variant::two_branch, 1);
  EXPECT_THROW(MultiObjectTracker(two, {}), ConfigError);
}

TEST(Mot, SpawnsOnePerDetection) {
  const Sequence s = three_objects(2);
  MultiObjectTracker mot(model(), {});
  const MotStep st = mot.step(s.frames[0], truth(s, 0));
  EXPECT_EQ(st.spawned, (std::vector<int>{1, 2, 3}));
  EXPECT_EQ(st.affinity.cols, 0);
  ASSERT_EQ(mot.tracks().size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(mot.tracks()[i].mask, s.objects[i].masks[0]);
}

TEST(Mot, UnmatchedTracksAgeAndExpire) {
  const Sequence s = three_objects(3, 14);
  MotOptions o;
  o.max_lost = 3;
  MultiObjectTracker mot(model(), o);
  mot.step(s.frames[0], truth(s, 0));
  for (int t = 1; t <= 3; ++t) {
    const MotStep st = mot.step(s.frames[t], {});
    EXPECT_TRUE(st.removed.empty());
    for (const MotTrack& tr : mot.tracks()) {
      EXPECT_EQ(tr.lost_age, t);
      EXPECT_EQ(tr.status, TrackStatus::lost);
      EXPECT_TRUE(tr.mask.empty());
    }
  }
  const MotStep st = mot.step(s.frames[4], {});
  EXPECT_EQ(st.removed, (std::vector<int>{1, 2, 3}));
  EXPECT_TRUE(mot.tracks().empty());
}

TEST(Mot, ExtraDetectionsSpawnNewTracks) {
  const Sequence s = three_objects(4);
  MultiObjectTracker mot(model(), {});
  mot.step(s.frames[0], {truth(s, 0)[0]});
  const MotStep st = mot.step(s.frames[1], truth(s, 1));
  // Every detection either matched the existing track or started a new one.
  EXPECT_EQ(st.assignment.pairs.size() + st.spawned.size(), 3u);
  EXPECT_GE(st.spawned.size(), 2u);
  EXPECT_EQ(mot.tracks().size(), 1 + st.spawned.size());
}

TEST(Mot, SpawnRules) {
  const Sequence s = three_objects(5);
  MultiObjectTracker mot(model(), {});
  auto dets = truth(s, 0);
  dets[0].confidence = 0.49;
  dets[1].confidence = 0.5;
  std::vector<std::uint8_t> px(static_cast<std::size_t>(s.height()) * s.width(), 0);
  px[5 * s.width() + 5] = 1;  // a single-pixel detection is too small to track
  dets.push_back(make_detection(BinaryMask(s.height(), s.width(), px)));
  const MotStep st = mot.step(s.frames[0], dets);
  EXPECT_EQ(st.spawned.size(), 2u);
}

TEST(Mot, AssignmentIsOptimalOnStoredAffinity) {
  for (std::uint64_t seed = 6; seed < 9; ++seed) {
    const Sequence s = three_objects(seed);
    MultiObjectTracker mot(model(), {});
    mot.step(s.frames[0], truth(s, 0));
    for (int t = 1; t < s.frame_count(); ++t) {
      const MotStep st = mot.step(s.frames[t], oracle_detector(s, t, {0.2, 1, seed}));
      EXPECT_NEAR(st.assignment.total, oracle::brute_force_assignment(st.affinity), 1e-12);
      for (double v : st.affinity.values) EXPECT_TRUE(v == 0.0 || (v >= 0.1 && v <= 1.0));
      for (const auto& [i, j] : st.assignment.pairs) EXPECT_GT(st.affinity.at(i, j), 0.0);
    }
  }
}

TEST(Mot, MatchedTrackTakesDetection) {
  const Sequence s = three_objects(10);
  MultiObjectTracker mot(model(), {});
  mot.step(s.frames[0], truth(s, 0));
  const auto dets = truth(s, 1);
  const MotStep st = mot.step(s.frames[1], dets);
  for (const auto& [i, j] : st.assignment.pairs) {
    const MotTrack& tr = mot.tracks()[j];
    EXPECT_EQ(tr.id, st.track_ids[j]);
    EXPECT_EQ(tr.mask, dets[i].mask);
    EXPECT_EQ(tr.lost_age, 0);
  }
}

TEST(MotOptionsJson, RoundTripAndStrictness) {
  MotOptions o;
  o.max_lost = 4;
  o.affinity = AffinityKind::box;
  const nlohmann::json j = o;
  EXPECT_EQ(j.get<MotOptions>(), o);
  nlohmann::json bad = j;
  bad["max_age"] = 3;
  EXPECT_THROW(bad.get<MotOptions>(), ConfigError);
  bad = j;
  bad["affinity"] = "iou";
  EXPECT_THROW(bad.get<MotOptions>(), ConfigError);
}
