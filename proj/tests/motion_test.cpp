#include "ovrd/motion.hpp"

#include <gtest/gtest.h>

#include <set>

#include "ovrd/rng.hpp"

namespace ovrd {
namespace {

// Builds a two-frame pair whose start/end GIoU equal the requested values,
// using same-size squares on a shared horizontal line: for overlap o >= 0,
// giou = iou = (a - o) / (a + o); for separation, giou = -(o - a) / (o + a).
double offset_for_giou(double g, double side) {
  return side * (1.0 - g) / (1.0 + g);
}

std::pair<Tracklet, Tracklet> pair_with_giou(double g_start, double g_end) {
  const double side = 10.0;
  Tracklet ti, tj;
  ti.id = 1;
  tj.id = 2;
  ti.video = tj.video = "v";
  ti.start_frame = tj.start_frame = 0;
  double o0 = offset_for_giou(g_start, side);
  double o1 = offset_for_giou(g_end, side);
  ti.boxes = {{o0, 0, o0 + side, side}, {o1, 0, o1 + side, side}};
  tj.boxes = {{0, 0, side, side}, {0, 0, side, side}};
  return {ti, tj};
}

TEST(MotionPattern, ClosedFormBoxPlacement) {
  auto [ti, tj] = pair_with_giou(-0.5, 0.2);
  EXPECT_NEAR(giou(ti.boxes[0], tj.boxes[0]), -0.5, 1e-12);
  EXPECT_NEAR(giou(ti.boxes[1], tj.boxes[1]), 0.2, 1e-12);
}

TEST(MotionPattern, SignArithmetic) {
  // gamma = -0.3, G_s = -0.5, G_e = 0.2 -> [-, +, +]
  auto [ti, tj] = pair_with_giou(-0.5, 0.2);
  MotionPattern m = motion_pattern(ti, tj, -0.3);
  EXPECT_EQ(m, (MotionPattern{false, true, true}));
  EXPECT_EQ(pattern_index(m), 4);
}

TEST(MotionPattern, SignZeroIsPlus) {
  // G_s = G_e = gamma -> [+, +, +]. Uses gamma = -0.5 and box coordinates
  // whose GIoU is exactly representable: squares of side 10 separated by 20
  // give -(30 - 10)/(30 + 10) = -0.5 with no rounding.
  Tracklet ti, tj;
  ti.video = tj.video = "v";
  ti.start_frame = tj.start_frame = 0;
  ti.boxes = {{30, 0, 40, 10}, {30, 0, 40, 10}};
  tj.boxes = {{0, 0, 10, 10}, {0, 0, 10, 10}};
  ASSERT_DOUBLE_EQ(giou(ti.boxes[0], tj.boxes[0]), -0.5);
  MotionPattern m = motion_pattern(ti, tj, -0.5);
  EXPECT_EQ(m, (MotionPattern{true, true, true}));
  EXPECT_EQ(pattern_index(m), 0);
}

TEST(MotionPattern, RecedingPair) {
  // G_s = 0.5, G_e = 0.1, gamma = -0.3 -> [+, +, -]
  auto [ti, tj] = pair_with_giou(0.5, 0.1);
  MotionPattern m = motion_pattern(ti, tj, -0.3);
  EXPECT_EQ(m, (MotionPattern{true, true, false}));
  EXPECT_EQ(pattern_index(m), 1);
}

TEST(MotionPattern, EmptyIntersectionThrows) {
  Tracklet ti, tj;
  ti.video = tj.video = "v";
  ti.start_frame = 0;
  ti.boxes.assign(3, {0, 0, 1, 1});
  tj.start_frame = 10;
  tj.boxes.assign(3, {0, 0, 1, 1});
  EXPECT_THROW((void)motion_pattern(ti, tj, -0.3), std::invalid_argument);
}

TEST(MotionPattern, ImpossiblePatternsCannotBeConstructed) {
  EXPECT_THROW(MotionPattern(true, false, true), std::invalid_argument);
  EXPECT_THROW(MotionPattern(false, true, false), std::invalid_argument);
}

TEST(MotionPattern, IndexIsABijectionOverValidPatterns) {
  std::set<int> seen;
  for (int s = 0; s <= 1; ++s)
    for (int e = 0; e <= 1; ++e)
      for (int a = 0; a <= 1; ++a) {
        bool invalid = (s && !e && a) || (!s && e && !a);
        if (invalid) continue;
        int idx = pattern_index(MotionPattern(s, e, a));
        EXPECT_TRUE(idx >= 0 && idx < kNumMotionPatterns);
        seen.insert(idx);
        EXPECT_EQ(MotionPattern::from_index(idx), MotionPattern(s, e, a));
      }
  EXPECT_EQ(seen.size(), 6u);
}

TEST(MotionPattern, RandomPairsAlwaysValid) {
  Rng rng(3);
  for (int it = 0; it < 10000; ++it) {
    auto rand_tracklet = [&](std::int64_t id) {
      Tracklet t;
      t.id = id;
      t.video = "v";
      t.start_frame = static_cast<std::int64_t>(rng.uniform_int(3));
      std::size_t len = 4 + rng.uniform_int(3);  // ends at >= 3: overlap assured
      for (std::size_t k = 0; k < len; ++k) {
        double x1 = rng.uniform(0, 50), y1 = rng.uniform(0, 50);
        t.boxes.push_back({x1, y1, x1 + rng.uniform(0, 20), y1 + rng.uniform(0, 20)});
      }
      return t;
    };
    Tracklet a = rand_tracklet(1), b = rand_tracklet(2);
    // Spans [0..4] at least overlap in frames 2..3.
    MotionPattern m = motion_pattern(a, b, -0.3);
    int idx = pattern_index(m);
    EXPECT_TRUE(idx >= 0 && idx < 6);
    // Third sign is '+' iff G_s <= G_e under the sign(0) = '+' rule.
    auto span = temporal_intersection(a, b);
    double gs = giou(a.box_at(span->first), b.box_at(span->first));
    double ge = giou(a.box_at(span->last), b.box_at(span->last));
    EXPECT_EQ(m.approaching, ge - gs >= 0.0);
  }
}

TEST(RelPosFeature, IdenticalBoxesGiveZeroVector) {
  Tracklet t;
  t.video = "v";
  t.start_frame = 2;
  t.boxes.assign(4, {5, 5, 9, 9});
  auto f = relative_position_feature(t, t, 30.0);
  for (double v : f) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(RelPosFeature, HandComputedCase) {
  // Subject center (2,2) size (2,2); object center (1,1) size (1,1).
  Tracklet ti, tj;
  ti.video = tj.video = "v";
  ti.start_frame = tj.start_frame = 0;
  ti.boxes = {{1, 1, 3, 3}, {1, 1, 3, 3}};
  tj.boxes = {{0.5, 0.5, 1.5, 1.5}, {0.5, 0.5, 1.5, 1.5}};
  auto f = relative_position_feature(ti, tj, 30.0);
  EXPECT_NEAR(f[0], 1.0, 1e-12);
  EXPECT_NEAR(f[1], 1.0, 1e-12);
  EXPECT_NEAR(f[2], std::log(2.0), 1e-12);
  EXPECT_NEAR(f[3], std::log(2.0), 1e-12);
  EXPECT_NEAR(f[4], std::log(4.0), 1e-12);
  EXPECT_NEAR(f[5], 0.0, 1e-12);
}

TEST(RelPosFeature, SwapNegatesLogRatios) {
  Rng rng(5);
  for (int it = 0; it < 50; ++it) {
    Tracklet ti, tj;
    ti.video = tj.video = "v";
    ti.start_frame = tj.start_frame = 0;
    auto rand_box = [&] {
      double x1 = rng.uniform(1, 20), y1 = rng.uniform(1, 20);
      return BBox{x1, y1, x1 + rng.uniform(0.5, 10), y1 + rng.uniform(0.5, 10)};
    };
    BBox a = rand_box(), b = rand_box();
    ti.boxes = {a, a};
    tj.boxes = {b, b};
    auto fij = relative_position_feature(ti, tj, 30.0);
    auto fji = relative_position_feature(tj, ti, 30.0);
    for (int k : {2, 3, 4}) {
      EXPECT_NEAR(fij[k], -fji[k], 1e-12);
      EXPECT_NEAR(fij[6 + k], -fji[6 + k], 1e-12);
    }
  }
}

TEST(RelPosFeature, EmptyIntersectionThrows) {
  Tracklet ti, tj;
  ti.video = tj.video = "v";
  ti.start_frame = 0;
  ti.boxes.assign(2, {0, 0, 1, 1});
  tj.start_frame = 5;
  tj.boxes.assign(2, {0, 0, 1, 1});
  EXPECT_THROW((void)relative_position_feature(ti, tj, 30.0), std::invalid_argument);
}

}  // namespace
}  // namespace ovrd
