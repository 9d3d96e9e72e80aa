#include "ovrd/geometry.hpp"

#include <gtest/gtest.h>

#include "ovrd/rng.hpp"

namespace ovrd {
namespace {

Tracklet make_tracklet(std::int64_t id, std::int64_t start,
                       std::vector<BBox> boxes, const std::string& video = "v") {
  Tracklet t;
  t.id = id;
  t.video = video;
  t.start_frame = start;
  t.boxes = std::move(boxes);
  return t;
}

TEST(Iou, IdenticalBoxes) {
  BBox a{0, 0, 2, 3};
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
}

TEST(Iou, DisjointBoxes) {
  EXPECT_DOUBLE_EQ(iou({0, 0, 1, 1}, {2, 2, 3, 3}), 0.0);
}

TEST(Iou, PartialOverlap) {
  // inter = 1, union = 4 + 4 - 1 = 7
  EXPECT_NEAR(iou({0, 0, 2, 2}, {1, 1, 3, 3}), 1.0 / 7.0, 1e-15);
}

TEST(Iou, DegenerateBoxesYieldZero) {
  BBox point{1, 1, 1, 1};
  EXPECT_DOUBLE_EQ(iou(point, point), 0.0);
  EXPECT_DOUBLE_EQ(iou(point, {0, 0, 2, 2}), 0.0);
}

TEST(Giou, IdenticalBoxes) {
  BBox a{0, 0, 2, 3};
  EXPECT_DOUBLE_EQ(giou(a, a), 1.0);
}

TEST(Giou, DisjointBoxes) {
  // enclosing [0,0,3,3] area 9, union 2
  EXPECT_NEAR(giou({0, 0, 1, 1}, {2, 2, 3, 3}), -(9.0 - 2.0) / 9.0, 1e-15);
}

TEST(Giou, PartialOverlap) {
  // iou 1/7, enclosing area 9, union 7
  EXPECT_NEAR(giou({0, 0, 2, 2}, {1, 1, 3, 3}), 1.0 / 7.0 - 2.0 / 9.0, 1e-15);
}

TEST(Giou, CoincidentDegenerateBoxes) {
  BBox point{1, 1, 1, 1};
  EXPECT_DOUBLE_EQ(giou(point, point), 0.0);
}

TEST(Giou, SymmetricAndBoundedBelowIou) {
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    auto rand_box = [&] {
      double x1 = rng.uniform(0, 10), y1 = rng.uniform(0, 10);
      return BBox{x1, y1, x1 + rng.uniform(0, 5), y1 + rng.uniform(0, 5)};
    };
    BBox a = rand_box(), b = rand_box();
    EXPECT_DOUBLE_EQ(giou(a, b), giou(b, a));
    EXPECT_DOUBLE_EQ(iou(a, b), iou(b, a));
    EXPECT_LE(giou(a, b), iou(a, b) + 1e-15);
    EXPECT_GE(giou(a, b), -1.0);
    EXPECT_LE(giou(a, b), 1.0);
    EXPECT_GE(iou(a, b), 0.0);
    EXPECT_LE(iou(a, b), 1.0);
  }
}

TEST(Giou, ApproachesMinusOneWithSeparation) {
  // Fixed-size boxes on a separation sweep: monotone decrease toward -1.
  double prev = 1.0;
  for (double sep = 0.0; sep < 2000.0; sep += 50.0) {
    double g = giou({0, 0, 1, 1}, {1 + sep, 0, 2 + sep, 1});
    EXPECT_LT(g, prev);
    prev = g;
  }
  EXPECT_LT(prev, -0.99);
}

TEST(TemporalIntersection, OverlappingSpans) {
  auto ti = make_tracklet(1, 0, std::vector<BBox>(10));
  auto tj = make_tracklet(2, 5, std::vector<BBox>(10));
  auto span = temporal_intersection(ti, tj);
  ASSERT_TRUE(span.has_value());
  EXPECT_EQ(span->first, 5);
  EXPECT_EQ(span->last, 9);
}

TEST(TemporalIntersection, DisjointSpans) {
  auto ti = make_tracklet(1, 0, std::vector<BBox>(5));
  auto tj = make_tracklet(2, 5, std::vector<BBox>(5));
  EXPECT_FALSE(temporal_intersection(ti, tj).has_value());
}

TEST(TemporalIntersection, IdenticalSpans) {
  auto ti = make_tracklet(1, 3, std::vector<BBox>(7));
  auto span = temporal_intersection(ti, ti);
  ASSERT_TRUE(span.has_value());
  EXPECT_EQ(span->first, 3);
  EXPECT_EQ(span->last, 9);
}

TEST(TemporalIntersection, DifferentVideosThrow) {
  auto ti = make_tracklet(1, 0, std::vector<BBox>(5), "a");
  auto tj = make_tracklet(2, 0, std::vector<BBox>(5), "b");
  EXPECT_THROW((void)temporal_intersection(ti, tj), std::invalid_argument);
  EXPECT_THROW((void)viou(ti, tj), std::invalid_argument);
}

TEST(Viou, IdenticalTracklets) {
  auto t = make_tracklet(1, 0, {{0, 0, 2, 2}, {1, 1, 3, 3}, {2, 2, 4, 4}});
  EXPECT_DOUBLE_EQ(viou(t, t), 1.0);
}

TEST(Viou, TemporallyDisjoint) {
  auto ti = make_tracklet(1, 0, {{0, 0, 2, 2}, {0, 0, 2, 2}});
  auto tj = make_tracklet(2, 10, {{0, 0, 2, 2}, {0, 0, 2, 2}});
  EXPECT_DOUBLE_EQ(viou(ti, tj), 0.0);
}

TEST(Viou, TwoFrameHandComputed) {
  // Frame 0: boxes as in the iou example (inter 1, union 7).
  // Frame 1: identical boxes (inter 4, union 4).
  auto ti = make_tracklet(1, 0, {{0, 0, 2, 2}, {0, 0, 2, 2}});
  auto tj = make_tracklet(2, 0, {{1, 1, 3, 3}, {0, 0, 2, 2}});
  EXPECT_NEAR(viou(ti, tj), (1.0 + 4.0) / (7.0 + 4.0), 1e-15);
}

TEST(Viou, PartialTemporalOverlapCountsLoneFrames) {
  // ti covers frames 0..1, tj covers 1..2, same unit box everywhere.
  auto ti = make_tracklet(1, 0, {{0, 0, 1, 1}, {0, 0, 1, 1}});
  auto tj = make_tracklet(2, 1, {{0, 0, 1, 1}, {0, 0, 1, 1}});
  // inter = 1 (frame 1); union = 1 (frame 0) + 1 (frame 1) + 1 (frame 2).
  EXPECT_NEAR(viou(ti, tj), 1.0 / 3.0, 1e-15);
}

TEST(Viou, SymmetricOnRandomTracklets) {
  Rng rng(11);
  for (int it = 0; it < 100; ++it) {
    auto rand_tracklet = [&](std::int64_t id) {
      std::int64_t start = static_cast<std::int64_t>(rng.uniform_int(5));
      std::size_t len = 1 + rng.uniform_int(6);
      std::vector<BBox> boxes;
      for (std::size_t k = 0; k < len; ++k) {
        double x1 = rng.uniform(0, 8), y1 = rng.uniform(0, 8);
        boxes.push_back({x1, y1, x1 + rng.uniform(0.1, 4), y1 + rng.uniform(0.1, 4)});
      }
      return make_tracklet(id, start, std::move(boxes));
    };
    Tracklet a = rand_tracklet(1), b = rand_tracklet(2);
    EXPECT_DOUBLE_EQ(viou(a, b), viou(b, a));
    EXPECT_DOUBLE_EQ(viou(a, a), 1.0);
    EXPECT_GE(viou(a, b), 0.0);
    EXPECT_LE(viou(a, b), 1.0);
  }
}

}  // namespace
}  // namespace ovrd
