#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ovrd {

/// Axis-aligned box, continuous pixel coordinates, x1 <= x2 and y1 <= y2.
/// Degenerate (zero-area) boxes are legal inputs everywhere; trackers emit
/// them occasionally.
struct BBox {
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  bool valid() const { return x1 <= x2 && y1 <= y2; }

  bool operator==(const BBox&) const = default;
};

/// Inclusive frame interval.
struct FrameSpan {
  std::int64_t first = 0;
  std::int64_t last = 0;
  std::int64_t length() const { return last - first + 1; }
};

/// Per-frame box sequence for one object within a video. The RoI feature is
/// the temporal average over the tracklet's boxes (2048-d when loaded); the
/// VLM embedding is optional and only needed at training time.
struct Tracklet {
  std::int64_t id = 0;
  std::string video;
  std::int64_t start_frame = 0;
  std::vector<BBox> boxes;
  std::vector<double> roi_feature;
  std::vector<double> vlm_embedding;

  std::int64_t end_frame() const {
    return start_frame + static_cast<std::int64_t>(boxes.size()) - 1;
  }
  FrameSpan span() const { return {start_frame, end_frame()}; }
  bool covers(std::int64_t frame) const {
    return frame >= start_frame && frame <= end_frame();
  }
  const BBox& box_at(std::int64_t frame) const {
    return boxes[static_cast<std::size_t>(frame - start_frame)];
  }
  bool has_vlm_embedding() const { return !vlm_embedding.empty(); }
};

namespace detail {
inline double intersection_area(const BBox& a, const BBox& b) {
  double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  return w * h;
}
}  // namespace detail

/// Intersection over union in [0, 1]; 0 when the union has zero area.
inline double iou(const BBox& a, const BBox& b) {
  double inter = detail::intersection_area(a, b);
  double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

/// Generalized IoU in [-1, 1]: IoU - (C - U) / C with C the area of the
/// smallest enclosing box. Returns 0 when C is zero (both boxes degenerate
/// at the same point).
inline double giou(const BBox& a, const BBox& b) {
  double inter = detail::intersection_area(a, b);
  double uni = a.area() + b.area() - inter;
  BBox enclosing{std::min(a.x1, b.x1), std::min(a.y1, b.y1),
                 std::max(a.x2, b.x2), std::max(a.y2, b.y2)};
  double c = enclosing.area();
  if (c <= 0.0) return 0.0;
  double iou_val = uni > 0.0 ? inter / uni : 0.0;
  return iou_val - (c - uni) / c;
}

/// Frame interval covered by both tracklets, or nullopt when they do not
/// co-occur. Throws if the tracklets come from different videos.
inline std::optional<FrameSpan> temporal_intersection(const Tracklet& ti,
                                                      const Tracklet& tj) {
  if (ti.video != tj.video)
    throw std::invalid_argument("temporal_intersection: tracklets from "
                                "different videos (" + ti.video + " vs " +
                                tj.video + ")");
  std::int64_t first = std::max(ti.start_frame, tj.start_frame);
  std::int64_t last = std::min(ti.end_frame(), tj.end_frame());
  if (first > last) return std::nullopt;
  return FrameSpan{first, last};
}

/// Volume IoU over the union of the two frame spans: sum of per-frame
/// intersection areas over sum of per-frame union areas. Frames covered by
/// only one tracklet contribute that tracklet's box area to the union.
inline double viou(const Tracklet& ti, const Tracklet& tj) {
  if (ti.video != tj.video)
    throw std::invalid_argument("viou: tracklets from different videos (" +
                                ti.video + " vs " + tj.video + ")");
  std::int64_t first = std::min(ti.start_frame, tj.start_frame);
  std::int64_t last = std::max(ti.end_frame(), tj.end_frame());
  double inter_sum = 0.0;
  double union_sum = 0.0;
  for (std::int64_t f = first; f <= last; ++f) {
    bool in_i = ti.covers(f);
    bool in_j = tj.covers(f);
    if (in_i && in_j) {
      const BBox& a = ti.box_at(f);
      const BBox& b = tj.box_at(f);
      double inter = detail::intersection_area(a, b);
      inter_sum += inter;
      union_sum += a.area() + b.area() - inter;
    } else if (in_i) {
      union_sum += ti.box_at(f).area();
    } else if (in_j) {
      union_sum += tj.box_at(f).area();
    }
  }
  if (union_sum <= 0.0) return 0.0;
  return inter_sum / union_sum;
}

}  // namespace ovrd
