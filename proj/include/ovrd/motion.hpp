#pragma once

#include <array>
#include <cmath>
#include <stdexcept>

#include "ovrd/geometry.hpp"

namespace ovrd {

inline constexpr int kNumMotionPatterns = 6;

/// Sign triple of [G_s - gamma, G_e - gamma, G_e - G_s], where G_s and G_e
/// are the subject-object GIoU at the first and last frame of the pair's
/// temporal intersection. '+' is encoded as true and sign(0) = '+'.
///
/// Only 6 of the 8 combinations are realizable: (+,-,+) would need the pair
/// to end below the threshold it started at or above while still closing in,
/// and (-,+,-) the reverse; both are contradictions. The constructor rejects
/// them so invalid patterns cannot exist.
struct MotionPattern {
  bool start_near;   // G_s >= gamma
  bool end_near;     // G_e >= gamma
  bool approaching;  // G_e >= G_s

  MotionPattern(bool start_near_, bool end_near_, bool approaching_)
      : start_near(start_near_), end_near(end_near_), approaching(approaching_) {
    if ((start_near && !end_near && approaching) ||
        (!start_near && end_near && !approaching))
      throw std::invalid_argument(
          "MotionPattern: [+,-,+] and [-,+,-] are not realizable");
  }

  bool operator==(const MotionPattern&) const = default;

  static MotionPattern from_index(int g);
};

/// Fixed bijection from the 6 valid patterns onto {0..5}. The table is part
/// of the prompt-bank checkpoint contract; see README.
///   (+,+,+)=0  (+,+,-)=1  (-,-,+)=2  (-,-,-)=3  (-,+,+)=4  (+,-,-)=5
inline int pattern_index(const MotionPattern& p) {
  if (p.start_near && p.end_near) return p.approaching ? 0 : 1;
  if (!p.start_near && !p.end_near) return p.approaching ? 2 : 3;
  if (!p.start_near && p.end_near) return 4;  // approaching is forced true
  return 5;                                   // (+,-): forced receding
}

inline MotionPattern MotionPattern::from_index(int g) {
  switch (g) {
    case 0: return {true, true, true};
    case 1: return {true, true, false};
    case 2: return {false, false, true};
    case 3: return {false, false, false};
    case 4: return {false, true, true};
    case 5: return {true, false, false};
    default:
      throw std::invalid_argument("MotionPattern::from_index: bad group id");
  }
}

/// Motion pattern of an ordered tracklet pair. Requires a non-empty temporal
/// intersection.
inline MotionPattern motion_pattern(const Tracklet& ti, const Tracklet& tj,
                                    double gamma) {
  auto span = temporal_intersection(ti, tj);
  if (!span)
    throw std::invalid_argument(
        "motion_pattern: tracklets have no temporal intersection");
  double g_start = giou(ti.box_at(span->first), tj.box_at(span->first));
  double g_end = giou(ti.box_at(span->last), tj.box_at(span->last));
  return MotionPattern(g_start - gamma >= 0.0, g_end - gamma >= 0.0,
                       g_end - g_start >= 0.0);
}

namespace detail {

// Denominator guard: a box touching the image origin makes x_j = 0.
inline double clamp_den(double d, double eps = 1e-6) {
  if (d >= 0.0) return std::max(d, eps);
  return std::min(d, -eps);
}

inline std::array<double, 6> rel_pos_6(const BBox& bi, const BBox& bj,
                                       double t_i, double t_j, double l_seg) {
  double xj = clamp_den(bj.cx());
  double yj = clamp_den(bj.cy());
  double wi = clamp_den(bi.width());
  double hi = clamp_den(bi.height());
  double wj = clamp_den(bj.width());
  double hj = clamp_den(bj.height());
  return {(bi.cx() - xj) / xj,
          (bi.cy() - yj) / yj,
          std::log(wi / wj),
          std::log(hi / hj),
          std::log((wi * hi) / (wj * hj)),
          (t_i - t_j) / l_seg};
}

}  // namespace detail

/// 12-d relative position feature: the 6-d feature between the beginning
/// boxes of the pair's temporal intersection concatenated with the same for
/// the ending boxes. l_seg is the segment length used to normalize the frame
/// offset term.
inline std::array<double, 12> relative_position_feature(const Tracklet& ti,
                                                        const Tracklet& tj,
                                                        double l_seg) {
  if (l_seg <= 0.0)
    throw std::invalid_argument("relative_position_feature: l_seg must be > 0");
  auto span = temporal_intersection(ti, tj);
  if (!span)
    throw std::invalid_argument(
        "relative_position_feature: tracklets have no temporal intersection");
  auto fb = detail::rel_pos_6(ti.box_at(span->first), tj.box_at(span->first),
                              static_cast<double>(span->first),
                              static_cast<double>(span->first), l_seg);
  auto fe = detail::rel_pos_6(ti.box_at(span->last), tj.box_at(span->last),
                              static_cast<double>(span->last),
                              static_cast<double>(span->last), l_seg);
  std::array<double, 12> out{};
  for (int k = 0; k < 6; ++k) {
    out[k] = fb[k];
    out[6 + k] = fe[k];
  }
  return out;
}

}  // namespace ovrd
