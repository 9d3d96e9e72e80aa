#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "ovrd/geometry.hpp"
#include "ovrd/relation_classifier.hpp"
#include "ovrd/tracklet_classifier.hpp"

namespace ovrd {

/// One detection window [first_frame, first_frame + length) with the
/// tracklet slices that fall inside it. Slices shorter than 2 frames are
/// dropped.
struct Segment {
  int index = 0;
  std::int64_t first_frame = 0;
  std::int64_t last_frame = 0;             // exclusive
  std::vector<Tracklet> slices;            // clipped box sequences
  std::vector<std::size_t> source_index;   // into the video tracklet list
};

/// Splits a video into fixed-length windows at stride multiples. Only full
/// windows are emitted; a video shorter than l_seg yields a single window
/// covering it.
inline std::vector<Segment> split_segments(const std::vector<Tracklet>& tracklets,
                                           int l_seg, int stride) {
  if (l_seg <= 0) throw std::invalid_argument("split_segments: l_seg must be > 0");
  if (stride <= 0 || stride > l_seg)
    throw std::invalid_argument("split_segments: need 0 < stride <= l_seg");
  std::vector<Segment> out;
  if (tracklets.empty()) return out;
  std::int64_t video_end = 0;  // exclusive
  std::int64_t video_begin = tracklets.front().start_frame;
  for (const auto& t : tracklets) {
    video_end = std::max(video_end, t.end_frame() + 1);
    video_begin = std::min(video_begin, t.start_frame);
  }
  // Windows sit at absolute stride multiples; the first one may start a few
  // frames before the first box (slices are clipped anyway).
  std::int64_t w0 = (video_begin >= 0 ? video_begin / stride
                                      : (video_begin - stride + 1) / stride) *
                    stride;
  std::vector<std::pair<std::int64_t, std::int64_t>> windows;
  if (video_end - w0 <= l_seg) {
    windows.emplace_back(w0, video_end);
  } else {
    for (std::int64_t ws = w0; ws + l_seg <= video_end; ws += stride)
      windows.emplace_back(ws, ws + l_seg);
  }
  for (std::size_t w = 0; w < windows.size(); ++w) {
    Segment seg;
    seg.index = static_cast<int>(w);
    seg.first_frame = windows[w].first;
    seg.last_frame = windows[w].second;
    for (std::size_t i = 0; i < tracklets.size(); ++i) {
      const Tracklet& t = tracklets[i];
      std::int64_t a = std::max(t.start_frame, seg.first_frame);
      std::int64_t b = std::min(t.end_frame() + 1, seg.last_frame);
      if (b - a < 2) continue;
      Tracklet slice;
      slice.id = t.id;
      slice.video = t.video;
      slice.start_frame = a;
      slice.boxes.assign(t.boxes.begin() + (a - t.start_frame),
                         t.boxes.begin() + (b - t.start_frame));
      slice.roi_feature = t.roi_feature;
      slice.vlm_embedding = t.vlm_embedding;
      seg.slices.push_back(std::move(slice));
      seg.source_index.push_back(i);
    }
    out.push_back(std::move(seg));
  }
  return out;
}

/// All ordered slice pairs (i, j), i != j, whose temporal intersection
/// inside the segment spans at least 2 frames.
inline std::vector<std::pair<std::size_t, std::size_t>> enumerate_pairs(
    const Segment& seg) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < seg.slices.size(); ++i)
    for (std::size_t j = 0; j < seg.slices.size(); ++j) {
      if (i == j) continue;
      auto span = temporal_intersection(seg.slices[i], seg.slices[j]);
      if (span && span->length() >= 2) out.emplace_back(i, j);
    }
  return out;
}

/// A scored ⟨subject, predicate, object⟩ detection inside one segment (the
/// segment span generalizes to [seg_lo, seg_hi] once instances are merged).
struct SegmentRelation {
  int seg_lo = 0, seg_hi = 0;
  std::int64_t sub_id = 0, obj_id = 0;
  Tracklet sub_boxes, obj_boxes;
  int sub_cls = -1, obj_cls = -1, predicate = -1;
  double sub_score = 1.0, obj_score = 1.0, pred_score = 1.0;
  double score = 1.0;  // product of the three component scores
};

/// Per-tracklet classification outcome used while assembling detections.
struct TrackletDecision {
  int cls = -1;
  double score = 1.0;
};

/// Scores one segment: every eligible ordered pair gets its top-k predicates
/// from the relation head, combined with the per-tracklet class decisions.
/// Returned relations are sorted by descending combined score.
inline std::vector<SegmentRelation> detect_segment_relations(
    const Segment& seg, const std::vector<TrackletDecision>& decisions,
    const SurrogateEncoder& enc, const RelationHead& head, const PromptBank& bank,
    const Vocabulary& predicates, std::uint64_t vocab_seed, double gamma,
    double l_seg, int top_k, Rng* rand_group_rng = nullptr) {
  if (decisions.size() != seg.slices.size())
    throw std::invalid_argument("detect_segment_relations: one decision per "
                                "slice required");
  std::vector<SegmentRelation> out;
  for (auto [i, j] : enumerate_pairs(seg)) {
    PairSample pair = make_pair_sample(seg.slices[i], seg.slices[j], head.mode,
                                       gamma, l_seg, /*need_v=*/false);
    pair.segment = seg.index;
    if (rand_group_rng)
      pair.group = static_cast<int>(rand_group_rng->uniform_int(kNumMotionPatterns));
    auto scored = score_pair_open_vocab(enc, head, bank, pair, predicates, vocab_seed);
    int keep = std::min<int>(top_k, static_cast<int>(scored.size()));
    for (int k = 0; k < keep; ++k) {
      SegmentRelation rel;
      rel.seg_lo = rel.seg_hi = seg.index;
      rel.sub_id = seg.slices[i].id;
      rel.obj_id = seg.slices[j].id;
      rel.sub_boxes = seg.slices[i];
      rel.obj_boxes = seg.slices[j];
      rel.sub_boxes.roi_feature.clear();
      rel.sub_boxes.vlm_embedding.clear();
      rel.obj_boxes.roi_feature.clear();
      rel.obj_boxes.vlm_embedding.clear();
      rel.sub_cls = decisions[i].cls;
      rel.obj_cls = decisions[j].cls;
      rel.sub_score = decisions[i].score;
      rel.obj_score = decisions[j].score;
      rel.predicate = scored[k].first;
      rel.pred_score = scored[k].second;
      rel.score = rel.sub_score * rel.obj_score * rel.pred_score;
      out.push_back(std::move(rel));
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const SegmentRelation& a,
                                              const SegmentRelation& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.seg_lo != b.seg_lo) return a.seg_lo < b.seg_lo;
    if (a.sub_id != b.sub_id) return a.sub_id < b.sub_id;
    return a.obj_id < b.obj_id;
  });
  return out;
}

/// A video-level relation instance assembled from segment relations.
struct RelationInstance {
  std::string video;
  Tracklet sub, obj;
  int sub_cls = -1, predicate = -1, obj_cls = -1;
  double confidence = 0.0;
  int seg_lo = 0, seg_hi = 0;
  int members = 0;
};

namespace detail {

/// Per-frame running average of member boxes for one role.
struct BoxAccumulator {
  std::map<std::int64_t, std::pair<BBox, int>> frames;

  void add(const Tracklet& slice) {
    for (std::int64_t f = slice.start_frame; f <= slice.end_frame(); ++f) {
      auto [it, inserted] = frames.emplace(f, std::make_pair(slice.box_at(f), 1));
      if (!inserted) {
        BBox& b = it->second.first;
        int& n = it->second.second;
        const BBox& inc = slice.box_at(f);
        b.x1 = (b.x1 * n + inc.x1) / (n + 1);
        b.y1 = (b.y1 * n + inc.y1) / (n + 1);
        b.x2 = (b.x2 * n + inc.x2) / (n + 1);
        b.y2 = (b.y2 * n + inc.y2) / (n + 1);
        n += 1;
      }
    }
  }

  /// vIoU restricted to frames both sides cover; 1 when there is no overlap
  /// (nothing to contradict the merge).
  double overlap_viou(const Tracklet& slice) const {
    double inter_sum = 0.0, union_sum = 0.0;
    bool any = false;
    for (std::int64_t f = slice.start_frame; f <= slice.end_frame(); ++f) {
      auto it = frames.find(f);
      if (it == frames.end()) continue;
      any = true;
      const BBox& a = it->second.first;
      const BBox& b = slice.box_at(f);
      double inter = detail::intersection_area(a, b);
      inter_sum += inter;
      union_sum += a.area() + b.area() - inter;
    }
    if (!any || union_sum <= 0.0) return 1.0;
    return inter_sum / union_sum;
  }

  /// True when adding the slice keeps the accumulated frame set contiguous.
  bool contiguous_with(const Tracklet& slice) const {
    if (frames.empty()) return true;
    std::int64_t lo = frames.begin()->first;
    std::int64_t hi = frames.rbegin()->first;
    return slice.start_frame <= hi + 1 && slice.end_frame() >= lo - 1;
  }

  bool contiguous_with(const BoxAccumulator& other) const {
    if (frames.empty() || other.frames.empty()) return true;
    return other.frames.begin()->first <= frames.rbegin()->first + 1 &&
           other.frames.rbegin()->first >= frames.begin()->first - 1;
  }

  double overlap_viou(const BoxAccumulator& other) const {
    double inter_sum = 0.0, union_sum = 0.0;
    bool any = false;
    for (const auto& [f, entry] : other.frames) {
      auto it = frames.find(f);
      if (it == frames.end()) continue;
      any = true;
      const BBox& a = it->second.first;
      const BBox& b = entry.first;
      double inter = detail::intersection_area(a, b);
      inter_sum += inter;
      union_sum += a.area() + b.area() - inter;
    }
    if (!any || union_sum <= 0.0) return 1.0;
    return inter_sum / union_sum;
  }

  /// Count-weighted merge; order-independent.
  void merge(const BoxAccumulator& other) {
    for (const auto& [f, entry] : other.frames) {
      auto [it, inserted] = frames.emplace(f, entry);
      if (!inserted) {
        BBox& b = it->second.first;
        int& n = it->second.second;
        const BBox& inc = entry.first;
        int m = entry.second;
        b.x1 = (b.x1 * n + inc.x1 * m) / (n + m);
        b.y1 = (b.y1 * n + inc.y1 * m) / (n + m);
        b.x2 = (b.x2 * n + inc.x2 * m) / (n + m);
        b.y2 = (b.y2 * n + inc.y2 * m) / (n + m);
        n += m;
      }
    }
  }

  Tracklet assemble(std::int64_t id, const std::string& video) const {
    Tracklet t;
    t.id = id;
    t.video = video;
    t.start_frame = frames.begin()->first;
    for (const auto& [f, entry] : frames) t.boxes.push_back(entry.first);
    return t;
  }
};

struct OpenInstance {
  int sub_cls, predicate, obj_cls;
  int seg_lo, seg_hi;
  BoxAccumulator sub, obj;
  std::vector<double> scores;
  std::int64_t sub_id, obj_id;
};

}  // namespace detail

/// Greedy relation association: segment relations are processed in
/// descending combined score; a relation extends an open instance iff the
/// class triple matches, the segment spans are adjacent or overlapping, the
/// frame sets stay contiguous, and both tracklets' per-overlap vIoU reaches
/// merge_viou. Otherwise it opens a new instance. Boxes in overlapping
/// frames are coordinate-averaged; instance confidence is the mean member
/// score. Ties in score break by segment index, then subject id, then
/// object id. A final closure pass keeps merging instances that satisfy the
/// same gates until none do (a late member can bridge two instances the
/// score-ordered pass built separately), so the output is merge-free and
/// re-associating it is the identity.
inline std::vector<RelationInstance> greedy_associate(
    std::vector<SegmentRelation> relations, const std::string& video,
    double merge_viou) {
  std::stable_sort(relations.begin(), relations.end(),
                   [](const SegmentRelation& a, const SegmentRelation& b) {
                     if (a.score != b.score) return a.score > b.score;
                     if (a.seg_lo != b.seg_lo) return a.seg_lo < b.seg_lo;
                     if (a.sub_id != b.sub_id) return a.sub_id < b.sub_id;
                     return a.obj_id < b.obj_id;
                   });
  std::vector<detail::OpenInstance> open;
  for (const SegmentRelation& rel : relations) {
    detail::OpenInstance* best = nullptr;
    double best_gate = -1.0;
    for (auto& inst : open) {
      if (inst.sub_cls != rel.sub_cls || inst.predicate != rel.predicate ||
          inst.obj_cls != rel.obj_cls)
        continue;
      bool adjacent = rel.seg_lo <= inst.seg_hi + 1 && inst.seg_lo <= rel.seg_hi + 1;
      if (!adjacent) continue;
      if (!inst.sub.contiguous_with(rel.sub_boxes) ||
          !inst.obj.contiguous_with(rel.obj_boxes))
        continue;
      double vs = inst.sub.overlap_viou(rel.sub_boxes);
      if (vs < merge_viou) continue;
      double vo = inst.obj.overlap_viou(rel.obj_boxes);
      if (vo < merge_viou) continue;
      double gate = std::min(vs, vo);
      if (gate > best_gate) {
        best_gate = gate;
        best = &inst;
      }
    }
    if (best) {
      best->sub.add(rel.sub_boxes);
      best->obj.add(rel.obj_boxes);
      best->scores.push_back(rel.score);
      best->seg_lo = std::min(best->seg_lo, rel.seg_lo);
      best->seg_hi = std::max(best->seg_hi, rel.seg_hi);
    } else {
      detail::OpenInstance inst;
      inst.sub_cls = rel.sub_cls;
      inst.predicate = rel.predicate;
      inst.obj_cls = rel.obj_cls;
      inst.seg_lo = rel.seg_lo;
      inst.seg_hi = rel.seg_hi;
      inst.sub.add(rel.sub_boxes);
      inst.obj.add(rel.obj_boxes);
      inst.scores.push_back(rel.score);
      inst.sub_id = rel.sub_id;
      inst.obj_id = rel.obj_id;
      open.push_back(std::move(inst));
    }
  }
  // Closure: merge mergeable instance pairs until a fixpoint.
  for (bool changed = true; changed;) {
    changed = false;
    for (std::size_t i = 0; i < open.size() && !changed; ++i)
      for (std::size_t j = i + 1; j < open.size() && !changed; ++j) {
        detail::OpenInstance& a = open[i];
        detail::OpenInstance& b = open[j];
        if (a.sub_cls != b.sub_cls || a.predicate != b.predicate ||
            a.obj_cls != b.obj_cls)
          continue;
        if (!(b.seg_lo <= a.seg_hi + 1 && a.seg_lo <= b.seg_hi + 1)) continue;
        if (!a.sub.contiguous_with(b.sub) || !a.obj.contiguous_with(b.obj))
          continue;
        if (a.sub.overlap_viou(b.sub) < merge_viou) continue;
        if (a.obj.overlap_viou(b.obj) < merge_viou) continue;
        a.sub.merge(b.sub);
        a.obj.merge(b.obj);
        a.scores.insert(a.scores.end(), b.scores.begin(), b.scores.end());
        a.seg_lo = std::min(a.seg_lo, b.seg_lo);
        a.seg_hi = std::max(a.seg_hi, b.seg_hi);
        open.erase(open.begin() + j);
        changed = true;
      }
  }
  std::vector<RelationInstance> out;
  out.reserve(open.size());
  for (const auto& inst : open) {
    RelationInstance r;
    r.video = video;
    r.sub = inst.sub.assemble(inst.sub_id, video);
    r.obj = inst.obj.assemble(inst.obj_id, video);
    r.sub_cls = inst.sub_cls;
    r.predicate = inst.predicate;
    r.obj_cls = inst.obj_cls;
    double acc = 0.0;
    for (double s : inst.scores) acc += s;
    r.confidence = acc / static_cast<double>(inst.scores.size());
    r.seg_lo = inst.seg_lo;
    r.seg_hi = inst.seg_hi;
    r.members = static_cast<int>(inst.scores.size());
    out.push_back(std::move(r));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const RelationInstance& a, const RelationInstance& b) {
                     return a.confidence > b.confidence;
                   });
  return out;
}

// ---------------------------------------------------------------------------
// Prediction interchange (line-delimited records consumed by the evaluator)
// ---------------------------------------------------------------------------

inline nlohmann::json tracklet_boxes_json(const Tracklet& t) {
  nlohmann::json boxes = nlohmann::json::array();
  for (const auto& b : t.boxes) boxes.push_back({b.x1, b.y1, b.x2, b.y2});
  return {{"start_frame", t.start_frame}, {"boxes", std::move(boxes)}};
}

inline void write_predictions(std::ostream& os,
                              const std::vector<RelationInstance>& instances,
                              const Vocabulary& objects,
                              const Vocabulary& predicates) {
  for (const auto& r : instances) {
    nlohmann::json rec{{"video", r.video},
                       {"s_cls", objects.name(r.sub_cls)},
                       {"predicate", predicates.name(r.predicate)},
                       {"o_cls", objects.name(r.obj_cls)},
                       {"score", r.confidence},
                       {"sub_boxes", tracklet_boxes_json(r.sub)},
                       {"obj_boxes", tracklet_boxes_json(r.obj)}};
    os << rec.dump() << "\n";
  }
}

inline Tracklet tracklet_from_boxes_json(const nlohmann::json& doc,
                                         const std::string& video) {
  Tracklet t;
  t.video = video;
  t.start_frame = doc.at("start_frame").get<std::int64_t>();
  for (const auto& b : doc.at("boxes"))
    t.boxes.push_back({b.at(0).get<double>(), b.at(1).get<double>(),
                       b.at(2).get<double>(), b.at(3).get<double>()});
  return t;
}

inline std::vector<RelationInstance> read_predictions(std::istream& is,
                                                      const Vocabulary& objects,
                                                      const Vocabulary& predicates,
                                                      const std::string& origin =
                                                          "<stream>") {
  std::vector<RelationInstance> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
      RelationInstance r;
      r.video = rec.at("video").get<std::string>();
      auto s_cls = objects.index_of(rec.at("s_cls").get<std::string>());
      auto o_cls = objects.index_of(rec.at("o_cls").get<std::string>());
      auto pred = predicates.index_of(rec.at("predicate").get<std::string>());
      if (!s_cls || !o_cls || !pred)
        throw std::runtime_error("unknown category name");
      r.sub_cls = *s_cls;
      r.obj_cls = *o_cls;
      r.predicate = *pred;
      r.confidence = rec.at("score").get<double>();
      r.sub = tracklet_from_boxes_json(rec.at("sub_boxes"), r.video);
      r.obj = tracklet_from_boxes_json(rec.at("obj_boxes"), r.video);
      out.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw ParseError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace ovrd
