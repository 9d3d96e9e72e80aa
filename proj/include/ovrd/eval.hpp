#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "ovrd/dataset.hpp"
#include "ovrd/geometry.hpp"
#include "ovrd/pipeline.hpp"

namespace ovrd {

struct EvalConfig {
  enum class Split { kNovel, kAll };
  Split split = Split::kAll;
  double viou_threshold = 0.5;
  std::vector<int> recall_ks{50, 100};
  std::vector<int> tag_ks{1, 5, 10};

  void validate() const {
    if (viou_threshold <= 0.0 || viou_threshold >= 1.0)
      throw std::invalid_argument("EvalConfig: viou_threshold must be in (0,1)");
  }
};

/// Ground truth in evaluation form: class triple plus the full tracklets.
struct GtEvalInstance {
  int sub_cls = -1, predicate = -1, obj_cls = -1;
  Tracklet sub, obj;
};

inline std::map<std::string, std::vector<GtEvalInstance>> gt_eval_instances(
    const std::vector<LoadedVideo>& videos) {
  std::map<std::string, std::vector<GtEvalInstance>> out;
  for (const auto& v : videos) {
    auto& list = out[v.id];
    for (const auto& r : v.gt.relations) {
      GtEvalInstance g;
      g.sub_cls = r.sub_cls;
      g.predicate = r.predicate;
      g.obj_cls = r.obj_cls;
      const Tracklet* sub = v.tracklet_by_id(r.sub_id);
      const Tracklet* obj = v.tracklet_by_id(r.obj_id);
      if (!sub || !obj)
        throw std::logic_error("gt_eval_instances: dangling tracklet reference");
      g.sub = *sub;
      g.obj = *obj;
      g.sub.roi_feature.clear();
      g.sub.vlm_embedding.clear();
      g.obj.roi_feature.clear();
      g.obj.vlm_embedding.clear();
      list.push_back(std::move(g));
    }
  }
  return out;
}

/// True iff the class triple matches and both tracklets reach the vIoU
/// threshold against the ground truth.
inline bool match_triplet(const RelationInstance& pred, const GtEvalInstance& gt,
                          double viou_threshold) {
  if (pred.sub_cls != gt.sub_cls || pred.predicate != gt.predicate ||
      pred.obj_cls != gt.obj_cls)
    return false;
  return viou(pred.sub, gt.sub) >= viou_threshold &&
         viou(pred.obj, gt.obj) >= viou_threshold;
}

/// Per-video greedy matching by descending prediction score. Each ground
/// truth is consumed at most once; among the unmatched candidates a
/// prediction takes the one with the largest min(sub vIoU, obj vIoU), ties
/// toward the lower ground-truth index.
struct MatchResult {
  std::vector<int> pred_match;    // per ranked prediction: gt index or -1
  std::vector<bool> gt_covered;
};

inline MatchResult match_video(const std::vector<const RelationInstance*>& ranked,
                               const std::vector<GtEvalInstance>& gts,
                               double viou_threshold) {
  MatchResult res;
  res.pred_match.assign(ranked.size(), -1);
  res.gt_covered.assign(gts.size(), false);
  for (std::size_t p = 0; p < ranked.size(); ++p) {
    double best = -1.0;
    int best_gt = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (res.gt_covered[g]) continue;
      const GtEvalInstance& gt = gts[g];
      if (ranked[p]->sub_cls != gt.sub_cls || ranked[p]->predicate != gt.predicate ||
          ranked[p]->obj_cls != gt.obj_cls)
        continue;
      double vs = viou(ranked[p]->sub, gt.sub);
      if (vs < viou_threshold) continue;
      double vo = viou(ranked[p]->obj, gt.obj);
      if (vo < viou_threshold) continue;
      double quality = std::min(vs, vo);
      if (quality > best) {
        best = quality;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0) {
      res.pred_match[p] = best_gt;
      res.gt_covered[best_gt] = true;
    }
  }
  return res;
}

struct MetricReport {
  double map = 0.0;
  std::map<int, double> recall;    // K -> R@K
  std::map<int, double> tag_prec;  // K -> P@K
  std::size_t n_gt = 0;
  std::size_t n_predictions = 0;
};

/// Evaluates predictions against ground truth. The split filter keeps
/// ground truth whose predicate is novel (novel split) or everything (all
/// splits); predictions are never pre-filtered, wrong-split predictions
/// simply cannot match. mAP averages all-point interpolated AP over the
/// relation-triplet categories present in the filtered ground truth; R@K
/// counts ground truth matched within each video's top-K predictions;
/// tagging P@K scores deduplicated class triples per video, ignoring boxes.
inline MetricReport evaluate(const std::vector<RelationInstance>& predictions,
                             const std::map<std::string, std::vector<GtEvalInstance>>& gt,
                             const Vocabulary& predicates, const EvalConfig& cfg) {
  cfg.validate();
  MetricReport report;
  report.n_predictions = predictions.size();

  // Split filter.
  std::map<std::string, std::vector<GtEvalInstance>> kept;
  for (const auto& [video, list] : gt) {
    std::vector<GtEvalInstance> keep;
    for (const auto& g : list)
      if (cfg.split == EvalConfig::Split::kAll || predicates.is_novel(g.predicate))
        keep.push_back(g);
    if (!keep.empty()) kept[video] = std::move(keep);
  }
  std::size_t total_gt = 0;
  for (const auto& [video, list] : kept) total_gt += list.size();
  report.n_gt = total_gt;

  // Rank predictions per video: stable sort by descending score keeps the
  // input order on ties.
  std::map<std::string, std::vector<std::size_t>> by_video;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    by_video[predictions[i].video].push_back(i);
  for (auto& [video, idx] : by_video)
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return predictions[a].confidence > predictions[b].confidence;
    });

  // Greedy matching per video; remember each prediction's rank and outcome.
  std::vector<int> pred_matched(predictions.size(), -1);
  std::vector<std::size_t> pred_rank(predictions.size(), 0);
  std::map<int, std::size_t> matched_within;  // K -> matched GT count
  for (int k : cfg.recall_ks) matched_within[k] = 0;
  for (const auto& [video, idx] : by_video) {
    auto it = kept.find(video);
    if (it == kept.end()) continue;
    std::vector<const RelationInstance*> ranked;
    ranked.reserve(idx.size());
    for (std::size_t i : idx) ranked.push_back(&predictions[i]);
    MatchResult res = match_video(ranked, it->second, cfg.viou_threshold);
    for (std::size_t p = 0; p < idx.size(); ++p) {
      pred_matched[idx[p]] = res.pred_match[p];
      pred_rank[idx[p]] = p;
      if (res.pred_match[p] >= 0)
        for (int k : cfg.recall_ks)
          if (p < static_cast<std::size_t>(k)) matched_within[k] += 1;
    }
  }

  for (int k : cfg.recall_ks)
    report.recall[k] = total_gt
                           ? static_cast<double>(matched_within[k]) /
                                 static_cast<double>(total_gt)
                           : 0.0;

  // mAP over relation-triplet categories present in the kept ground truth.
  using Triple = std::tuple<int, int, int>;
  std::map<Triple, std::size_t> gt_count;
  for (const auto& [video, list] : kept)
    for (const auto& g : list)
      gt_count[{g.sub_cls, g.predicate, g.obj_cls}] += 1;

  // Global prediction order (score desc, stable in input order).
  std::vector<std::size_t> global(predictions.size());
  for (std::size_t i = 0; i < global.size(); ++i) global[i] = i;
  std::stable_sort(global.begin(), global.end(), [&](std::size_t a, std::size_t b) {
    return predictions[a].confidence > predictions[b].confidence;
  });

  double ap_sum = 0.0;
  for (const auto& [triple, n_pos] : gt_count) {
    std::vector<bool> tp;
    for (std::size_t i : global) {
      const RelationInstance& p = predictions[i];
      if (Triple{p.sub_cls, p.predicate, p.obj_cls} != triple) continue;
      tp.push_back(pred_matched[i] >= 0);
    }
    // All-point interpolation: sum of (max precision at or beyond each TP).
    std::vector<double> precision(tp.size());
    std::size_t hits = 0;
    for (std::size_t k = 0; k < tp.size(); ++k) {
      hits += tp[k];
      precision[k] = static_cast<double>(hits) / static_cast<double>(k + 1);
    }
    for (std::size_t k = tp.size(); k-- > 1;)
      precision[k - 1] = std::max(precision[k - 1], precision[k]);
    double ap = 0.0;
    for (std::size_t k = 0; k < tp.size(); ++k)
      if (tp[k]) ap += precision[k];
    ap_sum += ap / static_cast<double>(n_pos);
  }
  report.map = gt_count.empty() ? 0.0 : ap_sum / static_cast<double>(gt_count.size());

  // Tagging precision: per video, deduplicated class triples ranked by
  // score; P@K = hits in the top K / K, averaged over videos with ground
  // truth.
  for (int k : cfg.tag_ks) report.tag_prec[k] = 0.0;
  std::size_t tag_videos = 0;
  for (const auto& [video, list] : kept) {
    ++tag_videos;
    std::set<Triple> gt_triples;
    for (const auto& g : list) gt_triples.insert({g.sub_cls, g.predicate, g.obj_cls});
    std::vector<Triple> ranked_triples;
    std::set<Triple> seen;
    auto it = by_video.find(video);
    if (it != by_video.end())
      for (std::size_t i : it->second) {
        Triple t{predictions[i].sub_cls, predictions[i].predicate,
                 predictions[i].obj_cls};
        if (seen.insert(t).second) ranked_triples.push_back(t);
      }
    for (int k : cfg.tag_ks) {
      std::size_t hits = 0;
      for (std::size_t r = 0; r < ranked_triples.size() && r < static_cast<std::size_t>(k); ++r)
        hits += gt_triples.count(ranked_triples[r]);
      report.tag_prec[k] += static_cast<double>(hits) / static_cast<double>(k);
    }
  }
  if (tag_videos)
    for (int k : cfg.tag_ks) report.tag_prec[k] /= static_cast<double>(tag_videos);
  return report;
}

}  // namespace ovrd
