#pragma once

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "ovrd/config.hpp"
#include "ovrd/dataset.hpp"
#include "ovrd/motion.hpp"
#include "ovrd/pipeline.hpp"
#include "ovrd/text_encoder.hpp"
#include "ovrd/tracklet_classifier.hpp"

namespace ovrd {

/// Everything the generator derives from the config before emitting videos.
struct SynthPlan {
  Vocabulary objects;
  Vocabulary predicates;
  std::vector<int> pattern_of;        // per predicate: scripted motion pattern
  std::vector<int> sub_cls_of;        // per predicate: scripted subject class
  std::vector<int> obj_cls_of;        // per predicate: scripted object class
  std::vector<nn::Vec> roi_protos;    // per object class, 2048-d
  std::vector<nn::Vec> vlm_protos;    // per object class, d-dim
  int n_train = 0, n_test = 0;
};

struct SynthOutput {
  std::filesystem::path train_manifest;
  std::filesystem::path test_manifest;
};

namespace detail {

inline std::string zero_pad(int v, int width) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%0*d", width, v);
  return buf;
}

/// Horizontal offset of two side-by-side squares of side `a` realizing the
/// requested GIoU (overlapping for g >= 0, separated below).
inline double offset_for_giou(double g, double side) {
  return side * (1.0 - g) / (1.0 + g);
}

/// Start/end GIoU ranges per motion pattern, with clearance around the
/// gamma = -0.3 default so per-frame jitter cannot flip a sign.
inline std::pair<double, double> sample_giou_pair(int pattern, Rng& rng) {
  switch (pattern) {
    case 0: {  // near, near, closing
      double gs = rng.uniform(-0.12, 0.12);
      return {gs, gs + rng.uniform(0.2, 0.4)};
    }
    case 1: {  // near, near, receding
      double gs = rng.uniform(0.15, 0.45);
      return {gs, gs - rng.uniform(0.2, std::min(0.35, gs + 0.15))};
    }
    case 2: {  // far, far, closing
      double gs = rng.uniform(-0.75, -0.58);
      return {gs, gs + rng.uniform(0.08, -0.45 - gs)};
    }
    case 3: {  // far, far, receding
      double gs = rng.uniform(-0.55, -0.45);
      return {gs, gs - rng.uniform(0.1, 0.3)};
    }
    case 4:  // far then near
      return {rng.uniform(-0.75, -0.45), rng.uniform(-0.1, 0.35)};
    case 5:  // near then far
      return {rng.uniform(-0.1, 0.35), rng.uniform(-0.75, -0.45)};
    default:
      throw std::logic_error("sample_giou_pair: bad pattern");
  }
}

}  // namespace detail

/// Searches salted names until the class token correlates with the partner
/// base predicate's token; this is what makes novel predicates reachable
/// from trained prompt geometry at desk scale.
inline std::string correlated_novel_name(int index, const nn::Vec& partner_token,
                                         std::uint64_t vocab_seed,
                                         std::size_t d_tok, double min_corr) {
  std::string best_name;
  double best = -2.0;
  for (std::uint64_t salt = 0; salt < 300000; ++salt) {
    std::string name = "nov" + detail::zero_pad(index, 2) + "_s" + std::to_string(salt);
    double c = nn::cosine(class_token(name, vocab_seed, d_tok).vec, partner_token);
    if (c >= min_corr) return name;
    if (c > best) {
      best = c;
      best_name = name;
    }
  }
  return best_name;
}

inline SynthPlan build_synth_plan(const Config& cfg) {
  SynthPlan plan;
  int n_base_obj = static_cast<int>(cfg.get_i("synth_base_objects"));
  int n_novel_obj = static_cast<int>(cfg.get_i("synth_novel_objects"));
  int n_base_pred = static_cast<int>(cfg.get_i("synth_base_predicates"));
  int n_novel_pred = static_cast<int>(cfg.get_i("synth_novel_predicates"));
  if (n_base_obj < 2 || n_base_pred < 1)
    throw std::invalid_argument("gen_synth: need >= 2 base objects and >= 1 base predicate");
  for (int i = 0; i < n_base_obj; ++i)
    plan.objects.items.push_back({"obj_" + detail::zero_pad(i, 2), false});
  for (int i = 0; i < n_novel_obj; ++i)
    plan.objects.items.push_back({"nobj_" + detail::zero_pad(i, 2), true});

  std::size_t d_tok = cfg.get_u("d_tok");
  std::uint64_t vocab_seed = cfg.get_u("vocab_seed");
  for (int k = 0; k < n_base_pred; ++k)
    plan.predicates.items.push_back({"pred_" + detail::zero_pad(k, 2), false});
  for (int j = 0; j < n_novel_pred; ++j) {
    int partner = j % n_base_pred;
    nn::Vec partner_token =
        class_token(plan.predicates.items[partner].name, vocab_seed, d_tok).vec;
    plan.predicates.items.push_back(
        {correlated_novel_name(j, partner_token, vocab_seed, d_tok,
                               cfg.get_f("synth_token_corr")),
         true});
  }

  // Motion script and class pools. Base predicate k gets pattern k mod 6;
  // a novel predicate inherits its partner's pattern and classes, so its
  // instances look like the partner's except for the class token.
  for (int k = 0; k < n_base_pred; ++k) {
    plan.pattern_of.push_back(k % kNumMotionPatterns);
    int sub = k % n_base_obj;
    int obj = (k + 1 + k / n_base_obj) % n_base_obj;
    if (obj == sub) obj = (obj + 1) % n_base_obj;
    plan.sub_cls_of.push_back(sub);
    plan.obj_cls_of.push_back(obj);
  }
  for (int j = 0; j < n_novel_pred; ++j) {
    int partner = j % n_base_pred;
    plan.pattern_of.push_back(plan.pattern_of[partner]);
    plan.sub_cls_of.push_back(plan.sub_cls_of[partner]);
    plan.obj_cls_of.push_back(plan.obj_cls_of[partner]);
  }

  int n_videos = static_cast<int>(cfg.get_i("synth_videos"));
  plan.n_test = std::max(1, static_cast<int>(n_videos * cfg.get_f("synth_test_fraction")));
  plan.n_train = n_videos - plan.n_test;
  if (plan.n_train < 1) throw std::invalid_argument("gen_synth: too few videos");
  return plan;
}

/// Generates the dataset on disk: per video a tracklet file, its RoI feature
/// tensor, a VLM embedding tensor, and an annotation file; plus train/test
/// manifests. Visual features are class prototypes plus Gaussian noise; VLM
/// embeddings are the encoded class tokens plus noise; box sequences realize
/// each predicate's scripted motion pattern within every detection window
/// (verified with motion_pattern before writing, with retries).
inline SynthOutput gen_synth(const Config& cfg, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  SynthPlan plan = build_synth_plan(cfg);
  Rng rng(cfg.get_u("seed") * 0x9e3779b97f4a7c15ull + 17);

  const int frames = static_cast<int>(cfg.get_i("synth_frames"));
  const int l_seg = static_cast<int>(cfg.get_i("l_seg"));
  const int stride = static_cast<int>(cfg.get_i("seg_stride"));
  const double gamma = cfg.get_f("gamma");
  const double sigma_f = cfg.get_f("synth_sigma_feat");
  const double sigma_e = cfg.get_f("synth_sigma_embed");
  const double multi_label = cfg.get_f("synth_multi_label_prob");
  const int n_rel = static_cast<int>(cfg.get_i("synth_relations_per_video"));
  const int n_dis = static_cast<int>(cfg.get_i("synth_distractors_per_video"));
  const int n_base_pred = static_cast<int>(plan.predicates.base_ids().size());
  const int n_novel_pred = static_cast<int>(plan.predicates.size()) - n_base_pred;
  const int n_base_obj = static_cast<int>(plan.objects.base_ids().size());
  const int n_novel_obj = static_cast<int>(plan.objects.size()) - n_base_obj;

  // Prototypes.
  SurrogateEncoder enc = SurrogateEncoder::make(cfg.get_u("d_tok"),
                                                cfg.get_u("embed_dim"),
                                                cfg.get_u("encoder_seed"));
  auto template_ctx = fixed_template_context(cfg.get_u("prompt_len"),
                                             cfg.get_u("d_tok"),
                                             cfg.get_u("template_seed"));
  plan.vlm_protos = build_object_table(enc, template_ctx, plan.objects.all_names(),
                                       cfg.get_u("vocab_seed"));
  for (std::size_t c = 0; c < plan.objects.size(); ++c) {
    nn::Vec p(kRoiFeatureDim);
    for (auto& x : p) x = rng.gaussian();
    double n = nn::norm(p);
    for (auto& x : p) x /= n;
    plan.roi_protos.push_back(std::move(p));
  }

  fs::create_directories(out_dir / "videos");
  std::vector<VideoEntry> train_entries, test_entries;

  const double side = 40.0;
  for (int v = 0; v < plan.n_train + plan.n_test; ++v) {
    bool is_test = v >= plan.n_train;
    std::string vid = "v" + detail::zero_pad(v, 4);
    fs::path vdir = out_dir / "videos" / vid;
    fs::create_directories(vdir);

    std::vector<Tracklet> tracklets;
    std::vector<GtRelation> annotations;
    auto add_tracklet = [&](int cls, std::vector<BBox> boxes, std::int64_t start) {
      Tracklet t;
      t.id = static_cast<std::int64_t>(tracklets.size());
      t.video = vid;
      t.start_frame = start;
      t.boxes = std::move(boxes);
      t.roi_feature = plan.roi_protos[cls];
      for (auto& x : t.roi_feature) x += sigma_f * rng.gaussian();
      t.vlm_embedding = plan.vlm_protos[cls];
      for (auto& x : t.vlm_embedding) x += sigma_e * rng.gaussian();
      tracklets.push_back(std::move(t));
      return tracklets.back().id;
    };

    for (int r = 0; r < n_rel; ++r) {
      int predicate;
      if (is_test && r == 0 && n_novel_pred > 0)
        predicate = n_base_pred + static_cast<int>(rng.uniform_int(n_novel_pred));
      else
        predicate = static_cast<int>(rng.uniform_int(n_base_pred));
      int pattern = plan.pattern_of[predicate];
      int sub_cls = plan.sub_cls_of[predicate];
      int obj_cls = plan.obj_cls_of[predicate];
      // Test-only: sometimes swap a base relation participant to a novel
      // object class (novel objects never take part in training relations).
      if (is_test && r > 0 && n_novel_obj > 0 && rng.uniform() < 0.3) {
        int novel_obj = n_base_obj + static_cast<int>(rng.uniform_int(n_novel_obj));
        if (rng.uniform() < 0.5)
          sub_cls = novel_obj;
        else
          obj_cls = novel_obj;
      }

      double ax = 140.0 + 280.0 * (r % 3) + rng.uniform(-25.0, 25.0);
      double ay = 140.0 + 280.0 * ((r / 3) % 3) + rng.uniform(-25.0, 25.0);

      // The subject sweeps from the start offset to the end offset within
      // every stride block, so each full detection window measures the
      // scripted pattern.
      int sub_start = static_cast<int>(rng.uniform_int(2));
      int obj_start = static_cast<int>(rng.uniform_int(2));
      int end_trim = static_cast<int>(rng.uniform_int(3));
      bool ok = false;
      for (int attempt = 0; attempt < 30 && !ok; ++attempt) {
        auto [gs, ge] = detail::sample_giou_pair(pattern, rng);
        double o_start = detail::offset_for_giou(gs, side);
        double o_end = detail::offset_for_giou(ge, side);
        std::vector<BBox> sub_boxes, obj_boxes;
        for (int t = sub_start; t < frames - end_trim; ++t) {
          double phase = static_cast<double>(t % stride) /
                         static_cast<double>(stride - 1);
          double x = ax + o_start + (o_end - o_start) * phase + rng.uniform(-0.4, 0.4);
          double y = ay + rng.uniform(-0.4, 0.4);
          sub_boxes.push_back({x, y, x + side, y + side});
        }
        for (int t = obj_start; t < frames - end_trim; ++t) {
          double x = ax + rng.uniform(-0.4, 0.4);
          double y = ay + rng.uniform(-0.4, 0.4);
          obj_boxes.push_back({x, y, x + side, y + side});
        }
        Tracklet sub_t, obj_t;
        sub_t.video = obj_t.video = vid;
        sub_t.start_frame = sub_start;
        sub_t.boxes = sub_boxes;
        obj_t.start_frame = obj_start;
        obj_t.boxes = obj_boxes;
        // Verify the scripted pattern in every full window.
        ok = true;
        auto segs = split_segments({sub_t, obj_t}, l_seg, stride);
        for (const auto& seg : segs) {
          if (seg.slices.size() != 2) {
            ok = false;
            break;
          }
          auto span = temporal_intersection(seg.slices[0], seg.slices[1]);
          if (!span || span->length() < 2 ||
              pattern_index(motion_pattern(seg.slices[0], seg.slices[1], gamma)) !=
                  pattern) {
            ok = false;
            break;
          }
        }
        if (!ok) continue;
        std::int64_t sub_id = add_tracklet(sub_cls, std::move(sub_boxes), sub_start);
        std::int64_t obj_id = add_tracklet(obj_cls, std::move(obj_boxes), obj_start);
        annotations.push_back({sub_id, obj_id, predicate, sub_cls, obj_cls});
        // Multi-label: a second base predicate with the same motion pattern
        // on the same pair, when one exists.
        if (predicate < n_base_pred && rng.uniform() < multi_label) {
          for (int k = 0; k < n_base_pred; ++k)
            if (k != predicate && plan.pattern_of[k] == pattern) {
              annotations.push_back({sub_id, obj_id, k, sub_cls, obj_cls});
              break;
            }
        }
      }
      if (!ok)
        throw std::runtime_error("gen_synth: could not realize motion pattern " +
                                 std::to_string(pattern) + " for predicate " +
                                 plan.predicates.name(predicate));
    }

    // Distractors: unlabeled static tracklets far from the relation zones.
    // In the training split some carry novel-object content, which is
    // exactly the unlabeled-novel negative case.
    for (int dIdx = 0; dIdx < n_dis; ++dIdx) {
      int cls;
      if (n_novel_obj > 0 && rng.uniform() < 0.4)
        cls = n_base_obj + static_cast<int>(rng.uniform_int(n_novel_obj));
      else
        cls = static_cast<int>(rng.uniform_int(n_base_obj));
      double ax = 1100.0 + 160.0 * dIdx + rng.uniform(-30.0, 30.0);
      double ay = 1100.0 + rng.uniform(-200.0, 200.0);
      int start = static_cast<int>(rng.uniform_int(std::max(1, frames / 3)));
      int len = frames / 2 + static_cast<int>(rng.uniform_int(frames / 3));
      len = std::min(len, frames - start);
      std::vector<BBox> boxes;
      for (int t = 0; t < len; ++t) {
        double x = ax + rng.uniform(-0.4, 0.4);
        double y = ay + rng.uniform(-0.4, 0.4);
        boxes.push_back({x, y, x + side, y + side});
      }
      (void)add_tracklet(cls, std::move(boxes), start);
    }

    write_tracklets(vdir / "tracklets.jsonl", tracklets, "roi.ovt");
    write_vlm_embeddings(vdir / "vlm.ovt", tracklets);
    write_annotations(vdir / "annotations.jsonl", vid, annotations, plan.objects,
                      plan.predicates);
    VideoEntry entry{vid, vdir / "tracklets.jsonl", vdir / "annotations.jsonl",
                     vdir / "vlm.ovt"};
    (is_test ? test_entries : train_entries).push_back(std::move(entry));
  }

  SynthOutput out;
  out.train_manifest = out_dir / "manifest_train.json";
  out.test_manifest = out_dir / "manifest_test.json";
  write_manifest(out.train_manifest, plan.objects, plan.predicates, train_entries);
  write_manifest(out.test_manifest, plan.objects, plan.predicates, test_entries);
  return out;
}

}  // namespace ovrd
