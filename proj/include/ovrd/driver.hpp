#pragma once

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "ovrd/checkpoint.hpp"
#include "ovrd/config.hpp"
#include "ovrd/dataset.hpp"
#include "ovrd/eval.hpp"
#include "ovrd/pipeline.hpp"
#include "ovrd/relation_classifier.hpp"
#include "ovrd/synth.hpp"
#include "ovrd/tracklet_classifier.hpp"

namespace ovrd {

/// A pipeline stage was invoked before its upstream checkpoint exists.
struct StageOrderError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class DetectMode { kSGDet, kSGCls, kPredCls };

inline DetectMode parse_detect_mode(const std::string& s) {
  if (s == "sgdet") return DetectMode::kSGDet;
  if (s == "sgcls") return DetectMode::kSGCls;
  if (s == "predcls") return DetectMode::kPredCls;
  throw std::invalid_argument("unknown detection mode: " + s +
                              " (expected sgdet|sgcls|predcls)");
}

inline const char* to_string(DetectMode m) {
  switch (m) {
    case DetectMode::kSGDet: return "sgdet";
    case DetectMode::kSGCls: return "sgcls";
    case DetectMode::kPredCls: return "predcls";
  }
  return "?";
}

inline SurrogateEncoder encoder_from_config(const Config& cfg) {
  return SurrogateEncoder::make(cfg.get_u("d_tok"), cfg.get_u("embed_dim"),
                                cfg.get_u("encoder_seed"));
}

inline std::vector<nn::Vec> base_predicate_tokens(const Vocabulary& predicates,
                                                  const Config& cfg) {
  std::vector<nn::Vec> tokens;
  for (const auto& name : predicates.base_names())
    tokens.push_back(
        class_token(name, cfg.get_u("vocab_seed"), cfg.get_u("d_tok")).vec);
  return tokens;
}

/// Worker-count cap from the OVRD_THREADS environment variable (default 1).
inline unsigned thread_budget() {
  const char* env = std::getenv("OVRD_THREADS");
  if (!env) return 1;
  long v = std::strtol(env, nullptr, 10);
  if (v < 1) return 1;
  return static_cast<unsigned>(v);
}

/// Deterministic parallel map over an index range: results land in
/// pre-allocated slots, so the outcome is independent of scheduling.
template <typename Fn>
inline void parallel_for(std::size_t n, Fn&& fn) {
  unsigned workers = std::min<std::size_t>(thread_budget(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::atomic<std::size_t> next{0};
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  for (auto& t : pool) t.join();
}

// ---------------------------------------------------------------------------
// Training-pair assembly
// ---------------------------------------------------------------------------

/// Builds segment-level pair samples with labels for relation training.
/// Motion-conditioned modes take pattern groups; ens/rand draw a seeded
/// random group per pair. Negative pairs are capped per video (kept in a
/// seeded random subset) to bound memory.
inline std::vector<PairSample> build_training_pairs(
    const std::vector<LoadedVideo>& videos, const Vocabulary& predicates,
    const Config& cfg, AblationMode mode, bool need_v) {
  const double gamma = cfg.get_f("gamma");
  const double l_seg = cfg.get_f("l_seg");
  const int stride = static_cast<int>(cfg.get_i("seg_stride"));
  const double thr = cfg.get_f("pair_iou_threshold");
  const std::size_t n_base = predicates.base_ids().size();
  const long max_neg = cfg.get_i("max_neg_pairs_per_video");
  bool random_groups =
      mode == AblationMode::kEns || mode == AblationMode::kRand;
  Rng group_rng(cfg.get_u("seed") * 0x9e3779b97f4a7c15ull + 5);

  std::vector<PairSample> out;
  for (const auto& video : videos) {
    auto gt_pairs_video = build_gt_pairs(video, predicates);
    auto segs = split_segments(video.tracklets, static_cast<int>(l_seg), stride);
    std::vector<PairSample> positives, negatives;
    for (const auto& seg : segs) {
      // Ground-truth pairs restricted to this window.
      std::map<std::int64_t, const Tracklet*> slice_by_id;
      for (const auto& s : seg.slices) slice_by_id[s.id] = &s;
      std::vector<GtPair> gt_pairs_seg;
      for (const auto& g : gt_pairs_video) {
        auto si = slice_by_id.find(g.sub->id);
        auto oi = slice_by_id.find(g.obj->id);
        if (si == slice_by_id.end() || oi == slice_by_id.end()) continue;
        GtPair sliced;
        sliced.sub = si->second;
        sliced.obj = oi->second;
        sliced.target = g.target;
        sliced.has_base = g.has_base;
        gt_pairs_seg.push_back(std::move(sliced));
      }
      for (auto [i, j] : enumerate_pairs(seg)) {
        PairSample p = make_pair_sample(seg.slices[i], seg.slices[j], mode, gamma,
                                        l_seg, need_v);
        p.video = video.id;
        p.segment = seg.index;
        if (random_groups)
          p.group = static_cast<int>(group_rng.uniform_int(kNumMotionPatterns));
        assign_pair_label(seg.slices[i], seg.slices[j], gt_pairs_seg, thr, n_base, p);
        (p.positive ? positives : negatives).push_back(std::move(p));
      }
    }
    // Seeded negative subsampling.
    if (max_neg >= 0 && negatives.size() > static_cast<std::size_t>(max_neg)) {
      for (std::size_t i = negatives.size(); i > 1; --i)
        std::swap(negatives[i - 1], negatives[group_rng.uniform_int(i)]);
      negatives.resize(max_neg);
    }
    for (auto& p : positives) out.push_back(std::move(p));
    for (auto& p : negatives) out.push_back(std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline Checkpoint cmd_train_tracklet(const std::filesystem::path& manifest_path,
                                     const Config& cfg) {
  DatasetManifest manifest = DatasetManifest::load(manifest_path);
  auto videos = load_dataset(manifest);
  SurrogateEncoder enc = encoder_from_config(cfg);
  TrackletClassifier clf =
      train_tracklet_classifier(videos, manifest.objects, enc, cfg);
  return tracklet_classifier_to_checkpoint(clf, cfg);
}

/// Stage 1 (prompt learning) or the single-stage joint variant, depending on
/// ablation_mode. The returned checkpoint carries the bank, phi_pos and the
/// frozen per-group text tables; the joint variant also carries phi_p.
inline Checkpoint cmd_train_prompt(const std::filesystem::path& manifest_path,
                                   const Config& cfg) {
  DatasetManifest manifest = DatasetManifest::load(manifest_path);
  auto videos = load_dataset(manifest);
  SurrogateEncoder enc = encoder_from_config(cfg);
  AblationMode mode = parse_ablation_mode(cfg.get_s("ablation_mode"));
  auto tokens = base_predicate_tokens(manifest.predicates, cfg);
  auto pairs = build_training_pairs(videos, manifest.predicates, cfg, mode,
                                    /*need_v=*/true);
  RelationHead head;
  head.mode = mode;
  head.predicate_names = manifest.predicates.base_names();
  std::string stage;
  PromptBank bank;
  if (mode == AblationMode::kReproDagger) {
    JointResult r = joint_train_repro_dagger(pairs, tokens, enc, cfg);
    bank = std::move(r.bank);
    head.phi_pos = std::move(r.phi_pos);
    head.phi_p = std::move(r.phi_p);
    head.has_phi_p = true;
    stage = "joint";
  } else {
    Stage1Result r = stage1_train_prompts(pairs, tokens, enc, cfg, mode);
    bank = std::move(r.bank);
    head.phi_pos = std::move(r.phi_pos);
    stage = "prompt";
  }
  head.cached_text = freeze_and_cache_text_embeddings(
      enc, bank, tokens, mode_compositional(mode));
  return relation_to_checkpoint(bank, head, cfg, stage);
}

/// Stage 2: trains phi_p against the frozen stage-1 artifacts. The bank,
/// phi_pos and cached tables are copied through from the input checkpoint
/// byte-for-byte.
inline Checkpoint cmd_train_v2l(const std::filesystem::path& manifest_path,
                                const Config& cfg, const Checkpoint& stage1) {
  RelationArtifacts art = relation_from_checkpoint(stage1);
  if (art.stage == "joint")
    throw StageOrderError(
        "train-v2l: checkpoint was trained with the joint (repro_dagger) "
        "variant; it already contains phi_p");
  if (art.stage != "prompt")
    throw StageOrderError("train-v2l: expected a train-prompt checkpoint");
  DatasetManifest manifest = DatasetManifest::load(manifest_path);
  auto videos = load_dataset(manifest);
  SurrogateEncoder enc = encoder_from_config(cfg);
  auto tokens = base_predicate_tokens(manifest.predicates, cfg);
  auto pairs = build_training_pairs(videos, manifest.predicates, cfg,
                                    art.head.mode, /*need_v=*/false);
  nn::MlpParams phi_p =
      stage2_train_v2l(pairs, art.head.cached_text, art.head.phi_pos, enc,
                       tokens, cfg, art.head.mode);
  // Rebuild the output from the input checkpoint so the frozen tensors stay
  // byte-identical; only phi_p.* is new.
  Checkpoint out = stage1;
  out.meta["stage"] = "v2l";
  out.put_mlp("phi_p", phi_p);
  return out;
}

// ---------------------------------------------------------------------------
// Detection
// ---------------------------------------------------------------------------

struct DetectModels {
  TrackletClassifier clf;
  PromptBank bank;
  RelationHead head;
  SurrogateEncoder enc;
  std::vector<nn::Vec> object_table;  // base + novel, vocab order
};

inline DetectModels load_detect_models(const Checkpoint& tracklet_ckpt,
                                       const Checkpoint& relation_ckpt,
                                       const DatasetManifest& manifest,
                                       const Config& cfg) {
  DetectModels m;
  m.clf = tracklet_classifier_from_checkpoint(tracklet_ckpt);
  RelationArtifacts art = relation_from_checkpoint(relation_ckpt);
  if (!art.head.has_phi_p)
    throw StageOrderError(
        "detect: relation checkpoint has no phi_p tensors; run train-v2l "
        "after train-prompt (or train with ablation_mode=repro_dagger)");
  m.bank = std::move(art.bank);
  m.head = std::move(art.head);
  m.enc = encoder_from_config(cfg);
  auto template_ctx = fixed_template_context(cfg.get_u("prompt_len"),
                                             cfg.get_u("d_tok"),
                                             cfg.get_u("template_seed"));
  m.object_table = build_object_table(m.enc, template_ctx,
                                      manifest.objects.all_names(),
                                      cfg.get_u("vocab_seed"));
  return m;
}

/// Runs segment detection plus greedy association for one video under the
/// given evaluation regime: SGDet works on all tracklets with predicted
/// classes, SGCls swaps in the ground-truth tracklets but predicts classes,
/// PredCls additionally fixes the object labels.
inline std::vector<RelationInstance> detect_video(const LoadedVideo& video,
                                                  const DetectModels& m,
                                                  const DatasetManifest& manifest,
                                                  const Config& cfg,
                                                  DetectMode mode) {
  std::vector<Tracklet> tracklets;
  if (mode == DetectMode::kSGDet) {
    tracklets = video.tracklets;
  } else {
    if (video.gt.tracklet_cls.empty() && !video.gt.relations.empty())
      throw std::runtime_error("detect: missing ground truth for " + video.id);
    for (const auto& [id, cls] : video.gt.tracklet_cls) {
      const Tracklet* t = video.tracklet_by_id(id);
      if (!t) throw std::logic_error("detect: dangling ground-truth tracklet");
      tracklets.push_back(*t);
    }
  }
  const double gamma = cfg.get_f("gamma");
  const double l_seg = cfg.get_f("l_seg");
  const int stride = static_cast<int>(cfg.get_i("seg_stride"));
  const int top_k = static_cast<int>(cfg.get_i("top_k"));

  // Per-tracklet class decisions.
  std::vector<TrackletDecision> decisions(tracklets.size());
  for (std::size_t i = 0; i < tracklets.size(); ++i) {
    if (mode == DetectMode::kPredCls) {
      decisions[i].cls = video.gt.tracklet_cls.at(tracklets[i].id);
      decisions[i].score = 1.0;
    } else {
      nn::Vec probs = open_vocab_probs(m.clf, tracklets[i].roi_feature,
                                       m.object_table);
      std::size_t best = 0;
      for (std::size_t c = 1; c < probs.size(); ++c)
        if (probs[c] > probs[best]) best = c;
      decisions[i].cls = static_cast<int>(best);
      decisions[i].score = probs[best];
    }
  }

  // Random-group draws are seeded per video so results do not depend on
  // scheduling.
  Rng rand_group(cfg.get_u("seed") ^ fnv1a64(video.id));
  Rng* rand_ptr = m.head.mode == AblationMode::kRand ? &rand_group : nullptr;

  std::vector<SegmentRelation> relations;
  for (const auto& seg : split_segments(tracklets, static_cast<int>(l_seg), stride)) {
    std::vector<TrackletDecision> seg_decisions;
    for (std::size_t s : seg.source_index) seg_decisions.push_back(decisions[s]);
    auto rels = detect_segment_relations(seg, seg_decisions, m.enc, m.head, m.bank,
                                         manifest.predicates,
                                         cfg.get_u("vocab_seed"), gamma, l_seg,
                                         top_k, rand_ptr);
    relations.insert(relations.end(), rels.begin(), rels.end());
  }
  return greedy_associate(std::move(relations), video.id, cfg.get_f("merge_viou"));
}

inline std::vector<RelationInstance> cmd_detect(
    const std::filesystem::path& manifest_path, const Config& cfg,
    const Checkpoint& tracklet_ckpt, const Checkpoint& relation_ckpt,
    DetectMode mode) {
  DatasetManifest manifest = DatasetManifest::load(manifest_path);
  auto videos = load_dataset(manifest);
  DetectModels models = load_detect_models(tracklet_ckpt, relation_ckpt,
                                           manifest, cfg);
  std::vector<std::vector<RelationInstance>> per_video(videos.size());
  parallel_for(videos.size(), [&](std::size_t i) {
    per_video[i] = detect_video(videos[i], models, manifest, cfg, mode);
  });
  std::vector<RelationInstance> out;
  for (auto& v : per_video)
    for (auto& r : v) out.push_back(std::move(r));
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct SplitReports {
  MetricReport novel, all;
};

inline EvalConfig eval_config_from(const Config& cfg, EvalConfig::Split split) {
  EvalConfig e;
  e.split = split;
  e.viou_threshold = cfg.get_f("eval_viou");
  return e;
}

inline SplitReports cmd_evaluate(const std::filesystem::path& manifest_path,
                                 const Config& cfg,
                                 const std::vector<RelationInstance>& predictions) {
  DatasetManifest manifest = DatasetManifest::load(manifest_path);
  auto videos = load_dataset(manifest);
  auto gt = gt_eval_instances(videos);
  SplitReports reports;
  reports.novel = evaluate(predictions, gt, manifest.predicates,
                           eval_config_from(cfg, EvalConfig::Split::kNovel));
  reports.all = evaluate(predictions, gt, manifest.predicates,
                         eval_config_from(cfg, EvalConfig::Split::kAll));
  return reports;
}

inline nlohmann::json report_json(const MetricReport& rep) {
  nlohmann::json j;
  j["mAP"] = rep.map;
  for (const auto& [k, v] : rep.recall) j["R@" + std::to_string(k)] = v;
  for (const auto& [k, v] : rep.tag_prec) j["P@" + std::to_string(k)] = v;
  j["n_gt"] = rep.n_gt;
  j["n_predictions"] = rep.n_predictions;
  return j;
}

inline void print_report(std::ostream& os, const std::string& title,
                         const MetricReport& rep) {
  os << title << "\n";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "  %-8s %.4f\n", "mAP", rep.map);
  os << buf;
  for (const auto& [k, v] : rep.recall) {
    std::snprintf(buf, sizeof(buf), "  R@%-6d %.4f\n", k, v);
    os << buf;
  }
  for (const auto& [k, v] : rep.tag_prec) {
    std::snprintf(buf, sizeof(buf), "  P@%-6d %.4f\n", k, v);
    os << buf;
  }
  os << "  n_gt " << rep.n_gt << ", n_predictions " << rep.n_predictions << "\n";
}

}  // namespace ovrd
