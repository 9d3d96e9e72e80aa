#pragma once

#include <array>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ovrd/checkpoint.hpp"
#include "ovrd/config.hpp"
#include "ovrd/dataset.hpp"
#include "ovrd/motion.hpp"
#include "ovrd/nnkit.hpp"
#include "ovrd/text_encoder.hpp"

namespace ovrd {

/// Prompt-design variants:
///   single - one non-compositional prompt, pair embeddings by subtraction
///   comp   - compositional subject/object prompts, no motion groups
///   ens    - 6 groups trained on random assignment, tables averaged at test
///   rand   - 6 groups trained on random assignment, random group at test
///   repro  - compositional prompts selected by motion pattern
///   repro_dagger - single-stage joint training with l1 alignment
enum class AblationMode { kSingle, kComp, kEns, kRand, kRepro, kReproDagger };

inline AblationMode parse_ablation_mode(const std::string& s) {
  if (s == "single") return AblationMode::kSingle;
  if (s == "comp") return AblationMode::kComp;
  if (s == "ens") return AblationMode::kEns;
  if (s == "rand") return AblationMode::kRand;
  if (s == "repro") return AblationMode::kRepro;
  if (s == "repro_dagger") return AblationMode::kReproDagger;
  throw std::invalid_argument("unknown ablation mode: " + s);
}

inline const char* to_string(AblationMode m) {
  switch (m) {
    case AblationMode::kSingle: return "single";
    case AblationMode::kComp: return "comp";
    case AblationMode::kEns: return "ens";
    case AblationMode::kRand: return "rand";
    case AblationMode::kRepro: return "repro";
    case AblationMode::kReproDagger: return "repro_dagger";
  }
  return "?";
}

inline bool mode_compositional(AblationMode m) { return m != AblationMode::kSingle; }
inline bool mode_uses_motion(AblationMode m) {
  return m == AblationMode::kRepro || m == AblationMode::kReproDagger;
}
inline int mode_groups(AblationMode m) {
  return (m == AblationMode::kSingle || m == AblationMode::kComp)
             ? 1
             : kNumMotionPatterns;
}

/// One subject-object tracklet pair, reduced to the features the relation
/// models consume. `v` is the pair visual embedding (training only), `f` the
/// pair RoI feature, `fpos` the 12-d relative position feature.
struct PairSample {
  std::string video;
  std::int64_t sub_id = 0, obj_id = 0;
  int segment = 0;
  nn::Vec v;
  nn::Vec f;
  std::array<double, 12> fpos{};
  int group = 0;
  bool positive = false;
  nn::Vec target;  // multi-hot over base predicates (training)
};

namespace detail {

inline nn::Vec combine(const nn::Vec& a, const nn::Vec& b, bool compositional) {
  if (a.size() != b.size())
    throw std::invalid_argument("pair feature dimensions differ");
  nn::Vec out;
  if (compositional) {
    out = a;
    out.insert(out.end(), b.begin(), b.end());
  } else {
    out.resize(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  }
  return out;
}

}  // namespace detail

/// Builds the pair sample for an ordered tracklet pair. Motion-conditioned
/// modes derive the group from the motion pattern; for ens/rand the caller
/// overwrites `group` with a seeded draw afterwards.
inline PairSample make_pair_sample(const Tracklet& sub, const Tracklet& obj,
                                   AblationMode mode, double gamma, double l_seg,
                                   bool need_v) {
  PairSample p;
  p.video = sub.video;
  p.sub_id = sub.id;
  p.obj_id = obj.id;
  p.fpos = relative_position_feature(sub, obj, l_seg);
  p.group = mode_uses_motion(mode)
                ? pattern_index(motion_pattern(sub, obj, gamma))
                : 0;
  bool comp = mode_compositional(mode);
  p.f = detail::combine(sub.roi_feature, obj.roi_feature, comp);
  if (need_v) {
    if (!sub.has_vlm_embedding() || !obj.has_vlm_embedding())
      throw std::runtime_error("make_pair_sample: missing VLM embedding on "
                               "tracklet " + std::to_string(sub.id) + " or " +
                               std::to_string(obj.id));
    p.v = detail::combine(sub.vlm_embedding, obj.vlm_embedding, comp);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Label assignment
// ---------------------------------------------------------------------------

/// A ground-truth tracklet pair with its multi-hot base-predicate target.
struct GtPair {
  const Tracklet* sub = nullptr;
  const Tracklet* obj = nullptr;
  nn::Vec target;  // over base predicates
  bool has_base = false;
};

/// Groups a video's ground-truth relations into pairs and multi-hot targets
/// over the base predicates (novel predicates do not enter targets).
inline std::vector<GtPair> build_gt_pairs(const LoadedVideo& video,
                                          const Vocabulary& predicates) {
  std::map<int, int> base_row;  // vocab id -> base row
  {
    int row = 0;
    for (int id : predicates.base_ids()) base_row[id] = row++;
  }
  std::size_t n_base = base_row.size();
  std::map<std::pair<std::int64_t, std::int64_t>, std::size_t> index;
  std::vector<GtPair> pairs;
  for (const auto& r : video.gt.relations) {
    auto key = std::make_pair(r.sub_id, r.obj_id);
    auto it = index.find(key);
    if (it == index.end()) {
      GtPair p;
      p.sub = video.tracklet_by_id(r.sub_id);
      p.obj = video.tracklet_by_id(r.obj_id);
      if (!p.sub || !p.obj)
        throw std::logic_error("build_gt_pairs: dangling tracklet reference");
      p.target.assign(n_base, 0.0);
      it = index.emplace(key, pairs.size()).first;
      pairs.push_back(std::move(p));
    }
    GtPair& p = pairs[it->second];
    auto row = base_row.find(r.predicate);
    if (row != base_row.end()) {
      p.target[row->second] = 1.0;
      p.has_base = true;
    }
  }
  return pairs;
}

/// Positive iff both tracklets reach vIoU >= threshold against some ground
/// truth pair that carries at least one base predicate; the target is that
/// pair's multi-hot vector (best match by the smaller of the two vIoUs).
/// Everything else is negative with an all-zero target.
inline void assign_pair_label(const Tracklet& sub, const Tracklet& obj,
                              const std::vector<GtPair>& gt_pairs,
                              double iou_threshold, std::size_t n_base,
                              PairSample& out) {
  if (iou_threshold <= 0.0 || iou_threshold >= 1.0)
    throw std::invalid_argument("assign_pair_label: threshold must be in (0,1)");
  double best = -1.0;
  const GtPair* best_pair = nullptr;
  for (const auto& g : gt_pairs) {
    if (!g.has_base) continue;
    double vs = viou(sub, *g.sub);
    if (vs < iou_threshold) continue;
    double vo = viou(obj, *g.obj);
    if (vo < iou_threshold) continue;
    double score = std::min(vs, vo);
    if (score > best) {
      best = score;
      best_pair = &g;
    }
  }
  if (best_pair) {
    out.positive = true;
    out.target = best_pair->target;
  } else {
    out.positive = false;
    out.target.assign(n_base, 0.0);
  }
}

// ---------------------------------------------------------------------------
// Relation head and probability paths
// ---------------------------------------------------------------------------

/// Text embedding of one predicate class for one group under the given
/// prompt design (concatenated subject/object encodings, or a single
/// encoding for the non-compositional mode).
inline nn::Vec prompt_embedding(const SurrogateEncoder& enc, const PromptBank& bank,
                                int group, const nn::Vec& token, bool compositional) {
  if (group < 0 || static_cast<std::size_t>(group) >= bank.n_groups())
    throw std::invalid_argument("prompt_embedding: bad group id");
  if (!compositional) return enc.encode(bank.groups[group].subj, token);
  return predicate_text_embedding(enc, bank, group, token);
}

/// Pre-extracts the per-group predicate text-embedding tables and fixes
/// them. Pure function of (encoder, bank, tokens): repeated calls are
/// bit-identical.
inline std::vector<std::vector<nn::Vec>> freeze_and_cache_text_embeddings(
    const SurrogateEncoder& enc, const PromptBank& bank,
    const std::vector<nn::Vec>& tokens, bool compositional) {
  std::vector<std::vector<nn::Vec>> tables(bank.n_groups());
  for (std::size_t g = 0; g < bank.n_groups(); ++g) {
    tables[g].reserve(tokens.size());
    for (const auto& tok : tokens)
      tables[g].push_back(prompt_embedding(enc, bank, static_cast<int>(g), tok,
                                           compositional));
  }
  return tables;
}

/// Sigmoid-of-cosine probabilities of every class in `table` for the pair,
/// with the position feature added to the pair representation. Shared by the
/// stage-1 and stage-2 paths, which differ only in where `base_vec` and the
/// table come from.
inline nn::Vec predicate_probs_from(const std::vector<nn::Vec>& table,
                                    const nn::MlpParams& phi_pos,
                                    const nn::Vec& base_vec,
                                    const PairSample& pair) {
  nn::Vec fpos(pair.fpos.begin(), pair.fpos.end());
  nn::Vec z = nn::mlp_forward(phi_pos, fpos);
  if (z.size() != base_vec.size())
    throw std::invalid_argument("predicate_probs: phi_pos output dim mismatch");
  for (std::size_t i = 0; i < z.size(); ++i) z[i] += base_vec[i];
  nn::Vec p(table.size());
  for (std::size_t c = 0; c < table.size(); ++c)
    p[c] = nn::sigmoid(nn::cosine(z, table[c]));
  return p;
}

/// Stage-1 path: the pair's VLM embedding against live prompt encodings of
/// the pair's own group.
inline nn::Vec predicate_probs_stage1(const SurrogateEncoder& enc,
                                      const PromptBank& bank,
                                      const nn::MlpParams& phi_pos,
                                      const PairSample& pair,
                                      const std::vector<nn::Vec>& tokens,
                                      bool compositional) {
  if (pair.v.empty())
    throw std::runtime_error("predicate_probs_stage1: pair has no VLM embedding");
  std::vector<nn::Vec> table;
  table.reserve(tokens.size());
  for (const auto& tok : tokens)
    table.push_back(prompt_embedding(enc, bank, pair.group, tok, compositional));
  return predicate_probs_from(table, phi_pos, pair.v, pair);
}

struct RelationHead {
  AblationMode mode = AblationMode::kRepro;
  nn::MlpParams phi_pos;
  nn::MlpParams phi_p;
  bool has_phi_p = false;
  std::vector<std::string> predicate_names;       // base, table row order
  std::vector<std::vector<nn::Vec>> cached_text;  // [group][class]
  std::vector<nn::Vec> ens_table;                 // mean over groups (ens mode)

  const std::vector<nn::Vec>& table_for(int group) const {
    if (mode == AblationMode::kEns) return ens_table;
    return cached_text.at(group);
  }

  void finalize_ens_table() {
    if (mode != AblationMode::kEns || cached_text.empty()) return;
    ens_table.assign(cached_text[0].size(), {});
    for (std::size_t c = 0; c < cached_text[0].size(); ++c) {
      nn::Vec acc(cached_text[0][c].size(), 0.0);
      for (const auto& table : cached_text)
        for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += table[c][k];
      for (auto& v : acc) v /= static_cast<double>(cached_text.size());
      ens_table[c] = std::move(acc);
    }
  }
};

/// Stage-2 path: projected RoI features against the frozen cached tables.
/// No VLM embedding is needed.
inline nn::Vec predicate_probs_stage2(const RelationHead& head,
                                      const PairSample& pair) {
  if (!head.has_phi_p)
    throw std::runtime_error("predicate_probs_stage2: phi_p has not been "
                             "trained (run the v2l stage first)");
  nn::Vec base = nn::mlp_forward(head.phi_p, pair.f);
  return predicate_probs_from(head.table_for(pair.group), head.phi_pos, base, pair);
}

/// Eq-11 scores over an arbitrary predicate set: base predicates use the
/// frozen cached tables; novel predicates are encoded on demand from the
/// frozen contexts and their class tokens. Returns (vocab id, score) sorted
/// by descending score, ties toward the lower id.
inline std::vector<std::pair<int, double>> score_pair_open_vocab(
    const SurrogateEncoder& enc, const RelationHead& head, const PromptBank& bank,
    const PairSample& pair, const Vocabulary& predicates,
    std::uint64_t vocab_seed) {
  if (!head.has_phi_p)
    throw std::runtime_error("score_pair_open_vocab: phi_p has not been trained");
  std::map<std::string, std::size_t> base_row;
  for (std::size_t r = 0; r < head.predicate_names.size(); ++r)
    base_row[head.predicate_names[r]] = r;
  bool comp = mode_compositional(head.mode);
  nn::Vec base_vec = nn::mlp_forward(head.phi_p, pair.f);
  nn::Vec fpos(pair.fpos.begin(), pair.fpos.end());
  nn::Vec z = nn::mlp_forward(head.phi_pos, fpos);
  for (std::size_t i = 0; i < z.size(); ++i) z[i] += base_vec[i];

  std::vector<std::pair<int, double>> scored;
  scored.reserve(predicates.size());
  for (std::size_t id = 0; id < predicates.size(); ++id) {
    const std::string& name = predicates.name(static_cast<int>(id));
    nn::Vec embedding;
    if (!predicates.is_novel(static_cast<int>(id))) {
      auto it = base_row.find(name);
      if (it == base_row.end())
        throw std::runtime_error("score_pair_open_vocab: base predicate '" +
                                 name + "' unknown to the trained head");
      embedding = head.table_for(pair.group)[it->second];
    } else {
      nn::Vec tok = class_token(name, vocab_seed, enc.tok_dim()).vec;
      if (head.mode == AblationMode::kEns) {
        nn::Vec acc;
        for (std::size_t g = 0; g < bank.n_groups(); ++g) {
          nn::Vec e = prompt_embedding(enc, bank, static_cast<int>(g), tok, comp);
          if (acc.empty()) acc.assign(e.size(), 0.0);
          for (std::size_t k = 0; k < e.size(); ++k) acc[k] += e[k];
        }
        for (auto& v : acc) v /= static_cast<double>(bank.n_groups());
        embedding = std::move(acc);
      } else {
        embedding = prompt_embedding(enc, bank, pair.group, tok, comp);
      }
    }
    scored.emplace_back(static_cast<int>(id),
                        nn::sigmoid(nn::cosine(z, embedding)));
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  return scored;
}

// ---------------------------------------------------------------------------
// Training core
// ---------------------------------------------------------------------------

struct RelGrads {
  std::vector<nn::Mat> subj_ctx, obj_ctx;  // per group
  nn::MlpParams phi_pos;
  nn::MlpParams phi_p;

  static RelGrads zeros_like(const PromptBank& bank, const nn::MlpParams& phi_pos,
                             const nn::MlpParams* phi_p) {
    RelGrads g;
    for (const auto& grp : bank.groups) {
      g.subj_ctx.emplace_back(grp.subj.tokens.rows, grp.subj.tokens.cols);
      g.obj_ctx.emplace_back(grp.obj.tokens.rows, grp.obj.tokens.cols);
    }
    g.phi_pos = nn::MlpParams::zeros(phi_pos.in_dim(), phi_pos.hidden_dim(),
                                     phi_pos.out_dim());
    if (phi_p)
      g.phi_p = nn::MlpParams::zeros(phi_p->in_dim(), phi_p->hidden_dim(),
                                     phi_p->out_dim());
    return g;
  }

  void zero() {
    for (auto& m : subj_ctx) m.zero();
    for (auto& m : obj_ctx) m.zero();
    phi_pos.zero();
    phi_p.zero();
  }
};

struct RelLossOptions {
  bool compositional = true;
  bool use_phi_p_path = false;  // z uses phi_p(f) instead of v
  bool live_text = true;        // encode prompts from the bank every step
  bool grads_contexts = false;
  bool grads_phi_pos = false;
  bool grads_phi_p = false;
  double align_weight = 0.0;    // l1(phi_p(f), v) weight (joint variant)
};

/// BCE relation loss of one batch: per group, the mean over that group's
/// positive pairs plus the mean over its negative pairs; group losses are
/// averaged over the groups present in the batch. Optionally adds the l1
/// alignment term and accumulates gradients for the selected components.
inline double relation_batch_loss(
    const SurrogateEncoder& enc, const PromptBank& bank,
    const nn::MlpParams& phi_pos, const nn::MlpParams* phi_p,
    const std::vector<const PairSample*>& batch,
    const std::vector<nn::Vec>& tokens,
    const std::vector<std::vector<nn::Vec>>* cached_tables,
    const RelLossOptions& opt, RelGrads* grads = nullptr) {
  if (batch.empty()) return 0.0;
  const std::size_t n_cls = tokens.size();

  std::map<int, std::vector<const PairSample*>> by_group;
  for (const PairSample* p : batch) by_group[p->group].push_back(p);
  const double inv_groups = 1.0 / static_cast<double>(by_group.size());

  struct LiveText {
    nn::Vec embedding;
    SurrogateEncoder::Cache subj_cache, obj_cache;
    nn::Vec dt;  // accumulated upstream gradient
  };
  // (group, class) -> live encoding with caches.
  std::map<std::pair<int, int>, LiveText> live;
  auto text_of = [&](int g, int c) -> const nn::Vec& {
    if (cached_tables) return (*cached_tables)[g][c];
    return live.at({g, c}).embedding;
  };
  if (!cached_tables) {
    for (const auto& [g, pairs] : by_group) {
      for (std::size_t c = 0; c < n_cls; ++c) {
        LiveText lt;
        if (opt.compositional) {
          nn::Vec s = enc.encode(bank.groups[g].subj, tokens[c], &lt.subj_cache);
          nn::Vec o = enc.encode(bank.groups[g].obj, tokens[c], &lt.obj_cache);
          lt.embedding = s;
          lt.embedding.insert(lt.embedding.end(), o.begin(), o.end());
        } else {
          lt.embedding = enc.encode(bank.groups[g].subj, tokens[c], &lt.subj_cache);
        }
        lt.dt.assign(lt.embedding.size(), 0.0);
        live.emplace(std::make_pair(g, c), std::move(lt));
      }
    }
  }

  double loss = 0.0;
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  for (const auto& [g, pairs] : by_group) {
    std::size_t n_pos = 0, n_neg = 0;
    for (const PairSample* p : pairs) (p->positive ? n_pos : n_neg) += 1;
    for (const PairSample* p : pairs) {
      const double w = inv_groups / static_cast<double>(p->positive ? n_pos : n_neg);

      nn::Vec fpos(p->fpos.begin(), p->fpos.end());
      nn::MlpCache pos_cache, p_cache;
      nn::Vec z = nn::mlp_forward(phi_pos, fpos, grads ? &pos_cache : nullptr);
      nn::Vec base;
      if (opt.use_phi_p_path) {
        if (!phi_p) throw std::logic_error("relation_batch_loss: phi_p missing");
        base = nn::mlp_forward(*phi_p, p->f, grads ? &p_cache : nullptr);
      } else {
        if (p->v.empty())
          throw std::runtime_error("relation_batch_loss: pair lacks VLM embedding");
        base = p->v;
      }
      if (z.size() != base.size())
        throw std::invalid_argument("relation_batch_loss: dimension mismatch");
      for (std::size_t i = 0; i < z.size(); ++i) z[i] += base[i];

      if (p->target.size() != n_cls)
        throw std::invalid_argument("relation_batch_loss: bad target size");

      nn::Vec dz(z.size(), 0.0);
      double pair_bce = 0.0;
      for (std::size_t c = 0; c < n_cls; ++c) {
        const nn::Vec& t = text_of(g, c);
        nn::Vec dz_c, dt_c;
        double cos = grads ? nn::cosine_grad(z, t, &dz_c,
                                             cached_tables ? nullptr : &dt_c)
                           : nn::cosine(z, t);
        double prob = nn::sigmoid(cos);
        double tgt = p->target[c];
        double pc = std::min(std::max(prob, nn::kBceEps), 1.0 - nn::kBceEps);
        pair_bce += -(tgt * std::log(pc) + (1.0 - tgt) * std::log(1.0 - pc));
        if (grads) {
          double dcos = w * (prob - tgt) / static_cast<double>(n_cls);
          for (std::size_t k = 0; k < dz.size(); ++k) dz[k] += dcos * dz_c[k];
          if (!cached_tables && opt.grads_contexts) {
            nn::Vec& dt = live.at({g, static_cast<int>(c)}).dt;
            for (std::size_t k = 0; k < dt.size(); ++k) dt[k] += dcos * dt_c[k];
          }
        }
      }
      loss += w * pair_bce / static_cast<double>(n_cls);

      // l1 alignment of the projected feature to the VLM embedding.
      nn::Vec dp(base.size(), 0.0);
      if (opt.align_weight > 0.0) {
        if (!opt.use_phi_p_path)
          throw std::logic_error("align term requires the phi_p path");
        if (p->v.empty())
          throw std::runtime_error("relation_batch_loss: alignment needs v");
        loss += opt.align_weight * inv_batch * nn::l1_loss(base, p->v);
        if (grads && opt.grads_phi_p) {
          nn::Vec sg = nn::l1_subgrad(base, p->v);
          for (std::size_t k = 0; k < dp.size(); ++k)
            dp[k] += opt.align_weight * inv_batch * sg[k];
        }
      }

      if (grads) {
        if (opt.grads_phi_pos) (void)nn::mlp_backward(phi_pos, pos_cache, dz, grads->phi_pos);
        if (opt.use_phi_p_path && opt.grads_phi_p) {
          for (std::size_t k = 0; k < dp.size(); ++k) dp[k] += dz[k];
          (void)nn::mlp_backward(*phi_p, p_cache, dp, grads->phi_p);
        }
      }
    }
  }

  // Push the accumulated text gradients into the context tokens.
  if (grads && opt.grads_contexts && !cached_tables) {
    for (auto& [key, lt] : live) {
      auto [g, c] = key;
      if (opt.compositional) {
        std::size_t d = lt.embedding.size() / 2;
        nn::Vec dsub(lt.dt.begin(), lt.dt.begin() + d);
        nn::Vec dobj(lt.dt.begin() + d, lt.dt.end());
        nn::Vec dmean_s = enc.backward_context_mean(lt.subj_cache, dsub);
        nn::Vec dmean_o = enc.backward_context_mean(lt.obj_cache, dobj);
        nn::Mat& gs = grads->subj_ctx[g];
        nn::Mat& go = grads->obj_ctx[g];
        double inv = 1.0 / static_cast<double>(lt.subj_cache.n_ctx);
        for (std::size_t r = 0; r < gs.rows; ++r)
          for (std::size_t k = 0; k < gs.cols; ++k) {
            gs(r, k) += dmean_s[k] * inv;
            go(r, k) += dmean_o[k] * inv;
          }
      } else {
        nn::Vec dmean = enc.backward_context_mean(lt.subj_cache, lt.dt);
        nn::Mat& gs = grads->subj_ctx[g];
        double inv = 1.0 / static_cast<double>(lt.subj_cache.n_ctx);
        for (std::size_t r = 0; r < gs.rows; ++r)
          for (std::size_t k = 0; k < gs.cols; ++k) gs(r, k) += dmean[k] * inv;
      }
    }
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Trainers
// ---------------------------------------------------------------------------

struct RelTrainStats {
  std::vector<double> losses;
};

namespace detail {

inline void require_positive_pairs(const std::vector<PairSample>& pairs) {
  for (const auto& p : pairs)
    if (p.positive) return;
  throw std::runtime_error("relation training: empty positive pair set");
}

inline std::vector<const PairSample*> next_batch(const std::vector<PairSample>& pairs,
                                                 std::vector<std::size_t>& order,
                                                 std::size_t& cursor, Rng& rng,
                                                 std::size_t batch_size) {
  std::vector<const PairSample*> batch;
  batch.reserve(batch_size);
  for (std::size_t k = 0; k < batch_size; ++k) {
    if (cursor >= order.size()) {
      for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.uniform_int(i)]);
      cursor = 0;
    }
    batch.push_back(&pairs[order[cursor]]);
    ++cursor;
  }
  return batch;
}

}  // namespace detail

struct Stage1Result {
  PromptBank bank;
  nn::MlpParams phi_pos;
};

/// Stage 1: learns the prompt contexts and phi_pos from pair VLM embeddings.
/// Each pair contributes only to its own group's prompts; group losses are
/// averaged before every update.
inline Stage1Result stage1_train_prompts(const std::vector<PairSample>& pairs,
                                         const std::vector<nn::Vec>& tokens,
                                         const SurrogateEncoder& enc,
                                         const Config& cfg, AblationMode mode,
                                         RelTrainStats* stats = nullptr) {
  detail::require_positive_pairs(pairs);
  bool comp = mode_compositional(mode);
  std::size_t t_dim = comp ? 2 * enc.out_dim() : enc.out_dim();
  Rng rng(cfg.get_u("seed") * 0x9e3779b97f4a7c15ull + 2);
  Stage1Result r{PromptBank::seeded(mode_groups(mode), cfg.get_u("prompt_len"),
                                    cfg.get_u("d_tok"), rng),
                 nn::MlpParams::seeded(12, cfg.get_u("hidden"), t_dim, rng)};
  RelGrads grads = RelGrads::zeros_like(r.bank, r.phi_pos, nullptr);

  std::vector<nn::ParamRef> refs;
  for (std::size_t g = 0; g < r.bank.n_groups(); ++g) {
    refs.push_back(nn::param_ref(r.bank.groups[g].subj.tokens, grads.subj_ctx[g]));
    if (comp)
      refs.push_back(nn::param_ref(r.bank.groups[g].obj.tokens, grads.obj_ctx[g]));
  }
  refs.push_back(nn::param_ref(r.phi_pos.w1, grads.phi_pos.w1));
  refs.push_back(nn::param_ref(r.phi_pos.b1, grads.phi_pos.b1));
  refs.push_back(nn::param_ref(r.phi_pos.w2, grads.phi_pos.w2));
  refs.push_back(nn::param_ref(r.phi_pos.b2, grads.phi_pos.b2));

  nn::AdamConfig adam;
  adam.lr = cfg.get_f("lr");
  nn::AdamState state;
  RelLossOptions opt;
  opt.compositional = comp;
  opt.grads_contexts = true;
  opt.grads_phi_pos = true;

  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();
  long steps = cfg.get_i("steps_stage1");
  std::size_t batch_size = cfg.get_u("batch_size");
  for (long step = 0; step < steps; ++step) {
    auto batch = detail::next_batch(pairs, order, cursor, rng, batch_size);
    grads.zero();
    double loss = relation_batch_loss(enc, r.bank, r.phi_pos, nullptr, batch,
                                      tokens, nullptr, opt, &grads);
    adam_step(refs, adam, state);
    if (stats) stats->losses.push_back(loss);
  }
  return r;
}

/// Stage 2: trains phi_p against the frozen cached tables and the frozen
/// phi_pos. Nothing else is touched.
inline nn::MlpParams stage2_train_v2l(const std::vector<PairSample>& pairs,
                                      const std::vector<std::vector<nn::Vec>>& cached,
                                      const nn::MlpParams& phi_pos,
                                      const SurrogateEncoder& enc,
                                      const std::vector<nn::Vec>& tokens,
                                      const Config& cfg, AblationMode mode,
                                      RelTrainStats* stats = nullptr) {
  detail::require_positive_pairs(pairs);
  if (pairs.empty()) throw std::runtime_error("stage2_train_v2l: no pairs");
  std::size_t f_dim = pairs.front().f.size();
  std::size_t t_dim = phi_pos.out_dim();
  Rng rng(cfg.get_u("seed") * 0x9e3779b97f4a7c15ull + 3);
  nn::MlpParams phi_p =
      nn::MlpParams::seeded(f_dim, cfg.get_u("hidden"), t_dim, rng);
  PromptBank dummy_bank;  // not consulted: text comes from the cached tables
  RelGrads grads = RelGrads::zeros_like(dummy_bank, phi_pos, &phi_p);

  std::vector<nn::ParamRef> refs{
      nn::param_ref(phi_p.w1, grads.phi_p.w1), nn::param_ref(phi_p.b1, grads.phi_p.b1),
      nn::param_ref(phi_p.w2, grads.phi_p.w2), nn::param_ref(phi_p.b2, grads.phi_p.b2)};

  nn::AdamConfig adam;
  adam.lr = cfg.get_f("lr");
  nn::AdamState state;
  RelLossOptions opt;
  opt.compositional = mode_compositional(mode);
  opt.use_phi_p_path = true;
  opt.live_text = false;
  opt.grads_phi_p = true;

  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();
  long steps = cfg.get_i("steps_stage2");
  std::size_t batch_size = cfg.get_u("batch_size");
  for (long step = 0; step < steps; ++step) {
    auto batch = detail::next_batch(pairs, order, cursor, rng, batch_size);
    grads.zero();
    double loss = relation_batch_loss(enc, dummy_bank, phi_pos, &phi_p, batch,
                                      tokens, &cached, opt, &grads);
    adam_step(refs, adam, state);
    if (stats) stats->losses.push_back(loss);
  }
  return phi_p;
}

struct JointResult {
  PromptBank bank;
  nn::MlpParams phi_pos;
  nn::MlpParams phi_p;
};

/// Single-stage variant: prompts, phi_pos and phi_p trained together, with
/// the classification path running through phi_p(f) and an l1 term aligning
/// phi_p(f) to the pair VLM embedding. Runs for steps_stage1 + steps_stage2
/// so the compute budget matches the two-stage scheme.
inline JointResult joint_train_repro_dagger(const std::vector<PairSample>& pairs,
                                            const std::vector<nn::Vec>& tokens,
                                            const SurrogateEncoder& enc,
                                            const Config& cfg,
                                            RelTrainStats* stats = nullptr) {
  detail::require_positive_pairs(pairs);
  std::size_t t_dim = 2 * enc.out_dim();
  std::size_t f_dim = pairs.front().f.size();
  Rng rng(cfg.get_u("seed") * 0x9e3779b97f4a7c15ull + 2);
  JointResult r{PromptBank::seeded(kNumMotionPatterns, cfg.get_u("prompt_len"),
                                   cfg.get_u("d_tok"), rng),
                nn::MlpParams::seeded(12, cfg.get_u("hidden"), t_dim, rng),
                nn::MlpParams::seeded(f_dim, cfg.get_u("hidden"), t_dim, rng)};
  RelGrads grads = RelGrads::zeros_like(r.bank, r.phi_pos, &r.phi_p);

  std::vector<nn::ParamRef> refs;
  for (std::size_t g = 0; g < r.bank.n_groups(); ++g) {
    refs.push_back(nn::param_ref(r.bank.groups[g].subj.tokens, grads.subj_ctx[g]));
    refs.push_back(nn::param_ref(r.bank.groups[g].obj.tokens, grads.obj_ctx[g]));
  }
  refs.push_back(nn::param_ref(r.phi_pos.w1, grads.phi_pos.w1));
  refs.push_back(nn::param_ref(r.phi_pos.b1, grads.phi_pos.b1));
  refs.push_back(nn::param_ref(r.phi_pos.w2, grads.phi_pos.w2));
  refs.push_back(nn::param_ref(r.phi_pos.b2, grads.phi_pos.b2));
  refs.push_back(nn::param_ref(r.phi_p.w1, grads.phi_p.w1));
  refs.push_back(nn::param_ref(r.phi_p.b1, grads.phi_p.b1));
  refs.push_back(nn::param_ref(r.phi_p.w2, grads.phi_p.w2));
  refs.push_back(nn::param_ref(r.phi_p.b2, grads.phi_p.b2));

  nn::AdamConfig adam;
  adam.lr = cfg.get_f("lr");
  nn::AdamState state;
  RelLossOptions opt;
  opt.use_phi_p_path = true;
  opt.grads_contexts = true;
  opt.grads_phi_pos = true;
  opt.grads_phi_p = true;
  opt.align_weight = cfg.get_f("align_weight");

  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();
  long steps = cfg.get_i("steps_stage1") + cfg.get_i("steps_stage2");
  std::size_t batch_size = cfg.get_u("batch_size");
  for (long step = 0; step < steps; ++step) {
    auto batch = detail::next_batch(pairs, order, cursor, rng, batch_size);
    grads.zero();
    double loss = relation_batch_loss(enc, r.bank, r.phi_pos, &r.phi_p, batch,
                                      tokens, nullptr, opt, &grads);
    adam_step(refs, adam, state);
    if (stats) stats->losses.push_back(loss);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Checkpoint mapping
// ---------------------------------------------------------------------------

inline Checkpoint relation_to_checkpoint(const PromptBank& bank,
                                         const RelationHead& head,
                                         const Config& cfg,
                                         const std::string& stage) {
  Checkpoint c;
  c.meta["kind"] = "relation";
  c.meta["stage"] = stage;  // "prompt" | "v2l" | "joint"
  c.meta["ablation_mode"] = to_string(head.mode);
  c.meta["gamma"] = cfg.get_f("gamma");
  c.meta["d_tok"] = cfg.get_i("d_tok");
  c.meta["embed_dim"] = cfg.get_i("embed_dim");
  c.meta["hidden"] = cfg.get_i("hidden");
  c.meta["prompt_len"] = cfg.get_i("prompt_len");
  c.meta["vocab_seed"] = cfg.get_i("vocab_seed");
  c.meta["encoder_seed"] = cfg.get_i("encoder_seed");
  c.meta["base_predicates"] = head.predicate_names;
  for (std::size_t g = 0; g < bank.n_groups(); ++g) {
    c.put("bank.group" + std::to_string(g) + ".subj", bank.groups[g].subj.tokens);
    c.put("bank.group" + std::to_string(g) + ".obj", bank.groups[g].obj.tokens);
  }
  c.put_mlp("phi_pos", head.phi_pos);
  if (head.has_phi_p) c.put_mlp("phi_p", head.phi_p);
  for (std::size_t g = 0; g < head.cached_text.size(); ++g) {
    const auto& table = head.cached_text[g];
    nn::Mat m(table.size(), table.empty() ? 0 : table[0].size());
    for (std::size_t r = 0; r < table.size(); ++r)
      for (std::size_t k = 0; k < m.cols; ++k) m(r, k) = table[r][k];
    c.put("cached_text.g" + std::to_string(g), m);
  }
  return c;
}

struct RelationArtifacts {
  PromptBank bank;
  RelationHead head;
  std::string stage;
};

inline RelationArtifacts relation_from_checkpoint(const Checkpoint& c) {
  if (c.meta.value("kind", "") != "relation")
    throw std::runtime_error("not a relation checkpoint");
  RelationArtifacts a;
  a.stage = c.meta.at("stage").get<std::string>();
  a.head.mode = parse_ablation_mode(c.meta.at("ablation_mode").get<std::string>());
  a.head.predicate_names =
      c.meta.at("base_predicates").get<std::vector<std::string>>();
  int groups = mode_groups(a.head.mode);
  for (int g = 0; g < groups; ++g) {
    PromptGroup grp;
    grp.subj.tokens = c.get_mat("bank.group" + std::to_string(g) + ".subj");
    grp.obj.tokens = c.get_mat("bank.group" + std::to_string(g) + ".obj");
    a.bank.groups.push_back(std::move(grp));
  }
  a.head.phi_pos = c.get_mlp("phi_pos");
  if (c.has("phi_p.W1")) {
    a.head.phi_p = c.get_mlp("phi_p");
    a.head.has_phi_p = true;
  }
  for (int g = 0; g < groups; ++g) {
    std::string name = "cached_text.g" + std::to_string(g);
    if (!c.has(name)) break;
    nn::Mat m = c.get_mat(name);
    std::vector<nn::Vec> table;
    for (std::size_t r = 0; r < m.rows; ++r)
      table.emplace_back(m.row(r), m.row(r) + m.cols);
    a.head.cached_text.push_back(std::move(table));
  }
  a.head.finalize_ens_table();
  return a;
}

}  // namespace ovrd
